#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "forge/error.hpp"

namespace forge {

using Vec3 = Eigen::Vector3d;

struct Skeleton {
  std::vector<std::string> joint_names;
  std::vector<int> parent_index;    // -1 for the root
  std::vector<double> bone_lengths; // rest length to parent, 0 for the root
  std::array<int, 2> foot_joints{0, 0};
  std::vector<int> keypoint_joints;

  std::size_t num_joints() const { return joint_names.size(); }
  bool operator==(const Skeleton&) const = default;
};

/// Checks the tree, bone-length, and index invariants. Throws ValidationError.
inline void validate(const Skeleton& s) {
  const std::size_t n = s.num_joints();
  detail::require(n >= 1, "joints", "skeleton has no joints");
  detail::require(s.parent_index.size() == n, "parents", "expected one parent per joint");
  detail::require(s.bone_lengths.size() == n, "bone_lengths", "expected one length per joint");
  detail::require(s.parent_index[0] == -1, "parents[0]", "joint 0 must be the root");
  for (std::size_t j = 1; j < n; ++j) {
    const int p = s.parent_index[j];
    // Parents precede children, which rules out cycles and a second root.
    detail::require(p >= 0 && static_cast<std::size_t>(p) < j, "parents[" + std::to_string(j) + "]",
                    "parent must be an earlier joint");
    detail::require(std::isfinite(s.bone_lengths[j]) && s.bone_lengths[j] > 0.0,
                    "bone_lengths[" + std::to_string(j) + "]", "must be > 0");
  }
  for (std::size_t k = 0; k < 2; ++k) {
    const int f = s.foot_joints[k];
    detail::require(f >= 0 && static_cast<std::size_t>(f) < n, "foot_joints[" + std::to_string(k) + "]",
                    "index out of range");
  }
  detail::require(s.foot_joints[0] != s.foot_joints[1], "foot_joints", "left and right foot must differ");
  for (std::size_t k = 0; k < s.keypoint_joints.size(); ++k) {
    const int j = s.keypoint_joints[k];
    detail::require(j >= 0 && static_cast<std::size_t>(j) < n, "keypoint_joints[" + std::to_string(k) + "]",
                    "index out of range");
  }
}

/// Fixed-rate sequence of world-frame (z-up, meters) joint positions.
struct MotionClip {
  Skeleton skeleton;
  double fps = 30.0;
  double ground_height = 0.0;
  std::string label;
  std::vector<std::string> tags;
  std::vector<double> positions; // frame-major, then joint, then xyz

  std::size_t num_joints() const { return skeleton.num_joints(); }
  std::size_t num_frames() const {
    const std::size_t per_frame = 3 * num_joints();
    return per_frame == 0 ? 0 : positions.size() / per_frame;
  }
  std::size_t index(std::size_t t, std::size_t j) const { return (t * num_joints() + j) * 3; }

  Eigen::Map<Vec3> at(std::size_t t, std::size_t j) { return Eigen::Map<Vec3>(positions.data() + index(t, j)); }
  Eigen::Map<const Vec3> at(std::size_t t, std::size_t j) const {
    return Eigen::Map<const Vec3>(positions.data() + index(t, j));
  }
  Eigen::Map<const Vec3> foot(std::size_t t, std::size_t f) const {
    return at(t, static_cast<std::size_t>(skeleton.foot_joints[f]));
  }

  bool has_tag(std::string_view tag) const { return std::find(tags.begin(), tags.end(), tag) != tags.end(); }

  bool operator==(const MotionClip&) const = default;
};

inline MotionClip make_clip(const Skeleton& skeleton, std::size_t frames, double fps, double ground_height = 0.0) {
  MotionClip c;
  c.skeleton = skeleton;
  c.fps = fps;
  c.ground_height = ground_height;
  c.positions.assign(frames * skeleton.num_joints() * 3, 0.0);
  return c;
}

inline void validate(const MotionClip& c) {
  validate(c.skeleton);
  const std::size_t per_frame = 3 * c.num_joints();
  detail::require(std::isfinite(c.fps) && c.fps > 0.0, "fps", "must be finite and > 0");
  detail::require(std::isfinite(c.ground_height), "ground_height", "must be finite");
  detail::require(c.positions.size() % per_frame == 0, "frames", "frame count does not match joint count");
  detail::require(c.num_frames() >= 2, "frames", "need at least 2 frames");
  for (std::size_t i = 0; i < c.positions.size(); ++i) {
    if (!std::isfinite(c.positions[i])) {
      const std::size_t t = i / per_frame;
      const std::size_t j = (i % per_frame) / 3;
      detail::fail_validation("frames[" + std::to_string(t) + "][" + std::to_string(j) + "]",
                              "non-finite coordinate");
    }
  }
}

// ---------------------------------------------------------------------------
// Canonical 13-joint humanoid.

namespace canonical {

enum Joint : int {
  kRoot = 0,
  kSpine,
  kHead,
  kLeftShoulder,
  kLeftHand,
  kRightShoulder,
  kRightHand,
  kLeftHip,
  kLeftKnee,
  kLeftFoot,
  kRightHip,
  kRightKnee,
  kRightFoot,
  kNumJoints
};

// Rigid offsets and limb lengths, meters.
inline const Vec3 kSpineOffset{0.0, 0.0, 0.25};
inline const Vec3 kHeadOffset{0.0, 0.0, 0.25};
inline const Vec3 kLeftShoulderOffset{0.0, 0.18, 0.15};
inline const Vec3 kRightShoulderOffset{0.0, -0.18, 0.15};
inline const Vec3 kLeftHipOffset{0.0, 0.10, -0.08};
inline const Vec3 kRightHipOffset{0.0, -0.10, -0.08};
inline constexpr double kArmLength = 0.55;
inline constexpr double kThighLength = 0.42;
inline constexpr double kShinLength = 0.42;

} // namespace canonical

inline Skeleton canonical_skeleton() {
  using namespace canonical;
  Skeleton s;
  s.joint_names = {"root",     "spine",   "head",     "l_shoulder", "l_hand",  "r_shoulder", "r_hand",
                   "l_hip",    "l_knee",  "l_foot",   "r_hip",      "r_knee",  "r_foot"};
  s.parent_index = {-1, kRoot, kSpine, kSpine, kLeftShoulder, kSpine, kRightShoulder,
                    kRoot, kLeftHip, kLeftKnee, kRoot, kRightHip, kRightKnee};
  s.bone_lengths = {0.0,
                    kSpineOffset.norm(),
                    kHeadOffset.norm(),
                    kLeftShoulderOffset.norm(),
                    kArmLength,
                    kRightShoulderOffset.norm(),
                    kArmLength,
                    kLeftHipOffset.norm(),
                    kThighLength,
                    kShinLength,
                    kRightHipOffset.norm(),
                    kThighLength,
                    kShinLength};
  s.foot_joints = {kLeftFoot, kRightFoot};
  s.keypoint_joints = {kLeftHand, kRightHand, kLeftFoot, kRightFoot, kHead};
  return s;
}

// ---------------------------------------------------------------------------
// Declared stance schedules travel with a clip as tags "stance_l=0110..." and
// "stance_r=...", one character per frame.

using StanceSchedule = std::array<std::vector<bool>, 2>;

inline constexpr std::array<std::string_view, 2> kStanceTagPrefix{"stance_l=", "stance_r="};

inline std::string encode_stance(const std::vector<bool>& stance) {
  std::string s;
  s.reserve(stance.size());
  for (bool b : stance) {
    s.push_back(b ? '1' : '0');
  }
  return s;
}

inline void set_stance_tags(MotionClip& clip, const StanceSchedule& schedule) {
  std::erase_if(clip.tags, [](const std::string& tag) {
    return tag.starts_with(kStanceTagPrefix[0]) || tag.starts_with(kStanceTagPrefix[1]);
  });
  for (std::size_t f = 0; f < 2; ++f) {
    clip.tags.push_back(std::string(kStanceTagPrefix[f]) + encode_stance(schedule[f]));
  }
}

/// Returns the declared schedule, or nullopt if the clip carries none (or one
/// whose length does not match the clip).
inline std::optional<StanceSchedule> declared_stance(const MotionClip& clip) {
  StanceSchedule out;
  std::array<bool, 2> found{false, false};
  for (const auto& tag : clip.tags) {
    for (std::size_t f = 0; f < 2; ++f) {
      if (!tag.starts_with(kStanceTagPrefix[f])) {
        continue;
      }
      const std::string_view bits = std::string_view(tag).substr(kStanceTagPrefix[f].size());
      out[f].clear();
      for (char c : bits) {
        if (c != '0' && c != '1') {
          return std::nullopt;
        }
        out[f].push_back(c == '1');
      }
      found[f] = true;
    }
  }
  if (!found[0] || !found[1] || out[0].size() != clip.num_frames() || out[1].size() != clip.num_frames()) {
    return std::nullopt;
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Linearly interpolates joint positions onto `target_frames` samples spanning
/// the original duration. The frame rate is rescaled to keep the duration.
inline MotionClip resample(const MotionClip& clip, std::size_t target_frames) {
  detail::require(target_frames >= 2, "target_frames", "must be >= 2");
  const std::size_t src_frames = clip.num_frames();
  if (target_frames == src_frames) {
    return clip;
  }
  MotionClip out = clip;
  const std::size_t per_frame = 3 * clip.num_joints();
  out.positions.assign(target_frames * per_frame, 0.0);
  out.fps = clip.fps * static_cast<double>(target_frames - 1) / static_cast<double>(src_frames - 1);
  const double span = static_cast<double>(src_frames - 1);
  for (std::size_t k = 0; k < target_frames; ++k) {
    const double s = static_cast<double>(k) * span / static_cast<double>(target_frames - 1);
    std::size_t i0 = std::min(static_cast<std::size_t>(std::floor(s)), src_frames - 2);
    const double w = s - static_cast<double>(i0);
    const double* a = clip.positions.data() + i0 * per_frame;
    const double* b = a + per_frame;
    double* dst = out.positions.data() + k * per_frame;
    for (std::size_t i = 0; i < per_frame; ++i) {
      dst[i] = (1.0 - w) * a[i] + w * b[i];
    }
  }
  // Frame-indexed tags (stance schedules) no longer line up.
  std::erase_if(out.tags, [](const std::string& tag) {
    return tag.starts_with(kStanceTagPrefix[0]) || tag.starts_with(kStanceTagPrefix[1]);
  });
  return out;
}

// ---------------------------------------------------------------------------

struct ClipError {
  double mpjpe = 0.0;
  double mpkpe = 0.0;
  std::vector<double> per_frame_mpjpe;
};

enum class ErrorFrame { kWorld, kRootRelative };

/// Mean per-joint and per-keypoint position error between aligned clips.
/// Compares the first `frames` frames when given (used for truncated rollouts).
inline ClipError compute_clip_error(const MotionClip& a, const MotionClip& b, ErrorFrame frame = ErrorFrame::kWorld,
                                    std::optional<std::size_t> frames = std::nullopt) {
  if (a.num_joints() != b.num_joints() || a.skeleton.parent_index != b.skeleton.parent_index) {
    throw ValidationError("skeleton: clips do not share a skeleton");
  }
  std::size_t n = a.num_frames();
  if (frames) {
    detail::require(*frames >= 1 && *frames <= std::min(a.num_frames(), b.num_frames()), "frames",
                    "comparison window out of range");
    n = *frames;
  } else if (a.num_frames() != b.num_frames()) {
    throw ValidationError("frames: clips differ in length");
  }
  const std::size_t nj = a.num_joints();
  const auto& keypoints = a.skeleton.keypoint_joints;

  ClipError err;
  err.per_frame_mpjpe.resize(n);
  double kp_sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    Vec3 shift = Vec3::Zero();
    if (frame == ErrorFrame::kRootRelative) {
      shift = b.at(t, 0) - a.at(t, 0);
    }
    double frame_sum = 0.0;
    for (std::size_t j = 0; j < nj; ++j) {
      frame_sum += (a.at(t, j) + shift - b.at(t, j)).norm();
    }
    err.per_frame_mpjpe[t] = frame_sum / static_cast<double>(nj);
    if (!keypoints.empty()) {
      double kp = 0.0;
      for (int j : keypoints) {
        kp += (a.at(t, j) + shift - b.at(t, j)).norm();
      }
      kp_sum += kp / static_cast<double>(keypoints.size());
    }
  }
  double total = 0.0;
  for (double v : err.per_frame_mpjpe) {
    total += v;
  }
  err.mpjpe = total / static_cast<double>(n);
  err.mpkpe = kp_sum / static_cast<double>(n);
  return err;
}

/// Length of bone (j, parent(j)) at frame t.
inline double bone_length(const MotionClip& clip, std::size_t t, std::size_t j) {
  const int p = clip.skeleton.parent_index[j];
  return (clip.at(t, j) - clip.at(t, static_cast<std::size_t>(p))).norm();
}

} // namespace forge
