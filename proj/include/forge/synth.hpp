#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>

#include "forge/error.hpp"
#include "forge/motion.hpp"
#include "forge/rng.hpp"

namespace forge {

enum class GaitCategory { kWalk, kJump, kKick, kIdle };

inline std::string_view to_string(GaitCategory c) {
  switch (c) {
    case GaitCategory::kWalk: return "walk";
    case GaitCategory::kJump: return "jump";
    case GaitCategory::kKick: return "kick";
    case GaitCategory::kIdle: return "idle";
  }
  return "idle";
}

inline GaitCategory gait_category_from_string(std::string_view s) {
  if (s == "walk") return GaitCategory::kWalk;
  if (s == "jump") return GaitCategory::kJump;
  if (s == "kick") return GaitCategory::kKick;
  if (s == "idle") return GaitCategory::kIdle;
  throw ValidationError("category: unknown gait category '" + std::string(s) + "'");
}

struct GaitSpec {
  GaitCategory category = GaitCategory::kWalk;
  double duration_s = 2.0;
  double fps = 30.0;
  double stride_m = 0.5;
  double step_period_s = 0.5;
  std::uint64_t seed = 0;
};

enum class CorruptionKind { kSkate, kFloat, kPenetrate, kNoise };

inline CorruptionKind corruption_kind_from_string(std::string_view s) {
  if (s == "skate") return CorruptionKind::kSkate;
  if (s == "float") return CorruptionKind::kFloat;
  if (s == "penetrate") return CorruptionKind::kPenetrate;
  if (s == "noise") return CorruptionKind::kNoise;
  throw ValidationError("kind: unknown corruption kind '" + std::string(s) + "'");
}

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kNoise;
  double magnitude = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline double min_jerk(double u) { return u * u * u * (10.0 + u * (-15.0 + 6.0 * u)); }

inline double sin_sq(double u) {
  const double s = std::sin(std::numbers::pi * u);
  return s * s;
}

// Phase of frame k within periodic windows [start + c*period, start + c*period + width].
// Returns the number of completed windows and, if k lies strictly inside one, the
// normalized phase u in (0, 1).
struct WindowPhase {
  long completed = 0;
  std::optional<double> inside;
};

inline WindowPhase window_phase(long k, long start, long period, long width) {
  WindowPhase w;
  if (k < start) {
    return w;
  }
  const long rel = k - start;
  const long cycle = rel / period;
  const long offset = rel % period;
  if (offset > 0 && offset < width) {
    w.completed = cycle;
    w.inside = static_cast<double>(offset) / static_cast<double>(width);
  } else {
    w.completed = cycle + (offset >= width ? 1 : 0);
  }
  return w;
}

// Two-bone IK with the knee bending towards +x.
inline Vec3 knee_position(const Vec3& hip, const Vec3& foot, double thigh, double shin) {
  Vec3 d = foot - hip;
  double dist = d.norm();
  const double lo = std::abs(thigh - shin) + 1e-9;
  const double hi = thigh + shin - 1e-9;
  dist = std::clamp(dist, lo, hi);
  const Vec3 dir = d.normalized();
  Vec3 bend = Vec3::UnitX() - Vec3::UnitX().dot(dir) * dir;
  if (bend.norm() < 1e-9) {
    bend = Vec3::UnitZ() - Vec3::UnitZ().dot(dir) * dir;
  }
  bend.normalize();
  const double along = (thigh * thigh - shin * shin + dist * dist) / (2.0 * dist);
  const double across = std::sqrt(std::max(0.0, thigh * thigh - along * along));
  return hip + dir * along + bend * across;
}

} // namespace detail

/// Builds a clean clip on the canonical skeleton. Stance feet sit exactly at
/// the ground height and do not move horizontally; the declared stance
/// schedule is attached as tags. Jumps carry the "airborne-allowed" tag.
inline MotionClip generate_clip(const GaitSpec& spec) {
  using namespace canonical;
  detail::require(std::isfinite(spec.duration_s) && spec.duration_s > 0.0, "duration_s", "must be > 0");
  detail::require(std::isfinite(spec.step_period_s) && spec.step_period_s > 0.0, "step_period_s", "must be > 0");
  detail::require(std::isfinite(spec.fps) && spec.fps > 0.0, "fps", "must be > 0");
  detail::require(std::isfinite(spec.stride_m) && spec.stride_m >= 0.0, "stride_m", "must be >= 0");

  const long frames = std::max(2L, std::lround(spec.duration_s * spec.fps));
  const long step = std::max(2L, std::lround(spec.step_period_s * spec.fps));
  const long swing = std::clamp(std::lround(0.8 * static_cast<double>(step)), 2L, step);
  const double ground = 0.0;

  Rng rng(spec.seed);
  const double root_height = 0.80 + uniform(rng, -0.02, 0.02);
  const double swing_height = uniform(rng, 0.08, 0.12);
  const double arm_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double stride = spec.stride_m;

  MotionClip clip = make_clip(canonical_skeleton(), static_cast<std::size_t>(frames), spec.fps, ground);
  clip.label = std::string(to_string(spec.category));
  StanceSchedule stance{std::vector<bool>(frames, true), std::vector<bool>(frames, true)};

  double arm_amplitude = 0.0;
  double arm_period = 2.0 * static_cast<double>(step);
  double jump_height = 0.0;
  double kick_reach = 0.0;
  double kick_height = 0.0;
  switch (spec.category) {
    case GaitCategory::kWalk: arm_amplitude = uniform(rng, 0.15, 0.35); break;
    case GaitCategory::kJump:
      arm_amplitude = uniform(rng, 0.05, 0.15);
      // First and last airborne frames must clear 5 cm.
      jump_height = std::max(uniform(rng, 0.25, 0.32), 0.06 / std::sin(std::numbers::pi / static_cast<double>(swing)));
      clip.tags.push_back("airborne-allowed");
      break;
    case GaitCategory::kKick:
      arm_amplitude = uniform(rng, 0.05, 0.2);
      kick_reach = uniform(rng, 0.3, 0.45);
      kick_height = uniform(rng, 0.3, 0.45);
      break;
    case GaitCategory::kIdle:
      arm_amplitude = uniform(rng, 0.02, 0.08);
      arm_period = spec.fps * uniform(rng, 1.5, 3.0);
      break;
  }

  const double lateral = kLeftHipOffset.y();
  // Walk: foot stance positions are centered on the moving root.
  const double walk_speed = stride / (2.0 * static_cast<double>(step)); // m per frame
  const double left_start_x = -0.5 * stride * (1.0 - static_cast<double>(swing) / (2.0 * static_cast<double>(step)));
  const std::array<double, 2> walk_x0{left_start_x, left_start_x + walk_speed * static_cast<double>(step)};
  const std::array<long, 2> walk_swing_start{0, step};

  for (long k = 0; k < frames; ++k) {
    const auto t = static_cast<std::size_t>(k);
    Vec3 root(0.0, 0.0, ground + root_height);
    std::array<Vec3, 2> feet{Vec3(0.0, lateral, ground), Vec3(0.0, -lateral, ground)};

    switch (spec.category) {
      case GaitCategory::kWalk: {
        root.x() = walk_speed * static_cast<double>(k);
        for (std::size_t f = 0; f < 2; ++f) {
          const auto w = detail::window_phase(k, walk_swing_start[f], 2 * step, swing);
          double x = walk_x0[f] + stride * static_cast<double>(w.completed);
          if (w.inside) {
            x += stride * detail::min_jerk(*w.inside);
            feet[f].z() = ground + swing_height * detail::sin_sq(*w.inside);
            stance[f][t] = false;
          }
          feet[f].x() = x;
        }
        break;
      }
      case GaitCategory::kJump: {
        const auto w = detail::window_phase(k, step, 2 * step, swing);
        double dx = stride * static_cast<double>(w.completed);
        double dz = 0.0;
        if (w.inside) {
          dx += stride * detail::min_jerk(*w.inside);
          dz = jump_height * std::sin(std::numbers::pi * *w.inside);
          stance[0][t] = stance[1][t] = false;
        }
        root += Vec3(dx, 0.0, dz);
        for (auto& foot : feet) {
          foot += Vec3(dx, 0.0, dz);
        }
        break;
      }
      case GaitCategory::kKick: {
        const auto w = detail::window_phase(k, step / 2, 2 * step, swing);
        if (w.inside) {
          const double s = detail::sin_sq(*w.inside);
          feet[0] += Vec3(kick_reach * s, 0.0, kick_height * s);
          stance[0][t] = false;
        }
        break;
      }
      case GaitCategory::kIdle: break;
    }

    const Vec3 spine = root + kSpineOffset;
    const double theta = arm_amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(k) / arm_period + arm_phase);
    const Vec3 l_shoulder = spine + kLeftShoulderOffset;
    const Vec3 r_shoulder = spine + kRightShoulderOffset;
    const Vec3 l_hip = root + kLeftHipOffset;
    const Vec3 r_hip = root + kRightHipOffset;

    clip.at(t, kRoot) = root;
    clip.at(t, kSpine) = spine;
    clip.at(t, kHead) = spine + kHeadOffset;
    clip.at(t, kLeftShoulder) = l_shoulder;
    clip.at(t, kLeftHand) = l_shoulder + kArmLength * Vec3(std::sin(theta), 0.0, -std::cos(theta));
    clip.at(t, kRightShoulder) = r_shoulder;
    clip.at(t, kRightHand) = r_shoulder + kArmLength * Vec3(std::sin(-theta), 0.0, -std::cos(theta));
    clip.at(t, kLeftHip) = l_hip;
    clip.at(t, kLeftKnee) = detail::knee_position(l_hip, feet[0], kThighLength, kShinLength);
    clip.at(t, kLeftFoot) = feet[0];
    clip.at(t, kRightHip) = r_hip;
    clip.at(t, kRightKnee) = detail::knee_position(r_hip, feet[1], kThighLength, kShinLength);
    clip.at(t, kRightFoot) = feet[1];
  }

  set_stance_tags(clip, stance);
  return clip;
}

/// Injects a controlled artifact. Skate, float, and penetrate act on the
/// declared stance schedule, which the clip must carry.
inline MotionClip corrupt_clip(const MotionClip& clip, const CorruptionSpec& spec) {
  detail::require(std::isfinite(spec.magnitude) && spec.magnitude >= 0.0, "magnitude", "must be >= 0");
  MotionClip out = clip;
  if (spec.magnitude == 0.0) {
    return out;
  }
  const std::size_t frames = clip.num_frames();

  if (spec.kind == CorruptionKind::kNoise) {
    Rng rng(spec.seed);
    for (double& v : out.positions) {
      v += spec.magnitude * standard_normal(rng);
    }
    return out;
  }

  const auto stance = declared_stance(clip);
  if (!stance) {
    throw ValidationError("tags: corruption requires a declared stance schedule");
  }
  for (std::size_t f = 0; f < 2; ++f) {
    const auto foot = static_cast<std::size_t>(clip.skeleton.foot_joints[f]);
    std::size_t run = 0;
    for (std::size_t t = 0; t < frames; ++t) {
      run = (*stance)[f][t] ? run + 1 : 0;
      if (!(*stance)[f][t]) {
        continue;
      }
      switch (spec.kind) {
        case CorruptionKind::kSkate: out.at(t, foot).x() += spec.magnitude * static_cast<double>(run - 1); break;
        case CorruptionKind::kPenetrate: out.at(t, foot).z() -= spec.magnitude; break;
        default: break;
      }
    }
  }
  if (spec.kind == CorruptionKind::kFloat) {
    for (std::size_t t = 0; t < frames; ++t) {
      if (!(*stance)[0][t] && !(*stance)[1][t]) {
        continue;
      }
      for (std::size_t j = 0; j < clip.num_joints(); ++j) {
        out.at(t, j).z() += spec.magnitude;
      }
    }
  }
  return out;
}

} // namespace forge
