#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "forge/contact.hpp"
#include "forge/error.hpp"
#include "forge/motion.hpp"
#include "forge/parallel.hpp"
#include "forge/qc.hpp"

namespace forge {

struct TrackParams {
  double gain = 0.8;
  double v_max = 5.0;           // m/s per joint
  double fail_root_drift = 1.0; // m, horizontal
  double succ_mpjpe = 0.5;      // m
};

inline void validate(const TrackParams& p) {
  detail::require(p.gain > 0.0 && p.gain <= 1.0, "track.gain", "must lie in (0, 1]");
  detail::require(p.v_max > 0.0, "track.v_max", "must be > 0");
  detail::require(p.fail_root_drift > 0.0, "track.fail_root_drift", "must be > 0");
  detail::require(p.succ_mpjpe > 0.0, "track.succ_mpjpe", "must be > 0");
}

struct TrackResult {
  bool success = false;
  double e_mpjpe = 0.0;
  double e_mpkpe = 0.0;
  std::optional<std::size_t> terminated_at;
  MotionClip executed; // frames up to termination
};

/// First-order lag tracker with foot pinning and ground clamping.
inline TrackResult execute(const MotionClip& reference, const TrackParams& params = {},
                           const ContactParams& contact_params = {}) {
  validate(params);
  validate(reference);
  const std::size_t n = reference.num_frames();
  const std::size_t nj = reference.num_joints();
  const double zg = reference.ground_height;
  const double max_step = params.v_max / reference.fps;
  const ContactTrack contacts = reference_contacts(reference, contact_params);
  const std::array<std::size_t, 2> feet{static_cast<std::size_t>(reference.skeleton.foot_joints[0]),
                                        static_cast<std::size_t>(reference.skeleton.foot_joints[1])};

  MotionClip exec = reference;
  exec.tags.clear();
  std::array<bool, 2> pinned{false, false};
  std::array<Vec3, 2> pin{Vec3::Zero(), Vec3::Zero()};

  auto clamp_feet = [&](std::size_t t) {
    for (std::size_t f = 0; f < 2; ++f) {
      auto p = exec.at(t, feet[f]);
      p.z() = std::max(p.z(), zg);
    }
  };
  auto resolve_contacts = [&](std::size_t t) {
    for (std::size_t f = 0; f < 2; ++f) {
      if (!contacts.contact[t][f]) {
        pinned[f] = false;
        continue;
      }
      auto p = exec.at(t, feet[f]);
      if (!pinned[f]) {
        pinned[f] = true;
        pin[f] = p;
        continue;
      }
      const Vec3 correction = pin[f] - p;
      p = pin[f];
      auto root = exec.at(t, 0);
      root.x() -= correction.x();
      root.y() -= correction.y();
    }
  };

  clamp_feet(0);
  resolve_contacts(0);
  std::size_t executed_frames = n;
  TrackResult result;
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < nj; ++j) {
      Vec3 step = params.gain * (reference.at(t, j) - exec.at(t - 1, j));
      const double len = step.norm();
      if (len > max_step) {
        step *= max_step / len;
      }
      exec.at(t, j) = exec.at(t - 1, j) + step;
    }
    clamp_feet(t);
    resolve_contacts(t);
    const double drift = (exec.at(t, 0) - reference.at(t, 0)).head<2>().norm();
    if (drift > params.fail_root_drift) {
      result.terminated_at = t;
      executed_frames = t + 1;
      break;
    }
  }
  exec.positions.resize(executed_frames * nj * 3);

  const ClipError err = compute_clip_error(reference, exec, ErrorFrame::kWorld, executed_frames);
  result.e_mpjpe = err.mpjpe;
  result.e_mpkpe = err.mpkpe;
  result.success = !result.terminated_at && result.e_mpjpe < params.succ_mpjpe;
  result.executed = std::move(exec);
  return result;
}

struct BatchTrackResult {
  double success_rate = 0.0;
  double mean_e_mpjpe = 0.0;
  double mean_e_mpkpe = 0.0;
  std::vector<TrackResult> results;
};

inline BatchTrackResult batch_execute(const std::vector<MotionClip>& corpus, const TrackParams& params = {},
                                      const ContactParams& contact_params = {}, std::size_t workers = 1) {
  detail::require(!corpus.empty(), "corpus", "is empty");
  BatchTrackResult out;
  out.results = parallel_map(corpus.size(), workers,
                             [&](std::size_t i) { return execute(corpus[i], params, contact_params); });
  std::size_t ok = 0;
  for (const auto& r : out.results) {
    ok += r.success ? 1 : 0;
    out.mean_e_mpjpe += r.e_mpjpe;
    out.mean_e_mpkpe += r.e_mpkpe;
  }
  const auto n = static_cast<double>(corpus.size());
  out.success_rate = static_cast<double>(ok) / n;
  out.mean_e_mpjpe /= n;
  out.mean_e_mpkpe /= n;
  return out;
}

inline std::string track_csv(const std::vector<std::string>& ids, const std::vector<TrackResult>& results) {
  detail::require(ids.size() == results.size(), "ids", "one id per result required");
  std::string out = "clip_id,success,e_mpjpe,e_mpkpe,terminated_at\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& r = results[i];
    out += ids[i] + "," + (r.success ? "1" : "0") + "," + detail::format_double(r.e_mpjpe) + "," +
           detail::format_double(r.e_mpkpe) + "," + (r.terminated_at ? std::to_string(*r.terminated_at) : "") + "\n";
  }
  return out;
}

} // namespace forge
