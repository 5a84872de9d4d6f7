#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/contact.hpp"
#include "forge/error.hpp"
#include "forge/motion.hpp"

namespace forge {

/// Per-frame rewards, the sequence objective J = sum_t (r_sk + r_fl + r_pen),
/// and the clip-level Penetrate / Float / Skate metrics (centimeters).
struct PlausibilityReport {
  std::vector<double> r_sk;
  std::vector<double> r_fl;
  std::vector<double> r_pen;
  std::vector<double> j_t;
  double j = 0.0;
  double metric_penetrate = 0.0;
  double metric_float = 0.0;
  double metric_skate = 0.0;
};

struct ClipMetrics {
  double penetrate = 0.0; // cm
  double floating = 0.0;  // cm
  double skate = 0.0;     // cm per contact frame pair
};

namespace detail {

inline void check_frame(const MotionClip& clip, const ContactTrack& track, std::size_t t, std::size_t first) {
  if (track.num_frames() != clip.num_frames()) {
    throw ValidationError("track: length differs from clip");
  }
  if (t < first || t >= clip.num_frames()) {
    throw ValidationError("t: frame index " + std::to_string(t) + " out of range");
  }
}

} // namespace detail

/// Mean over both feet of exp(-|(p_t - p_{t-1}) c_t c_{t-1}|^2), full 3-D displacement.
inline double skate_reward(const MotionClip& clip, const ContactTrack& track, std::size_t t) {
  detail::check_frame(clip, track, t, 1);
  double sum = 0.0;
  for (std::size_t f = 0; f < 2; ++f) {
    const bool gate = track.contact[t][f] && track.contact[t - 1][f];
    const double d2 = gate ? (clip.foot(t, f) - clip.foot(t - 1, f)).squaredNorm() : 0.0;
    sum += std::exp(-d2);
  }
  return 0.5 * sum;
}

/// exp(-((z_low - z_g) * floating_t)^2) with z_low the lower foot.
inline double float_reward(const MotionClip& clip, const ContactTrack& track, std::size_t t) {
  detail::check_frame(clip, track, t, 0);
  if (!track.floating[t]) {
    return 1.0;
  }
  const double gap = std::min(clip.foot(t, 0).z(), clip.foot(t, 1).z()) - clip.ground_height;
  return std::exp(-gap * gap);
}

/// Mean over both feet of exp(-((z_g - z_f) * penetration_t)^2).
inline double penetration_reward(const MotionClip& clip, const ContactTrack& track, std::size_t t) {
  detail::check_frame(clip, track, t, 0);
  double sum = 0.0;
  for (std::size_t f = 0; f < 2; ++f) {
    const double depth = track.penetration[t][f] ? clip.ground_height - clip.foot(t, f).z() : 0.0;
    sum += std::exp(-depth * depth);
  }
  return 0.5 * sum;
}

inline ClipMetrics clip_metrics(const MotionClip& clip, const ContactTrack& track) {
  const std::size_t n = clip.num_frames();
  if (track.num_frames() != n) {
    throw ValidationError("track: length differs from clip");
  }
  const double zg = clip.ground_height;
  ClipMetrics m;

  double pen = 0.0;
  double fl = 0.0;
  std::size_t fl_frames = 0;
  double sk = 0.0;
  std::size_t sk_pairs = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double z0 = clip.foot(t, 0).z();
    const double z1 = clip.foot(t, 1).z();
    pen += std::max({0.0, zg - z0, zg - z1});
    if (track.floating[t]) {
      fl += std::min(z0, z1) - zg;
      ++fl_frames;
    }
    if (t == 0) {
      continue;
    }
    for (std::size_t f = 0; f < 2; ++f) {
      if (track.contact[t][f] && track.contact[t - 1][f]) {
        sk += (clip.foot(t, f) - clip.foot(t - 1, f)).head<2>().norm();
        ++sk_pairs;
      }
    }
  }
  m.penetrate = 100.0 * pen / static_cast<double>(n);
  m.floating = fl_frames > 0 ? 100.0 * fl / static_cast<double>(fl_frames) : 0.0;
  m.skate = sk_pairs > 0 ? 100.0 * sk / static_cast<double>(sk_pairs) : 0.0;
  return m;
}

inline PlausibilityReport sequence_objective(const MotionClip& clip, const ContactTrack& track) {
  const std::size_t n = clip.num_frames();
  if (track.num_frames() != n) {
    throw ValidationError("track: length differs from clip");
  }
  PlausibilityReport r;
  r.r_sk.resize(n);
  r.r_fl.resize(n);
  r.r_pen.resize(n);
  r.j_t.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    r.r_sk[t] = t == 0 ? 1.0 : skate_reward(clip, track, t);
    r.r_fl[t] = float_reward(clip, track, t);
    r.r_pen[t] = penetration_reward(clip, track, t);
    r.j_t[t] = r.r_sk[t] + r.r_fl[t] + r.r_pen[t];
    r.j += r.j_t[t];
  }
  const ClipMetrics m = clip_metrics(clip, track);
  r.metric_penetrate = m.penetrate;
  r.metric_float = m.floating;
  r.metric_skate = m.skate;
  return r;
}

inline nlohmann::json to_json(const PlausibilityReport& r) {
  return {{"r_sk", r.r_sk},
          {"r_fl", r.r_fl},
          {"r_pen", r.r_pen},
          {"J_t", r.j_t},
          {"J", r.j},
          {"metric_penetrate", r.metric_penetrate},
          {"metric_float", r.metric_float},
          {"metric_skate", r.metric_skate}};
}

} // namespace forge
