#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "forge/error.hpp"
#include "forge/motion.hpp"

namespace forge {

struct ContactParams {
  double h_contact = 0.05; // m above ground
  double v_contact = 0.30; // m/s
  double h_float = 0.05;   // m above ground
  bool airborne_allowed = false; // also enabled by the clip tag "airborne-allowed"
  double jump_exempt_vz = 0.5;   // m/s root vertical speed at window entry
};

inline void validate(const ContactParams& p) {
  detail::require(p.h_contact > 0.0, "contact.h_contact", "must be > 0");
  detail::require(p.v_contact > 0.0, "contact.v_contact", "must be > 0");
  detail::require(p.h_float > 0.0, "contact.h_float", "must be > 0");
}

/// Per-frame foot indicators gating the skating, floating and penetration terms.
struct ContactTrack {
  double ground_height = 0.0;
  std::vector<std::array<bool, 2>> contact;
  std::vector<bool> floating;
  std::vector<std::array<bool, 2>> penetration;
  std::vector<std::array<double, 2>> foot_height;
  std::vector<std::array<double, 2>> foot_speed;

  std::size_t num_frames() const { return contact.size(); }
};

namespace detail {

// |p[t+1] - p[t-1]| * fps / 2 inside, one-sided at the ends.
inline double central_speed(const MotionClip& clip, std::size_t joint, std::size_t t) {
  const std::size_t n = clip.num_frames();
  if (t == 0) {
    return (clip.at(1, joint) - clip.at(0, joint)).norm() * clip.fps;
  }
  if (t + 1 == n) {
    return (clip.at(t, joint) - clip.at(t - 1, joint)).norm() * clip.fps;
  }
  return (clip.at(t + 1, joint) - clip.at(t - 1, joint)).norm() * clip.fps * 0.5;
}

inline double vertical_velocity(const MotionClip& clip, std::size_t joint, std::size_t t) {
  const std::size_t n = clip.num_frames();
  if (t == 0) {
    return (clip.at(1, joint).z() - clip.at(0, joint).z()) * clip.fps;
  }
  if (t + 1 == n) {
    return (clip.at(t, joint).z() - clip.at(t - 1, joint).z()) * clip.fps;
  }
  return (clip.at(t + 1, joint).z() - clip.at(t - 1, joint).z()) * clip.fps * 0.5;
}

// Fills heights, speeds, penetration and floating given the contact flags.
// Floating frames need both feet above h_float and neither foot in contact.
// Airborne windows are maximal runs with no foot in contact; with airborne
// motion allowed, a window is exempt when the root rises faster than
// jump_exempt_vz at its first frame.
inline void complete_track(const MotionClip& clip, const ContactParams& params, ContactTrack& track) {
  const std::size_t n = clip.num_frames();
  const double zg = clip.ground_height;
  track.ground_height = zg;
  track.floating.assign(n, false);
  track.penetration.assign(n, {false, false});
  track.foot_height.assign(n, {0.0, 0.0});
  track.foot_speed.assign(n, {0.0, 0.0});
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t f = 0; f < 2; ++f) {
      const auto joint = static_cast<std::size_t>(clip.skeleton.foot_joints[f]);
      track.foot_height[t][f] = clip.at(t, joint).z();
      track.foot_speed[t][f] = central_speed(clip, joint, t);
      track.penetration[t][f] = track.foot_height[t][f] < zg;
    }
  }

  const bool airborne = params.airborne_allowed || clip.has_tag("airborne-allowed");
  std::vector<bool> exempt(n, false);
  if (airborne) {
    std::size_t t = 0;
    while (t < n) {
      if (track.contact[t][0] || track.contact[t][1]) {
        ++t;
        continue;
      }
      std::size_t end = t;
      while (end < n && !track.contact[end][0] && !track.contact[end][1]) {
        ++end;
      }
      if (vertical_velocity(clip, 0, t) > params.jump_exempt_vz) {
        std::fill(exempt.begin() + static_cast<long>(t), exempt.begin() + static_cast<long>(end), true);
      }
      t = end;
    }
  }

  for (std::size_t t = 0; t < n; ++t) {
    const bool both_above =
        track.foot_height[t][0] > zg + params.h_float && track.foot_height[t][1] > zg + params.h_float;
    track.floating[t] = both_above && !track.contact[t][0] && !track.contact[t][1] && !exempt[t];
  }
}

} // namespace detail

/// Height-and-speed contact detection.
inline ContactTrack detect_contacts(const MotionClip& clip, const ContactParams& params = {}) {
  const std::size_t n = clip.num_frames();
  ContactTrack track;
  track.contact.assign(n, {false, false});
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t f = 0; f < 2; ++f) {
      const auto joint = static_cast<std::size_t>(clip.skeleton.foot_joints[f]);
      const double h = clip.at(t, joint).z();
      const double v = detail::central_speed(clip, joint, t);
      track.contact[t][f] = h <= clip.ground_height + params.h_contact && v <= params.v_contact;
    }
  }
  detail::complete_track(clip, params, track);
  return track;
}

/// Track whose contact flags are a declared stance schedule (ground truth for
/// synthetic clips); the remaining indicators are computed as in detection.
inline ContactTrack track_from_schedule(const MotionClip& clip, const StanceSchedule& stance,
                                        const ContactParams& params = {}) {
  const std::size_t n = clip.num_frames();
  detail::require(stance[0].size() == n && stance[1].size() == n, "stance", "schedule length differs from clip");
  ContactTrack track;
  track.contact.assign(n, {false, false});
  for (std::size_t t = 0; t < n; ++t) {
    track.contact[t] = {stance[0][t], stance[1][t]};
  }
  detail::complete_track(clip, params, track);
  return track;
}

/// Declared schedule when the clip carries one, detection otherwise.
inline ContactTrack reference_contacts(const MotionClip& clip, const ContactParams& params = {}) {
  if (auto stance = declared_stance(clip)) {
    return track_from_schedule(clip, *stance, params);
  }
  return detect_contacts(clip, params);
}

struct ContactStats {
  double contact_ratio = 0.0;
  double float_ratio = 0.0;
  double penetration_ratio = 0.0;
};

/// Fraction of frames on which each indicator is set (for either foot).
inline ContactStats contact_stats(const ContactTrack& track) {
  ContactStats s;
  const std::size_t n = track.num_frames();
  if (n == 0) {
    return s;
  }
  std::size_t c = 0, fl = 0, pen = 0;
  for (std::size_t t = 0; t < n; ++t) {
    c += (track.contact[t][0] || track.contact[t][1]) ? 1 : 0;
    fl += track.floating[t] ? 1 : 0;
    pen += (track.penetration[t][0] || track.penetration[t][1]) ? 1 : 0;
  }
  const auto denom = static_cast<double>(n);
  s.contact_ratio = static_cast<double>(c) / denom;
  s.float_ratio = static_cast<double>(fl) / denom;
  s.penetration_ratio = static_cast<double>(pen) / denom;
  return s;
}

} // namespace forge
