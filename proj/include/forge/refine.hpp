#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "forge/contact.hpp"
#include "forge/error.hpp"
#include "forge/motion.hpp"
#include "forge/plausibility.hpp"

namespace forge {

struct RefineParams {
  double w_fid = 1.0;
  double w_phys = 10.0;
  double w_smooth = 0.1;
  double w_limb = 1.0;
  std::size_t max_iters = 500;
  double step_init = 1e-2;
  double tol_rel = 1e-6;
};

inline void validate(const RefineParams& p) {
  detail::require(p.w_fid >= 0.0, "refine.w_fid", "must be >= 0");
  detail::require(p.w_phys >= 0.0, "refine.w_phys", "must be >= 0");
  detail::require(p.w_smooth >= 0.0, "refine.w_smooth", "must be >= 0");
  detail::require(p.w_limb >= 0.0, "refine.w_limb", "must be >= 0");
  detail::require(p.max_iters >= 1, "refine.max_iters", "must be >= 1");
  detail::require(p.step_init > 0.0, "refine.step_init", "must be > 0");
  detail::require(p.tol_rel > 0.0, "refine.tol_rel", "must be > 0");
}

struct RefineResult {
  MotionClip refined;
  std::size_t iterations = 0;
  std::vector<double> objective_trace;
  PlausibilityReport report_before;
  PlausibilityReport report_after;
  double bone_length_rms = 0.0; // residual vs rest lengths, meters
};

/// Stage A: every maximal contact run of a foot is moved onto the ground at
/// the run's mean horizontal position; penetrating feet are lifted to the
/// ground. Other joints are untouched.
inline MotionClip project_contacts(const MotionClip& clip, const ContactTrack& track) {
  const std::size_t n = clip.num_frames();
  detail::require(track.num_frames() == n, "track", "length differs from clip");
  MotionClip out = clip;
  const double zg = clip.ground_height;
  for (std::size_t f = 0; f < 2; ++f) {
    const auto joint = static_cast<std::size_t>(clip.skeleton.foot_joints[f]);
    std::size_t t = 0;
    while (t < n) {
      if (!track.contact[t][f]) {
        ++t;
        continue;
      }
      std::size_t end = t;
      while (end < n && track.contact[end][f]) {
        ++end;
      }
      // Mean as offset from the first sample: a stationary run maps to itself exactly.
      const double x0 = clip.at(t, joint).x();
      const double y0 = clip.at(t, joint).y();
      double dx = 0.0;
      double dy = 0.0;
      for (std::size_t k = t; k < end; ++k) {
        dx += clip.at(k, joint).x() - x0;
        dy += clip.at(k, joint).y() - y0;
      }
      const auto len = static_cast<double>(end - t);
      const double mx = x0 + dx / len;
      const double my = y0 + dy / len;
      for (std::size_t k = t; k < end; ++k) {
        out.at(k, joint) = Vec3(mx, my, zg);
      }
      t = end;
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (track.penetration[k][f]) {
        out.at(k, joint).z() = zg;
      }
    }
  }
  return out;
}

/// E(x) = w_fid |x - x0|^2 + w_phys (3T - J(x)) + w_smooth sum_t |D2(x - x0)_t|^2
///        + w_limb sum (bone length - rest length)^2
/// with contact indicators frozen from the original clip. The smoothness term
/// acts on the displacement from the original so an unmodified clip is a
/// stationary point.
class RefineObjective {
 public:
  RefineObjective(const MotionClip& original, const ContactTrack& track, const RefineParams& params)
      : original_(original), track_(track), params_(params) {
    detail::require(track.num_frames() == original.num_frames(), "track", "length differs from clip");
  }

  std::size_t size() const { return original_.positions.size(); }

  double value(std::span<const double> x) const { return evaluate(x, {}); }

  double value_and_gradient(std::span<const double> x, std::span<double> grad) const {
    detail::require(grad.size() == x.size(), "grad", "size mismatch");
    std::fill(grad.begin(), grad.end(), 0.0);
    return evaluate(x, grad);
  }

 private:
  double evaluate(std::span<const double> x, std::span<double> grad) const {
    detail::require(x.size() == size(), "x", "size mismatch");
    const bool want_grad = !grad.empty();
    const std::size_t n = original_.num_frames();
    const std::size_t nj = original_.num_joints();
    const std::size_t stride = 3 * nj;
    const double zg = original_.ground_height;
    const auto& x0 = original_.positions;
    const auto at = [&](std::size_t t, std::size_t j, std::size_t a) { return (t * nj + j) * 3 + a; };

    double fid = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - x0[i];
      fid += d * d;
      if (want_grad) {
        grad[i] += 2.0 * params_.w_fid * d;
      }
    }

    // 3T - J accumulated as sum of (1 - r) terms.
    double deficit = 0.0;
    const std::array<std::size_t, 2> feet{static_cast<std::size_t>(original_.skeleton.foot_joints[0]),
                                          static_cast<std::size_t>(original_.skeleton.foot_joints[1])};
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t f = 0; f < 2; ++f) {
        const std::size_t j = feet[f];
        if (t > 0 && track_.contact[t][f] && track_.contact[t - 1][f]) {
          double d2 = 0.0;
          std::array<double, 3> d{};
          for (std::size_t a = 0; a < 3; ++a) {
            d[a] = x[at(t, j, a)] - x[at(t - 1, j, a)];
            d2 += d[a] * d[a];
          }
          deficit += -0.5 * std::expm1(-d2);
          if (want_grad) {
            const double r = std::exp(-d2);
            for (std::size_t a = 0; a < 3; ++a) {
              // d(-0.5 r)/dx_t = r d
              const double g = params_.w_phys * r * d[a];
              grad[at(t, j, a)] += g;
              grad[at(t - 1, j, a)] -= g;
            }
          }
        }
        if (track_.penetration[t][f]) {
          const double depth = zg - x[at(t, j, 2)];
          deficit += -0.5 * std::expm1(-depth * depth);
          if (want_grad) {
            grad[at(t, j, 2)] += -params_.w_phys * std::exp(-depth * depth) * depth;
          }
        }
      }
      if (track_.floating[t]) {
        const double z0 = x[at(t, feet[0], 2)];
        const double z1 = x[at(t, feet[1], 2)];
        const std::size_t low = z1 < z0 ? feet[1] : feet[0];
        const double gap = std::min(z0, z1) - zg;
        deficit += -std::expm1(-gap * gap);
        if (want_grad) {
          grad[at(t, low, 2)] += 2.0 * params_.w_phys * std::exp(-gap * gap) * gap;
        }
      }
    }

    double smooth = 0.0;
    if (n >= 3) {
      for (std::size_t t = 1; t + 1 < n; ++t) {
        for (std::size_t i = 0; i < stride; ++i) {
          const std::size_t c = t * stride + i;
          const double s = (x[c + stride] - x0[c + stride]) - 2.0 * (x[c] - x0[c]) + (x[c - stride] - x0[c - stride]);
          smooth += s * s;
          if (want_grad) {
            const double g = 2.0 * params_.w_smooth * s;
            grad[c + stride] += g;
            grad[c] -= 2.0 * g;
            grad[c - stride] += g;
          }
        }
      }
    }

    double limb = 0.0;
    const auto& parents = original_.skeleton.parent_index;
    const auto& rest = original_.skeleton.bone_lengths;
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 1; j < nj; ++j) {
        const auto p = static_cast<std::size_t>(parents[j]);
        std::array<double, 3> d{};
        double len2 = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
          d[a] = x[at(t, j, a)] - x[at(t, p, a)];
          len2 += d[a] * d[a];
        }
        const double len = std::sqrt(len2);
        const double e = len - rest[j];
        limb += e * e;
        if (want_grad && len > 0.0) {
          const double scale = 2.0 * params_.w_limb * e / len;
          for (std::size_t a = 0; a < 3; ++a) {
            grad[at(t, j, a)] += scale * d[a];
            grad[at(t, p, a)] -= scale * d[a];
          }
        }
      }
    }

    return params_.w_fid * fid + params_.w_phys * deficit + params_.w_smooth * smooth + params_.w_limb * limb;
  }

  const MotionClip& original_;
  const ContactTrack& track_;
  RefineParams params_;
};

inline double bone_length_rms(const MotionClip& clip) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < clip.num_frames(); ++t) {
    for (std::size_t j = 1; j < clip.num_joints(); ++j) {
      const double e = bone_length(clip, t, j) - clip.skeleton.bone_lengths[j];
      sum += e * e;
      ++count;
    }
  }
  return count > 0 ? std::sqrt(sum / static_cast<double>(count)) : 0.0;
}

/// Stage B: projected gradient descent with backtracking on RefineObjective.
/// Foot coordinates on frozen contact frames stay at their Stage-A values and
/// every free foot height is kept at or above the ground.
inline RefineResult smooth_refine(const MotionClip& clip, const MotionClip& original, const ContactTrack& track,
                                  const RefineParams& params) {
  validate(params);
  const std::size_t n = original.num_frames();
  detail::require(clip.num_frames() == n && clip.num_joints() == original.num_joints(), "clip",
                  "shape differs from original");
  const std::size_t nj = original.num_joints();
  const double zg = original.ground_height;

  std::vector<bool> pinned(clip.positions.size(), false);
  std::vector<double> lower(clip.positions.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t f = 0; f < 2; ++f) {
      const std::size_t base = (t * nj + static_cast<std::size_t>(original.skeleton.foot_joints[f])) * 3;
      if (track.contact[t][f]) {
        pinned[base] = pinned[base + 1] = pinned[base + 2] = true;
      }
      lower[base + 2] = zg;
    }
  }

  RefineObjective objective(original, track, params);
  std::vector<double> x = clip.positions;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!pinned[i]) {
      x[i] = std::max(x[i], lower[i]);
    }
  }
  std::vector<double> grad(x.size());
  std::vector<double> trial(x.size());

  RefineResult result;
  double energy = objective.value_and_gradient(x, grad);
  if (!std::isfinite(energy)) {
    throw NumericalError("refine: non-finite objective");
  }
  result.objective_trace.push_back(energy);

  double step = params.step_init;
  for (std::size_t iter = 0; iter < params.max_iters; ++iter) {
    double stationarity = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (pinned[i]) {
        grad[i] = 0.0;
      } else {
        stationarity = std::max(stationarity, std::abs(x[i] - std::max(x[i] - grad[i], lower[i])));
      }
    }
    if (stationarity < 1e-12) {
      break;
    }

    double trial_energy = energy;
    bool improved = false;
    while (step > 1e-20) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        trial[i] = pinned[i] ? x[i] : std::max(x[i] - step * grad[i], lower[i]);
      }
      trial_energy = objective.value(trial);
      if (trial_energy < energy) {
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) {
      break;
    }

    const double decrease = (energy - trial_energy) / std::max(std::abs(energy), std::numeric_limits<double>::min());
    x.swap(trial);
    energy = objective.value_and_gradient(x, grad);
    result.objective_trace.push_back(energy);
    ++result.iterations;
    if (decrease < params.tol_rel) {
      break;
    }
    step *= 2.0;
  }

  result.refined = clip;
  result.refined.positions = std::move(x);
  result.report_before = sequence_objective(original, track);
  result.report_after = sequence_objective(result.refined, track);
  result.bone_length_rms = bone_length_rms(result.refined);
  return result;
}

/// detect_contacts -> project_contacts -> smooth_refine.
inline RefineResult refine_clip(const MotionClip& clip, const RefineParams& params,
                                const ContactParams& contact_params = {}) {
  const ContactTrack track = detect_contacts(clip, contact_params);
  const MotionClip projected = project_contacts(clip, track);
  return smooth_refine(projected, clip, track, params);
}

} // namespace forge
