#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "forge/clip_io.hpp"
#include "forge/error.hpp"
#include "forge/motion.hpp"
#include "forge/rng.hpp"

namespace forge {

// ---------------------------------------------------------------------------
// Linear autoencoder: principal subspace of flattened, fixed-length clips.

struct LatentSpace {
  std::size_t t_fix = 60;
  Eigen::VectorXd mean;
  Eigen::MatrixXd basis; // ambient x latent, orthonormal columns
  // Decoded clips take these from the corpus.
  Skeleton skeleton;
  double fps = 30.0;
  double ground_height = 0.0;
  // Tags shared by every corpus clip of a label (e.g. "airborne-allowed").
  std::map<std::string, std::vector<std::string>> label_tags;

  std::size_t dim() const { return static_cast<std::size_t>(basis.cols()); }
  std::size_t ambient_dim() const { return static_cast<std::size_t>(basis.rows()); }
};

struct LatentCode {
  Eigen::VectorXd values;
  std::string label;
};

inline Eigen::VectorXd flatten(const MotionClip& clip, std::size_t t_fix) {
  const MotionClip fixed = resample(clip, t_fix);
  return Eigen::Map<const Eigen::VectorXd>(fixed.positions.data(), static_cast<Eigen::Index>(fixed.positions.size()));
}

/// Top-d right singular directions of the centered corpus matrix. Each basis
/// column is signed so its largest-magnitude entry is positive.
inline LatentSpace fit_latent_space(const std::vector<MotionClip>& corpus, std::size_t d, std::size_t t_fix = 60) {
  detail::require(d >= 1, "latent_dim", "must be >= 1");
  detail::require(t_fix >= 2, "t_fix", "must be >= 2");
  if (corpus.size() < d) {
    throw ValidationError("corpus: " + std::to_string(corpus.size()) + " clips is too small for latent_dim " +
                          std::to_string(d));
  }
  const MotionClip first = resample(corpus.front(), t_fix);
  const auto ambient = static_cast<Eigen::Index>(first.positions.size());
  detail::require(static_cast<Eigen::Index>(d) <= ambient, "latent_dim", "exceeds flattened clip size");

  Eigen::MatrixXd data(static_cast<Eigen::Index>(corpus.size()), ambient);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].num_joints() != first.num_joints()) {
      throw ValidationError("corpus: clips do not share a skeleton");
    }
    data.row(static_cast<Eigen::Index>(i)) = flatten(corpus[i], t_fix).transpose();
  }

  LatentSpace space;
  space.t_fix = t_fix;
  space.mean = data.colwise().mean().transpose();
  data.rowwise() -= space.mean.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinV);
  Eigen::MatrixXd v = svd.matrixV();
  if (v.cols() < static_cast<Eigen::Index>(d)) {
    // Fewer clips than ambient dimensions and d == corpus size: complete the
    // basis with a full decomposition.
    Eigen::BDCSVD<Eigen::MatrixXd> full(data, Eigen::ComputeFullV);
    v = full.matrixV();
  }
  space.basis = v.leftCols(static_cast<Eigen::Index>(d));
  for (Eigen::Index c = 0; c < space.basis.cols(); ++c) {
    Eigen::Index arg = 0;
    space.basis.col(c).cwiseAbs().maxCoeff(&arg);
    if (space.basis(arg, c) < 0.0) {
      space.basis.col(c) *= -1.0;
    }
  }
  space.skeleton = first.skeleton;
  space.fps = first.fps;
  space.ground_height = first.ground_height;

  std::map<std::string, bool> seen;
  for (const auto& clip : corpus) {
    std::vector<std::string> tags = clip.tags;
    std::erase_if(tags, [](const std::string& tag) {
      return tag.starts_with(kStanceTagPrefix[0]) || tag.starts_with(kStanceTagPrefix[1]);
    });
    std::sort(tags.begin(), tags.end());
    tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
    auto& shared = space.label_tags[clip.label];
    if (!seen[clip.label]) {
      seen[clip.label] = true;
      shared = tags;
      continue;
    }
    std::vector<std::string> common;
    std::set_intersection(shared.begin(), shared.end(), tags.begin(), tags.end(), std::back_inserter(common));
    shared = std::move(common);
  }
  return space;
}

inline LatentCode encode(const LatentSpace& space, const MotionClip& clip) {
  const Eigen::VectorXd x = flatten(clip, space.t_fix);
  if (x.size() != space.mean.size()) {
    throw ValidationError("clip: flattened size " + std::to_string(x.size()) + " does not match latent space " +
                          std::to_string(space.mean.size()));
  }
  return {space.basis.transpose() * (x - space.mean), clip.label};
}

inline MotionClip decode(const LatentSpace& space, const LatentCode& code) {
  if (code.values.size() != space.basis.cols()) {
    throw ValidationError("code: dimension " + std::to_string(code.values.size()) + " does not match latent space " +
                          std::to_string(space.basis.cols()));
  }
  MotionClip clip = make_clip(space.skeleton, space.t_fix, space.fps, space.ground_height);
  const Eigen::VectorXd x = space.mean + space.basis * code.values;
  std::copy(x.data(), x.data() + x.size(), clip.positions.begin());
  clip.label = code.label;
  if (const auto it = space.label_tags.find(code.label); it != space.label_tags.end()) {
    clip.tags = it->second;
  }
  return clip;
}

// ---------------------------------------------------------------------------
// Label-conditioned latent diffusion with per-step affine noise predictors.
// Per-label conditioning: eps_hat = A_{t,label} z_t + b_{t,label}, the affine
// map of [z_t ; onehot ; z_t x onehot]. Shared conditioning:
// eps_hat = A_t [z_t ; onehot] + b_t.
// With whitening on, both act on per-label whitened codes and samples are
// mapped back before decoding.

enum class ReverseVariance {
  kBeta,      // sigma_t^2 = beta_t
  kPosterior, // sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t)
};

enum class Conditioning { kPerLabel, kShared };

// What the accepted corpus is mixed against when fine-tuning: the corpus the
// model was first trained on, or the full mixture behind the current model.
enum class MixBase { kOriginal, kPrevious };

struct TrainingSlice {
  std::vector<LatentCode> codes;
  double weight = 1.0; // per element
};

struct DiffusionSettings {
  std::size_t n_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  // Multiply the endpoints by 1000 / n_steps so short chains reach pure noise.
  bool scale_schedule = true;
  double ridge_lambda = 1e-6;
  std::size_t samples_per_element = 64;
  std::uint64_t seed = 0;
  ReverseVariance variance = ReverseVariance::kBeta;
  Conditioning conditioning = Conditioning::kPerLabel;
  // Diffuse per-label whitened codes; fixed when the base corpus is fitted.
  bool whiten = true;
};

struct DenoiserHead {
  Eigen::MatrixXd weight; // dim x dim (per label) or dim x (dim + labels) (shared)
  Eigen::VectorXd bias;
};

struct DiffusionModel {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  double ridge_lambda = 1e-6;
  std::size_t samples_per_element = 64;
  std::uint64_t seed = 0;
  ReverseVariance variance = ReverseVariance::kBeta;
  Conditioning conditioning = Conditioning::kPerLabel;
  bool whiten = true;

  std::vector<std::string> labels;             // one-hot order
  // Per-label affine map into diffusion coordinates: w = forward (z - mean).
  std::vector<Eigen::VectorXd> norm_mean;
  std::vector<Eigen::MatrixXd> norm_forward;
  std::vector<Eigen::MatrixXd> norm_inverse;
  std::vector<std::vector<DenoiserHead>> heads; // [t - 1][label or 0]
  std::vector<double> train_loss;              // empirical L_diff per step
  std::vector<TrainingSlice> training;         // [0] is the original corpus

  std::size_t n_steps() const { return betas.size(); }
  bool trained() const { return !heads.empty() && heads.size() == betas.size(); }
  std::size_t dim() const { return trained() ? static_cast<std::size_t>(heads[0][0].weight.rows()) : 0; }
};

inline void set_schedule(DiffusionModel& model, std::vector<double> betas) {
  detail::require(!betas.empty(), "betas", "schedule is empty");
  for (std::size_t i = 0; i < betas.size(); ++i) {
    detail::require(betas[i] > 0.0 && betas[i] < 1.0, "betas[" + std::to_string(i) + "]", "must lie in (0, 1)");
    detail::require(i == 0 || betas[i] >= betas[i - 1], "betas[" + std::to_string(i) + "]", "must be non-decreasing");
  }
  model.betas = std::move(betas);
  model.alphas.resize(model.betas.size());
  model.alpha_bars.resize(model.betas.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < model.betas.size(); ++i) {
    model.alphas[i] = 1.0 - model.betas[i];
    prod *= model.alphas[i];
    model.alpha_bars[i] = prod;
  }
}

inline DiffusionModel make_diffusion_model(const DiffusionSettings& s = {}) {
  detail::require(s.n_steps >= 1, "gen.n_steps", "must be >= 1");
  detail::require(s.beta_start > 0.0 && s.beta_end >= s.beta_start, "gen.beta_start",
                  "need 0 < beta_start <= beta_end");
  detail::require(s.ridge_lambda >= 0.0, "gen.ridge_lambda", "must be >= 0");
  detail::require(s.samples_per_element >= 1, "gen.samples_per_element", "must be >= 1");
  const double scale = s.scale_schedule ? 1000.0 / static_cast<double>(s.n_steps) : 1.0;
  std::vector<double> betas(s.n_steps);
  for (std::size_t i = 0; i < s.n_steps; ++i) {
    const double w = s.n_steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(s.n_steps - 1);
    betas[i] = std::min(0.999, scale * (s.beta_start + w * (s.beta_end - s.beta_start)));
  }
  DiffusionModel m;
  set_schedule(m, std::move(betas));
  m.ridge_lambda = s.ridge_lambda;
  m.samples_per_element = s.samples_per_element;
  m.seed = s.seed;
  m.variance = s.variance;
  m.conditioning = s.conditioning;
  m.whiten = s.whiten;
  return m;
}

/// Closed-form marginal z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) noise, t in [1, n_steps].
inline Eigen::VectorXd forward_noise(const DiffusionModel& model, const Eigen::VectorXd& z0, std::size_t t,
                                     const Eigen::VectorXd& noise) {
  if (t < 1 || t > model.n_steps()) {
    throw ValidationError("t: step " + std::to_string(t) + " out of range [1, " + std::to_string(model.n_steps()) + "]");
  }
  detail::require(noise.size() == z0.size(), "noise", "dimension mismatch");
  const double abar = model.alpha_bars[t - 1];
  return std::sqrt(abar) * z0 + std::sqrt(1.0 - abar) * noise;
}

namespace detail {

inline std::size_t label_index(const std::vector<std::string>& labels, std::string_view label) {
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) {
    throw ValidationError("label: unknown label '" + std::string(label) + "'");
  }
  return static_cast<std::size_t>(it - labels.begin());
}

inline Eigen::VectorXd to_model_space(const DiffusionModel& model, std::size_t label, const Eigen::VectorXd& z) {
  if (model.norm_mean.empty()) {
    return z;
  }
  return model.norm_forward[label] * (z - model.norm_mean[label]);
}

inline Eigen::VectorXd from_model_space(const DiffusionModel& model, std::size_t label, const Eigen::VectorXd& w) {
  if (model.norm_mean.empty()) {
    return w;
  }
  return model.norm_inverse[label] * w + model.norm_mean[label];
}

// Eigen-whitening per label. Directions with variance below 1e-8 of the
// largest are scaled as if they had that floor variance.
inline void fit_normalizers(DiffusionModel& model, const std::vector<LatentCode>& codes) {
  model.norm_mean.clear();
  model.norm_forward.clear();
  model.norm_inverse.clear();
  if (!model.whiten) {
    return;
  }
  for (const auto& label : model.labels) {
    std::vector<const Eigen::VectorXd*> rows;
    for (const auto& c : codes) {
      if (c.label == label) {
        rows.push_back(&c.values);
      }
    }
    const auto d = rows.front()->size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (const auto* r : rows) {
      mean += *r;
    }
    mean /= static_cast<double>(rows.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto* r : rows) {
      const Eigen::VectorXd c = *r - mean;
      cov.noalias() += c * c.transpose();
    }
    cov /= static_cast<double>(rows.size() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (cov + cov.transpose()));
    const double top = std::max(eig.eigenvalues().maxCoeff(), 1e-300);
    const Eigen::VectorXd scale = eig.eigenvalues().cwiseMax(top * 1e-8).cwiseSqrt();
    const Eigen::MatrixXd& u = eig.eigenvectors();
    model.norm_mean.push_back(std::move(mean));
    model.norm_forward.push_back(scale.cwiseInverse().asDiagonal() * u.transpose());
    model.norm_inverse.push_back(u * scale.asDiagonal());
  }
}

struct TrainingPart {
  const std::vector<LatentCode>* codes = nullptr;
  double weight = 1.0; // per element
  std::uint64_t part_id = 0;
};

// Weighted ridge regression of eps on the head features for every step.
// Noise draws are seeded per (step, part, element). A per-label head without
// any weighted data keeps its previous fit.
inline void fit_denoisers(DiffusionModel& model, const std::vector<TrainingPart>& parts) {
  std::size_t dim = 0;
  for (const auto& part : parts) {
    if (!part.codes->empty()) {
      dim = static_cast<std::size_t>(part.codes->front().values.size());
      break;
    }
  }
  detail::require(dim > 0, "corpus", "no latent codes to train on");
  const bool shared = model.conditioning == Conditioning::kShared;
  const std::size_t k = model.labels.size();
  const std::size_t groups = shared ? 1 : k;
  const auto d = static_cast<Eigen::Index>(dim);
  const auto p = static_cast<Eigen::Index>(shared ? dim + k + 1 : dim + 1);
  const auto spe = static_cast<Eigen::Index>(model.samples_per_element);

  const std::vector<std::vector<DenoiserHead>> previous = std::move(model.heads);
  model.heads.assign(model.n_steps(), std::vector<DenoiserHead>(groups));
  model.train_loss.assign(model.n_steps(), 0.0);

  Eigen::MatrixXd features(spe, p);
  Eigen::MatrixXd noise(spe, d);
  for (std::size_t t = 1; t <= model.n_steps(); ++t) {
    const double abar = model.alpha_bars[t - 1];
    const double signal = std::sqrt(abar);
    const double spread = std::sqrt(1.0 - abar);
    std::vector<Eigen::MatrixXd> gram(groups, Eigen::MatrixXd::Zero(p, p));
    std::vector<Eigen::MatrixXd> cross(groups, Eigen::MatrixXd::Zero(p, d));
    std::vector<double> energy(groups, 0.0);
    std::vector<double> weight(groups, 0.0);

    for (const auto& part : parts) {
      if (part.weight == 0.0) {
        continue;
      }
      for (std::size_t i = 0; i < part.codes->size(); ++i) {
        const LatentCode& code = (*part.codes)[i];
        if (static_cast<std::size_t>(code.values.size()) != dim) {
          throw ValidationError("corpus: latent codes differ in dimension");
        }
        const std::size_t label = label_index(model.labels, code.label);
        const std::size_t g = shared ? 0 : label;
        Rng rng(derive_seed(model.seed, {t, part.part_id, i}));
        for (Eigen::Index s = 0; s < spe; ++s) {
          for (Eigen::Index a = 0; a < d; ++a) {
            noise(s, a) = standard_normal(rng);
          }
        }
        const Eigen::VectorXd x0 = to_model_space(model, label, code.values);
        features.leftCols(d) = (signal * x0.transpose()).replicate(spe, 1) + spread * noise;
        features.rightCols(p - d).setZero();
        if (shared) {
          features.col(d + static_cast<Eigen::Index>(label)).setOnes();
        }
        features.col(p - 1).setOnes();
        gram[g].noalias() += part.weight * features.transpose() * features;
        cross[g].noalias() += part.weight * features.transpose() * noise;
        energy[g] += part.weight * noise.squaredNorm();
        weight[g] += part.weight * static_cast<double>(spe);
      }
    }

    double total_weight = 0.0;
    for (std::size_t g = 0; g < groups; ++g) {
      DenoiserHead& head = model.heads[t - 1][g];
      if (weight[g] == 0.0) {
        if (previous.size() != model.n_steps() || previous[t - 1].size() != groups) {
          throw ValidationError("corpus: label '" + model.labels[g] + "' has no training data");
        }
        head = previous[t - 1][g];
        continue;
      }
      // Mean normal equations; the ridge acts on the weights, not the bias.
      const Eigen::MatrixXd mean_gram = gram[g] / weight[g];
      const Eigen::MatrixXd mean_cross = cross[g] / weight[g];
      Eigen::MatrixXd regularized = mean_gram;
      for (Eigen::Index a = 0; a + 1 < p; ++a) {
        regularized(a, a) += model.ridge_lambda;
      }
      Eigen::LDLT<Eigen::MatrixXd> solver(regularized);
      if (solver.info() != Eigen::Success || !solver.isPositive()) {
        throw NumericalError("train_denoiser: singular normal equations at step " + std::to_string(t));
      }
      const Eigen::MatrixXd w = solver.solve(mean_cross);
      if (!w.allFinite()) {
        throw NumericalError("train_denoiser: non-finite solution at step " + std::to_string(t));
      }
      head.weight = w.topRows(p - 1).transpose();
      head.bias = w.row(p - 1).transpose();
      const double residual = energy[g] / weight[g] - 2.0 * (w.transpose() * mean_cross).trace() +
                              (w.transpose() * mean_gram * w).trace();
      model.train_loss[t - 1] += weight[g] * residual;
      total_weight += weight[g];
    }
    if (total_weight > 0.0) {
      model.train_loss[t - 1] /= total_weight;
    }
  }
}

// Zero-weight slices are skipped; the rest take noise stream ids 0, 1, ... in order.
inline void fit_training(DiffusionModel& model) {
  std::vector<TrainingPart> parts;
  for (const auto& slice : model.training) {
    if (slice.weight > 0.0 && !slice.codes.empty()) {
      parts.push_back({&slice.codes, slice.weight, parts.size()});
    }
  }
  fit_denoisers(model, parts);
}

} // namespace detail

/// Fits the noise predictors of every step by minimizing the empirical
/// diffusion loss (plus ridge on the weights) in closed form.
inline DiffusionModel train_denoiser(const DiffusionModel& untrained, const LatentSpace& space,
                                     const std::vector<LatentCode>& corpus) {
  detail::require(!corpus.empty(), "corpus", "is empty");
  std::map<std::string, std::size_t> counts;
  for (const auto& c : corpus) {
    if (static_cast<std::size_t>(c.values.size()) != space.dim()) {
      throw ValidationError("corpus: code dimension does not match latent space");
    }
    ++counts[c.label];
  }
  for (const auto& [label, count] : counts) {
    if (count < 2) {
      throw ValidationError("corpus: label '" + label + "' appears fewer than 2 times");
    }
  }
  DiffusionModel model = untrained;
  model.labels.clear();
  for (const auto& [label, count] : counts) {
    model.labels.push_back(label);
  }
  model.heads.clear();
  model.training = {{corpus, 1.0 / static_cast<double>(corpus.size())}};
  detail::fit_normalizers(model, corpus);
  detail::fit_training(model);
  return model;
}

inline Eigen::VectorXd predict_noise(const DiffusionModel& model, const Eigen::VectorXd& z, std::size_t t,
                                     std::size_t label) {
  const auto d = z.size();
  if (model.conditioning == Conditioning::kShared) {
    const DenoiserHead& h = model.heads[t - 1][0];
    return h.weight.leftCols(d) * z + h.weight.col(d + static_cast<Eigen::Index>(label)) + h.bias;
  }
  const DenoiserHead& h = model.heads[t - 1][label];
  return h.weight * z + h.bias;
}

/// Ancestral sampling in latent space from z_n ~ N(0, I); the last step is deterministic.
inline LatentCode sample_latent(const DiffusionModel& model, std::string_view label, std::uint64_t seed) {
  if (!model.trained()) {
    throw ValidationError("model: not trained");
  }
  const std::size_t li = detail::label_index(model.labels, label);
  const auto d = static_cast<Eigen::Index>(model.dim());
  Rng rng(seed);
  Eigen::VectorXd z(d);
  for (Eigen::Index a = 0; a < d; ++a) {
    z[a] = standard_normal(rng);
  }
  for (std::size_t t = model.n_steps(); t >= 1; --t) {
    const double beta = model.betas[t - 1];
    const double alpha = model.alphas[t - 1];
    const double abar = model.alpha_bars[t - 1];
    const Eigen::VectorXd eps = predict_noise(model, z, t, li);
    z = (z - (beta / std::sqrt(1.0 - abar)) * eps) / std::sqrt(alpha);
    if (t > 1) {
      const double abar_prev = model.alpha_bars[t - 2];
      const double var =
          model.variance == ReverseVariance::kBeta ? beta : beta * (1.0 - abar_prev) / (1.0 - abar);
      const double sigma = std::sqrt(var);
      for (Eigen::Index a = 0; a < d; ++a) {
        z[a] += sigma * standard_normal(rng);
      }
    }
  }
  return {detail::from_model_space(model, li, z), std::string(label)};
}

inline MotionClip sample(const DiffusionModel& model, const LatentSpace& space, std::string_view label,
                         std::uint64_t seed) {
  return decode(space, sample_latent(model, label, seed));
}

inline std::vector<LatentCode> encode_all(const LatentSpace& space, const std::vector<MotionClip>& clips) {
  std::vector<LatentCode> codes;
  codes.reserve(clips.size());
  for (const auto& c : clips) {
    codes.push_back(encode(space, c));
  }
  return codes;
}

/// Retrains the denoisers on a weighted mixture: the accepted corpus carries
/// total weight mix_ratio and the base (see MixBase) 1 - mix_ratio. The latent
/// space and the original corpus are unchanged.
inline DiffusionModel finetune(const DiffusionModel& model, const LatentSpace& space,
                               const std::vector<MotionClip>& accepted, double mix_ratio = 0.7,
                               MixBase base = MixBase::kOriginal) {
  if (!model.trained()) {
    throw ValidationError("model: not trained");
  }
  if (accepted.empty()) {
    throw ValidationError("accepted: fine-tuning corpus is empty");
  }
  detail::require(mix_ratio >= 0.0 && mix_ratio <= 1.0, "mix_ratio", "must lie in [0, 1]");
  const std::vector<LatentCode> codes = encode_all(space, accepted);
  for (const auto& c : codes) {
    detail::label_index(model.labels, c.label);
  }
  DiffusionModel out = model;
  if (base == MixBase::kOriginal) {
    out.training.resize(1);
    out.training[0].weight = 1.0 / static_cast<double>(out.training[0].codes.size());
  }
  if (mix_ratio == 0.0) {
    detail::fit_training(out);
    return out;
  }
  for (auto& slice : out.training) {
    slice.weight *= 1.0 - mix_ratio;
  }
  out.training.push_back({codes, mix_ratio / static_cast<double>(codes.size())});
  detail::fit_training(out);
  return out;
}

// ---------------------------------------------------------------------------
// Generator file: JSON with decimal-array matrices.

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      row[static_cast<std::size_t>(c)] = m(r, c);
    }
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array()) {
    throw ParseError(field + ": expected an array of rows");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = j[static_cast<std::size_t>(r)].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw ParseError(field + ": ragged matrix");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = row[static_cast<std::size_t>(c)];
    }
  }
  return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace detail

inline constexpr int kModelSchemaVersion = 1;

inline nlohmann::json generator_to_json(const LatentSpace& space, const DiffusionModel& model) {
  nlohmann::json skeleton = clip_to_json(make_clip(space.skeleton, 0, space.fps, space.ground_height));
  skeleton.erase("frames");
  nlohmann::json training = nlohmann::json::array();
  for (const auto& slice : model.training) {
    nlohmann::json codes = nlohmann::json::array();
    for (const auto& c : slice.codes) {
      codes.push_back({{"label", c.label}, {"values", detail::vector_to_json(c.values)}});
    }
    training.push_back({{"weight", slice.weight}, {"codes", codes}});
  }
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t t = 0; t < model.heads.size(); ++t) {
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& h : model.heads[t]) {
      heads.push_back({{"A", detail::matrix_to_json(h.weight)}, {"b", detail::vector_to_json(h.bias)}});
    }
    steps.push_back({{"heads", heads}, {"loss", model.train_loss[t]}});
  }
  return {{"format", "forge-generator"},
          {"version", kModelSchemaVersion},
          {"latent",
           {{"t_fix", space.t_fix},
            {"mean", detail::vector_to_json(space.mean)},
            {"basis", detail::matrix_to_json(space.basis)},
            {"template", skeleton},
            {"label_tags", space.label_tags}}},
          {"diffusion",
           {{"betas", model.betas},
            {"ridge_lambda", model.ridge_lambda},
            {"samples_per_element", model.samples_per_element},
            {"seed", model.seed},
            {"variance", model.variance == ReverseVariance::kBeta ? "beta" : "posterior"},
            {"conditioning", model.conditioning == Conditioning::kShared ? "shared" : "per_label"},
            {"whiten", model.whiten},
            {"labels", model.labels},
            {"steps", steps},
            {"training", training}}}};
}

inline std::pair<LatentSpace, DiffusionModel> generator_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "forge-generator") {
      throw ParseError("format: not a forge generator file");
    }
    if (j.value("version", 0) != kModelSchemaVersion) {
      throw ParseError("version: unsupported generator schema version");
    }
    LatentSpace space;
    const auto& lat = j.at("latent");
    space.t_fix = lat.at("t_fix").get<std::size_t>();
    space.mean = detail::vector_from_json(lat.at("mean"));
    space.basis = detail::matrix_from_json(lat.at("basis"), "latent.basis");
    const auto& tmpl = lat.at("template");
    space.fps = tmpl.at("fps").get<double>();
    space.ground_height = tmpl.at("ground_height").get<double>();
    space.skeleton.joint_names = tmpl.at("joints").get<std::vector<std::string>>();
    space.skeleton.parent_index = tmpl.at("parents").get<std::vector<int>>();
    space.skeleton.bone_lengths = tmpl.at("bone_lengths").get<std::vector<double>>();
    const auto feet = tmpl.at("foot_joints").get<std::vector<int>>();
    detail::require(feet.size() == 2, "foot_joints", "exactly 2 foot joints required");
    space.skeleton.foot_joints = {feet[0], feet[1]};
    space.skeleton.keypoint_joints = tmpl.at("keypoint_joints").get<std::vector<int>>();
    space.label_tags = lat.at("label_tags").get<std::map<std::string, std::vector<std::string>>>();
    validate(space.skeleton);
    detail::require(space.mean.size() == space.basis.rows(), "latent.mean", "size differs from basis rows");

    const auto& dif = j.at("diffusion");
    DiffusionModel model;
    set_schedule(model, dif.at("betas").get<std::vector<double>>());
    model.ridge_lambda = dif.at("ridge_lambda").get<double>();
    model.samples_per_element = dif.at("samples_per_element").get<std::size_t>();
    model.seed = dif.at("seed").get<std::uint64_t>();
    model.variance = dif.at("variance").get<std::string>() == "posterior" ? ReverseVariance::kPosterior
                                                                          : ReverseVariance::kBeta;
    model.conditioning =
        dif.at("conditioning").get<std::string>() == "shared" ? Conditioning::kShared : Conditioning::kPerLabel;
    model.labels = dif.at("labels").get<std::vector<std::string>>();
    const std::size_t groups = model.conditioning == Conditioning::kShared ? 1 : model.labels.size();
    for (const auto& step : dif.at("steps")) {
      std::vector<DenoiserHead> heads;
      for (const auto& h : step.at("heads")) {
        heads.push_back({detail::matrix_from_json(h.at("A"), "diffusion.steps.heads.A"),
                         detail::vector_from_json(h.at("b"))});
      }
      if (heads.size() != groups) {
        throw ParseError("diffusion.steps: wrong number of heads");
      }
      model.heads.push_back(std::move(heads));
      model.train_loss.push_back(step.at("loss").get<double>());
    }
    if (!model.heads.empty() && model.heads.size() != model.betas.size()) {
      throw ParseError("diffusion.steps: one entry per step required");
    }
    model.whiten = dif.at("whiten").get<bool>();
    for (const auto& slice : dif.at("training")) {
      TrainingSlice s;
      s.weight = slice.at("weight").get<double>();
      for (const auto& c : slice.at("codes")) {
        s.codes.push_back({detail::vector_from_json(c.at("values")), c.at("label").get<std::string>()});
      }
      model.training.push_back(std::move(s));
    }
    if (model.trained()) {
      if (model.training.empty() || model.training[0].codes.empty()) {
        throw ParseError("diffusion.training: original corpus missing");
      }
      detail::fit_normalizers(model, model.training[0].codes);
    }
    return {std::move(space), std::move(model)};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("generator: ") + e.what());
  }
}

inline void save_generator(const std::filesystem::path& path, const LatentSpace& space, const DiffusionModel& model) {
  detail::write_text(path, generator_to_json(space, model).dump());
}

inline std::pair<LatentSpace, DiffusionModel> load_generator(const std::filesystem::path& path) {
  return generator_from_json(detail::parse_json(detail::read_text(path), path.string()));
}

} // namespace forge
