#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "forge/error.hpp"
#include "forge/latent.hpp"
#include "forge/rng.hpp"

namespace forge {

struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov; // unbiased
  std::size_t n = 0;
};

inline GaussianSummary summarize(const std::vector<LatentCode>& codes) {
  if (codes.size() < 2) {
    throw ValidationError("codes: need at least 2 codes, got " + std::to_string(codes.size()));
  }
  const auto d = codes.front().values.size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(codes.size()), d);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].values.size() != d) {
      throw ValidationError("codes: dimension mismatch");
    }
    x.row(static_cast<Eigen::Index>(i)) = codes[i].values.transpose();
  }
  GaussianSummary g;
  g.n = codes.size();
  g.mean = x.colwise().mean().transpose();
  x.rowwise() -= g.mean.transpose();
  g.cov = x.transpose() * x / static_cast<double>(codes.size() - 1);
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  return g;
}

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

inline double psd_sqrt_trace(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

} // namespace detail

inline double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  detail::require(a.mean.size() == b.mean.size(), "codes", "dimension mismatch");
  const Eigen::MatrixXd sa = detail::psd_sqrt(a.cov);
  const Eigen::MatrixXd cross = sa * b.cov * sa;
  const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() -
                       2.0 * detail::psd_sqrt_trace(cross);
  return std::max(0.0, value);
}

inline double fid(const std::vector<LatentCode>& a, const std::vector<LatentCode>& b) {
  return frechet_distance(summarize(a), summarize(b));
}

namespace detail {

// First k entries of a seeded Fisher-Yates shuffle of 0..n-1.
inline std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = i;
  }
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

} // namespace detail

inline std::size_t default_subset_size(std::size_t n) { return std::min<std::size_t>(30, n / 2); }

/// Mean distance between aligned pairs of two disjoint random subsets.
inline double diversity(const std::vector<LatentCode>& x, std::size_t subset_size, std::uint64_t seed) {
  if (subset_size == 0 || x.size() < 2 * subset_size) {
    throw ValidationError("codes: diversity needs at least " + std::to_string(2 * std::max<std::size_t>(1, subset_size)) +
                          " codes, got " + std::to_string(x.size()));
  }
  Rng rng(seed);
  const auto idx = detail::draw_without_replacement(x.size(), 2 * subset_size, rng);
  double sum = 0.0;
  for (std::size_t i = 0; i < subset_size; ++i) {
    sum += (x[idx[i]].values - x[idx[subset_size + i]].values).norm();
  }
  return sum / static_cast<double>(subset_size);
}

inline double diversity(const std::vector<LatentCode>& x, std::uint64_t seed) {
  return diversity(x, default_subset_size(x.size()), seed);
}

using Centroids = std::map<std::string, Eigen::VectorXd>;

inline Centroids label_centroids(const std::vector<LatentCode>& codes) {
  Centroids sums;
  std::map<std::string, std::size_t> counts;
  for (const auto& c : codes) {
    auto [it, inserted] = sums.try_emplace(c.label, Eigen::VectorXd::Zero(c.values.size()));
    it->second += c.values;
    ++counts[c.label];
  }
  for (auto& [label, v] : sums) {
    v /= static_cast<double>(counts[label]);
  }
  return sums;
}

struct RPrecision {
  double top1 = 0.0;
  double top2 = 0.0;
  double top3 = 0.0;
};

/// Label-centroid retrieval. Each sample ranks its own centroid against
/// pool_size - 1 distractor centroids drawn from the other labels; the rank is
/// 1 + the number of distractors strictly closer.
inline RPrecision r_precision(const std::vector<LatentCode>& samples, const Centroids& centroids,
                              std::size_t pool_size, std::uint64_t seed) {
  detail::require(!samples.empty(), "samples", "is empty");
  if (pool_size < 1 || pool_size > centroids.size()) {
    throw ValidationError("pool_size: must lie in [1, " + std::to_string(centroids.size()) + "]");
  }
  std::vector<std::string> labels;
  for (const auto& [label, v] : centroids) {
    labels.push_back(label);
  }
  std::array<std::size_t, 3> hits{0, 0, 0};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto own = centroids.find(samples[i].label);
    if (own == centroids.end()) {
      throw ValidationError("label: unknown label '" + samples[i].label + "'");
    }
    std::vector<const Eigen::VectorXd*> others;
    for (const auto& l : labels) {
      if (l != samples[i].label) {
        others.push_back(&centroids.at(l));
      }
    }
    Rng rng(derive_seed(seed, {i}));
    const auto pick = detail::draw_without_replacement(others.size(), pool_size - 1, rng);
    const double own_dist = (samples[i].values - own->second).norm();
    std::size_t rank = 1;
    for (const std::size_t k : pick) {
      if ((samples[i].values - *others[k]).norm() < own_dist) {
        ++rank;
      }
    }
    for (std::size_t k = 0; k < 3; ++k) {
      hits[k] += rank <= k + 1 ? 1 : 0;
    }
  }
  const auto n = static_cast<double>(samples.size());
  return {static_cast<double>(hits[0]) / n, static_cast<double>(hits[1]) / n, static_cast<double>(hits[2]) / n};
}

inline std::size_t default_pool_size(const Centroids& c) { return std::min<std::size_t>(32, c.size()); }

} // namespace forge
