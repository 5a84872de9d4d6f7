#include <cmath>
#include <fstream>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "forge/latent.hpp"
#include "forge/synth.hpp"
#include "test_util.hpp"

using namespace forge;

namespace {

// Latent space whose codes are the raw coordinates (only dim() matters for training).
LatentSpace identity_space(std::size_t d) {
  LatentSpace s;
  s.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  s.basis = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  return s;
}

std::vector<LatentCode> gaussian_codes(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov, std::size_t n,
                                       const std::string& label, std::mt19937_64& gen) {
  const Eigen::MatrixXd l = cov.llt().matrixL();
  std::normal_distribution<double> nd;
  std::vector<LatentCode> out;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd e(mu.size());
    for (Eigen::Index a = 0; a < mu.size(); ++a) e[a] = nd(gen);
    out.push_back({mu + l * e, label});
  }
  return out;
}

DiffusionSettings plain(std::size_t spe = 64) {
  DiffusionSettings s;
  s.whiten = false;
  s.samples_per_element = spe;
  s.seed = 42;
  return s;
}

std::vector<MotionClip> small_corpus(std::size_t per_label) {
  std::vector<MotionClip> out;
  for (GaitCategory c : {GaitCategory::kWalk, GaitCategory::kIdle}) {
    for (std::size_t i = 0; i < per_label; ++i) {
      GaitSpec g;
      g.category = c;
      g.seed = 100 + i;
      g.stride_m = 0.4 + 0.02 * static_cast<double>(i);
      out.push_back(generate_clip(g));
    }
  }
  return out;
}

bool same_heads(const DiffusionModel& a, const DiffusionModel& b) {
  if (a.heads.size() != b.heads.size()) return false;
  for (std::size_t t = 0; t < a.heads.size(); ++t) {
    for (std::size_t g = 0; g < a.heads[t].size(); ++g) {
      if (a.heads[t][g].weight != b.heads[t][g].weight || a.heads[t][g].bias != b.heads[t][g].bias) return false;
    }
  }
  return true;
}

} // namespace

// ---------------------------------------------------------------------------
// Latent space

TEST(LatentSpace, OrthonormalSignedBasis) {
  const LatentSpace s = fit_latent_space(small_corpus(6), 5);
  const Eigen::MatrixXd gram = s.basis.transpose() * s.basis;
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
  for (Eigen::Index c = 0; c < 5; ++c) {
    Eigen::Index arg;
    s.basis.col(c).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(s.basis(arg, c), 0.0);
  }
}

TEST(LatentSpace, ExactSubspaceReconstructs) {
  std::mt19937_64 gen(1);
  const Skeleton sk = forge::testing::chain_skeleton(3);
  const MotionClip base = forge::testing::random_clip(sk, 5, gen);
  const MotionClip dir1 = forge::testing::random_clip(sk, 5, gen);
  const MotionClip dir2 = forge::testing::random_clip(sk, 5, gen);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<MotionClip> corpus;
  for (int i = 0; i < 10; ++i) {
    MotionClip c = base;
    const double a = u(gen), b = u(gen);
    for (std::size_t k = 0; k < c.positions.size(); ++k) c.positions[k] += a * dir1.positions[k] + b * dir2.positions[k];
    corpus.push_back(c);
  }
  const LatentSpace s = fit_latent_space(corpus, 2, 5);
  for (const auto& c : corpus) {
    EXPECT_LT(compute_clip_error(c, decode(s, encode(s, c))).mpjpe, 1e-9);
  }
}

TEST(LatentSpace, FullRankIsExact) {
  std::mt19937_64 gen(2);
  const Skeleton sk = forge::testing::chain_skeleton(3);
  std::vector<MotionClip> corpus;
  for (int i = 0; i < 20; ++i) corpus.push_back(forge::testing::random_clip(sk, 2, gen));
  const LatentSpace s = fit_latent_space(corpus, 18, 2);
  for (const auto& c : corpus) {
    EXPECT_LT(compute_clip_error(c, decode(s, encode(s, c))).mpjpe, 1e-9);
  }
  // More dimensions than clips: the basis is completed.
  std::vector<MotionClip> few(corpus.begin(), corpus.begin() + 18);
  const LatentSpace t = fit_latent_space(few, 18, 2);
  for (const auto& c : corpus) {
    EXPECT_LT(compute_clip_error(c, decode(t, encode(t, c))).mpjpe, 1e-9);
  }
}

TEST(LatentSpace, ResidualEnergyMatchesIndependentDecomposition) {
  std::mt19937_64 gen(3);
  const Skeleton sk = forge::testing::chain_skeleton(4);
  std::vector<MotionClip> corpus;
  for (int i = 0; i < 25; ++i) corpus.push_back(forge::testing::random_clip(sk, 4, gen));
  const std::size_t d = 6;
  const LatentSpace s = fit_latent_space(corpus, d, 4);

  Eigen::MatrixXd x(25, 48);
  for (int i = 0; i < 25; ++i) {
    x.row(i) = Eigen::Map<const Eigen::RowVectorXd>(corpus[static_cast<std::size_t>(i)].positions.data(), 48);
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x);
  double expected = 0.0;
  for (Eigen::Index k = static_cast<Eigen::Index>(d); k < svd.singularValues().size(); ++k) {
    expected += svd.singularValues()[k] * svd.singularValues()[k];
  }
  double got = 0.0;
  for (const auto& c : corpus) {
    const MotionClip r = decode(s, encode(s, c));
    for (std::size_t k = 0; k < c.positions.size(); ++k) got += std::pow(c.positions[k] - r.positions[k], 2);
  }
  EXPECT_NEAR(got, expected, 1e-9 * std::max(1.0, expected));
}

TEST(LatentSpace, EncodeDecodeProjection) {
  const auto corpus = small_corpus(6);
  const LatentSpace s = fit_latent_space(corpus, 4);
  std::mt19937_64 gen(4);
  std::normal_distribution<double> nd;
  Eigen::VectorXd v(4);
  for (int i = 0; i < 4; ++i) v[i] = nd(gen);
  const LatentCode back = encode(s, decode(s, {v, "walk"}));
  EXPECT_LT((back.values - v).norm(), 1e-10);

  const MotionClip zero = decode(s, {Eigen::VectorXd::Zero(4), "walk"});
  for (std::size_t k = 0; k < zero.positions.size(); ++k) EXPECT_EQ(zero.positions[k], s.mean[static_cast<Eigen::Index>(k)]);

  // Projection oracle with explicit matrices.
  const Eigen::VectorXd x = flatten(corpus[3], 60);
  const Eigen::VectorXd proj = s.mean + s.basis * (s.basis.transpose() * (x - s.mean));
  const MotionClip r = decode(s, encode(s, corpus[3]));
  for (std::size_t k = 0; k < r.positions.size(); ++k) EXPECT_NEAR(r.positions[k], proj[static_cast<Eigen::Index>(k)], 1e-12);
  EXPECT_EQ(r.label, corpus[3].label);
}

TEST(LatentSpace, LabelTagsAreSharedTags) {
  auto corpus = small_corpus(3);
  for (auto& c : corpus) c.tags.push_back("common");
  corpus[0].tags.push_back("only-one");
  const LatentSpace s = fit_latent_space(corpus, 2);
  EXPECT_EQ(s.label_tags.at("walk"), std::vector<std::string>{"common"});
  const MotionClip d = decode(s, {Eigen::VectorXd::Zero(2), "walk"});
  EXPECT_TRUE(d.has_tag("common"));
  EXPECT_FALSE(declared_stance(d).has_value());
}

TEST(LatentSpace, Errors) {
  const auto corpus = small_corpus(2);
  EXPECT_THROW(fit_latent_space(corpus, 5), ValidationError);
  const LatentSpace s = fit_latent_space(corpus, 2);
  EXPECT_THROW(decode(s, {Eigen::VectorXd::Zero(3), "walk"}), ValidationError);
  std::mt19937_64 gen(5);
  EXPECT_THROW(encode(s, forge::testing::random_clip(forge::testing::chain_skeleton(3), 60, gen)), ValidationError);
}

// ---------------------------------------------------------------------------
// Schedule and forward process

TEST(Schedule, CumulativeProductsAndValidation) {
  const DiffusionModel m = make_diffusion_model();
  ASSERT_EQ(m.n_steps(), 50u);
  double prod = 1.0;
  for (std::size_t t = 0; t < 50; ++t) {
    prod *= 1.0 - m.betas[t];
    EXPECT_EQ(m.alpha_bars[t], prod);
    if (t > 0) {
      EXPECT_LT(m.alpha_bars[t], m.alpha_bars[t - 1]);
    }
  }
  DiffusionModel bad;
  EXPECT_THROW(set_schedule(bad, {0.1, 0.05}), ValidationError);
  EXPECT_THROW(set_schedule(bad, {0.0}), ValidationError);
  EXPECT_THROW(set_schedule(bad, {1.0}), ValidationError);
}

TEST(ForwardNoise, ClosedFormCases) {
  DiffusionModel m;
  set_schedule(m, {1e-300, 0.1});
  const Eigen::VectorXd z0 = Eigen::Vector3d(1.0, -2.0, 0.5);
  const Eigen::VectorXd e1 = Eigen::Vector3d(1.0, 0.0, 0.0);
  EXPECT_LT((forward_noise(m, z0, 1, e1) - z0).norm(), 1e-140);
  const Eigen::VectorXd zt = forward_noise(m, Eigen::Vector3d::Zero(), 2, e1);
  EXPECT_NEAR(zt[0], std::sqrt(1.0 - m.alpha_bars[1]), 1e-15);
  EXPECT_THROW(forward_noise(m, z0, 0, e1), ValidationError);
  EXPECT_THROW(forward_noise(m, z0, 3, e1), ValidationError);
}

TEST(ForwardNoise, MonteCarloMoments) {
  const DiffusionModel m = make_diffusion_model();
  const Eigen::VectorXd z0 = Eigen::Vector3d(0.7, -1.2, 2.0);
  Rng rng(9);
  const int n = 100000;
  for (std::size_t t : {1u, 25u, 50u}) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(3), sq = Eigen::VectorXd::Zero(3);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd e(3);
      for (int a = 0; a < 3; ++a) e[a] = standard_normal(rng);
      const Eigen::VectorXd z = forward_noise(m, z0, t, e);
      sum += z;
      sq += z.cwiseProduct(z);
    }
    const double var = 1.0 - m.alpha_bars[t - 1];
    for (int a = 0; a < 3; ++a) {
      const double mean = sum[a] / n;
      const double emp_var = sq[a] / n - mean * mean;
      EXPECT_LT(std::abs(mean - std::sqrt(m.alpha_bars[t - 1]) * z0[a]), 3.0 * std::sqrt(var / n));
      EXPECT_LT(std::abs(emp_var - var), 3.0 * var * std::sqrt(2.0 / n));
    }
  }
}

// ---------------------------------------------------------------------------
// Denoiser training

TEST(Denoiser, SingleCodeBeatsNoiseVariance) {
  const std::size_t d = 4;
  std::vector<LatentCode> corpus(5, LatentCode{Eigen::Vector4d(0.5, -1.0, 2.0, 0.0), "a"});
  const DiffusionModel m = train_denoiser(make_diffusion_model(plain()), identity_space(d), corpus);
  for (std::size_t t = 0; t < m.n_steps(); ++t) EXPECT_LT(m.train_loss[t], static_cast<double>(d));
}

TEST(Denoiser, HugeRidgeGivesZeroMap) {
  std::mt19937_64 gen(6);
  const auto corpus = gaussian_codes(Eigen::Vector3d(1, 2, 3), Eigen::Matrix3d::Identity(), 50, "a", gen);
  DiffusionSettings s = plain();
  s.ridge_lambda = 1e12;
  const DiffusionModel m = train_denoiser(make_diffusion_model(s), identity_space(3), corpus);
  for (std::size_t t = 0; t < m.n_steps(); ++t) {
    EXPECT_LT(m.heads[t][0].weight.norm(), 1e-9);
    EXPECT_LT(m.heads[t][0].bias.norm(), 0.1); // mean of the drawn noise
    EXPECT_NEAR(m.train_loss[t], 3.0, 0.1);
  }
}

TEST(Denoiser, GaussianMmseOracle) {
  std::mt19937_64 gen(7);
  Eigen::Matrix3d cov;
  cov << 2.0, 0.3, 0.0, 0.3, 0.5, -0.1, 0.0, -0.1, 1.0;
  const Eigen::Vector3d mu(0.5, -1.0, 0.2);
  const auto corpus = gaussian_codes(mu, cov, 4000, "a", gen);
  // Oracle on the empirical moments the fit actually sees.
  Eigen::Vector3d m0 = Eigen::Vector3d::Zero();
  for (const auto& c : corpus) m0 += c.values;
  m0 /= static_cast<double>(corpus.size());
  Eigen::Matrix3d s0 = Eigen::Matrix3d::Zero();
  for (const auto& c : corpus) s0 += (c.values - m0) * (c.values - m0).transpose();
  s0 /= static_cast<double>(corpus.size());
  for (auto cond : {Conditioning::kPerLabel, Conditioning::kShared}) {
    DiffusionSettings s = plain(16);
    s.conditioning = cond;
    const DiffusionModel m = train_denoiser(make_diffusion_model(s), identity_space(3), corpus);
    // At the first steps the noise is a tiny part of z_t and the regression is too noisy to compare.
    for (std::size_t t : {5u, 10u, 25u, 50u}) {
      const double ab = m.alpha_bars[t - 1];
      const Eigen::Matrix3d a =
          std::sqrt(1.0 - ab) * (ab * s0 + (1.0 - ab) * Eigen::Matrix3d::Identity()).inverse();
      const Eigen::Vector3d b = -a * std::sqrt(ab) * m0;
      const Eigen::MatrixXd fitted = m.heads[t - 1][0].weight.leftCols(3);
      EXPECT_LT((fitted - a).norm() / a.norm(), 0.02) << "t=" << t;
      if (cond == Conditioning::kPerLabel) {
        EXPECT_LT((m.heads[t - 1][0].bias - b).norm(), 0.02 * std::max(1.0, b.norm())) << "t=" << t;
      }
    }
  }
}

TEST(Denoiser, ClosedFormBeatsCompetitor) {
  std::mt19937_64 gen(8);
  const auto corpus = gaussian_codes(Eigen::Vector2d(0, 1), Eigen::Matrix2d::Identity(), 40, "a", gen);
  const DiffusionModel m = train_denoiser(make_diffusion_model(plain(16)), identity_space(2), corpus);
  // Rebuild the exact training pairs of step t and score a perturbed map.
  const std::size_t t = 20;
  const double ab = m.alpha_bars[t - 1];
  auto loss = [&](const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      Rng rng(derive_seed(m.seed, {t, 0, i}));
      Eigen::MatrixXd eps(16, 2);
      for (int s = 0; s < 16; ++s)
        for (int k = 0; k < 2; ++k) eps(s, k) = standard_normal(rng);
      for (int s = 0; s < 16; ++s) {
        const Eigen::VectorXd e = eps.row(s).transpose();
        const Eigen::VectorXd zt = std::sqrt(ab) * corpus[i].values + std::sqrt(1.0 - ab) * e;
        sum += (e - a * zt - b).squaredNorm();
      }
    }
    return sum / (16.0 * static_cast<double>(corpus.size()));
  };
  const auto& h = m.heads[t - 1][0];
  const double best = loss(h.weight, h.bias);
  EXPECT_NEAR(best, m.train_loss[t - 1], 1e-6);
  EXPECT_LT(best, loss(h.weight * 1.05, h.bias));
  EXPECT_LT(best, loss(h.weight, h.bias + Eigen::Vector2d(0.02, -0.01)));
  EXPECT_LT(best, loss(Eigen::MatrixXd::Zero(2, 2), Eigen::Vector2d::Zero()));
}

TEST(Denoiser, Errors) {
  std::vector<LatentCode> once{{Eigen::Vector2d(1, 2), "a"}, {Eigen::Vector2d(1, 3), "a"}, {Eigen::Vector2d(0, 0), "b"}};
  EXPECT_THROW(train_denoiser(make_diffusion_model(plain()), identity_space(2), once), ValidationError);
  EXPECT_THROW(train_denoiser(make_diffusion_model(plain()), identity_space(2), {}), ValidationError);
  const DiffusionModel untrained = make_diffusion_model(plain());
  EXPECT_THROW(sample_latent(untrained, "a", 1), ValidationError);
}

// ---------------------------------------------------------------------------
// Sampling

class SamplingMoments : public ::testing::TestWithParam<bool> {};

TEST_P(SamplingMoments, ReproducesTrainingGaussian) {
  std::mt19937_64 gen(11);
  Eigen::Matrix3d cov;
  cov << 1.0, 0.4, 0.0, 0.4, 0.8, 0.2, 0.0, 0.2, 0.6;
  const Eigen::Vector3d mu(1.0, -0.5, 0.3);
  const auto corpus = gaussian_codes(mu, cov, 2000, "a", gen);
  DiffusionSettings s = plain(16);
  s.whiten = GetParam();
  const DiffusionModel m = train_denoiser(make_diffusion_model(s), identity_space(3), corpus);
  Eigen::Vector3d emp_mu = Eigen::Vector3d::Zero();
  Eigen::Matrix3d emp_cov = Eigen::Matrix3d::Zero();
  for (const auto& c : corpus) emp_mu += c.values;
  emp_mu /= static_cast<double>(corpus.size());
  for (const auto& c : corpus) emp_cov += (c.values - emp_mu) * (c.values - emp_mu).transpose();
  emp_cov /= static_cast<double>(corpus.size() - 1);

  const int n = 10000;
  std::vector<Eigen::VectorXd> draws;
  Eigen::Vector3d sm = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    draws.push_back(sample_latent(m, "a", static_cast<std::uint64_t>(i)).values);
    sm += draws.back();
  }
  sm /= n;
  Eigen::Matrix3d sc = Eigen::Matrix3d::Zero();
  for (const auto& z : draws) sc += (z - sm) * (z - sm).transpose();
  sc /= n - 1;
  EXPECT_LT((sm - emp_mu).norm(), 0.05);
  EXPECT_LT((sc - emp_cov).norm(), 0.1);
}

INSTANTIATE_TEST_SUITE_P(Whitening, SamplingMoments, ::testing::Bool());

TEST(Sampling, DeterministicPerSeed) {
  std::mt19937_64 gen(12);
  const auto corpus = gaussian_codes(Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity(), 30, "a", gen);
  const DiffusionModel m = train_denoiser(make_diffusion_model(), identity_space(2), corpus);
  EXPECT_EQ(sample_latent(m, "a", 5).values, sample_latent(m, "a", 5).values);
  EXPECT_NE(sample_latent(m, "a", 5).values, sample_latent(m, "a", 6).values);
  EXPECT_THROW(sample_latent(m, "zzz", 5), ValidationError);
}

TEST(Sampling, LabelsLandNearOwnCluster) {
  for (auto cond : {Conditioning::kPerLabel, Conditioning::kShared}) {
    std::mt19937_64 gen(13);
    const Eigen::Matrix3d cov = 0.2 * Eigen::Matrix3d::Identity();
    const Eigen::Vector3d ca(3, 0, 0), cb(-3, 1, 0);
    auto corpus = gaussian_codes(ca, cov, 100, "a", gen);
    const auto more = gaussian_codes(cb, cov, 100, "b", gen);
    corpus.insert(corpus.end(), more.begin(), more.end());
    DiffusionSettings s;
    s.conditioning = cond;
    const DiffusionModel m = train_denoiser(make_diffusion_model(s), identity_space(3), corpus);
    int near = 0;
    for (int i = 0; i < 200; ++i) {
      const Eigen::VectorXd z = sample_latent(m, "a", static_cast<std::uint64_t>(i)).values;
      near += (z - ca).norm() < (z - cb).norm() ? 1 : 0;
    }
    EXPECT_GE(near, 180);
  }
}

// ---------------------------------------------------------------------------
// Fine-tuning and persistence

TEST(Finetune, DegenerateMixtures) {
  const auto clips = small_corpus(5);
  const LatentSpace space = fit_latent_space(clips, 4);
  const auto codes = encode_all(space, clips);
  std::vector<MotionClip> accepted(clips.begin() + 2, clips.end());
  for (auto& c : accepted) {
    for (double& v : c.positions) v *= 1.01;
  }
  for (bool whiten : {false, true}) {
    DiffusionSettings s = plain(8);
    s.whiten = whiten;
    const DiffusionModel base = train_denoiser(make_diffusion_model(s), space, codes);
    for (auto mb : {MixBase::kOriginal, MixBase::kPrevious}) {
      EXPECT_TRUE(same_heads(finetune(base, space, accepted, 0.0, mb), base));
    }
    if (!whiten) {
      const DiffusionModel direct = train_denoiser(make_diffusion_model(s), space, encode_all(space, accepted));
      EXPECT_TRUE(same_heads(finetune(base, space, accepted, 1.0), direct));
    }
    const DiffusionModel mixed = finetune(base, space, accepted, 0.5);
    EXPECT_FALSE(same_heads(mixed, base));
    EXPECT_EQ(mixed.training.size(), 2u);
    const DiffusionModel twice = finetune(mixed, space, accepted, 0.5, MixBase::kPrevious);
    EXPECT_EQ(twice.training.size(), 3u);
    EXPECT_NEAR(twice.training[0].weight * 10.0 + twice.training[1].weight * 8.0 + twice.training[2].weight * 8.0, 1.0,
                1e-12);
    EXPECT_EQ(finetune(mixed, space, accepted, 0.5, MixBase::kOriginal).training.size(), 2u);
  }
  const DiffusionModel base = train_denoiser(make_diffusion_model(plain(8)), space, codes);
  EXPECT_THROW(finetune(base, space, {}, 0.5), ValidationError);
  EXPECT_THROW(finetune(base, space, accepted, 1.5), ValidationError);
}

TEST(Persistence, RoundTripSamplesBitIdentical) {
  const auto clips = small_corpus(5);
  const LatentSpace space = fit_latent_space(clips, 4);
  DiffusionModel m = train_denoiser(make_diffusion_model(), space, encode_all(space, clips));
  m = finetune(m, space, std::vector<MotionClip>(clips.begin(), clips.begin() + 4), 0.7, MixBase::kPrevious);
  forge::testing::TempDir dir("latent");
  save_generator(dir.path() / "g.json", space, m);
  const auto [space2, m2] = load_generator(dir.path() / "g.json");
  EXPECT_TRUE(same_heads(m, m2));
  EXPECT_EQ(m.betas, m2.betas);
  EXPECT_EQ(m.training.size(), m2.training.size());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_TRUE(sample(m, space, "walk", seed) == sample(m2, space2, "walk", seed));
  }
  const DiffusionModel f1 = finetune(m, space, clips, 0.7, MixBase::kPrevious);
  const DiffusionModel f2 = finetune(m2, space2, clips, 0.7, MixBase::kPrevious);
  EXPECT_TRUE(same_heads(f1, f2));
}

TEST(Persistence, RejectsForeignFiles) {
  forge::testing::TempDir dir("latent");
  std::ofstream(dir.path() / "x.json") << R"({"format": "something-else", "version": 1})";
  EXPECT_THROW(load_generator(dir.path() / "x.json"), ParseError);
  EXPECT_THROW(load_generator(dir.path() / "missing.json"), IoError);
}
