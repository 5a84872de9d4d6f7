#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "forge/contact.hpp"
#include "forge/plausibility.hpp"
#include "forge/refine.hpp"
#include "forge/synth.hpp"
#include "test_util.hpp"

using namespace forge;

namespace {

MotionClip gait(GaitCategory c, std::uint64_t seed = 4) {
  GaitSpec g;
  g.category = c;
  g.seed = seed;
  return generate_clip(g);
}

bool trace_non_increasing(const std::vector<double>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i] > trace[i - 1]) return false;
  }
  return true;
}

} // namespace

TEST(Project, CleanClipUnchanged) {
  for (GaitCategory c : {GaitCategory::kWalk, GaitCategory::kJump, GaitCategory::kKick, GaitCategory::kIdle}) {
    const MotionClip clip = gait(c);
    EXPECT_TRUE(project_contacts(clip, detect_contacts(clip)) == clip) << to_string(c);
  }
}

TEST(Project, PenetrationClampedToZero) {
  const MotionClip clip = corrupt_clip(gait(GaitCategory::kWalk), {CorruptionKind::kPenetrate, 0.03, 0});
  const ContactTrack tr = detect_contacts(clip);
  const MotionClip out = project_contacts(clip, tr);
  EXPECT_EQ(clip_metrics(out, tr).penetrate, 0.0);
}

TEST(Project, SkateRunsMoveToIndependentRunMeans) {
  const MotionClip clip = corrupt_clip(gait(GaitCategory::kWalk), {CorruptionKind::kSkate, 0.02, 0});
  const ContactTrack tr = track_from_schedule(clip, *declared_stance(clip));
  const MotionClip out = project_contacts(clip, tr);
  for (std::size_t f = 0; f < 2; ++f) {
    std::size_t t = 0;
    while (t < clip.num_frames()) {
      if (!tr.contact[t][f]) {
        ++t;
        continue;
      }
      std::size_t end = t;
      double sx = 0.0, sy = 0.0;
      while (end < clip.num_frames() && tr.contact[end][f]) {
        sx += clip.foot(end, f).x();
        sy += clip.foot(end, f).y();
        ++end;
      }
      const double len = static_cast<double>(end - t);
      for (std::size_t k = t; k < end; ++k) {
        EXPECT_NEAR(out.foot(k, f).x(), sx / len, 1e-12);
        EXPECT_NEAR(out.foot(k, f).y(), sy / len, 1e-12);
        EXPECT_EQ(out.foot(k, f).z(), clip.ground_height);
      }
      t = end;
    }
  }
  EXPECT_EQ(clip_metrics(out, tr).skate, 0.0);
}

TEST(Objective, GradientMatchesCentralDifferences) {
  std::mt19937_64 gen(77);
  std::normal_distribution<double> noise(0.0, 0.03);
  RefineParams params;
  params.w_smooth = 0.7;
  params.w_limb = 1.3;
  for (int trial = 0; trial < 20; ++trial) {
    const GaitCategory cats[] = {GaitCategory::kWalk, GaitCategory::kJump, GaitCategory::kKick, GaitCategory::kIdle};
    MotionClip original = gait(cats[trial % 4], static_cast<std::uint64_t>(trial));
    original.positions.resize(original.num_joints() * 3 * 12); // 12 frames keeps the check fast
    original.tags.clear();
    for (double& v : original.positions) v += noise(gen);
    const ContactTrack tr = detect_contacts(original);
    RefineObjective obj(original, tr, params);
    std::vector<double> x = original.positions;
    for (double& v : x) v += noise(gen);
    std::vector<double> grad(x.size());
    obj.value_and_gradient(x, grad);
    const double h = 1e-6;
    double num2 = 0.0, diff2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      std::vector<double> xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (obj.value(xp) - obj.value(xm)) / (2.0 * h);
      num2 += fd * fd;
      diff2 += (fd - grad[i]) * (fd - grad[i]);
    }
    EXPECT_LT(std::sqrt(diff2) / std::max(std::sqrt(num2), 1e-12), 1e-5) << "trial " << trial;
  }
}

TEST(Smooth, CleanClipStaysPut) {
  const MotionClip clip = gait(GaitCategory::kWalk);
  const RefineResult r = refine_clip(clip, {});
  EXPECT_LE(r.iterations, 1u);
  EXPECT_LT(compute_clip_error(clip, r.refined).mpjpe, 1e-6);
  double worst = 0.0;
  for (std::size_t i = 0; i < clip.positions.size(); ++i) {
    worst = std::max(worst, std::abs(clip.positions[i] - r.refined.positions[i]));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Smooth, FloatingIdleImproves) {
  const MotionClip clip = corrupt_clip(gait(GaitCategory::kIdle), {CorruptionKind::kFloat, 0.08, 0});
  const RefineResult r = refine_clip(clip, {});
  EXPECT_LT(r.report_after.metric_float, r.report_before.metric_float);
  EXPECT_GT(r.report_after.j, r.report_before.j);
  EXPECT_TRUE(trace_non_increasing(r.objective_trace));
}

TEST(RefineClip, HardGuaranteesAcrossMagnitudes) {
  for (double m : {0.01, 0.03, 0.1}) {
    for (auto kind : {CorruptionKind::kPenetrate, CorruptionKind::kSkate}) {
      const MotionClip clip = corrupt_clip(gait(GaitCategory::kWalk), {kind, m, 0});
      const ContactTrack tr = detect_contacts(clip);
      const RefineResult r = refine_clip(clip, {});
      const ClipMetrics after = clip_metrics(r.refined, tr);
      EXPECT_EQ(after.penetrate, 0.0) << m;
      EXPECT_EQ(after.skate, 0.0) << m;
      EXPECT_TRUE(trace_non_increasing(r.objective_trace));
      EXPECT_GE(r.report_after.j, r.report_before.j);
    }
  }
}

TEST(RefineClip, PenetrateMpjpeNearClampDistance) {
  const MotionClip clean = gait(GaitCategory::kIdle);
  const MotionClip clip = corrupt_clip(clean, {CorruptionKind::kPenetrate, 0.03, 0});
  const RefineResult r = refine_clip(clip, {});
  EXPECT_EQ(clip_metrics(r.refined, detect_contacts(r.refined)).penetrate, 0.0);
  // Only the two feet move, each by at most the clamp distance.
  const double bound = 2.0 * 0.03 / static_cast<double>(clip.num_joints());
  const double e = compute_clip_error(clip, r.refined).mpjpe;
  EXPECT_GT(e, 0.5 * bound);
  EXPECT_LE(e, bound + 1e-6);
}

TEST(RefineClip, HeavyNoiseStillReturnsAClip) {
  const MotionClip clip = corrupt_clip(gait(GaitCategory::kWalk), {CorruptionKind::kNoise, 1.0, 5});
  const RefineResult r = refine_clip(clip, {});
  EXPECT_EQ(r.refined.num_frames(), clip.num_frames());
  EXPECT_TRUE(trace_non_increasing(r.objective_trace));
}

TEST(RefineClip, Deterministic) {
  const MotionClip clip = corrupt_clip(gait(GaitCategory::kKick), {CorruptionKind::kNoise, 0.05, 5});
  const RefineResult a = refine_clip(clip, {});
  const RefineResult b = refine_clip(clip, {});
  EXPECT_TRUE(a.refined == b.refined);
  EXPECT_EQ(a.objective_trace, b.objective_trace);
}

TEST(RefineClip, LargeFidelityWeightApproachesStageA) {
  const MotionClip clip = corrupt_clip(gait(GaitCategory::kWalk), {CorruptionKind::kNoise, 0.03, 8});
  const ContactTrack tr = detect_contacts(clip);
  const MotionClip stage_a = project_contacts(clip, tr);
  const double target = compute_clip_error(clip, stage_a).mpjpe;
  double prev_gap = std::numeric_limits<double>::infinity();
  for (double w : {1.0, 100.0, 1e4}) {
    RefineParams p;
    p.w_fid = w;
    const RefineResult r = smooth_refine(stage_a, clip, tr, p);
    const double gap = std::abs(compute_clip_error(clip, r.refined).mpjpe - target);
    EXPECT_LE(gap, prev_gap + 1e-9) << w;
    prev_gap = gap;
  }
  EXPECT_LT(prev_gap, 1e-3);
}

TEST(Params, ValidateRejectsBadValues) {
  RefineParams p;
  p.w_fid = -1.0;
  EXPECT_THROW(validate(p), ValidationError);
  p = {};
  p.max_iters = 0;
  EXPECT_THROW(validate(p), ValidationError);
  p = {};
  p.tol_rel = 0.0;
  EXPECT_THROW(validate(p), ValidationError);
}
