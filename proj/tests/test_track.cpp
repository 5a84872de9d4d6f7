#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "forge/synth.hpp"
#include "forge/track.hpp"

using namespace forge;

namespace {

MotionClip gait(GaitCategory c, std::uint64_t seed = 2) {
  GaitSpec g;
  g.category = c;
  g.seed = seed;
  return generate_clip(g);
}

} // namespace

TEST(Execute, IdleTracksClosely) {
  const TrackResult r = execute(gait(GaitCategory::kIdle));
  EXPECT_TRUE(r.success);
  EXPECT_FALSE(r.terminated_at.has_value());
  EXPECT_LT(r.e_mpjpe, 0.01);
  EXPECT_EQ(r.executed.num_frames(), 60u);
}

TEST(Execute, FeetNeverBelowGround) {
  for (auto kind : {CorruptionKind::kPenetrate, CorruptionKind::kNoise}) {
    const MotionClip ref = corrupt_clip(gait(GaitCategory::kWalk), {kind, 0.05, 3});
    const TrackResult r = execute(ref);
    for (std::size_t t = 0; t < r.executed.num_frames(); ++t) {
      for (std::size_t f = 0; f < 2; ++f) EXPECT_GE(r.executed.foot(t, f).z(), ref.ground_height);
    }
  }
}

TEST(Execute, PinnedFeetDoNotSlide) {
  const MotionClip ref = corrupt_clip(gait(GaitCategory::kWalk), {CorruptionKind::kSkate, 0.03, 0});
  const TrackResult r = execute(ref);
  const ContactTrack tr = reference_contacts(ref);
  for (std::size_t t = 1; t < r.executed.num_frames(); ++t) {
    for (std::size_t f = 0; f < 2; ++f) {
      if (tr.contact[t][f] && tr.contact[t - 1][f]) {
        EXPECT_NEAR((r.executed.foot(t, f) - r.executed.foot(t - 1, f)).head<2>().norm(), 0.0, 1e-12);
      }
    }
  }
}

TEST(Execute, SkatingReferenceTerminates) {
  // Strong skating drags the root away from the reference.
  const MotionClip ref = corrupt_clip(gait(GaitCategory::kWalk), {CorruptionKind::kSkate, 0.2, 0});
  const TrackResult r = execute(ref);
  ASSERT_TRUE(r.terminated_at.has_value());
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.executed.num_frames(), *r.terminated_at + 1);
}

TEST(Execute, SuccessIsThresholdOnError) {
  const MotionClip ref = corrupt_clip(gait(GaitCategory::kKick), {CorruptionKind::kNoise, 0.02, 4});
  const TrackResult base = execute(ref);
  ASSERT_FALSE(base.terminated_at.has_value());
  TrackParams strict;
  strict.succ_mpjpe = base.e_mpjpe * 0.999;
  EXPECT_FALSE(execute(ref, strict).success);
  TrackParams loose;
  loose.succ_mpjpe = base.e_mpjpe * 1.001;
  EXPECT_TRUE(execute(ref, loose).success);
  EXPECT_GE(base.e_mpkpe, 0.0);
}

TEST(Batch, MeansAndWorkerInvariance) {
  std::vector<MotionClip> corpus;
  for (std::uint64_t s = 0; s < 6; ++s) {
    corpus.push_back(corrupt_clip(gait(GaitCategory::kWalk, s), {CorruptionKind::kSkate, 0.05 * static_cast<double>(s), 0}));
  }
  const BatchTrackResult one = batch_execute(corpus, {}, {}, 1);
  const BatchTrackResult four = batch_execute(corpus, {}, {}, 4);
  double e = 0.0, k = 0.0, ok = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_EQ(one.results[i].e_mpjpe, four.results[i].e_mpjpe);
    e += one.results[i].e_mpjpe;
    k += one.results[i].e_mpkpe;
    ok += one.results[i].success ? 1.0 : 0.0;
  }
  EXPECT_NEAR(one.mean_e_mpjpe, e / 6.0, 1e-15);
  EXPECT_NEAR(one.mean_e_mpkpe, k / 6.0, 1e-15);
  EXPECT_EQ(one.success_rate, ok / 6.0);
  EXPECT_EQ(one.success_rate, four.success_rate);
  EXPECT_THROW(batch_execute({}), ValidationError);
}

TEST(Csv, OneRowPerClip) {
  std::vector<MotionClip> corpus{gait(GaitCategory::kIdle),
                                 corrupt_clip(gait(GaitCategory::kWalk), {CorruptionKind::kSkate, 0.2, 0})};
  const BatchTrackResult b = batch_execute(corpus);
  const std::string csv = track_csv({"idle", "skate"}, b.results);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "clip_id,success,e_mpjpe,e_mpkpe,terminated_at");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("idle,1,", 0), 0u);
  EXPECT_EQ(line.back(), ',');
  std::getline(in, line);
  EXPECT_EQ(line.rfind("skate,0,", 0), 0u);
  EXPECT_THROW(track_csv({"x"}, b.results), ValidationError);
}

TEST(Params, ValidateRejectsBadValues) {
  TrackParams p;
  p.gain = 0.0;
  EXPECT_THROW(validate(p), ValidationError);
  p = {};
  p.gain = 1.5;
  EXPECT_THROW(validate(p), ValidationError);
  p = {};
  p.v_max = -1.0;
  EXPECT_THROW(validate(p), ValidationError);
}
