#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/clip_io.hpp"
#include "forge/contact.hpp"
#include "forge/error.hpp"
#include "forge/evalstats.hpp"
#include "forge/latent.hpp"
#include "forge/parallel.hpp"
#include "forge/plausibility.hpp"
#include "forge/qc.hpp"
#include "forge/refine.hpp"
#include "forge/rng.hpp"
#include "forge/synth.hpp"
#include "forge/track.hpp"

namespace forge {

// ---------------------------------------------------------------------------
// Configuration

struct SynthSettings {
  std::vector<std::string> labels{"walk", "jump", "kick", "idle"};
  std::size_t train_per_label = 40;
  std::size_t test_per_label = 15;
  double duration_s = 2.0;
  double fps = 30.0;
  double skate_fraction = 0.3;
  double skate_magnitude = 0.005; // m per contact frame
  double float_fraction = 0.2;
  double float_magnitude = 0.08; // m
};

struct GenSettings {
  std::size_t latent_dim = 16;
  std::size_t t_fix = 60;
  DiffusionSettings diffusion;
  double mix_ratio = 0.7;
  MixBase mix_base = MixBase::kPrevious;
  std::size_t eval_samples = 0; // 0: samples_per_round
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::size_t rounds = 3;
  std::size_t samples_per_round = 500;
  std::size_t workers = 0; // 0: hardware concurrency
  ContactParams contact;
  RefineParams refine;
  QcParams qc;
  GenSettings gen;
  TrackParams track;
  SynthSettings synth;
  std::string corpus_dir; // empty: synthetic benchmark
  std::filesystem::path out_dir = "forge_out";
};

inline constexpr int kConfigVersion = 1;

inline void validate(const PipelineConfig& c) {
  detail::require(c.rounds >= 1, "rounds", "must be >= 1");
  detail::require(c.samples_per_round >= 10, "samples_per_round", "must be >= 10");
  validate(c.contact);
  validate(c.refine);
  validate(c.qc);
  validate(c.track);
  detail::require(c.gen.latent_dim >= 1, "gen.latent_dim", "must be >= 1");
  detail::require(c.gen.t_fix >= 2, "gen.t_fix", "must be >= 2");
  detail::require(c.gen.mix_ratio >= 0.0 && c.gen.mix_ratio <= 1.0, "gen.mix_ratio", "must lie in [0, 1]");
  detail::require(!c.synth.labels.empty(), "synth.labels", "must not be empty");
  detail::require(c.synth.train_per_label >= 2, "synth.train_per_label", "must be >= 2");
  detail::require(c.synth.test_per_label >= 2, "synth.test_per_label", "must be >= 2");
  detail::require(c.synth.skate_fraction >= 0.0 && c.synth.float_fraction >= 0.0 &&
                      c.synth.skate_fraction + c.synth.float_fraction <= 1.0,
                  "synth.skate_fraction", "corruption fractions must be >= 0 and sum to <= 1");
  detail::require(c.synth.skate_magnitude >= 0.0, "synth.skate_magnitude", "must be >= 0");
  detail::require(c.synth.float_magnitude >= 0.0, "synth.float_magnitude", "must be >= 0");
  for (const auto& l : c.synth.labels) {
    gait_category_from_string(l);
  }
}

namespace detail {

// Reads known keys of one config section; unknown keys are rejected so typos
// do not silently fall back to defaults.
class SectionReader {
 public:
  SectionReader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) {
      throw ValidationError(prefix_ + ": expected an object");
    }
  }

  template <typename T>
  void read(const char* key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) {
      return;
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError(name(key) + ": wrong type");
    }
  }

  template <typename E>
  void read_choice(const char* key, E& out, const std::vector<std::pair<std::string, E>>& choices) {
    std::string text;
    for (const auto& [word, value] : choices) {
      if (value == out) {
        text = word;
      }
    }
    read(key, text);
    for (const auto& [word, value] : choices) {
      if (word == text) {
        out = value;
        return;
      }
    }
    std::string expected;
    for (const auto& [word, value] : choices) {
      expected += (expected.empty() ? "\"" : ", \"") + word + "\"";
    }
    throw ValidationError(name(key) + ": expected one of " + expected);
  }

  const json* section(const char* key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!known_.count(item.key())) {
        throw ValidationError(name(item.key()) + ": unknown key");
      }
    }
  }

 private:
  std::string name(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  const json& j_;
  std::string prefix_;
  std::set<std::string> known_;
};

} // namespace detail

inline PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  detail::SectionReader top(j, "");
  int version = 0;
  top.read("version", version);
  if (version != kConfigVersion) {
    throw ValidationError("version: expected " + std::to_string(kConfigVersion) + ", got " + std::to_string(version));
  }
  top.read("seed", c.seed);
  top.read("rounds", c.rounds);
  top.read("samples_per_round", c.samples_per_round);
  top.read("workers", c.workers);
  top.read("corpus_dir", c.corpus_dir);
  std::string out_dir = c.out_dir.string();
  top.read("out_dir", out_dir);
  c.out_dir = out_dir;
  if (const json* s = top.section("contact")) {
    detail::SectionReader r(*s, "contact");
    r.read("h_contact", c.contact.h_contact);
    r.read("v_contact", c.contact.v_contact);
    r.read("h_float", c.contact.h_float);
    r.read("airborne_allowed", c.contact.airborne_allowed);
    r.read("jump_exempt_vz", c.contact.jump_exempt_vz);
    r.finish();
  }
  if (const json* s = top.section("refine")) {
    detail::SectionReader r(*s, "refine");
    r.read("w_fid", c.refine.w_fid);
    r.read("w_phys", c.refine.w_phys);
    r.read("w_smooth", c.refine.w_smooth);
    r.read("w_limb", c.refine.w_limb);
    r.read("max_iters", c.refine.max_iters);
    r.read("step_init", c.refine.step_init);
    r.read("tol_rel", c.refine.tol_rel);
    r.finish();
  }
  if (const json* s = top.section("qc")) {
    detail::SectionReader r(*s, "qc");
    r.read("eta", c.qc.eta);
    r.read("excluded_tags", c.qc.excluded_tags);
    r.finish();
  }
  if (const json* s = top.section("gen")) {
    detail::SectionReader r(*s, "gen");
    r.read("latent_dim", c.gen.latent_dim);
    r.read("t_fix", c.gen.t_fix);
    r.read("mix_ratio", c.gen.mix_ratio);
    r.read("eval_samples", c.gen.eval_samples);
    r.read("n_steps", c.gen.diffusion.n_steps);
    r.read("beta_start", c.gen.diffusion.beta_start);
    r.read("beta_end", c.gen.diffusion.beta_end);
    r.read("scale_schedule", c.gen.diffusion.scale_schedule);
    r.read("ridge_lambda", c.gen.diffusion.ridge_lambda);
    r.read("samples_per_element", c.gen.diffusion.samples_per_element);
    r.read("whiten", c.gen.diffusion.whiten);
    r.read_choice("variance", c.gen.diffusion.variance,
                  {{"beta", ReverseVariance::kBeta}, {"posterior", ReverseVariance::kPosterior}});
    r.read_choice("conditioning", c.gen.diffusion.conditioning,
                  {{"per_label", Conditioning::kPerLabel}, {"shared", Conditioning::kShared}});
    r.read_choice("mix_base", c.gen.mix_base, {{"original", MixBase::kOriginal}, {"previous", MixBase::kPrevious}});
    r.finish();
  }
  if (const json* s = top.section("track")) {
    detail::SectionReader r(*s, "track");
    r.read("gain", c.track.gain);
    r.read("v_max", c.track.v_max);
    r.read("fail_root_drift", c.track.fail_root_drift);
    r.read("succ_mpjpe", c.track.succ_mpjpe);
    r.finish();
  }
  if (const json* s = top.section("synth")) {
    detail::SectionReader r(*s, "synth");
    r.read("labels", c.synth.labels);
    r.read("train_per_label", c.synth.train_per_label);
    r.read("test_per_label", c.synth.test_per_label);
    r.read("duration_s", c.synth.duration_s);
    r.read("fps", c.synth.fps);
    r.read("skate_fraction", c.synth.skate_fraction);
    r.read("skate_magnitude", c.synth.skate_magnitude);
    r.read("float_fraction", c.synth.float_fraction);
    r.read("float_magnitude", c.synth.float_magnitude);
    r.finish();
  }
  top.finish();
  validate(c);
  return c;
}

inline json config_to_json(const PipelineConfig& c) {
  const auto& d = c.gen.diffusion;
  return {{"version", kConfigVersion},
          {"seed", c.seed},
          {"rounds", c.rounds},
          {"samples_per_round", c.samples_per_round},
          {"workers", c.workers},
          {"corpus_dir", c.corpus_dir},
          {"out_dir", c.out_dir.string()},
          {"contact",
           {{"h_contact", c.contact.h_contact},
            {"v_contact", c.contact.v_contact},
            {"h_float", c.contact.h_float},
            {"airborne_allowed", c.contact.airborne_allowed},
            {"jump_exempt_vz", c.contact.jump_exempt_vz}}},
          {"refine",
           {{"w_fid", c.refine.w_fid},
            {"w_phys", c.refine.w_phys},
            {"w_smooth", c.refine.w_smooth},
            {"w_limb", c.refine.w_limb},
            {"max_iters", c.refine.max_iters},
            {"step_init", c.refine.step_init},
            {"tol_rel", c.refine.tol_rel}}},
          {"qc", {{"eta", c.qc.eta}, {"excluded_tags", c.qc.excluded_tags}}},
          {"gen",
           {{"latent_dim", c.gen.latent_dim},
            {"t_fix", c.gen.t_fix},
            {"mix_ratio", c.gen.mix_ratio},
            {"eval_samples", c.gen.eval_samples},
            {"n_steps", d.n_steps},
            {"beta_start", d.beta_start},
            {"beta_end", d.beta_end},
            {"scale_schedule", d.scale_schedule},
            {"ridge_lambda", d.ridge_lambda},
            {"samples_per_element", d.samples_per_element},
            {"whiten", d.whiten},
            {"variance", d.variance == ReverseVariance::kBeta ? "beta" : "posterior"},
            {"conditioning", d.conditioning == Conditioning::kShared ? "shared" : "per_label"},
            {"mix_base", c.gen.mix_base == MixBase::kPrevious ? "previous" : "original"}}},
          {"track",
           {{"gain", c.track.gain},
            {"v_max", c.track.v_max},
            {"fail_root_drift", c.track.fail_root_drift},
            {"succ_mpjpe", c.track.succ_mpjpe}}},
          {"synth",
           {{"labels", c.synth.labels},
            {"train_per_label", c.synth.train_per_label},
            {"test_per_label", c.synth.test_per_label},
            {"duration_s", c.synth.duration_s},
            {"fps", c.synth.fps},
            {"skate_fraction", c.synth.skate_fraction},
            {"skate_magnitude", c.synth.skate_magnitude},
            {"float_fraction", c.synth.float_fraction},
            {"float_magnitude", c.synth.float_magnitude}}}};
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  return config_from_json(detail::parse_json(detail::read_text(path), path.string()));
}

// ---------------------------------------------------------------------------
// Synthetic benchmark: clean test split, partially corrupted train split.

inline Corpus make_benchmark(const SynthSettings& s, std::uint64_t seed) {
  Corpus corpus;
  for (std::size_t li = 0; li < s.labels.size(); ++li) {
    const GaitCategory category = gait_category_from_string(s.labels[li]);
    for (const char* split : {"train", "test"}) {
      const bool train = std::string_view(split) == "train";
      const std::size_t count = train ? s.train_per_label : s.test_per_label;
      // Which train clips get which artifact: a seeded permutation per label.
      Rng pick(derive_seed(seed, {hash_name("assign"), li}));
      const auto order = detail::draw_without_replacement(count, count, pick);
      const auto n_skate = static_cast<std::size_t>(std::lround(s.skate_fraction * static_cast<double>(count)));
      const auto n_float = static_cast<std::size_t>(std::lround(s.float_fraction * static_cast<double>(count)));
      std::vector<int> artifact(count, 0);
      if (train) {
        for (std::size_t k = 0; k < count; ++k) {
          artifact[order[k]] = k < n_skate ? 1 : (k < n_skate + n_float ? 2 : 0);
        }
      }
      for (std::size_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, {hash_name(split), li, i}));
        GaitSpec g;
        g.category = category;
        g.duration_s = s.duration_s;
        g.fps = s.fps;
        // Shared step timing keeps gait phases aligned across clips.
        g.stride_m = uniform(rng, 0.45, 0.55);
        g.step_period_s = 0.5;
        g.seed = rng();
        MotionClip clip = generate_clip(g);
        if (artifact[i] == 1) {
          clip = corrupt_clip(clip, {CorruptionKind::kSkate, s.skate_magnitude, 0});
        } else if (artifact[i] == 2) {
          clip = corrupt_clip(clip, {CorruptionKind::kFloat, s.float_magnitude, 0});
        }
        char id[96];
        std::snprintf(id, sizeof(id), "%s_%s_%03zu", s.labels[li].c_str(), split, i);
        corpus.push_back({id, split, std::move(clip)});
      }
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Round reports

struct RoundReport {
  std::size_t round = 0;
  RPrecision r_precision;
  double fid = 0.0;
  double div = 0.0;
  double div_gap = 0.0; // |div - div of the reference split|
  double penetrate = 0.0;
  double floating = 0.0;
  double skate = 0.0;
  double succ = 0.0; // raw samples
  double e_mpjpe = 0.0;
  double e_mpkpe = 0.0;
  double succ_refined = 0.0; // the same samples after refinement
  double e_mpjpe_refined = 0.0;
  double e_mpkpe_refined = 0.0;
  double accepted_fraction = 0.0;
  bool finetuned = false;
};

inline const std::vector<std::string>& round_report_columns() {
  static const std::vector<std::string> cols{
      "round",   "r_top1",  "r_top2",       "r_top3",          "fid",
      "div",     "div_gap", "penetrate",    "float",           "skate",
      "succ",    "e_mpjpe", "e_mpkpe",      "succ_refined",    "e_mpjpe_refined",
      "e_mpkpe_refined",    "accepted_fraction", "finetuned"};
  return cols;
}

inline json to_json(const RoundReport& r) {
  return {{"round", r.round},
          {"r_top1", r.r_precision.top1},
          {"r_top2", r.r_precision.top2},
          {"r_top3", r.r_precision.top3},
          {"fid", r.fid},
          {"div", r.div},
          {"div_gap", r.div_gap},
          {"penetrate", r.penetrate},
          {"float", r.floating},
          {"skate", r.skate},
          {"succ", r.succ},
          {"e_mpjpe", r.e_mpjpe},
          {"e_mpkpe", r.e_mpkpe},
          {"succ_refined", r.succ_refined},
          {"e_mpjpe_refined", r.e_mpjpe_refined},
          {"e_mpkpe_refined", r.e_mpkpe_refined},
          {"accepted_fraction", r.accepted_fraction},
          {"finetuned", r.finetuned}};
}

inline RoundReport round_report_from_json(const json& j) {
  try {
    RoundReport r;
    r.round = j.at("round").get<std::size_t>();
    r.r_precision.top1 = j.at("r_top1").get<double>();
    r.r_precision.top2 = j.at("r_top2").get<double>();
    r.r_precision.top3 = j.at("r_top3").get<double>();
    r.fid = j.at("fid").get<double>();
    r.div = j.at("div").get<double>();
    r.div_gap = j.at("div_gap").get<double>();
    r.penetrate = j.at("penetrate").get<double>();
    r.floating = j.at("float").get<double>();
    r.skate = j.at("skate").get<double>();
    r.succ = j.at("succ").get<double>();
    r.e_mpjpe = j.at("e_mpjpe").get<double>();
    r.e_mpkpe = j.at("e_mpkpe").get<double>();
    r.succ_refined = j.at("succ_refined").get<double>();
    r.e_mpjpe_refined = j.at("e_mpjpe_refined").get<double>();
    r.e_mpkpe_refined = j.at("e_mpkpe_refined").get<double>();
    r.accepted_fraction = j.at("accepted_fraction").get<double>();
    r.finetuned = j.at("finetuned").get<bool>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("round report: ") + e.what());
  }
}

inline std::string rounds_csv(const std::vector<RoundReport>& reports) {
  std::string out;
  const auto& cols = round_report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out += (i ? "," : "") + cols[i];
  }
  out += "\n";
  for (const auto& r : reports) {
    const auto f = [](double v) { return detail::format_double(v); };
    out += std::to_string(r.round) + "," + f(r.r_precision.top1) + "," + f(r.r_precision.top2) + "," +
           f(r.r_precision.top3) + "," + f(r.fid) + "," + f(r.div) + "," + f(r.div_gap) + "," + f(r.penetrate) +
           "," + f(r.floating) + "," + f(r.skate) + "," + f(r.succ) + "," + f(r.e_mpjpe) + "," + f(r.e_mpkpe) + "," +
           f(r.succ_refined) + "," + f(r.e_mpjpe_refined) + "," + f(r.e_mpkpe_refined) + "," +
           f(r.accepted_fraction) + "," + (r.finetuned ? "1" : "0") + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loop

struct Generator {
  LatentSpace space;
  DiffusionModel model;
};

/// Clean reference statistics the generated samples are compared against.
struct Reference {
  std::vector<LatentCode> codes;
  Centroids centroids;
  double div = 0.0;
};

inline Reference make_reference(const LatentSpace& space, const std::vector<MotionClip>& clips, std::uint64_t seed) {
  Reference ref;
  ref.codes = encode_all(space, clips);
  ref.centroids = label_centroids(ref.codes);
  ref.div = diversity(ref.codes, derive_seed(seed, {hash_name("div")}));
  return ref;
}

struct SampleBatch {
  std::vector<std::string> ids;
  std::vector<LatentCode> codes;
  std::vector<MotionClip> clips;
};

inline SampleBatch draw_samples(const Generator& gen, const std::vector<std::string>& labels, std::size_t count,
                                std::uint64_t stream_seed, const std::string& id_prefix, std::size_t workers) {
  detail::require(!labels.empty(), "labels", "no labels to sample");
  SampleBatch batch;
  batch.codes = parallel_map(count, workers, [&](std::size_t i) {
    return sample_latent(gen.model, labels[i % labels.size()], derive_seed(stream_seed, {i}));
  });
  for (std::size_t i = 0; i < count; ++i) {
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%04zu", id_prefix.c_str(), i);
    batch.ids.emplace_back(id);
    batch.clips.push_back(decode(gen.space, batch.codes[i]));
  }
  return batch;
}

inline std::vector<MotionClip> refine_all(const std::vector<MotionClip>& clips, const PipelineConfig& cfg) {
  return parallel_map(clips.size(), cfg.workers,
                      [&](std::size_t i) { return refine_clip(clips[i], cfg.refine, cfg.contact).refined; });
}

/// Post-round evaluation on fresh samples. The evaluation seeds do not depend
/// on the round, so consecutive rounds are compared on common random numbers.
inline RoundReport evaluate_generator(const Generator& gen, const Reference& ref, const PipelineConfig& cfg,
                                      std::size_t round) {
  const std::size_t n = cfg.gen.eval_samples > 0 ? cfg.gen.eval_samples : cfg.samples_per_round;
  std::vector<std::string> labels;
  for (const auto& [label, c] : ref.centroids) {
    labels.push_back(label);
  }
  const SampleBatch batch = draw_samples(gen, labels, n, derive_seed(cfg.seed, {hash_name("eval")}), "eval", cfg.workers);

  RoundReport r;
  r.round = round;
  r.fid = fid(batch.codes, ref.codes);
  r.div = diversity(batch.codes, derive_seed(cfg.seed, {hash_name("div")}));
  r.div_gap = std::abs(r.div - ref.div);
  r.r_precision = r_precision(batch.codes, ref.centroids, default_pool_size(ref.centroids),
                              derive_seed(cfg.seed, {hash_name("rprec")}));

  const auto metrics = parallel_map(batch.clips.size(), cfg.workers, [&](std::size_t i) {
    return clip_metrics(batch.clips[i], detect_contacts(batch.clips[i], cfg.contact));
  });
  for (const auto& m : metrics) {
    r.penetrate += m.penetrate;
    r.floating += m.floating;
    r.skate += m.skate;
  }
  r.penetrate /= static_cast<double>(n);
  r.floating /= static_cast<double>(n);
  r.skate /= static_cast<double>(n);

  const BatchTrackResult raw = batch_execute(batch.clips, cfg.track, cfg.contact, cfg.workers);
  const BatchTrackResult refined = batch_execute(refine_all(batch.clips, cfg), cfg.track, cfg.contact, cfg.workers);
  r.succ = raw.success_rate;
  r.e_mpjpe = raw.mean_e_mpjpe;
  r.e_mpkpe = raw.mean_e_mpkpe;
  r.succ_refined = refined.success_rate;
  r.e_mpjpe_refined = refined.mean_e_mpjpe;
  r.e_mpkpe_refined = refined.mean_e_mpkpe;
  return r;
}

struct RoundOutcome {
  Generator generator;
  RoundReport report;
  FinetuneSet finetune_set;
};

/// sample -> refine -> gate -> fine-tune -> evaluate.
inline RoundOutcome run_round(const Generator& gen, const Reference& ref, const PipelineConfig& cfg,
                              std::size_t round) {
  std::vector<std::string> labels;
  for (const auto& [label, c] : ref.centroids) {
    labels.push_back(label);
  }
  const SampleBatch batch = draw_samples(gen, labels, cfg.samples_per_round,
                                         derive_seed(cfg.seed, {hash_name("sample")}),
                                         "round" + std::to_string(round), cfg.workers);
  const std::vector<MotionClip> refined = refine_all(batch.clips, cfg);
  std::vector<RefinedPair> pairs;
  pairs.reserve(refined.size());
  for (std::size_t i = 0; i < refined.size(); ++i) {
    pairs.push_back({batch.ids[i], batch.clips[i], refined[i]});
  }

  RoundOutcome out;
  out.finetune_set = build_finetune_set(pairs, cfg.qc);
  out.generator = gen;
  if (!out.finetune_set.accepted.empty()) {
    std::vector<MotionClip> accepted;
    accepted.reserve(out.finetune_set.accepted.size());
    for (const auto& e : out.finetune_set.accepted) {
      accepted.push_back(e.clip);
    }
    out.generator.model = finetune(gen.model, gen.space, accepted, cfg.gen.mix_ratio, cfg.gen.mix_base);
  }
  out.report = evaluate_generator(out.generator, ref, cfg, round);
  out.report.accepted_fraction =
      static_cast<double>(out.finetune_set.accepted.size()) / static_cast<double>(cfg.samples_per_round);
  out.report.finetuned = !out.finetune_set.accepted.empty();
  return out;
}

inline std::vector<MotionClip> clips_of(const Corpus& corpus, const std::string& split) {
  std::vector<MotionClip> out;
  for (const auto& e : corpus) {
    if (e.split == split) {
      out.push_back(e.clip);
    }
  }
  return out;
}

inline Generator train_generator(const std::vector<MotionClip>& train, const PipelineConfig& cfg) {
  Generator gen;
  gen.space = fit_latent_space(train, cfg.gen.latent_dim, cfg.gen.t_fix);
  DiffusionSettings settings = cfg.gen.diffusion;
  settings.seed = derive_seed(cfg.seed, {hash_name("denoiser")});
  gen.model = train_denoiser(make_diffusion_model(settings), gen.space, encode_all(gen.space, train));
  return gen;
}

struct LoopResult {
  std::vector<RoundReport> reports;
  Generator generator; // after the last round
  Generator initial;
};

inline std::filesystem::path round_report_path(const std::filesystem::path& out_dir, std::size_t round) {
  return out_dir / ("round_" + std::to_string(round) + ".json");
}

/// Trains the initial generator, reports the round-0 baseline, then runs
/// cfg.rounds closed-loop rounds. Writes round reports, the rounds CSV,
/// accepted corpora, rejection logs and the final generator into out_dir
/// (skipped when out_dir is empty).
inline LoopResult run_loop(const PipelineConfig& cfg, const Corpus& corpus) {
  validate(cfg);
  const std::vector<MotionClip> train = clips_of(corpus, "train");
  std::vector<MotionClip> test = clips_of(corpus, "test");
  detail::require(!train.empty(), "corpus", "no train clips");
  if (test.empty()) {
    test = train;
  }
  const bool write = !cfg.out_dir.empty();

  LoopResult result;
  result.initial = train_generator(train, cfg);
  const Reference ref = make_reference(result.initial.space, test, cfg.seed);
  result.reports.push_back(evaluate_generator(result.initial, ref, cfg, 0));
  if (write) {
    detail::write_text(round_report_path(cfg.out_dir, 0), to_json(result.reports.back()).dump(2));
  }

  Generator gen = result.initial;
  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    RoundOutcome outcome;
    try {
      outcome = run_round(gen, ref, cfg, round);
    } catch (const ValidationError& e) {
      throw ValidationError("round " + std::to_string(round) + ": " + e.what());
    } catch (const NumericalError& e) {
      throw NumericalError("round " + std::to_string(round) + ": " + e.what());
    }
    if (write) {
      const auto dir = cfg.out_dir / ("round_" + std::to_string(round));
      write_finetune_set(dir, outcome.finetune_set);
      detail::write_text(round_report_path(cfg.out_dir, round), to_json(outcome.report).dump(2));
    }
    result.reports.push_back(outcome.report);
    gen = std::move(outcome.generator);
  }
  result.generator = std::move(gen);
  if (write) {
    detail::write_text(cfg.out_dir / "rounds.csv", rounds_csv(result.reports));
    save_generator(cfg.out_dir / "generator.json", result.generator.space, result.generator.model);
  }
  return result;
}

inline Corpus load_or_make_corpus(const PipelineConfig& cfg) {
  if (!cfg.corpus_dir.empty()) {
    return load_corpus(cfg.corpus_dir);
  }
  return make_benchmark(cfg.synth, derive_seed(cfg.seed, {hash_name("synth")}));
}

// ---------------------------------------------------------------------------
// Report: consolidated CSV and one SVG line plot per metric.

inline std::string svg_line_plot(const std::string& title, const std::vector<double>& xs,
                                 const std::vector<double>& ys) {
  const double w = 480.0, h = 320.0, left = 60.0, right = 20.0, top = 40.0, bottom = 40.0;
  double x_lo = xs.empty() ? 0.0 : *std::min_element(xs.begin(), xs.end());
  double x_hi = xs.empty() ? 1.0 : *std::max_element(xs.begin(), xs.end());
  double y_lo = ys.empty() ? 0.0 : std::min(0.0, *std::min_element(ys.begin(), ys.end()));
  double y_hi = ys.empty() ? 1.0 : *std::max_element(ys.begin(), ys.end());
  if (x_hi <= x_lo) x_hi = x_lo + 1.0;
  if (y_hi <= y_lo) y_hi = y_lo + 1.0;
  const auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * (w - left - right); };
  const auto py = [&](double y) { return h - bottom - (y - y_lo) / (y_hi - y_lo) * (h - top - bottom); };
  char buf[256];
  std::string s;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" font-family=\"sans-serif\" "
                "font-size=\"12\">\n",
                w, h);
  s += buf;
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf), "<text x=\"%.0f\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">%s</text>\n",
                w / 2, title.c_str());
  s += buf;
  std::snprintf(buf, sizeof(buf),
                "<path d=\"M%.1f %.1f V%.1f H%.1f\" fill=\"none\" stroke=\"black\"/>\n", left, top, h - bottom,
                w - right);
  s += buf;
  std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.4g</text>\n", left - 4,
                py(y_hi) + 4, y_hi);
  s += buf;
  std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.4g</text>\n", left - 4,
                py(y_lo) + 4, y_lo);
  s += buf;
  for (double x : xs) {
    std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%g</text>\n", px(x),
                  h - bottom + 16, x);
    s += buf;
  }
  std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">round</text>\n",
                (left + w - right) / 2, h - 6);
  s += buf;
  std::string points;
  for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%s%.1f,%.1f", i ? " " : "", px(xs[i]), py(ys[i]));
    points += buf;
  }
  s += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
  for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"#1f77b4\"/>\n", px(xs[i]),
                  py(ys[i]));
    s += buf;
  }
  s += "</svg>\n";
  return s;
}

/// Reads every round_<k>.json in dir, ordered by round.
inline std::vector<RoundReport> load_round_reports(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("cannot open directory " + dir.string());
  }
  std::map<std::size_t, RoundReport> by_round;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_regular_file() || !name.starts_with("round_") || entry.path().extension() != ".json") {
      continue;
    }
    const json j = detail::parse_json(detail::read_text(entry.path()), entry.path().string());
    RoundReport r;
    try {
      r = round_report_from_json(j);
    } catch (const ParseError& e) {
      throw ParseError(entry.path().string() + ": " + e.what());
    }
    if (!by_round.emplace(r.round, r).second) {
      throw ParseError(entry.path().string() + ": duplicate round " + std::to_string(r.round));
    }
  }
  if (by_round.empty()) {
    throw ValidationError("reports: no round reports found in " + dir.string());
  }
  std::vector<RoundReport> out;
  for (auto& [k, r] : by_round) {
    out.push_back(r);
  }
  return out;
}

struct ReportFiles {
  std::filesystem::path csv;
  std::vector<std::filesystem::path> plots;
};

inline ReportFiles write_report(const std::filesystem::path& in_dir, const std::filesystem::path& out_dir) {
  const std::vector<RoundReport> reports = load_round_reports(in_dir);
  ReportFiles files;
  files.csv = out_dir / "report.csv";
  detail::write_text(files.csv, rounds_csv(reports));

  std::vector<double> xs;
  for (const auto& r : reports) {
    xs.push_back(static_cast<double>(r.round));
  }
  const std::vector<std::pair<std::string, double RoundReport::*>> series{
      {"fid", &RoundReport::fid},
      {"div", &RoundReport::div},
      {"penetrate", &RoundReport::penetrate},
      {"float", &RoundReport::floating},
      {"skate", &RoundReport::skate},
      {"succ", &RoundReport::succ},
      {"e_mpjpe", &RoundReport::e_mpjpe},
      {"e_mpkpe", &RoundReport::e_mpkpe},
      {"accepted_fraction", &RoundReport::accepted_fraction}};
  for (const auto& [name, member] : series) {
    std::vector<double> ys;
    for (const auto& r : reports) {
      ys.push_back(r.*member);
    }
    const auto path = out_dir / ("plot_" + name + ".svg");
    detail::write_text(path, svg_line_plot(name + " vs round", xs, ys));
    files.plots.push_back(path);
  }
  std::vector<double> top1;
  for (const auto& r : reports) {
    top1.push_back(r.r_precision.top1);
  }
  const auto path = out_dir / "plot_r_top1.svg";
  detail::write_text(path, svg_line_plot("r_top1 vs round", xs, top1));
  files.plots.push_back(path);
  return files;
}

} // namespace forge
