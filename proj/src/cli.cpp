#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "forge/forge.hpp"

namespace forge::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Options every subcommand shares.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> workers;
  std::string out;
};

void add_common(CLI::App* app, Common& c, const char* out_help) {
  app->add_option("--config", c.config, "pipeline config JSON (\"version\": 1)");
  app->add_option("--seed", c.seed, "override config seed");
  app->add_option("--workers", c.workers, "worker threads (0: all cores); results do not depend on it");
  app->add_option("--out", c.out, out_help);
}

PipelineConfig resolve(const Common& c) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.rounds) cfg.rounds = *c.rounds;
  if (c.workers) cfg.workers = *c.workers;
  if (!c.out.empty()) cfg.out_dir = c.out;
  validate(cfg);
  return cfg;
}

fs::path out_path(const Common& c, const PipelineConfig& cfg) {
  return c.out.empty() ? fs::path(cfg.out_dir) : fs::path(c.out);
}

std::vector<MotionClip> clips_in(const Corpus& corpus) {
  std::vector<MotionClip> clips;
  clips.reserve(corpus.size());
  for (const auto& e : corpus) clips.push_back(e.clip);
  return clips;
}

std::vector<std::string> ids_in(const Corpus& corpus) {
  std::vector<std::string> ids;
  for (const auto& e : corpus) ids.push_back(e.id);
  return ids;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& c, std::ostream& out) {
  const PipelineConfig cfg = resolve(c);
  const fs::path dir = out_path(c, cfg);
  const Corpus corpus = make_benchmark(cfg.synth, derive_seed(cfg.seed, {hash_name("synth")}));
  save_corpus(dir, corpus);
  out << "wrote " << corpus.size() << " clips to " << dir.string() << "\n";
  return kOk;
}

int cmd_eval(const Common& c, const std::string& corpus_dir, bool declared, std::ostream& out) {
  const PipelineConfig cfg = resolve(c);
  const Corpus corpus = load_corpus(corpus_dir);
  detail::require(!corpus.empty(), "corpus", "is empty");
  struct Row {
    ClipMetrics m;
    double j = 0.0;
  };
  const auto rows = parallel_map(corpus.size(), cfg.workers, [&](std::size_t i) {
    const MotionClip& clip = corpus[i].clip;
    const ContactTrack track = declared ? reference_contacts(clip, cfg.contact) : detect_contacts(clip, cfg.contact);
    return Row{clip_metrics(clip, track), sequence_objective(clip, track).j};
  });
  std::string csv = "clip_id,penetrate,float,skate,objective\n";
  ClipMetrics mean;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    csv += corpus[i].id + "," + detail::format_double(r.m.penetrate) + "," + detail::format_double(r.m.floating) +
           "," + detail::format_double(r.m.skate) + "," + detail::format_double(r.j) + "\n";
    mean.penetrate += r.m.penetrate / static_cast<double>(rows.size());
    mean.floating += r.m.floating / static_cast<double>(rows.size());
    mean.skate += r.m.skate / static_cast<double>(rows.size());
  }
  const fs::path dir = out_path(c, cfg);
  detail::write_text(dir / "eval.csv", csv);
  char line[160];
  std::snprintf(line, sizeof(line), "clips %zu  penetrate %.4f cm  float %.4f cm  skate %.4f cm\n", rows.size(),
                mean.penetrate, mean.floating, mean.skate);
  out << line;
  return kOk;
}

int cmd_refine(const Common& c, const std::string& corpus_dir, std::ostream& out) {
  const PipelineConfig cfg = resolve(c);
  const Corpus corpus = load_corpus(corpus_dir);
  const auto results = parallel_map(corpus.size(), cfg.workers,
                                    [&](std::size_t i) { return refine_clip(corpus[i].clip, cfg.refine, cfg.contact); });
  Corpus refined;
  json report = json::array();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& r = results[i];
    refined.push_back({corpus[i].id, corpus[i].split, r.refined});
    report.push_back({{"clip_id", corpus[i].id},
                      {"iterations", r.iterations},
                      {"objective_trace", r.objective_trace},
                      {"bone_length_rms", r.bone_length_rms},
                      {"before", to_json(r.report_before)},
                      {"after", to_json(r.report_after)}});
  }
  const fs::path dir = out_path(c, cfg);
  save_corpus(dir, refined);
  detail::write_text(dir / "refine_report.json", report.dump(2));
  out << "refined " << refined.size() << " clips into " << dir.string() << "\n";
  return kOk;
}

int cmd_qc(const Common& c, const std::string& original_dir, const std::string& refined_dir, std::ostream& out) {
  const PipelineConfig cfg = resolve(c);
  const Corpus original = load_corpus(original_dir);
  const Corpus refined = load_corpus(refined_dir);
  std::map<std::string, const MotionClip*> by_id;
  for (const auto& e : refined) by_id[e.id] = &e.clip;
  std::vector<RefinedPair> pairs;
  for (const auto& e : original) {
    const auto it = by_id.find(e.id);
    if (it == by_id.end()) {
      throw ValidationError("refined: no refined clip for '" + e.id + "'");
    }
    pairs.push_back({e.id, e.clip, *it->second});
  }
  const FinetuneSet set = build_finetune_set(pairs, cfg.qc);
  const fs::path dir = out_path(c, cfg);
  write_finetune_set(dir, set);
  out << "accepted " << set.accepted.size() << " of " << pairs.size() << "\n";
  return kOk;
}

int cmd_train_gen(const Common& c, const std::string& corpus_dir, std::ostream& out) {
  const PipelineConfig cfg = resolve(c);
  const std::vector<MotionClip> train = clips_in(load_corpus(corpus_dir, "train"));
  detail::require(!train.empty(), "corpus", "no train clips");
  const Generator gen = train_generator(train, cfg);
  const fs::path file = c.out.empty() ? fs::path(cfg.out_dir) / "generator.json" : fs::path(c.out);
  save_generator(file, gen.space, gen.model);
  out << "trained on " << train.size() << " clips, wrote " << file.string() << "\n";
  return kOk;
}

int cmd_sample(const Common& c, const std::string& model_file, std::size_t count, const std::string& label,
               std::ostream& out) {
  const PipelineConfig cfg = resolve(c);
  const auto [space, model] = load_generator(model_file);
  std::vector<std::string> labels = model.labels;
  if (!label.empty()) {
    detail::label_index(model.labels, label);
    labels = {label};
  }
  const Generator gen{space, model};
  const SampleBatch batch =
      draw_samples(gen, labels, count, derive_seed(cfg.seed, {hash_name("sample")}), "sample", cfg.workers);
  Corpus corpus;
  for (std::size_t i = 0; i < batch.clips.size(); ++i) {
    corpus.push_back({batch.ids[i], "train", batch.clips[i]});
  }
  const fs::path dir = out_path(c, cfg);
  save_corpus(dir, corpus);
  out << "wrote " << corpus.size() << " samples to " << dir.string() << "\n";
  return kOk;
}

int cmd_finetune(const Common& c, const std::string& model_file, const std::string& corpus_dir, std::ostream& out) {
  const PipelineConfig cfg = resolve(c);
  const auto [space, model] = load_generator(model_file);
  const std::vector<MotionClip> accepted = clips_in(load_corpus(corpus_dir));
  const DiffusionModel tuned = finetune(model, space, accepted, cfg.gen.mix_ratio, cfg.gen.mix_base);
  const fs::path file = c.out.empty() ? fs::path(cfg.out_dir) / "generator.json" : fs::path(c.out);
  save_generator(file, space, tuned);
  out << "fine-tuned on " << accepted.size() << " clips, wrote " << file.string() << "\n";
  return kOk;
}

int cmd_track(const Common& c, const std::string& corpus_dir, std::ostream& out) {
  const PipelineConfig cfg = resolve(c);
  const Corpus corpus = load_corpus(corpus_dir);
  const BatchTrackResult batch = batch_execute(clips_in(corpus), cfg.track, cfg.contact, cfg.workers);
  const fs::path file = c.out.empty() ? fs::path(cfg.out_dir) / "track.csv" : fs::path(c.out);
  detail::write_text(file, track_csv(ids_in(corpus), batch.results));
  char line[160];
  std::snprintf(line, sizeof(line), "succ %.4f  e_mpjpe %.6f m  e_mpkpe %.6f m\n", batch.success_rate,
                batch.mean_e_mpjpe, batch.mean_e_mpkpe);
  out << line;
  return kOk;
}

int cmd_loop(const Common& c, const std::string& corpus_dir, std::ostream& out) {
  PipelineConfig cfg = resolve(c);
  if (!corpus_dir.empty()) cfg.corpus_dir = corpus_dir;
  const Corpus corpus = load_or_make_corpus(cfg);
  const LoopResult result = run_loop(cfg, corpus);
  for (const auto& r : result.reports) {
    char line[200];
    std::snprintf(line, sizeof(line),
                  "round %zu  penetrate %.4f  float %.4f  skate %.4f  fid %.4f  succ %.3f  accepted %.3f\n", r.round,
                  r.penetrate, r.floating, r.skate, r.fid, r.succ, r.accepted_fraction);
    out << line;
  }
  out << "wrote " << (fs::path(cfg.out_dir) / "rounds.csv").string() << "\n";
  return kOk;
}

int cmd_report(const Common& c, const std::string& in_dir, std::ostream& out) {
  const PipelineConfig cfg = resolve(c);
  const fs::path dir = out_path(c, cfg);
  const ReportFiles files = write_report(in_dir.empty() ? dir : fs::path(in_dir), dir);
  out << "wrote " << files.csv.string() << " and " << files.plots.size() << " plots\n";
  return kOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"forge: closed-loop motion plausibility pipeline"};
  app.require_subcommand(1);
  Common common;
  std::string corpus_dir;
  std::string original_dir;
  std::string refined_dir;
  std::string model_file;
  std::string in_dir;
  std::string label;
  std::size_t count = 100;
  bool declared = false;

  auto* synth = app.add_subcommand("synth", "write the synthetic benchmark corpus");
  add_common(synth, common, "corpus directory");

  auto* eval = app.add_subcommand("eval", "plausibility metrics per clip (eval.csv)");
  add_common(eval, common, "output directory");
  eval->add_option("--corpus", corpus_dir, "corpus directory")->required();
  eval->add_flag("--declared", declared, "use declared stance schedules where present");

  auto* refine = app.add_subcommand("refine", "refine every clip of a corpus");
  add_common(refine, common, "refined corpus directory");
  refine->add_option("--corpus", corpus_dir, "corpus directory")->required();

  auto* qc = app.add_subcommand("qc", "gate refined clips against their originals");
  add_common(qc, common, "output directory (accepted/, rejections.csv)");
  qc->add_option("--original", original_dir, "original corpus directory")->required();
  qc->add_option("--refined", refined_dir, "refined corpus directory")->required();

  auto* train = app.add_subcommand("train-gen", "fit latent space and denoisers on the train split");
  add_common(train, common, "generator file");
  train->add_option("--corpus", corpus_dir, "corpus directory")->required();

  auto* sample_cmd = app.add_subcommand("sample", "draw clips from a generator");
  add_common(sample_cmd, common, "corpus directory");
  sample_cmd->add_option("--model", model_file, "generator file")->required();
  sample_cmd->add_option("--count", count, "number of clips")->check(CLI::PositiveNumber);
  sample_cmd->add_option("--label", label, "single label (default: cycle over all)");

  auto* tune = app.add_subcommand("finetune", "fine-tune a generator on an accepted corpus");
  add_common(tune, common, "generator file");
  tune->add_option("--model", model_file, "generator file")->required();
  tune->add_option("--corpus", corpus_dir, "accepted corpus directory")->required();

  auto* track = app.add_subcommand("track", "execute clips with the tracking harness");
  add_common(track, common, "results CSV");
  track->add_option("--corpus", corpus_dir, "corpus directory")->required();

  auto* loop = app.add_subcommand("loop", "run the closed loop");
  add_common(loop, common, "output directory");
  loop->add_option("--rounds", common.rounds, "override config rounds");
  loop->add_option("--corpus", corpus_dir, "corpus directory (default: synthetic benchmark)");

  auto* report = app.add_subcommand("report", "consolidated CSV and plots from round reports");
  add_common(report, common, "output directory");
  report->add_option("--in", in_dir, "directory holding round_*.json (default: --out)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*synth) return cmd_synth(common, out);
    if (*eval) return cmd_eval(common, corpus_dir, declared, out);
    if (*refine) return cmd_refine(common, corpus_dir, out);
    if (*qc) return cmd_qc(common, original_dir, refined_dir, out);
    if (*train) return cmd_train_gen(common, corpus_dir, out);
    if (*sample_cmd) return cmd_sample(common, model_file, count, label, out);
    if (*tune) return cmd_finetune(common, model_file, corpus_dir, out);
    if (*track) return cmd_track(common, corpus_dir, out);
    if (*loop) return cmd_loop(common, corpus_dir, out);
    if (*report) return cmd_report(common, in_dir, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

} // namespace forge::cli
