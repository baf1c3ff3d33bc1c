// cal: command-line front end for ingest, training, evaluation and diagnostics.
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "cal/config.hpp"
#include "cal/hash.hpp"

#ifndef CAL_VERSION
#define CAL_VERSION "dev"
#endif

using namespace cal;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::string out = "runs";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool force = false;
  bool header = false;
};

RunConfig load_config(const Globals& g) {
  RunConfig c = g.config.empty() ? parse_run_config(Json::object()) : read_run_config(g.config);
  if (g.seed) c.train.seed = *g.seed;
  if (g.header && c.ingest) c.ingest->config.header = true;
  if (g.jobs < 1) throw ConfigError("--jobs must be at least 1");
  return c;
}

// One output directory per (command, arguments, resolved config).
class Run {
 public:
  Run(const std::string& command, const Json& config, const Json& args, const Globals& g)
      : start_(std::chrono::steady_clock::now()) {
    const Json resolved = {{"command", command}, {"args", args}, {"config", config}};
    hash_ = Fnv1a().text(resolved.dump()).hex();
    dir_ = fs::path(g.out) / (command + "-" + hash_);
    std::cout << "cal " << command << " " << CAL_VERSION << "\nresolved config:\n"
              << resolved.dump(2) << "\n";
    if (fs::exists(dir_)) {
      if (!g.force) throw ConfigError("output directory " + dir_.string() + " exists; pass --force to overwrite");
      fs::remove_all(dir_);
    }
    fs::create_directories(dir_);
    std::cout << "output: " << dir_.string() << "\n" << std::flush;
    manifest_ = {{"tool", "cal"},       {"version", CAL_VERSION}, {"command", command},
                 {"config_hash", hash_}, {"args", args},          {"config", config},
                 {"inputs", Json::object()}, {"seeds", Json::object()}, {"artifacts", Json::array()}};
  }

  const std::string& hash() const { return hash_; }

  void input(const std::string& path) { manifest_["inputs"][path] = file_hash(path); }
  void seed(const std::string& name, const Json& value) { manifest_["seeds"][name] = value; }

  std::string artifact(const std::string& name) {
    const auto p = (dir_ / name).string();
    manifest_["artifacts"].push_back(p);
    return p;
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void finish() {
    manifest_["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_json(manifest_, (dir_ / "run_manifest.json").string());
  }

 private:
  std::chrono::steady_clock::time_point start_;
  std::string hash_;
  fs::path dir_;
  Json manifest_;
};

void record_inputs(Run& run, const RunConfig& c) {
  if (!c.ingest) return;
  run.input(c.ingest->embeddings);
  run.input(c.ingest->associations);
  if (c.ingest->config.mapping_file) run.input(*c.ingest->config.mapping_file);
}

void record_seeds(Run& run, const RunConfig& c) {
  run.seed("train", c.train.seed);
  run.seed("split", c.eval_set.split.seed);
  run.seed("eval_negatives", c.eval_set.neg_seed);
  run.seed("bootstrap", c.eval.bootstrap_seed);
  if (c.synth) run.seed("synth", c.synth->seed);
}

TrainConfig train_config(const RunConfig& c, const Run& run) {
  TrainConfig t = c.train;
  t.checkpoint_dir = run.path("");
  return t;
}

void print_epoch(const EpochRecord& e, int epochs) {
  if (e.epoch % 10 == 0 || e.epoch + 1 == epochs) {
    std::printf("epoch %4d  loss %.5f  acc %.4f  lr %.3g\n", e.epoch, e.loss, e.accuracy, e.lr);
    std::fflush(stdout);
  }
}

EvalReport evaluate_split(const PairScorer& scorer, const EvalSplit& eval, const EvalOptions& options) {
  auto report = evaluate(scorer, eval.split.test, eval.negatives, eval.degrees, options);
  add_split_extras(report, scorer, eval, options);
  return report;
}

template <typename F>
void parallel_rows(std::size_t n, int jobs, F&& body) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < std::min<int>(jobs, static_cast<int>(n)); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

EmbeddingSet embeddings_only(const RunConfig& c) {
  if (c.synth) return generate(*c.synth).embeddings;
  if (!c.ingest) throw ConfigError("config names no data: add an 'ingest' or 'synth' section");
  return load_embeddings(c.ingest->embeddings, c.ingest->config);
}

// ---- commands ----

struct SynthArgs {
  std::string kind;
  std::optional<std::size_t> entities, pairs;
  std::optional<int> dim;
  std::optional<double> noise;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  RunConfig c = g.config.empty() ? RunConfig{} : read_run_config(g.config);
  ScenarioSpec spec = c.synth.value_or(ScenarioSpec{});
  if (!a.kind.empty()) spec.kind = scenario_kind_from_string(a.kind);
  if (a.entities) spec.n_entities = *a.entities;
  if (a.pairs) spec.n_pairs = *a.pairs;
  if (a.dim) spec.dim = *a.dim;
  if (a.noise) spec.noise_level = *a.noise;
  if (g.seed) spec.seed = *g.seed;
  spec.validate();
  RunConfig shown;
  shown.synth = spec;
  Run run("synth", to_json(shown)["synth"], Json::object(), g);
  run.seed("synth", spec.seed);
  const auto sc = generate(spec);
  const auto files = write_scenario(sc, run.path(""));
  for (const auto& f : {files.embeddings, files.associations, files.manifest}) {
    run.artifact(fs::path(f).filename().string());
  }
  const Json config = {{"ingest",
                        {{"embeddings", fs::path(files.embeddings).filename().string()},
                         {"associations", fs::path(files.associations).filename().string()},
                         {"pca_components", 0},
                         {"confidence_channel", "combined_score"},
                         {"confidence_min", 900}}}};
  write_json(config, run.artifact("config.json"));
  std::printf("%s: %zu entities, %zu pairs, dim %d\n", to_string(spec.kind).c_str(), sc.embeddings.size(),
              sc.positives.size(), spec.dim);
  run.finish();
  return 0;
}

int cmd_ingest(const Globals& g) {
  const RunConfig c = load_config(g);
  if (!c.ingest) throw ConfigError("ingest needs an 'ingest' section");
  Run run("ingest", to_json(c)["ingest"], Json::object(), g);
  record_inputs(run, c);
  IdMapping mapping;
  const auto emb = load_embeddings(c.ingest->embeddings, c.ingest->config, &mapping);
  const auto load = load_associations(c.ingest->associations, c.ingest->config, emb);
  save_embedding_set(emb, run.artifact("embeddings.calemb"));
  write_pairs_tsv(run.artifact("positives.tsv"), std::span(&load.positives, 1), emb);
  const auto stats = dataset_stats(emb, load.positives, c.eval.cb_threshold, mapping.coverage);
  const Json j = {{"entities", emb.size()},
                  {"dim", emb.dim()},
                  {"pca_variance_explained", emb.pca() ? Json(emb.pca()->variance_explained) : Json(nullptr)},
                  {"mapping_coverage", mapping.coverage},
                  {"unmapped_ids", mapping.unmapped.size()},
                  {"association_lines", load.n_lines},
                  {"below_threshold", load.n_below_threshold},
                  {"unmappable", load.n_unmappable},
                  {"duplicate", load.n_duplicate},
                  {"self", load.n_self},
                  {"positives", stats.n_pairs},
                  {"cross_boundary_fraction", stats.cross_boundary_fraction},
                  {"mean_positive_cosine", stats.mean_positive_cosine},
                  {"fraction_cosine_above_half", stats.fraction_cosine_above_half}};
  write_json(j, run.artifact("stats.json"));
  std::cout << j.dump(2) << "\n";
  run.finish();
  return 0;
}

int cmd_train(const Globals& g) {
  const RunConfig c = load_config(g);
  Run run("train", to_json(c), Json::object(), g);
  record_inputs(run, c);
  record_seeds(run, c);
  const auto data = build_dataset(c);
  const auto eval = make_eval_split(data, c.eval_set);
  const auto cfg = train_config(c, run);
  const auto result = train(data.embeddings, eval.split.train, cfg,
                            [&](const EpochRecord& e) { print_epoch(e, cfg.epochs); });
  save_checkpoint(result.model, run.artifact("model.ckpt"));
  write_train_log(run.artifact("train_log.tsv"), result.log);
  const PairSet sets[] = {eval.split.train, eval.split.test, eval.negatives};
  write_pairs_tsv(run.artifact("pairs.tsv"), sets, data.embeddings);
  std::printf("trained %lld steps in %.1f s, final alpha %.4f\n", static_cast<long long>(result.log.steps),
              result.log.wall_seconds, result.log.final_alpha);
  run.finish();
  return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint) {
  const RunConfig c = load_config(g);
  Run run("eval", to_json(c), {{"checkpoint", checkpoint}, {"checkpoint_hash", file_hash(checkpoint)}}, g);
  record_inputs(run, c);
  record_seeds(run, c);
  run.input(checkpoint);
  const auto model = load_checkpoint(checkpoint);
  const auto data = build_dataset(c);
  const auto eval = make_eval_split(data, c.eval_set);
  const PairScorer scorer(model, data.embeddings);
  auto report = evaluate_split(scorer, eval, c.eval);
  report.config_hash = run.hash();
  report.seeds = {c.train.seed};
  write_json(to_json(report), run.artifact("report.json"));
  std::cout << format_table(report);
  run.finish();
  return 0;
}

int cmd_ablate(const Globals& g, const std::string& which) {
  const RunConfig c = load_config(g);
  const auto kind = ablation_kind_from_string(which);
  Run run("ablate", to_json(c), {{"which", which}}, g);
  record_inputs(run, c);
  record_seeds(run, c);
  const auto data = build_dataset(c);
  auto result = run_ablation(data, c.eval_set, train_config(c, run), c.eval, kind, c.diagnostics);
  result.reference.config_hash = result.ablated.config_hash = run.hash();
  write_json(to_json(result.reference), run.artifact("reference.json"));
  write_json(to_json(result.ablated), run.artifact("ablated.json"));
  write_json(to_json(result), run.artifact("ablation.json"));
  std::cout << format_table(result);
  run.finish();
  return 0;
}

struct DiagnoseArgs {
  std::string reference, shuffled;
  bool skip_shuffled = false;
};

int cmd_diagnose(const Globals& g, const DiagnoseArgs& a) {
  if (a.reference.empty() != a.shuffled.empty()) {
    throw ConfigError("--reference and --shuffled must be given together");
  }
  const RunConfig c = load_config(g);
  Json args = {{"skip_shuffled", a.skip_shuffled}};
  if (!a.reference.empty()) {
    args["reference"] = a.reference;
    args["shuffled"] = a.shuffled;
  }
  Run run("diagnose", to_json(c), args, g);
  record_inputs(run, c);
  record_seeds(run, c);
  run.seed("diagnostics", c.diagnostics_seed);
  const auto data = build_dataset(c);
  auto report = preflight(data.embeddings, data.positives, data.graph, c.diagnostics, c.diagnostics_seed);
  if (!a.reference.empty()) {
    run.input(a.reference);
    run.input(a.shuffled);
    const auto ref = eval_report_from_json(read_json(a.reference));
    const auto shuf = eval_report_from_json(read_json(a.shuffled));
    add_shuffled_verdict(report, shuffled_verdict(ref, shuf, c.diagnostics), ref.overall_auc - shuf.overall_auc);
  } else if (!a.skip_shuffled) {
    const auto ablation =
        run_ablation(data, c.eval_set, train_config(c, run), c.eval, AblationKind::shuffled, c.diagnostics);
    write_json(to_json(ablation), run.artifact("shuffled_ablation.json"));
    add_shuffled_verdict(report, *ablation.verdict,
                         ablation.reference.overall_auc - ablation.ablated.overall_auc);
  }
  write_json(to_json(report), run.artifact("diagnostics.json"));
  std::cout << format_table(report);
  run.finish();
  return report.worst() == Verdict::fail ? kExitDiagnosticFail : 0;
}

int cmd_sweep(const Globals& g, const std::string& axis) {
  const RunConfig c = load_config(g);
  if (axis != "confidence" && axis != "lambda" && axis != "cb_threshold" && axis != "seeds") {
    throw ConfigError("unknown sweep axis '" + axis + "' (confidence, lambda, cb_threshold, seeds)");
  }
  Run run("sweep", to_json(c), {{"axis", axis}}, g);
  record_inputs(run, c);
  record_seeds(run, c);
  const auto cfg = train_config(c, run);
  Json rows = Json::array();
  std::string table;
  char line[256];

  if (axis == "confidence") {
    if (!c.ingest) throw ConfigError("sweep confidence needs an 'ingest' section");
    IdMapping mapping;
    const auto emb = load_embeddings(c.ingest->embeddings, c.ingest->config, &mapping);
    const auto& levels = c.sweep_confidence;
    std::vector<Json> out(levels.size());
    parallel_rows(levels.size(), g.jobs, [&](std::size_t i) {
      const auto data = with_confidence(emb, *c.ingest, levels[i], mapping.coverage);
      const auto eval = make_eval_split(data, c.eval_set);
      const auto r = train_and_evaluate(data, eval, eval.split.train, cfg, c.eval).report;
      out[i] = {{"confidence_min", levels[i]},   {"positives", data.positives.size()},
                {"test_pairs", r.n_pos},         {"overall_auc", number_or_null(r.overall_auc)},
                {"cb_auc", number_or_null(r.cb_auc)}, {"cosine_auc", number_or_null(r.cosine_auc)},
                {"cb_pairs", r.cb_pos}};
    });
    table = "confidence  positives  overall_auc  cb_auc  cosine_auc\n";
    for (const auto& r : out) {
      std::snprintf(line, sizeof line, "%10d  %9zu  %11.4f  %6.4f  %10.4f\n", r["confidence_min"].get<int>(),
                    r["positives"].get<std::size_t>(), number_or_nan(r["overall_auc"]), number_or_nan(r["cb_auc"]),
                    number_or_nan(r["cosine_auc"]));
      table += line;
      rows.push_back(r);
    }
  } else if (axis == "seeds") {
    const auto data = build_dataset(c);
    const auto eval = make_eval_split(data, c.eval_set);
    run.seed("runs", c.seeds);
    const auto summary = train_multi_seed(data, eval, cfg, c.eval, c.seeds, g.jobs);
    const Json j = to_json(summary);
    write_json(j, run.artifact("sweep.json"));
    table = "seed  overall_auc  cb_auc\n";
    for (const auto& s : summary.runs) {
      if (s.report) {
        std::snprintf(line, sizeof line, "%4llu  %11.4f  %6.4f\n", static_cast<unsigned long long>(s.seed),
                      s.report->overall_auc, s.report->cb_auc);
      } else {
        std::snprintf(line, sizeof line, "%4llu  failed: %s\n", static_cast<unsigned long long>(s.seed),
                      s.error.c_str());
      }
      table += line;
    }
    std::snprintf(line, sizeof line, "mean  %.4f +- %.4f  %.4f +- %.4f\n", summary.mean_overall,
                  summary.sd_overall, summary.mean_cb, summary.sd_cb);
    table += line;
    std::cout << table;
    run.finish();
    return summary.succeeded == c.seeds.size() ? 0 : 1;
  } else {
    const auto data = build_dataset(c);
    const auto eval = make_eval_split(data, c.eval_set);
    const auto model = train(data.embeddings, eval.split.train, cfg).model;
    save_checkpoint(model, run.artifact("model.ckpt"));
    const PairScorer scorer(model, data.embeddings);
    if (axis == "lambda") {
      table = "lambda  overall_auc  cb_auc\n";
      for (const auto& r : lambda_sweep(scorer, eval.split.test, eval.negatives, c.eval.lambda_grid,
                                        c.eval.cb_threshold)) {
        rows.push_back({{"lambda", r.lambda},
                        {"overall_auc", number_or_null(r.overall_auc)},
                        {"cb_auc", number_or_null(r.cb_auc)}});
        std::snprintf(line, sizeof line, "%6.2f  %11.4f  %6.4f\n", r.lambda, r.overall_auc, r.cb_auc);
        table += line;
      }
    } else {
      table = "threshold  pos  neg  cosine_auc  cal_auc\n";
      for (const auto& r : cross_boundary_eval(scorer, eval.split.test, eval.negatives, c.eval.cb_thresholds,
                                               c.eval.mode)) {
        rows.push_back({{"threshold", r.threshold},
                        {"pos", r.pos_count},
                        {"neg", r.neg_count},
                        {"cosine_auc", number_or_null(r.cosine_auc)},
                        {"cal_auc", number_or_null(r.cal_auc)},
                        {"insufficient", r.insufficient}});
        std::snprintf(line, sizeof line, "%9.2f  %3zu  %3zu  %10.4f  %7.4f%s\n", r.threshold, r.pos_count,
                      r.neg_count, r.cosine_auc, r.cal_auc, r.insufficient ? "  (insufficient)" : "");
        table += line;
      }
    }
  }
  write_json({{"axis", axis}, {"rows", rows}}, run.artifact("sweep.json"));
  std::cout << table;
  run.finish();
  return 0;
}

int cmd_export(const Globals& g, const std::string& checkpoint, const std::string& distances) {
  const RunConfig c = load_config(g);
  DistanceFormat format = DistanceFormat::none;
  if (distances == "tsv") {
    format = DistanceFormat::tsv;
  } else if (distances == "binary") {
    format = DistanceFormat::binary;
  } else if (distances != "none") {
    throw ConfigError("--distances must be none, tsv or binary");
  }
  Json args = {{"checkpoint", checkpoint}, {"checkpoint_hash", file_hash(checkpoint)}, {"distances", distances}};
  Json shown = to_json(c);
  Run run("export", shown, args, g);
  record_inputs(run, c);
  run.input(checkpoint);
  const auto model = load_checkpoint(checkpoint);
  const auto emb = embeddings_only(c);
  const PairScorer scorer(model, emb);
  std::string dist_path;
  if (format == DistanceFormat::tsv) dist_path = run.artifact("distances.tsv");
  if (format == DistanceFormat::binary) dist_path = run.artifact("distances.bin");
  export_transformed(scorer, run.artifact("transformed.tsv"), format, dist_path);
  std::printf("exported %zu transformed embeddings\n", emb.size());
  run.finish();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive association learning over frozen embeddings", "cal"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--seed", g.seed, "override train.seed (synth: the scenario seed)");
  app.add_option("--out", g.out, "root output directory")->capture_default_str();
  app.add_option("--jobs", g.jobs, "parallel sweep rows and seeds")->capture_default_str();
  app.add_flag("--force", g.force, "overwrite an existing output directory");
  app.add_flag("--header", g.header, "skip the first line of the embedding file");
  app.set_version_flag("--version", CAL_VERSION);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic scenario in the ingest formats");
  synth->add_option("--kind", synth_args.kind, "latent_signal, clustered_positives, degree_confound, no_signal");
  synth->add_option("--entities", synth_args.entities);
  synth->add_option("--pairs", synth_args.pairs);
  synth->add_option("--dim", synth_args.dim);
  synth->add_option("--noise", synth_args.noise);

  auto* ingest = app.add_subcommand("ingest", "parse, reduce and filter the input files");
  auto* train_cmd = app.add_subcommand("train", "train a model on the training split");

  std::string checkpoint;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();

  std::string which;
  auto* ablate = app.add_subcommand("ablate", "train a reference and an ablated variant");
  ablate->add_option("which", which, "shuffled, similar, random_neg, edge_split, node_split")->required();

  DiagnoseArgs diag;
  auto* diagnose = app.add_subcommand("diagnose", "preflight checks plus the shuffled ablation");
  diagnose->add_option("--reference", diag.reference, "reference report.json");
  diagnose->add_option("--shuffled", diag.shuffled, "shuffled report.json");
  diagnose->add_flag("--skip-shuffled", diag.skip_shuffled, "preflight checks only");

  std::string axis;
  auto* sweep = app.add_subcommand("sweep", "one row per axis value");
  sweep->add_option("axis", axis, "confidence, lambda, cb_threshold, seeds")->required();

  std::string export_checkpoint, distances = "none";
  auto* export_cmd = app.add_subcommand("export", "write transformed embeddings");
  export_cmd->add_option("--checkpoint", export_checkpoint)->required();
  export_cmd->add_option("--distances", distances, "none, tsv or binary")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (synth->parsed()) return cmd_synth(g, synth_args);
    if (ingest->parsed()) return cmd_ingest(g);
    if (train_cmd->parsed()) return cmd_train(g);
    if (eval_cmd->parsed()) return cmd_eval(g, checkpoint);
    if (ablate->parsed()) return cmd_ablate(g, which);
    if (diagnose->parsed()) return cmd_diagnose(g, diag);
    if (sweep->parsed()) return cmd_sweep(g, axis);
    if (export_cmd->parsed()) return cmd_export(g, export_checkpoint, distances);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\nlast good checkpoint: " << e.last_good_checkpoint() << "\n";
    return e.exit_code();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
