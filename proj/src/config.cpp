#include "cal/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <type_traits>

#include "cal/errors.hpp"
#include "cal/hash.hpp"

namespace cal {

namespace {

namespace fs = std::filesystem;

class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("'" + name_ + "' must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = convert<T>(j_.at(key), name_ + "." + key);
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void done() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + name_ + "." + key + "'");
    }
  }

 private:
  template <typename T>
  static T convert(const Json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + " must be true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + " must be a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + " must be a number");
      return v.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(where + " must be a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
      return v.get<T>();
    } else {
      if (!v.is_array()) throw ConfigError(where + " must be an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

  const Json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

IngestSource parse_ingest(const Json& j, const std::string& base_dir) {
  Section s(j, "ingest");
  IngestSource src;
  s.get("embeddings", src.embeddings);
  s.get("associations", src.associations);
  if (src.embeddings.empty()) throw ConfigError("ingest.embeddings is required");
  if (src.associations.empty()) throw ConfigError("ingest.associations is required");
  src.embeddings = resolve(base_dir, src.embeddings);
  src.associations = resolve(base_dir, src.associations);
  auto& c = src.config;
  s.get("pca_components", c.pca_components);
  s.get("confidence_channel", c.confidence_channel);
  s.get("confidence_min", c.confidence_min);
  s.get("header", c.header);
  if (s.has("mapping_file") && !s.raw("mapping_file").is_null()) {
    std::string m;
    s.get("mapping_file", m);
    c.mapping_file = resolve(base_dir, m);
  }
  s.done();
  return src;
}

ScenarioSpec parse_synth(const Json& j) {
  Section s(j, "synth");
  ScenarioSpec spec;
  std::string kind = to_string(spec.kind);
  s.get("kind", kind);
  spec.kind = scenario_kind_from_string(kind);
  s.get("n_entities", spec.n_entities);
  s.get("dim", spec.dim);
  s.get("n_pairs", spec.n_pairs);
  s.get("noise_level", spec.noise_level);
  s.get("seed", spec.seed);
  s.done();
  return spec;
}

void parse_split(const Json& j, EvalSetSpec& e) {
  Section s(j, "split");
  std::string kind = to_string(e.split.kind);
  s.get("kind", kind);
  e.split.kind = split_kind_from_string(kind);
  s.get("train_fraction", e.split.train_fraction);
  s.get("seed", e.split.seed);
  s.get("neg_multiplier", e.neg_multiplier);
  s.get("neg_cap", e.neg_cap);
  s.get("neg_seed", e.neg_seed);
  s.done();
}

void parse_train(const Json& j, TrainConfig& t) {
  Section s(j, "train");
  s.get("batch_size", t.batch_size);
  s.get("temperature", t.temperature);
  s.get("lr", t.lr);
  s.get("weight_decay", t.weight_decay);
  s.get("epochs", t.epochs);
  s.get("anneal_t_max", t.anneal_t_max);
  s.get("seed", t.seed);
  std::string negatives = to_string(t.negative_mode.kind);
  s.get("negatives", negatives);
  t.negative_mode.kind = negative_kind_from_string(negatives);
  s.get("negatives_k", t.negative_mode.k);
  s.get("hidden", t.hidden);
  s.get("adam_beta1", t.adam_beta1);
  s.get("adam_beta2", t.adam_beta2);
  s.get("adam_eps", t.adam_eps);
  s.get("divergence_factor", t.divergence_factor);
  s.get("divergence_patience", t.divergence_patience);
  s.done();
}

void parse_eval(const Json& j, EvalOptions& o) {
  Section s(j, "eval");
  std::string scoring = to_string(o.mode.kind);
  s.get("scoring", scoring);
  o.mode.kind = scoring_kind_from_string(scoring);
  s.get("lambda", o.mode.lambda);
  s.get("cb_threshold", o.cb_threshold);
  s.get("cb_thresholds", o.cb_thresholds);
  s.get("lambda_grid", o.lambda_grid);
  s.get("n_boot", o.n_boot);
  s.get("bootstrap_seed", o.bootstrap_seed);
  s.get("top_k", o.top_k);
  s.get("n_quantiles", o.n_quantiles);
  s.done();
}

void parse_diagnostics(const Json& j, RunConfig& c) {
  Section s(j, "diagnostics");
  auto& t = c.diagnostics;
  s.get("cosine_auc", t.cosine_auc);
  s.get("cosine_fraction", t.cosine_fraction);
  s.get("pairs_per_entity", t.pairs_per_entity);
  s.get("shuffled_margin", t.shuffled_margin);
  s.get("seed", c.diagnostics_seed);
  s.done();
}

}  // namespace

void RunConfig::validate() const {
  if (ingest && synth) throw ConfigError("config names both 'ingest' and 'synth' data");
  if (ingest) ingest->config.validate();
  if (synth) synth->validate();
  eval_set.validate();
  train.validate();
  eval.mode.validate();
  if (!(eval.cb_threshold > 0)) throw ConfigError("eval.cb_threshold must be positive");
  if (eval.n_quantiles < 1) throw ConfigError("eval.n_quantiles must be at least 1");
  diagnostics.validate();
  if (seeds.empty()) throw ConfigError("seeds is empty");
  for (int c : sweep_confidence) {
    if (c < 0 || c > 1000) throw ConfigError("sweep.confidence values must lie in [0, 1000]");
  }
}

RunConfig parse_run_config(const Json& j, const std::string& base_dir) {
  Section root(j, "config");
  RunConfig c;
  if (root.has("ingest")) c.ingest = parse_ingest(root.raw("ingest"), base_dir);
  if (root.has("synth")) c.synth = parse_synth(root.raw("synth"));
  if (root.has("split")) parse_split(root.raw("split"), c.eval_set);
  if (root.has("train")) parse_train(root.raw("train"), c.train);
  if (root.has("eval")) parse_eval(root.raw("eval"), c.eval);
  if (root.has("diagnostics")) parse_diagnostics(root.raw("diagnostics"), c);
  root.get("seeds", c.seeds);
  if (root.has("sweep")) {
    Section s(root.raw("sweep"), "sweep");
    s.get("confidence", c.sweep_confidence);
    s.done();
  }
  root.done();
  c.validate();
  return c;
}

RunConfig read_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  const auto dir = fs::path(path).parent_path();
  return parse_run_config(j, dir.empty() ? "." : dir.string());
}

Json to_json(const RunConfig& c) {
  Json j;
  if (c.ingest) {
    const auto& i = *c.ingest;
    j["ingest"] = {{"embeddings", i.embeddings},
                   {"associations", i.associations},
                   {"pca_components", i.config.pca_components},
                   {"confidence_channel", i.config.confidence_channel},
                   {"confidence_min", i.config.confidence_min},
                   {"header", i.config.header},
                   {"mapping_file", i.config.mapping_file ? Json(*i.config.mapping_file) : Json(nullptr)}};
  }
  if (c.synth) {
    const auto& s = *c.synth;
    j["synth"] = {{"kind", to_string(s.kind)}, {"n_entities", s.n_entities}, {"dim", s.dim},
                  {"n_pairs", s.n_pairs},       {"noise_level", s.noise_level}, {"seed", s.seed}};
  }
  const auto& e = c.eval_set;
  j["split"] = {{"kind", to_string(e.split.kind)}, {"train_fraction", e.split.train_fraction},
                {"seed", e.split.seed},            {"neg_multiplier", e.neg_multiplier},
                {"neg_cap", e.neg_cap},            {"neg_seed", e.neg_seed}};
  const auto& t = c.train;
  j["train"] = {{"batch_size", t.batch_size},
                {"temperature", t.temperature},
                {"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"epochs", t.epochs},
                {"anneal_t_max", t.anneal_t_max},
                {"seed", t.seed},
                {"negatives", to_string(t.negative_mode.kind)},
                {"negatives_k", t.negative_mode.k},
                {"hidden", t.hidden},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},
                {"divergence_factor", t.divergence_factor},
                {"divergence_patience", t.divergence_patience}};
  const auto& o = c.eval;
  j["eval"] = {{"scoring", to_string(o.mode.kind)},
               {"lambda", o.mode.lambda},
               {"cb_threshold", o.cb_threshold},
               {"cb_thresholds", o.cb_thresholds},
               {"lambda_grid", o.lambda_grid},
               {"n_boot", o.n_boot},
               {"bootstrap_seed", o.bootstrap_seed},
               {"top_k", o.top_k},
               {"n_quantiles", o.n_quantiles}};
  const auto& d = c.diagnostics;
  j["diagnostics"] = {{"cosine_auc", d.cosine_auc},
                      {"cosine_fraction", d.cosine_fraction},
                      {"pairs_per_entity", d.pairs_per_entity},
                      {"shuffled_margin", d.shuffled_margin},
                      {"seed", c.diagnostics_seed}};
  j["seeds"] = c.seeds;
  j["sweep"] = {{"confidence", c.sweep_confidence}};
  return j;
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  Fnv1a h;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) h.bytes(buf, static_cast<std::size_t>(in.gcount()));
  return h.hex();
}

Dataset with_confidence(const EmbeddingSet& embeddings, const IngestSource& source, int confidence_min,
                        double mapping_coverage) {
  IngestConfig c = source.config;
  c.confidence_min = confidence_min;
  auto load = load_associations(source.associations, c, embeddings);
  return {embeddings, std::move(load.positives), std::move(load.graph), mapping_coverage};
}

Dataset build_dataset(const RunConfig& config) {
  if (config.synth) return dataset_from_scenario(generate(*config.synth));
  if (!config.ingest) throw ConfigError("config names no data: add an 'ingest' or 'synth' section");
  IdMapping mapping;
  auto embeddings = load_embeddings(config.ingest->embeddings, config.ingest->config, &mapping);
  return with_confidence(embeddings, *config.ingest, config.ingest->config.confidence_min, mapping.coverage);
}

}  // namespace cal
