#include "cal/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <thread>

#include "cal/errors.hpp"

namespace cal {

namespace {

constexpr std::uint64_t kShuffleStream = 3;

PairSet held_out_negatives(const Dataset& data, const std::vector<std::size_t>& held_out, std::size_t target,
                           std::uint64_t seed) {
  const std::size_t n = data.embeddings.size(), h = held_out.size();
  const std::size_t possible = h * (n - h) + h * (h - 1) / 2;
  auto excluded = data.positives.key_set();
  std::size_t blocked = 0;
  std::vector<bool> is_held(n, false);
  for (auto e : held_out) is_held[e] = true;
  for (const auto& p : data.positives.pairs) blocked += is_held[p.a] || is_held[p.b];
  if (possible <= blocked) throw SamplingError("no non-positive pair touches a held-out entity");
  target = std::min(target, possible - blocked);
  SeededRng rng(seed);
  PairSet out{{}, PairRole::eval_negative};
  const std::size_t max_draws = kNegativeRetryFactor * target + 1000;
  for (std::size_t draws = 0; out.size() < target; ++draws) {
    if (draws > max_draws) throw SamplingError("could not place held-out negatives within the retry budget");
    const auto a = held_out[rng.uniform_index(h)], b = rng.uniform_index(n);
    if (a == b || !excluded.insert(pair_key(a, b)).second) continue;
    out.pairs.push_back({std::min(a, b), std::max(a, b)});
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Counts print without decimals.
std::string fmt_extra(double v) {
  return v == std::floor(v) && std::abs(v) < 1e15 ? std::to_string(static_cast<long long>(v)) : fmt(v);
}

}  // namespace

Dataset dataset_from_scenario(const Scenario& scenario) {
  return {scenario.embeddings, scenario.positives, scenario.graph, 1.0};
}

void EvalSetSpec::validate() const {
  split.validate();
  if (neg_multiplier == 0) throw ConfigError("neg_multiplier must be positive");
  if (neg_cap == 0) throw ConfigError("neg_cap must be positive");
}

EvalSplit make_eval_split(const Dataset& data, const EvalSetSpec& spec) {
  spec.validate();
  EvalSplit e;
  if (spec.split.kind == SplitKind::node_split) {
    const auto entities = touched_entities(data.positives);
    e.split = node_split(data.positives, entities, spec.split);
  } else {
    e.split = edge_split(data.positives, spec.split);
  }
  const std::size_t target = std::min(spec.neg_multiplier * e.split.test.size(), spec.neg_cap);
  if (spec.split.kind == SplitKind::node_split) {
    e.negatives = held_out_negatives(data, e.split.held_out, target, spec.neg_seed);
  } else {
    SeededRng rng(spec.neg_seed);
    e.negatives = sample_eval_negatives(data.positives.key_set(), target, data.embeddings.size(), rng);
  }
  e.negatives.role = PairRole::eval_negative;
  e.split.test.role = PairRole::eval_positive;
  e.degrees = pair_degrees(data.positives, data.embeddings.size());
  return e;
}

void add_split_extras(EvalReport& report, const PairScorer& scorer, const EvalSplit& eval,
                      const EvalOptions& options) {
  const auto& split = eval.split;
  report.extras.emplace_back("train_pairs", static_cast<double>(split.train.size()));
  report.extras.emplace_back("test_pairs", static_cast<double>(split.test.size()));
  const auto neg_scores = scorer.scores(eval.negatives, options.mode);
  if (!split.train.empty() && !neg_scores.empty()) {
    report.extras.emplace_back("train_auc", auc(scorer.scores(split.train, options.mode), neg_scores));
  }
  if (split.held_out.empty()) return;
  report.extras.emplace_back("held_out_entities", static_cast<double>(split.held_out.size()));
  const auto uu = unseen_unseen(split.test, split.held_out);
  const auto uu_neg = unseen_unseen(eval.negatives, split.held_out);
  report.extras.emplace_back("unseen_unseen_pairs", static_cast<double>(uu.size()));
  if (!uu.empty() && !uu_neg.empty()) {
    report.extras.emplace_back("unseen_unseen_auc", auc(scorer.scores(uu, options.mode), scorer.scores(uu_neg, options.mode)));
    report.extras.emplace_back("unseen_unseen_cosine_auc", auc(scorer.cosines(uu), scorer.cosines(uu_neg)));
  }
}

RunResult train_and_evaluate(const Dataset& data, const EvalSplit& eval, const PairSet& train_pairs,
                             const TrainConfig& config, const EvalOptions& options) {
  RunResult r{train(data.embeddings, train_pairs, config), {}};
  const PairScorer scorer(r.trained.model, data.embeddings);
  r.report = evaluate(scorer, eval.split.test, eval.negatives, eval.degrees, options);
  add_split_extras(r.report, scorer, eval, options);
  r.report.seeds = {config.seed};
  return r;
}

MultiSeedSummary train_multi_seed(const Dataset& data, const EvalSplit& eval, const TrainConfig& config,
                                  const EvalOptions& options, const std::vector<std::uint64_t>& seeds, int jobs) {
  if (seeds.size() < 2) throw ConfigError("train_multi_seed needs at least 2 seeds");
  MultiSeedSummary s;
  s.runs.resize(seeds.size());
  std::size_t next = 0;
  std::mutex lock;
  auto worker = [&] {
    while (true) {
      std::size_t i;
      {
        std::lock_guard g(lock);
        if (next >= seeds.size()) return;
        i = next++;
      }
      auto& out = s.runs[i];
      out.seed = seeds[i];
      try {
        auto cfg = config;
        cfg.seed = seeds[i];
        out.report = train_and_evaluate(data, eval, eval.split.train, cfg, options).report;
      } catch (const std::exception& e) {
        out.error = e.what();
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::clamp(jobs, 1, static_cast<int>(seeds.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<double> overall, cb;
  for (const auto& r : s.runs) {
    if (!r.report) continue;
    overall.push_back(r.report->overall_auc);
    cb.push_back(r.report->cb_auc);
  }
  s.succeeded = overall.size();
  s.mean_overall = mean_of(overall);
  s.sd_overall = sample_sd(overall);
  s.mean_cb = mean_of(cb);
  s.sd_cb = sample_sd(cb);
  return s;
}

std::string to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::shuffled: return "shuffled";
    case AblationKind::similar: return "similar";
    case AblationKind::random_neg: return "random_neg";
    case AblationKind::edge_split: return "edge_split";
    case AblationKind::node_split: return "node_split";
  }
  return "?";
}

AblationKind ablation_kind_from_string(const std::string& s) {
  for (auto k : {AblationKind::shuffled, AblationKind::similar, AblationKind::random_neg,
                 AblationKind::edge_split, AblationKind::node_split}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown ablation '" + s + "'");
}

AblationResult run_ablation(const Dataset& data, const EvalSetSpec& eval_spec, const TrainConfig& config,
                            const EvalOptions& options, AblationKind kind, const DiagnosticThresholds& thresholds) {
  AblationResult out;
  out.kind = kind;
  const auto eval = make_eval_split(data, eval_spec);
  auto reference = train_and_evaluate(data, eval, eval.split.train, config, options);
  out.reference = reference.report;

  switch (kind) {
    case AblationKind::shuffled: {
      SeededRng rng(derive_seed(config.seed, kShuffleStream));
      const auto pairs = dedup_pairs(shuffle_ablation(eval.split.train, rng));
      auto shuffled = train_and_evaluate(data, eval, pairs, config, options);
      out.ablated = shuffled.report;
      out.verdict = shuffled_verdict(out.reference, out.ablated, thresholds);
      const PairScorer ref_scorer(reference.trained.model, data.embeddings);
      const PairScorer shuf_scorer(shuffled.trained.model, data.embeddings);
      out.degree_buckets = degree_quantile_model_comparison(ref_scorer, shuf_scorer, eval.split.test, eval.negatives,
                                                            eval.degrees, options.n_quantiles);
      break;
    }
    case AblationKind::similar: {
      const auto pairs = similar_positives_ablation(data.embeddings, eval.split.train.size());
      out.ablated = train_and_evaluate(data, eval, pairs, config, options).report;
      break;
    }
    case AblationKind::random_neg: {
      auto cfg = config;
      cfg.negative_mode = {NegativeKind::random_k, 0};
      out.ablated = train_and_evaluate(data, eval, eval.split.train, cfg, options).report;
      break;
    }
    case AblationKind::edge_split:
    case AblationKind::node_split: {
      auto spec = eval_spec;
      spec.split.kind = kind == AblationKind::edge_split ? SplitKind::edge_split : SplitKind::node_split;
      const auto other = make_eval_split(data, spec);
      out.ablated = train_and_evaluate(data, other, other.split.train, config, options).report;
      break;
    }
  }
  return out;
}

Json to_json(const MultiSeedSummary& s) {
  Json runs = Json::array();
  for (const auto& r : s.runs) {
    Json j = {{"seed", r.seed}};
    if (r.report) {
      j["overall_auc"] = number_or_null(r.report->overall_auc);
      j["cb_auc"] = number_or_null(r.report->cb_auc);
      j["cosine_auc"] = number_or_null(r.report->cosine_auc);
    } else {
      j["error"] = r.error;
    }
    runs.push_back(std::move(j));
  }
  return {{"runs", std::move(runs)},
          {"succeeded", s.succeeded},
          {"overall_auc", {{"mean", number_or_null(s.mean_overall)}, {"sd", number_or_null(s.sd_overall)}}},
          {"cb_auc", {{"mean", number_or_null(s.mean_cb)}, {"sd", number_or_null(s.sd_cb)}}}};
}

Json to_json(const AblationResult& r) {
  Json j = {{"ablation", to_string(r.kind)},
            {"reference", to_json(r.reference)},
            {"ablated", to_json(r.ablated)},
            {"delta_overall_auc", number_or_null(r.ablated.overall_auc - r.reference.overall_auc)},
            {"delta_vs_cosine", number_or_null(r.ablated.overall_auc - r.ablated.cosine_auc)},
            {"delta_cb_auc", number_or_null(r.ablated.cb_auc - r.reference.cb_auc)}};
  if (r.verdict) {
    j["shuffled_verdict"] = {{"verdict", to_string(r.verdict->verdict)},
                             {"delta", number_or_null(r.verdict->value)},
                             {"explanation", r.verdict->explanation}};
  }
  if (!r.degree_buckets.empty()) j["degree_buckets"] = to_json(r.degree_buckets);
  return j;
}

std::string format_table(const AblationResult& r) {
  std::ostringstream out;
  out << "ablation " << to_string(r.kind) << "\n";
  out << "                 reference   ablated     delta\n";
  auto row = [&](const char* name, double a, double b) {
    char line[96];
    std::snprintf(line, sizeof line, "  %-14s %9s %9s %9s\n", name, fmt(a).c_str(), fmt(b).c_str(), fmt(b - a).c_str());
    out << line;
  };
  row("overall AUC", r.reference.overall_auc, r.ablated.overall_auc);
  row("CB AUC", r.reference.cb_auc, r.ablated.cb_auc);
  row("cosine AUC", r.reference.cosine_auc, r.ablated.cosine_auc);
  out << "  ablated vs cosine: " << fmt(r.ablated.overall_auc - r.ablated.cosine_auc) << '\n';
  for (const auto& [k, v] : r.ablated.extras) out << "  " << k << ": " << fmt_extra(v) << '\n';
  if (r.verdict) out << "  verdict: " << to_string(r.verdict->verdict) << "  " << r.verdict->explanation << '\n';
  if (!r.degree_buckets.empty()) out << format_table(r.degree_buckets);
  return out.str();
}

}  // namespace cal
