#include "cal/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cal/errors.hpp"
#include "cal/sampler.hpp"

namespace cal {

namespace {

std::string num(double v, int digits = 3) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::warn: return "warn";
    case Verdict::fail: return "fail";
  }
  return "?";
}

void DiagnosticThresholds::validate() const {
  for (double t : {cosine_auc, cosine_fraction, pairs_per_entity, shuffled_margin}) {
    if (!std::isfinite(t) || t < 0) throw ConfigError("diagnostic thresholds must be finite and non-negative");
  }
}

Verdict DiagnosticReport::worst() const {
  Verdict w = Verdict::pass;
  for (const auto& c : checks) w = std::max(w, c.verdict);
  return w;
}

const Check* DiagnosticReport::find(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

DiagnosticReport preflight(const EmbeddingSet& embeddings, const PairSet& positives,
                           const AssociationGraph& graph, const DiagnosticThresholds& t, std::uint64_t seed) {
  t.validate();
  if (positives.empty()) throw EmptyDataError("preflight needs at least one positive pair");
  DiagnosticReport r;

  SeededRng rng(seed);
  const std::size_t n = embeddings.size();
  const std::size_t available = n * (n - 1) / 2 - positives.size();
  const auto neg = sample_eval_negatives(positives.key_set(), std::min({5 * positives.size(), std::size_t{50000}, available}),
                                         n, rng);
  std::vector<double> pc, nc;
  std::size_t above = 0;
  for (const auto& p : positives.pairs) {
    pc.push_back(embeddings.cosine(p.a, p.b));
    above += pc.back() > 0.5;
  }
  for (const auto& p : neg.pairs) nc.push_back(embeddings.cosine(p.a, p.b));
  r.cosine_baseline_auc = auc(pc, nc);
  r.positive_cosine_frac_above_half = static_cast<double>(above) / static_cast<double>(positives.size());
  const auto touched = graph.degrees().empty() ? touched_entities(positives).size() : graph.degrees().size();
  const auto n_pairs = graph.edges().empty() ? positives.size() : graph.edges().size();
  r.entity_to_pair_ratio = 2.0 * static_cast<double>(n_pairs) / static_cast<double>(touched);

  Check c1{kCheckCosineAuc, Verdict::pass, r.cosine_baseline_auc, t.cosine_auc, ""};
  if (r.cosine_baseline_auc > t.cosine_auc) {
    c1.verdict = Verdict::warn;
    c1.explanation = "cosine AUC " + num(r.cosine_baseline_auc) + " > " + num(t.cosine_auc) +
                     ": cosine captures most of the signal, expect little gain from a learned score";
  } else {
    c1.explanation = "cosine AUC " + num(r.cosine_baseline_auc) + " <= " + num(t.cosine_auc) +
                     ": room for a learned score above cosine";
  }
  Check c2{kCheckCosineFraction, Verdict::pass, r.positive_cosine_frac_above_half, t.cosine_fraction, ""};
  if (r.positive_cosine_frac_above_half > t.cosine_fraction) {
    c2.verdict = Verdict::warn;
    c2.explanation = num(100 * r.positive_cosine_frac_above_half, 1) +
                     "% of positives have cosine > 0.5: in-batch negatives will be near-duplicates of "
                     "positives, train with random_k negatives";
  } else {
    c2.explanation = num(100 * r.positive_cosine_frac_above_half, 1) +
                     "% of positives have cosine > 0.5: in-batch negatives are usable";
  }
  Check c3{kCheckDegree, Verdict::pass, r.entity_to_pair_ratio, t.pairs_per_entity, ""};
  if (r.entity_to_pair_ratio > t.pairs_per_entity) {
    c3.verdict = Verdict::warn;
    c3.explanation = "entities appear in " + num(r.entity_to_pair_ratio, 1) +
                     " pairs on average: degree confounding is likely, run the shuffled ablation";
  } else {
    c3.explanation = "entities appear in " + num(r.entity_to_pair_ratio, 1) + " pairs on average";
  }
  r.checks = {c1, c2, c3};
  return r;
}

Check shuffled_verdict(const EvalReport& reference, const EvalReport& shuffled, const DiagnosticThresholds& t) {
  t.validate();
  if (reference.n_pos != shuffled.n_pos || reference.n_neg != shuffled.n_neg ||
      reference.eval_set_hash != shuffled.eval_set_hash) {
    throw ConfigError("reference and shuffled reports were evaluated on different pair sets");
  }
  const double delta = reference.overall_auc - shuffled.overall_auc;
  Check c{kCheckShuffled, Verdict::pass, delta, t.shuffled_margin, ""};
  const std::string values = "reference " + num(reference.overall_auc, 4) + ", shuffled " +
                             num(shuffled.overall_auc, 4) + " (delta " + num(delta, 4) + ")";
  if (shuffled.overall_auc >= reference.overall_auc) {
    c.verdict = Verdict::fail;
    c.explanation = values + ": shuffled pairs match or beat the real ones, the model learned degree structure";
  } else if (delta < t.shuffled_margin) {
    c.verdict = Verdict::warn;
    c.explanation = values + ": margin below " + num(t.shuffled_margin, 2) + ", pairing adds little";
  } else {
    c.explanation = values + ": the real pairing carries signal beyond degree";
  }
  return c;
}

void add_shuffled_verdict(DiagnosticReport& report, const Check& verdict, double delta) {
  std::erase_if(report.checks, [](const Check& c) { return c.name == kCheckShuffled; });
  report.checks.push_back(verdict);
  report.shuffled_delta = delta;
}

Json to_json(const DiagnosticReport& r) {
  Json checks = Json::object();
  for (const auto& c : r.checks) {
    checks[c.name] = {{"verdict", to_string(c.verdict)},
                      {"value", number_or_null(c.value)},
                      {"threshold", c.threshold},
                      {"explanation", c.explanation}};
  }
  return {{"cosine_baseline_auc", number_or_null(r.cosine_baseline_auc)},
          {"positive_cosine_frac_above_half", r.positive_cosine_frac_above_half},
          {"entity_to_pair_ratio", r.entity_to_pair_ratio},
          {"shuffled_delta", r.shuffled_delta ? number_or_null(*r.shuffled_delta) : Json(nullptr)},
          {"verdicts", std::move(checks)},
          {"overall", to_string(r.worst())}};
}

std::string format_table(const DiagnosticReport& r) {
  std::ostringstream out;
  for (const auto& c : r.checks) {
    char head[64];
    std::snprintf(head, sizeof head, "[%-4s] %-22s ", to_string(c.verdict).c_str(), c.name.c_str());
    out << head << c.explanation << '\n';
  }
  out << "overall: " << to_string(r.worst()) << '\n';
  return out.str();
}

}  // namespace cal
