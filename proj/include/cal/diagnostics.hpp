#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cal/eval.hpp"
#include "cal/report.hpp"
#include "cal/types.hpp"

namespace cal {

enum class Verdict { pass, warn, fail };

std::string to_string(Verdict v);

struct DiagnosticThresholds {
  double cosine_auc = 0.85;
  double cosine_fraction = 0.5;
  double pairs_per_entity = 50.0;
  double shuffled_margin = 0.05;

  void validate() const;
};

struct Check {
  std::string name;
  Verdict verdict = Verdict::pass;
  double value = 0;
  double threshold = 0;
  std::string explanation;
};

struct DiagnosticReport {
  double cosine_baseline_auc = 0;
  double positive_cosine_frac_above_half = 0;
  double entity_to_pair_ratio = 0;  // mean pairs per entity touched by the graph
  std::vector<Check> checks;
  std::optional<double> shuffled_delta;

  Verdict worst() const;
  const Check* find(const std::string& name) const;
};

inline constexpr const char* kCheckCosineAuc = "cosine_baseline";
inline constexpr const char* kCheckCosineFraction = "positive_cosine";
inline constexpr const char* kCheckDegree = "entity_to_pair_ratio";
inline constexpr const char* kCheckShuffled = "shuffled_ablation";

/// Cosine AUC uses uniform non-positive negatives drawn with `seed`.
DiagnosticReport preflight(const EmbeddingSet& embeddings, const PairSet& positives,
                           const AssociationGraph& graph, const DiagnosticThresholds& thresholds = {},
                           std::uint64_t seed = 42);

/// ConfigError unless both reports were computed on the same pair sets.
Check shuffled_verdict(const EvalReport& reference, const EvalReport& shuffled,
                       const DiagnosticThresholds& thresholds = {});

/// Appends the verdict and records the delta.
void add_shuffled_verdict(DiagnosticReport& report, const Check& verdict, double delta);

Json to_json(const DiagnosticReport& report);
std::string format_table(const DiagnosticReport& report);

}  // namespace cal
