#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cal/diagnostics.hpp"
#include "cal/eval.hpp"
#include "cal/sampler.hpp"
#include "cal/synth.hpp"
#include "cal/trainer.hpp"

namespace cal {

struct Dataset {
  EmbeddingSet embeddings;
  PairSet positives;
  AssociationGraph graph;
  double mapping_coverage = 1.0;
};

Dataset dataset_from_scenario(const Scenario& scenario);

struct EvalSetSpec {
  SplitSpec split;
  std::size_t neg_multiplier = 5;  // negatives per test positive
  std::size_t neg_cap = 50000;
  std::uint64_t neg_seed = 7;

  void validate() const;
};

struct EvalSplit {
  Split split;
  PairSet negatives;            // never a positive of the full graph
  std::vector<double> degrees;  // full-graph degree per entity
};

/// Node splits draw negatives with at least one held-out endpoint so both
/// sides of the test set touch unseen entities.
EvalSplit make_eval_split(const Dataset& data, const EvalSetSpec& spec);

struct RunResult {
  TrainResult trained;
  EvalReport report;
};

/// Trains on `train_pairs` and evaluates on the split's test positives.
RunResult train_and_evaluate(const Dataset& data, const EvalSplit& eval, const PairSet& train_pairs,
                             const TrainConfig& config, const EvalOptions& options);

/// Adds node-split breakdowns (held-out count, unseen-unseen AUC, train AUC) to `report.extras`.
void add_split_extras(EvalReport& report, const PairScorer& scorer, const EvalSplit& eval,
                      const EvalOptions& options);

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::optional<EvalReport> report;
  std::string error;
};

struct MultiSeedSummary {
  std::vector<SeedOutcome> runs;
  double mean_overall = 0, sd_overall = 0;
  double mean_cb = 0, sd_cb = 0;
  std::size_t succeeded = 0;
};

/// Sample SD (n - 1). Failed seeds are recorded and skipped.
MultiSeedSummary train_multi_seed(const Dataset& data, const EvalSplit& eval, const TrainConfig& config,
                                  const EvalOptions& options,
                                  const std::vector<std::uint64_t>& seeds = {42, 123, 456}, int jobs = 1);

enum class AblationKind { shuffled, similar, random_neg, edge_split, node_split };

std::string to_string(AblationKind kind);
AblationKind ablation_kind_from_string(const std::string& s);

struct AblationResult {
  AblationKind kind = AblationKind::shuffled;
  EvalReport reference;
  EvalReport ablated;
  std::optional<Check> verdict;                // shuffled only
  std::vector<BucketComparison> degree_buckets;  // shuffled only
};

AblationResult run_ablation(const Dataset& data, const EvalSetSpec& eval_spec, const TrainConfig& config,
                            const EvalOptions& options, AblationKind kind,
                            const DiagnosticThresholds& thresholds = {});

Json to_json(const MultiSeedSummary& summary);
Json to_json(const AblationResult& result);
std::string format_table(const AblationResult& result);

}  // namespace cal
