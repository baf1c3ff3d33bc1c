#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cal/diagnostics.hpp"
#include "cal/experiment.hpp"
#include "cal/ingest.hpp"
#include "cal/report.hpp"

namespace cal {

struct IngestSource {
  std::string embeddings;    // resolved against the config file's directory
  std::string associations;
  IngestConfig config;
};

/// Everything a CLI run reads from its config file. Exactly one of `ingest`
/// or `synth` names the data.
struct RunConfig {
  std::optional<IngestSource> ingest;
  std::optional<ScenarioSpec> synth;
  EvalSetSpec eval_set;
  TrainConfig train;
  EvalOptions eval;
  DiagnosticThresholds diagnostics;
  std::uint64_t diagnostics_seed = 42;
  std::vector<std::uint64_t> seeds{42, 123, 456};
  std::vector<int> sweep_confidence{400, 700, 900};

  void validate() const;
};

/// Unknown keys and wrongly typed values are ConfigErrors naming the key.
RunConfig parse_run_config(const Json& j, const std::string& base_dir = ".");
RunConfig read_run_config(const std::string& path);

/// Every field with defaults filled in.
Json to_json(const RunConfig& config);

/// FNV-1a of the file's bytes; IoError if unreadable.
std::string file_hash(const std::string& path);

/// Loads or generates the dataset the config names.
Dataset build_dataset(const RunConfig& config);

/// Re-reads associations at `confidence_min` against already ingested embeddings.
Dataset with_confidence(const EmbeddingSet& embeddings, const IngestSource& source, int confidence_min,
                        double mapping_coverage);

}  // namespace cal
