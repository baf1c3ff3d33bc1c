#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "cal/types.hpp"

namespace cal {

enum class ScenarioKind { latent_signal, clustered_positives, degree_confound, no_signal };

std::string to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(const std::string& s);

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::latent_signal;
  std::size_t n_entities = 2000;
  int dim = 50;
  std::size_t n_pairs = 20000;
  double noise_level = 0.1;
  std::uint64_t seed = 42;

  void validate() const;
};

// Generator constants.
inline constexpr int kLatentHidden = 64;           // width of the hidden map
inline constexpr double kLatentGain = 2.0;         // first-layer gain of the hidden map
inline constexpr int kNoSignalPrototypes = 8;      // mixture components for no_signal
inline constexpr double kClusterFraction = 0.4;    // share of entities in the tight cluster
inline constexpr double kClusterSpread = 0.2;      // residual scale around the cluster centre
inline constexpr double kConfoundBeta = 1.5;       // popularity = exp(beta * sqrt(d) * x.u)
inline constexpr double kConfoundGenuineFraction = 0.1;

struct Scenario {
  ScenarioSpec spec;
  EmbeddingSet embeddings;
  PairSet positives;
  AssociationGraph graph;
  /// Planted map P for latent_signal: oracle score = (P(a).e_b + P(b).e_a) / 2.
  std::optional<RowMatrixD> planted;
};

/// Pure function of `spec`.
Scenario generate(const ScenarioSpec& spec);

double oracle_score(const Scenario& scenario, std::size_t a, std::size_t b);

struct ScenarioFiles {
  std::string embeddings;    // id<TAB>v1...vD, no header
  std::string associations;  // STRING detailed-links layout
  std::string manifest;      // JSON
};

/// Writes the scenario in the ingest formats plus a JSON manifest.
ScenarioFiles write_scenario(const Scenario& scenario, const std::string& directory);

}  // namespace cal
