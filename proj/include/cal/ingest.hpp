#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cal/types.hpp"

namespace cal {

struct IngestConfig {
  int pca_components = 50;  // 0 keeps the raw dimensions
  std::string confidence_channel = "combined_score";
  int confidence_min = 900;
  std::optional<std::string> mapping_file;
  bool header = false;  // skip the first line of the embedding file

  void validate() const;
};

struct RawTable {
  std::vector<std::string> ids;
  RowMatrixD values;
};

/// Tab-separated `id\tv1...\tvD`. ParseError on ragged rows, DataError on
/// non-finite values; both name the 1-based line.
RawTable read_embedding_table(const std::string& path, bool header = false);

/// Centred thin SVD. Each component's largest-magnitude loading is made positive.
PcaBasis fit_pca(const RowMatrixD& raw, int k);

RowMatrixF project(const RowMatrixD& raw, const PcaBasis& basis);

struct IdMapping {
  std::vector<std::string> mapped;       // targets for kept rows, in input order
  std::vector<std::size_t> kept;         // input positions that were mapped
  std::vector<std::string> unmapped;
  double coverage = 0;
};

IdMapping apply_id_mapping(const std::vector<std::string>& raw_ids, const std::string& mapping_file);

/// PCA is fitted on every row, before id mapping drops anything.
EmbeddingSet load_embeddings(const std::string& path, const IngestConfig& config,
                             IdMapping* mapping_out = nullptr);

void save_embedding_set(const EmbeddingSet& embeddings, const std::string& path);
EmbeddingSet load_embedding_set(const std::string& path);

struct AssociationLoad {
  AssociationGraph graph;
  PairSet positives;
  std::size_t n_lines = 0;
  std::size_t n_below_threshold = 0;
  std::size_t n_unmappable = 0;
  std::size_t n_duplicate = 0;
  std::size_t n_self = 0;
};

/// `combined` is accepted as an alias for the `combined_score` column.
AssociationLoad load_associations(const std::string& path, const IngestConfig& config,
                                  const EmbeddingSet& embeddings);

struct DatasetStats {
  std::size_t n_pairs = 0;
  double cross_boundary_fraction = 0;
  double mean_positive_cosine = 0;
  double fraction_cosine_above_half = 0;
  double mapping_coverage = 1;
};

DatasetStats dataset_stats(const EmbeddingSet& embeddings, const PairSet& positives,
                           double cb_threshold = 0.2, double mapping_coverage = 1.0);

}  // namespace cal
