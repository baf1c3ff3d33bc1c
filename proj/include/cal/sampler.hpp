#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "cal/rng.hpp"
#include "cal/types.hpp"

namespace cal {

enum class SplitKind { edge_split, node_split };

struct SplitSpec {
  SplitKind kind = SplitKind::edge_split;
  double train_fraction = 0.7;
  std::uint64_t seed = 42;

  void validate() const;
};

std::string to_string(SplitKind kind);
SplitKind split_kind_from_string(const std::string& s);

enum class NegativeKind { in_batch, random_k, degree_matched };

struct NegativeMode {
  NegativeKind kind = NegativeKind::in_batch;
  std::size_t k = 0;  // random_k only; 0 means batch_size - 1
};

std::string to_string(NegativeKind kind);
NegativeKind negative_kind_from_string(const std::string& s);

using Batch = std::vector<std::size_t>;

/// Shuffles pair indices by `epoch_seed` and chunks them. Partial trailing
/// chunks are dropped unless the whole set is smaller than one batch.
std::vector<Batch> make_batches(const PairSet& positives, std::size_t batch_size,
                                std::uint64_t epoch_seed);

PairSet shuffle_ablation(const PairSet& positives, SeededRng& rng);

PairSet similar_positives_ablation(const EmbeddingSet& embeddings, std::size_t n_pairs);

struct Split {
  PairSet train;
  PairSet test;
  std::vector<std::size_t> held_out;  // node_split only, sorted
};

Split edge_split(const PairSet& positives, const SplitSpec& spec);

/// Holds out (1 - train_fraction) of `entities`.
Split node_split(const PairSet& positives, std::span<const std::size_t> entities,
                 const SplitSpec& spec);

/// Node split with an explicit held-out set.
Split node_split_with(const PairSet& positives, std::span<const std::size_t> held_out);

/// Test pairs with both endpoints held out.
PairSet unseen_unseen(const PairSet& test, std::span<const std::size_t> held_out);

/// Entities touched by at least one pair, ascending.
std::vector<std::size_t> touched_entities(const PairSet& pairs);

inline constexpr std::size_t kNegativeRetryFactor = 100;

/// Uniform unordered non-positive pairs. Gives up with SamplingError after
/// kNegativeRetryFactor * target + 1000 draws.
PairSet sample_eval_negatives(const PairSet& positives, std::size_t n_entities,
                              std::size_t multiplier, std::size_t cap, SeededRng& rng);

PairSet sample_eval_negatives(const std::unordered_set<std::uint64_t>& excluded,
                              std::size_t target, std::size_t n_entities, SeededRng& rng);

/// log2 degree bins: degrees < 2 share bin 0, [2,4) is bin 1, [4,8) bin 2, ...
class DegreeBins {
 public:
  explicit DegreeBins(std::span<const double> degrees);

  static int bin_of_degree(double degree);
  int bin_of(std::size_t entity) const { return entity_bin_[entity]; }
  int num_bins() const { return static_cast<int>(members_.size()); }
  const std::vector<std::size_t>& members(int bin) const { return members_[bin]; }
  /// Uniform entity from `bin`, or from the nearest nonempty bin.
  std::size_t sample(int bin, SeededRng& rng) const;
  int nearest_nonempty(int bin, int distance) const;

 private:
  std::vector<int> entity_bin_;
  std::vector<std::vector<std::size_t>> members_;
};

inline constexpr int kDegreeMatchRejections = 100;

/// One negative per positive whose endpoint degree bins match the positive's.
/// `fallbacks`, if given, receives the number of pairs that needed a
/// neighbouring bin.
PairSet sample_degree_matched_negatives(const PairSet& positives, std::span<const double> degrees,
                                        SeededRng& rng, std::size_t* fallbacks = nullptr);

PairSet sample_degree_matched_negatives(const PairSet& positives,
                                        const std::unordered_set<std::uint64_t>& excluded,
                                        std::span<const double> degrees, SeededRng& rng,
                                        std::size_t* fallbacks = nullptr);

/// Per-entity degree counted over `pairs`.
std::vector<double> pair_degrees(const PairSet& pairs, std::size_t n_entities);

void write_pairs_tsv(const std::string& path, std::span<const PairSet> sets,
                     const EmbeddingSet& embeddings);

/// Reads `id_a\tid_b\trole` rows, grouped by role in order of first appearance.
std::vector<PairSet> read_pairs_tsv(const std::string& path, const EmbeddingSet& embeddings);

}  // namespace cal
