#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cal/model.hpp"
#include "cal/rng.hpp"
#include "cal/types.hpp"

namespace cal {

enum class ScoringKind { half_transformed, both_transformed, cosine_only, blend };

struct ScoringMode {
  ScoringKind kind = ScoringKind::half_transformed;
  double lambda = 1.0;  // blend only

  static ScoringMode blend(double lambda);
  void validate() const;
};

std::string to_string(ScoringKind kind);
ScoringKind scoring_kind_from_string(const std::string& s);

/// Score of a single pair, computed straight from the model.
double association_score(const CalModelF& model, const Eigen::Ref<const RowVector<float>>& e_a,
                         const Eigen::Ref<const RowVector<float>>& e_b,
                         ScoringMode mode = {});

/// Caches f(e) for every entity so pair scores are two dot products.
class PairScorer {
 public:
  PairScorer(const CalModelF& model, const EmbeddingSet& embeddings);

  double cosine(std::size_t a, std::size_t b) const;
  double half(std::size_t a, std::size_t b) const;
  double both(std::size_t a, std::size_t b) const;
  double score(std::size_t a, std::size_t b, ScoringMode mode) const;
  std::vector<double> scores(const PairSet& pairs, ScoringMode mode) const;
  std::vector<double> cosines(const PairSet& pairs) const;

  const RowMatrixF& transformed() const noexcept { return transformed_; }
  const EmbeddingSet& embeddings() const noexcept { return *embeddings_; }

 private:
  const EmbeddingSet* embeddings_;
  RowMatrixF transformed_;
};

/// Mann-Whitney AUC with midranks: P(pos > neg) + P(pos == neg) / 2.
double auc(std::span<const double> pos, std::span<const double> neg);

/// Percentile 95% interval of bootstrap AUCs.
std::pair<double, double> bootstrap_auc_ci(std::span<const double> pos, std::span<const double> neg,
                                           std::size_t n_boot, SeededRng& rng);

inline const std::vector<double> kDefaultCbThresholds{0.30, 0.20, 0.15, 0.10, 0.05};
inline constexpr double kDefaultCbThreshold = 0.2;
inline constexpr std::size_t kMinCbPositives = 10;

struct CbRow {
  double threshold = 0;
  std::size_t pos_count = 0, neg_count = 0;
  double cosine_auc = 0, cal_auc = 0;
  bool insufficient = false;
};

/// Restricts both sides to |cosine| < t for each threshold.
std::vector<CbRow> cross_boundary_eval(const PairScorer& scorer, const PairSet& pos,
                                       const PairSet& neg, std::span<const double> thresholds,
                                       ScoringMode mode = {});

struct LambdaRow {
  double lambda = 0, overall_auc = 0, cb_auc = 0;
};

std::vector<double> default_lambda_grid();

std::vector<LambdaRow> lambda_sweep(const PairScorer& scorer, const PairSet& pos,
                                    const PairSet& neg, std::span<const double> grid,
                                    double cb_threshold = kDefaultCbThreshold);

/// Spearman correlation with average ranks for ties; nullopt if either side
/// is constant.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

/// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

/// Bucket of each value given ascending edges; values equal to an edge go
/// to the lower bucket.
std::vector<int> assign_buckets(std::span<const double> values, std::span<const double> edges);

struct QuintileRow {
  int quintile = 0;
  double degree_lo = 0, degree_hi = 0;
  std::size_t n = 0;
  double mean_cosine = 0, mean_association = 0, delta = 0;
};

struct DegreeAnalysis {
  std::optional<double> spearman_mean;  // pair degree = mean of endpoint degrees
  std::optional<double> spearman_max;   // pair degree = max of endpoint degrees
  std::string spearman_note;
  std::vector<QuintileRow> pair_quintiles;    // cross-boundary positives by pair degree
  std::vector<QuintileRow> entity_quintiles;  // each pair counted under both endpoints
};

double pair_degree(std::span<const double> degrees, const IndexPair& p);

DegreeAnalysis degree_analysis(const PairScorer& scorer, std::span<const double> degrees,
                               const PairSet& pos, const PairSet& neg,
                               double cb_threshold = kDefaultCbThreshold, int n_quantiles = 5);

struct BucketComparison {
  int bucket = 0;
  double degree_lo = 0, degree_hi = 0;
  std::size_t n_pos = 0, n_neg = 0;
  double reference_auc = 0, shuffled_auc = 0, delta = 0;
  bool insufficient = false;
};

std::vector<BucketComparison> degree_quantile_model_comparison(
    const PairScorer& reference, const PairScorer& shuffled, const PairSet& pos, const PairSet& neg,
    std::span<const double> degrees, int n_quantiles = 5);

struct ImprovementRow {
  std::string id_a, id_b;
  double cosine = 0, association = 0, delta = 0;
};

std::vector<ImprovementRow> top_improvement_pairs(const PairScorer& scorer, const PairSet& positives,
                                                  std::size_t k);

enum class DistanceFormat { none, tsv, binary };

/// Writes f(e) rows as `id\tv1...` and optionally the 1 - cosine matrix of
/// the transformed rows (TSV with id header, or CALDST1 upper triangle).
void export_transformed(const PairScorer& scorer, const std::string& path,
                        DistanceFormat distance_format = DistanceFormat::none,
                        const std::string& distance_path = {});

struct EvalOptions {
  ScoringMode mode;
  double cb_threshold = kDefaultCbThreshold;
  std::vector<double> cb_thresholds = kDefaultCbThresholds;
  std::vector<double> lambda_grid = default_lambda_grid();
  std::size_t n_boot = 1000;
  std::uint64_t bootstrap_seed = 42;
  std::size_t top_k = 20;
  int n_quantiles = 5;
};

struct EvalReport {
  std::size_t n_pos = 0, n_neg = 0;
  std::string scoring_mode;
  double overall_auc = 0, cb_auc = 0;
  double cosine_auc = 0, cosine_cb_auc = 0;
  std::size_t cb_pos = 0, cb_neg = 0;
  double cb_threshold = kDefaultCbThreshold;
  std::pair<double, double> auc_ci{0, 0};
  std::vector<LambdaRow> lambda_sweep;
  std::vector<CbRow> cb_sweep;
  DegreeAnalysis degree;
  std::vector<ImprovementRow> top_improvement_pairs;
  std::vector<std::pair<std::string, double>> extras;  // e.g. node-split breakdowns
  std::string eval_set_hash;  // FNV-1a over positive then negative index pairs
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
};

std::string eval_set_hash(const PairSet& pos, const PairSet& neg);

EvalReport evaluate(const PairScorer& scorer, const PairSet& pos, const PairSet& neg,
                    std::span<const double> degrees, const EvalOptions& options = {});

}  // namespace cal
