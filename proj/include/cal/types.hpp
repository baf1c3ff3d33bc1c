#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cal/errors.hpp"

namespace cal {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using RowMatrixF = RowMatrix<float>;
using RowMatrixD = RowMatrix<double>;

/// Returns v / ||v||. Throws NormalizationError for an all-zero vector.
template <typename Derived>
auto l2_normalize(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar norm = v.norm();
  if (!(norm > Scalar(0)) || !std::isfinite(static_cast<double>(norm))) {
    throw NormalizationError("vector has zero or non-finite norm");
  }
  return (v / norm).eval();
}

template <typename Scalar>
void l2_normalize_rows(RowMatrix<Scalar>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Scalar norm = m.row(r).norm();
    if (!(norm > Scalar(0)) || !std::isfinite(static_cast<double>(norm))) {
      throw NormalizationError("row " + std::to_string(r) + " has zero or non-finite norm");
    }
    m.row(r) /= norm;
  }
}

/// Dot product of two unit vectors, accumulated in double.
template <typename DerivedA, typename DerivedB>
double cosine(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine of vectors with sizes " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a(i)) * static_cast<double>(b(i));
  }
  return acc;
}

/// Centering vector and projection rows of a fitted PCA; kept with the
/// embedding so unseen entities can be projected identically.
struct PcaBasis {
  Vector<float> mean;         // raw_dim
  RowMatrixF components;      // k x raw_dim, one component per row
  double variance_explained = 1.0;

  Eigen::Index raw_dim() const { return components.cols(); }
  Eigen::Index dim() const { return components.rows(); }
};

/// Entity ids with a row-aligned matrix of unit-norm feature vectors.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  /// Rows are L2-normalized on construction; ids must be unique.
  EmbeddingSet(std::vector<std::string> ids, RowMatrixF vectors,
               std::optional<PcaBasis> pca = std::nullopt);

  /// Keeps rows bit-for-bit; NormalizationError unless every row norm is within 1e-4 of 1.
  static EmbeddingSet from_unit_rows(std::vector<std::string> ids, RowMatrixF vectors,
                                     std::optional<PcaBasis> pca = std::nullopt);

  std::size_t size() const noexcept { return ids_.size(); }
  Eigen::Index dim() const noexcept { return vectors_.cols(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const RowMatrixF& vectors() const noexcept { return vectors_; }
  const std::optional<PcaBasis>& pca() const noexcept { return pca_; }

  auto row(std::size_t i) const { return vectors_.row(static_cast<Eigen::Index>(i)); }
  std::optional<std::size_t> index_of(const std::string& id) const;
  double cosine(std::size_t i, std::size_t j) const { return cal::cosine(row(i), row(j)); }

 private:
  std::vector<std::string> ids_;
  RowMatrixF vectors_;
  std::optional<PcaBasis> pca_;
  std::unordered_map<std::string, std::size_t> index_;

  struct Unchecked {};
  EmbeddingSet(Unchecked, std::vector<std::string> ids, RowMatrixF vectors, std::optional<PcaBasis> pca);
  void build_index();
};

/// Undirected key for a pair of indices.
constexpr std::uint64_t pair_key(std::size_t a, std::size_t b) noexcept {
  const auto lo = static_cast<std::uint64_t>(a < b ? a : b);
  const auto hi = static_cast<std::uint64_t>(a < b ? b : a);
  return (hi << 32) | lo;
}

struct Edge {
  std::string a;
  std::string b;
  std::map<std::string, int> channels;
};

/// Undirected, loop-free weighted edge list with per-entity degree.
class AssociationGraph {
 public:
  /// Returns false (and ignores the edge) for self-loops and duplicates.
  bool add_edge(Edge edge);

  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::size_t degree(const std::string& id) const;
  const std::unordered_map<std::string, std::size_t>& degrees() const noexcept { return degree_; }
  bool contains(const std::string& a, const std::string& b) const;

  /// Degree of every embedding row (0 for entities without edges).
  std::vector<double> degree_vector(const EmbeddingSet& embeddings) const;

 private:
  static std::string key(const std::string& a, const std::string& b);

  std::vector<Edge> edges_;
  std::unordered_set<std::string> seen_;
  std::unordered_map<std::string, std::size_t> degree_;
};

enum class PairRole { train_positive, eval_positive, eval_negative };

std::string to_string(PairRole role);
PairRole pair_role_from_string(const std::string& s);

struct IndexPair {
  std::size_t a = 0;
  std::size_t b = 0;
  friend bool operator==(const IndexPair&, const IndexPair&) = default;
};

/// Ordered list of entity index pairs with a role tag.
struct PairSet {
  std::vector<IndexPair> pairs;
  PairRole role = PairRole::train_positive;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }

  /// Throws DataError on out-of-range indices, self-pairs, or duplicates in
  /// either orientation.
  void validate(std::size_t n_entities) const;
  std::unordered_set<std::uint64_t> key_set() const;
};

/// Drops self-pairs and orientation duplicates, keeping first occurrences.
PairSet dedup_pairs(const PairSet& in);

}  // namespace cal
