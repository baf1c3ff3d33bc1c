#include "cal/types.hpp"

namespace cal {

EmbeddingSet::EmbeddingSet(Unchecked, std::vector<std::string> ids, RowMatrixF vectors,
                           std::optional<PcaBasis> pca)
    : ids_(std::move(ids)), vectors_(std::move(vectors)), pca_(std::move(pca)) {
  if (static_cast<Eigen::Index>(ids_.size()) != vectors_.rows()) {
    throw ShapeError("embedding has " + std::to_string(ids_.size()) + " ids but " +
                     std::to_string(vectors_.rows()) + " rows");
  }
  if (!vectors_.allFinite()) throw NumericsError("embedding contains non-finite values");
}

EmbeddingSet::EmbeddingSet(std::vector<std::string> ids, RowMatrixF vectors,
                           std::optional<PcaBasis> pca)
    : EmbeddingSet(Unchecked{}, std::move(ids), std::move(vectors), std::move(pca)) {
  l2_normalize_rows(vectors_);
  build_index();
}

EmbeddingSet EmbeddingSet::from_unit_rows(std::vector<std::string> ids, RowMatrixF vectors,
                                          std::optional<PcaBasis> pca) {
  EmbeddingSet e(Unchecked{}, std::move(ids), std::move(vectors), std::move(pca));
  for (Eigen::Index r = 0; r < e.vectors_.rows(); ++r) {
    if (std::abs(e.vectors_.row(r).cast<double>().norm() - 1.0) > 1e-4) {
      throw NormalizationError("row " + std::to_string(r) + " is not unit length");
    }
  }
  e.build_index();
  return e;
}

void EmbeddingSet::build_index() {
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) throw DataError("duplicate entity id '" + ids_[i] + "'");
  }
}

std::optional<std::size_t> EmbeddingSet::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string AssociationGraph::key(const std::string& a, const std::string& b) {
  return a < b ? a + '\x1f' + b : b + '\x1f' + a;
}

bool AssociationGraph::add_edge(Edge edge) {
  if (edge.a == edge.b) return false;
  if (!seen_.insert(key(edge.a, edge.b)).second) return false;
  ++degree_[edge.a];
  ++degree_[edge.b];
  edges_.push_back(std::move(edge));
  return true;
}

std::size_t AssociationGraph::degree(const std::string& id) const {
  auto it = degree_.find(id);
  return it == degree_.end() ? 0 : it->second;
}

bool AssociationGraph::contains(const std::string& a, const std::string& b) const {
  return seen_.count(key(a, b)) > 0;
}

std::vector<double> AssociationGraph::degree_vector(const EmbeddingSet& embeddings) const {
  std::vector<double> out(embeddings.size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<double>(degree(embeddings.ids()[i]));
  }
  return out;
}

std::string to_string(PairRole role) {
  switch (role) {
    case PairRole::train_positive: return "train_positive";
    case PairRole::eval_positive: return "eval_positive";
    case PairRole::eval_negative: return "eval_negative";
  }
  return "train_positive";
}

PairRole pair_role_from_string(const std::string& s) {
  if (s == "train_positive") return PairRole::train_positive;
  if (s == "eval_positive") return PairRole::eval_positive;
  if (s == "eval_negative") return PairRole::eval_negative;
  throw ParseError("unknown pair role '" + s + "'");
}

void PairSet::validate(std::size_t n_entities) const {
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.a >= n_entities || p.b >= n_entities) {
      throw DataError("pair " + std::to_string(i) + " index out of range");
    }
    if (p.a == p.b) throw DataError("pair " + std::to_string(i) + " is a self-pair");
    if (!seen.insert(pair_key(p.a, p.b)).second) {
      throw DataError("pair " + std::to_string(i) + " duplicates an earlier pair");
    }
  }
}

std::unordered_set<std::uint64_t> PairSet::key_set() const {
  std::unordered_set<std::uint64_t> keys;
  keys.reserve(pairs.size() * 2);
  for (const auto& p : pairs) keys.insert(pair_key(p.a, p.b));
  return keys;
}

PairSet dedup_pairs(const PairSet& in) {
  PairSet out;
  out.role = in.role;
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(in.pairs.size() * 2);
  for (const auto& p : in.pairs) {
    if (p.a == p.b) continue;
    if (seen.insert(pair_key(p.a, p.b)).second) out.pairs.push_back(p);
  }
  return out;
}

}  // namespace cal
