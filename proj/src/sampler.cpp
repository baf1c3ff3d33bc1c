#include "cal/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>

#include "cal/errors.hpp"

namespace cal {

namespace {

std::size_t fraction_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 1e-9));
}

IndexPair draw_pair(std::size_t n, SeededRng& rng) {
  for (;;) {
    const auto a = static_cast<std::size_t>(rng.uniform_index(n));
    const auto b = static_cast<std::size_t>(rng.uniform_index(n));
    if (a != b) return {a, b};
  }
}

}  // namespace

void SplitSpec::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
}

std::string to_string(SplitKind kind) {
  return kind == SplitKind::edge_split ? "edge_split" : "node_split";
}

SplitKind split_kind_from_string(const std::string& s) {
  if (s == "edge_split") return SplitKind::edge_split;
  if (s == "node_split") return SplitKind::node_split;
  throw ConfigError("unknown split kind '" + s + "'");
}

std::string to_string(NegativeKind kind) {
  switch (kind) {
    case NegativeKind::in_batch: return "in_batch";
    case NegativeKind::random_k: return "random_k";
    case NegativeKind::degree_matched: return "degree_matched";
  }
  return "?";
}

NegativeKind negative_kind_from_string(const std::string& s) {
  if (s == "in_batch") return NegativeKind::in_batch;
  if (s == "random_k" || s == "random") return NegativeKind::random_k;
  if (s == "degree_matched") return NegativeKind::degree_matched;
  throw ConfigError("unknown negative mode '" + s + "'");
}

std::vector<Batch> make_batches(const PairSet& positives, std::size_t batch_size,
                                std::uint64_t epoch_seed) {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (positives.empty()) throw ConfigError("no training pairs");
  std::vector<std::size_t> order(positives.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng(epoch_seed);
  rng.shuffle(std::span(order));

  std::vector<Batch> batches;
  const std::size_t full = order.size() / batch_size;
  for (std::size_t b = 0; b < full; ++b) {
    batches.emplace_back(order.begin() + b * batch_size, order.begin() + (b + 1) * batch_size);
  }
  if (full == 0 && order.size() >= 2) batches.push_back(std::move(order));
  return batches;
}

PairSet shuffle_ablation(const PairSet& positives, SeededRng& rng) {
  std::vector<std::size_t> second(positives.size());
  for (std::size_t i = 0; i < positives.size(); ++i) second[i] = positives.pairs[i].b;
  rng.shuffle(std::span(second));
  PairSet out{{}, positives.role};
  out.pairs.reserve(positives.size());
  for (std::size_t i = 0; i < positives.size(); ++i) {
    if (positives.pairs[i].a != second[i]) out.pairs.push_back({positives.pairs[i].a, second[i]});
  }
  return out;
}

PairSet similar_positives_ablation(const EmbeddingSet& embeddings, std::size_t n_pairs) {
  const std::size_t n = embeddings.size();
  const std::size_t available = n < 2 ? 0 : n * (n - 1) / 2;
  if (n_pairs > available) {
    throw ConfigError("requested " + std::to_string(n_pairs) + " similar pairs but only " +
                      std::to_string(available) + " exist");
  }
  struct Candidate {
    double cos;
    std::size_t a, b;
  };
  // Heap top is the worst retained candidate.
  auto better = [](const Candidate& x, const Candidate& y) {
    if (x.cos != y.cos) return x.cos > y.cos;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  };
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(better)> heap(better);
  if (n_pairs == 0) return {{}, PairRole::train_positive};

  const RowMatrixD v = embeddings.vectors().cast<double>();
  constexpr Eigen::Index kBlock = 256;
  for (Eigen::Index start = 0; start < v.rows(); start += kBlock) {
    const Eigen::Index rows = std::min(kBlock, v.rows() - start);
    const Eigen::MatrixXd gram = v.middleRows(start, rows) * v.transpose();
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto a = static_cast<std::size_t>(start + r);
      for (std::size_t b = a + 1; b < n; ++b) {
        Candidate c{gram(r, static_cast<Eigen::Index>(b)), a, b};
        if (heap.size() < n_pairs) {
          heap.push(c);
        } else if (better(c, heap.top())) {
          heap.pop();
          heap.push(c);
        }
      }
    }
  }
  std::vector<Candidate> kept;
  kept.reserve(heap.size());
  while (!heap.empty()) {
    kept.push_back(heap.top());
    heap.pop();
  }
  std::reverse(kept.begin(), kept.end());
  PairSet out{{}, PairRole::train_positive};
  out.pairs.reserve(kept.size());
  for (const auto& c : kept) out.pairs.push_back({c.a, c.b});
  return out;
}

Split edge_split(const PairSet& positives, const SplitSpec& spec) {
  spec.validate();
  if (spec.kind != SplitKind::edge_split) throw ConfigError("edge_split needs an edge_split spec");
  std::vector<std::size_t> order(positives.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng(spec.seed);
  rng.shuffle(std::span(order));
  const std::size_t n_train = fraction_count(positives.size(), spec.train_fraction);
  Split split{{{}, PairRole::train_positive}, {{}, PairRole::eval_positive}, {}};
  split.train.pairs.reserve(n_train);
  split.test.pairs.reserve(positives.size() - n_train);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? split.train : split.test).pairs.push_back(positives.pairs[order[i]]);
  }
  return split;
}

Split node_split(const PairSet& positives, std::span<const std::size_t> entities,
                 const SplitSpec& spec) {
  spec.validate();
  if (spec.kind != SplitKind::node_split) throw ConfigError("node_split needs a node_split spec");
  std::vector<std::size_t> pool(entities.begin(), entities.end());
  SeededRng rng(spec.seed);
  rng.shuffle(std::span(pool));
  const std::size_t keep = fraction_count(pool.size(), spec.train_fraction);
  std::vector<std::size_t> held(pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end());
  std::sort(held.begin(), held.end());
  return node_split_with(positives, held);
}

Split node_split_with(const PairSet& positives, std::span<const std::size_t> held_out) {
  std::unordered_set<std::size_t> held(held_out.begin(), held_out.end());
  Split split{{{}, PairRole::train_positive}, {{}, PairRole::eval_positive}, {}};
  split.held_out.assign(held.begin(), held.end());
  std::sort(split.held_out.begin(), split.held_out.end());
  for (const auto& p : positives.pairs) {
    const bool touches = held.count(p.a) || held.count(p.b);
    (touches ? split.test : split.train).pairs.push_back(p);
  }
  if (split.train.empty() || split.test.empty()) {
    throw SplitError("node split produced an empty " +
                     std::string(split.train.empty() ? "train" : "test") + " set");
  }
  return split;
}

PairSet unseen_unseen(const PairSet& test, std::span<const std::size_t> held_out) {
  std::unordered_set<std::size_t> held(held_out.begin(), held_out.end());
  PairSet out{{}, test.role};
  for (const auto& p : test.pairs) {
    if (held.count(p.a) && held.count(p.b)) out.pairs.push_back(p);
  }
  return out;
}

std::vector<std::size_t> touched_entities(const PairSet& pairs) {
  std::vector<std::size_t> out;
  out.reserve(pairs.size() * 2);
  for (const auto& p : pairs.pairs) {
    out.push_back(p.a);
    out.push_back(p.b);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

PairSet sample_eval_negatives(const PairSet& positives, std::size_t n_entities,
                              std::size_t multiplier, std::size_t cap, SeededRng& rng) {
  if (multiplier < 1) throw ConfigError("negative multiplier must be at least 1");
  const std::size_t target = std::min(multiplier * positives.size(), cap);
  return sample_eval_negatives(positives.key_set(), target, n_entities, rng);
}

PairSet sample_eval_negatives(const std::unordered_set<std::uint64_t>& excluded,
                              std::size_t target, std::size_t n_entities, SeededRng& rng) {
  const std::size_t total = n_entities < 2 ? 0 : n_entities * (n_entities - 1) / 2;
  const std::size_t free_pairs = total > excluded.size() ? total - excluded.size() : 0;
  if (free_pairs < target) {
    throw SamplingError("only " + std::to_string(free_pairs) + " non-positive pairs exist, " +
                        std::to_string(target) + " requested");
  }
  PairSet out{{}, PairRole::eval_negative};
  out.pairs.reserve(target);
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(target * 2);
  const std::size_t max_draws = kNegativeRetryFactor * target + 1000;
  std::size_t draws = 0;
  while (out.size() < target) {
    if (++draws > max_draws) {
      throw SamplingError("negative sampling exceeded " + std::to_string(max_draws) + " draws");
    }
    const IndexPair p = draw_pair(n_entities, rng);
    const auto key = pair_key(p.a, p.b);
    if (excluded.count(key) || !seen.insert(key).second) continue;
    out.pairs.push_back({std::min(p.a, p.b), std::max(p.a, p.b)});
  }
  return out;
}

DegreeBins::DegreeBins(std::span<const double> degrees) : entity_bin_(degrees.size()) {
  for (std::size_t i = 0; i < degrees.size(); ++i) {
    const int bin = bin_of_degree(degrees[i]);
    entity_bin_[i] = bin;
    if (bin >= static_cast<int>(members_.size())) members_.resize(bin + 1);
    members_[bin].push_back(i);
  }
}

int DegreeBins::bin_of_degree(double degree) {
  if (!(degree >= 2.0)) return 0;
  return static_cast<int>(std::floor(std::log2(degree)));
}

int DegreeBins::nearest_nonempty(int bin, int distance) const {
  // Among nonempty bins, the distance-th closest to `bin` (lower bin first on ties).
  std::vector<std::pair<int, int>> order;
  for (int b = 0; b < num_bins(); ++b) {
    if (!members_[b].empty()) order.emplace_back(std::abs(b - bin), b);
  }
  if (order.empty()) throw SamplingError("no entities to sample from");
  std::sort(order.begin(), order.end());
  return order[std::min<std::size_t>(distance, order.size() - 1)].second;
}

std::size_t DegreeBins::sample(int bin, SeededRng& rng) const {
  if (bin < 0 || bin >= num_bins() || members_[bin].empty()) bin = nearest_nonempty(bin, 0);
  const auto& m = members_[bin];
  return m[rng.uniform_index(m.size())];
}

std::vector<double> pair_degrees(const PairSet& pairs, std::size_t n_entities) {
  std::vector<double> deg(n_entities, 0.0);
  for (const auto& p : pairs.pairs) {
    deg.at(p.a) += 1.0;
    deg.at(p.b) += 1.0;
  }
  return deg;
}

PairSet sample_degree_matched_negatives(const PairSet& positives, std::span<const double> degrees,
                                        SeededRng& rng, std::size_t* fallbacks) {
  return sample_degree_matched_negatives(positives, positives.key_set(), degrees, rng, fallbacks);
}

PairSet sample_degree_matched_negatives(const PairSet& positives,
                                        const std::unordered_set<std::uint64_t>& excluded,
                                        std::span<const double> degrees, SeededRng& rng,
                                        std::size_t* fallbacks) {
  const DegreeBins bins(degrees);
  const std::size_t n = degrees.size();
  PairSet out{{}, PairRole::eval_negative};
  out.pairs.reserve(positives.size());
  std::unordered_set<std::uint64_t> seen;
  std::size_t fallback_count = 0;
  for (const auto& p : positives.pairs) {
    const int ba = bins.bin_of(p.a), bb = bins.bin_of(p.b);
    bool placed = false;
    // Level 0 draws from the exact bins, level L from the L-th nearest
    // nonempty bins, and past the last bin uniformly.
    for (int level = 0; !placed; ++level) {
      const bool uniform = level >= bins.num_bins();
      if (level > bins.num_bins() + 1000) {
        throw SamplingError("could not place a degree-matched negative");
      }
      for (int attempt = 0; attempt < kDegreeMatchRejections && !placed; ++attempt) {
        IndexPair q;
        if (uniform) {
          q = draw_pair(n, rng);
        } else {
          q = {bins.sample(bins.nearest_nonempty(ba, level), rng),
               bins.sample(bins.nearest_nonempty(bb, level), rng)};
        }
        if (q.a == q.b) continue;
        const auto key = pair_key(q.a, q.b);
        if (excluded.count(key) || !seen.insert(key).second) continue;
        out.pairs.push_back(q);
        placed = true;
        if (level > 0) ++fallback_count;
      }
    }
  }
  if (fallbacks) *fallbacks = fallback_count;
  return out;
}

void write_pairs_tsv(const std::string& path, std::span<const PairSet> sets,
                     const EmbeddingSet& embeddings) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  const auto& ids = embeddings.ids();
  for (const auto& set : sets) {
    const std::string role = to_string(set.role);
    for (const auto& p : set.pairs) {
      out << ids.at(p.a) << '\t' << ids.at(p.b) << '\t' << role << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + path);
}

std::vector<PairSet> read_pairs_tsv(const std::string& path, const EmbeddingSet& embeddings) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<PairSet> sets;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string a, b, role;
    if (!std::getline(fields, a, '\t') || !std::getline(fields, b, '\t') ||
        !std::getline(fields, role, '\t')) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    const auto ia = embeddings.index_of(a), ib = embeddings.index_of(b);
    if (!ia || !ib) {
      throw MappingError(path + ":" + std::to_string(line_no) + ": unknown id '" +
                         (ia ? b : a) + "'");
    }
    const PairRole r = pair_role_from_string(role);
    auto it = std::find_if(sets.begin(), sets.end(), [&](const PairSet& s) { return s.role == r; });
    if (it == sets.end()) {
      sets.push_back({{}, r});
      it = sets.end() - 1;
    }
    it->pairs.push_back({*ia, *ib});
  }
  return sets;
}

}  // namespace cal
