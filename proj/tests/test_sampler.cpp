#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>

#include "cal/errors.hpp"
#include "cal/sampler.hpp"

using namespace cal;

namespace {

PairSet random_pairs(std::size_t n_entities, std::size_t count, std::uint64_t seed) {
  SeededRng rng(seed);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  PairSet out{{}, PairRole::train_positive};
  while (out.size() < count) {
    std::size_t a = rng.uniform_index(n_entities), b = rng.uniform_index(n_entities);
    if (a == b || !seen.emplace(std::min(a, b), std::max(a, b)).second) continue;
    out.pairs.push_back({a, b});
  }
  return out;
}

EmbeddingSet random_embeddings(std::size_t n, int d, std::uint64_t seed) {
  SeededRng rng(seed);
  RowMatrixF v(n, d);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(rng.normal());
  l2_normalize_rows(v);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("e" + std::to_string(i));
  return EmbeddingSet(ids, v);
}

void expect_clean(const PairSet& s) {
  std::set<std::uint64_t> keys;
  for (const auto& p : s.pairs) {
    EXPECT_NE(p.a, p.b);
    EXPECT_TRUE(keys.insert(pair_key(p.a, p.b)).second);
  }
}

}  // namespace

TEST(MakeBatches, FullBatchesAndDroppedRemainder) {
  auto batches = make_batches(random_pairs(3000, 23268, 1), 512, 7);
  ASSERT_EQ(batches.size(), 45u);
  std::set<std::size_t> used;
  for (const auto& b : batches) {
    EXPECT_EQ(b.size(), 512u);
    used.insert(b.begin(), b.end());
  }
  EXPECT_EQ(used.size(), 45u * 512u);
  EXPECT_EQ(23268u - used.size(), 228u);
}

TEST(MakeBatches, ExactAndSmallSets) {
  EXPECT_EQ(make_batches(random_pairs(100, 512, 1), 512, 0).size(), 1u);
  auto small = make_batches(random_pairs(100, 30, 1), 512, 0);
  ASSERT_EQ(small.size(), 1u);
  EXPECT_EQ(small[0].size(), 30u);
  EXPECT_THROW(make_batches(random_pairs(100, 30, 1), 1, 0), ConfigError);
}

TEST(MakeBatches, SeedDeterminesOrder) {
  auto pairs = random_pairs(500, 2000, 3);
  EXPECT_EQ(make_batches(pairs, 64, 11), make_batches(pairs, 64, 11));
  EXPECT_NE(make_batches(pairs, 64, 11), make_batches(pairs, 64, 12));
}

TEST(ShuffleAblation, TwoPairSwap) {
  PairSet in{{{1, 2}, {3, 4}}, PairRole::train_positive};
  bool saw_swap = false, saw_identity = false;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    SeededRng rng(seed);
    auto out = shuffle_ablation(in, rng);
    if (out.pairs == std::vector<IndexPair>{{1, 4}, {3, 2}}) saw_swap = true;
    else if (out.pairs == in.pairs) saw_identity = true;
    else ADD_FAILURE() << "unexpected permutation";
  }
  EXPECT_TRUE(saw_swap);
  EXPECT_TRUE(saw_identity);
}

TEST(ShuffleAblation, FirstColumnPreservedAndSelfPairsDropped) {
  auto pairs = random_pairs(50, 400, 5);
  SeededRng rng(9);
  auto out = shuffle_ablation(pairs, rng);
  std::multiset<std::size_t> second_in, second_out;
  std::size_t j = 0;
  for (const auto& p : pairs.pairs) second_in.insert(p.b);
  for (const auto& p : out.pairs) {
    EXPECT_NE(p.a, p.b);
    while (pairs.pairs[j].a != p.a) ++j;  // order of column one is kept
    ++j;
    second_out.insert(p.b);
  }
  EXPECT_EQ(second_out.size() + (pairs.size() - out.size()), second_in.size());
}

TEST(ShuffleAblation, PreservedFractionMatchesPermutationOracle) {
  // Exhaustive oracle: mean fraction of fixed points over all permutations of 6.
  const int n = 6;
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double total = 0;
  int count = 0;
  do {
    int fixed = 0;
    for (int i = 0; i < n; ++i) fixed += perm[i] == i;
    total += static_cast<double>(fixed) / n;
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  const double oracle = total / count;
  EXPECT_NEAR(oracle, 1.0 / n, 1e-12);

  PairSet in{{}, PairRole::train_positive};
  for (std::size_t i = 0; i < n; ++i) in.pairs.push_back({i, 100 + i});
  SeededRng rng(1);
  double kept = 0;
  const int trials = 40000;
  for (int t = 0; t < trials; ++t) {
    auto out = shuffle_ablation(in, rng);
    for (std::size_t i = 0; i < out.size(); ++i) kept += out.pairs[i] == in.pairs[i];
  }
  EXPECT_NEAR(kept / (trials * n), oracle, 0.01);
}

TEST(SimilarPositives, DuplicateVectorWins) {
  RowMatrixF v(4, 3);
  v << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0;
  EmbeddingSet e({"a", "b", "c", "d"}, v);
  auto out = similar_positives_ablation(e, 1);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.pairs[0], (IndexPair{0, 3}));
  EXPECT_EQ(similar_positives_ablation(e, 6).size(), 6u);
  EXPECT_THROW(similar_positives_ablation(e, 7), ConfigError);
}

TEST(SimilarPositives, MatchesExhaustiveSort) {
  auto e = random_embeddings(100, 8, 4);
  struct C {
    double c;
    std::size_t a, b;
  };
  std::vector<C> all;
  const RowMatrixD v = e.vectors().cast<double>();
  for (std::size_t a = 0; a < 100; ++a)
    for (std::size_t b = a + 1; b < 100; ++b) all.push_back({v.row(a).dot(v.row(b)), a, b});
  std::sort(all.begin(), all.end(), [](const C& x, const C& y) {
    return x.c != y.c ? x.c > y.c : (x.a != y.a ? x.a < y.a : x.b < y.b);
  });
  auto out = similar_positives_ablation(e, 300);
  ASSERT_EQ(out.size(), 300u);
  for (std::size_t i = 0; i < 300; ++i) {
    EXPECT_EQ(out.pairs[i], (IndexPair{all[i].a, all[i].b})) << i;
  }
}

TEST(EdgeSplit, ExactCountsAndPartition) {
  auto pairs = random_pairs(60, 100, 2);
  auto split = edge_split(pairs, {SplitKind::edge_split, 0.7, 42});
  EXPECT_EQ(split.train.size(), 70u);
  EXPECT_EQ(split.test.size(), 30u);
  std::set<std::uint64_t> keys;
  for (const auto& p : split.train.pairs) keys.insert(pair_key(p.a, p.b));
  for (const auto& p : split.test.pairs) EXPECT_TRUE(keys.insert(pair_key(p.a, p.b)).second);
  EXPECT_EQ(keys, std::set<std::uint64_t>(pairs.key_set().begin(), pairs.key_set().end()));
}

TEST(EdgeSplit, SeedDeterminism) {
  auto pairs = random_pairs(60, 100, 2);
  auto a = edge_split(pairs, {SplitKind::edge_split, 0.7, 42});
  auto b = edge_split(pairs, {SplitKind::edge_split, 0.7, 42});
  auto c = edge_split(pairs, {SplitKind::edge_split, 0.7, 43});
  EXPECT_EQ(a.train.pairs, b.train.pairs);
  EXPECT_NE(a.train.pairs, c.train.pairs);
  EXPECT_THROW(edge_split(pairs, {SplitKind::edge_split, 1.0, 42}), ConfigError);
}

TEST(NodeSplit, HandExample) {
  PairSet pairs{{{0, 1}, {2, 3}}, PairRole::train_positive};
  std::vector<std::size_t> held{3};
  auto split = node_split_with(pairs, held);
  EXPECT_EQ(split.train.pairs, (std::vector<IndexPair>{{0, 1}}));
  EXPECT_EQ(split.test.pairs, (std::vector<IndexPair>{{2, 3}}));
  std::vector<std::size_t> none{7};
  EXPECT_THROW(node_split_with(pairs, none), SplitError);
}

TEST(NodeSplit, TrainNeverTouchesHeldOut) {
  auto pairs = random_pairs(200, 1500, 8);
  auto entities = touched_entities(pairs);
  auto split = node_split(pairs, entities, {SplitKind::node_split, 0.7, 42});
  EXPECT_EQ(split.held_out.size(), entities.size() - 140);
  std::set<std::size_t> held(split.held_out.begin(), split.held_out.end());
  for (const auto& p : split.train.pairs) {
    EXPECT_FALSE(held.count(p.a));
    EXPECT_FALSE(held.count(p.b));
  }
  for (const auto& p : split.test.pairs) EXPECT_TRUE(held.count(p.a) || held.count(p.b));
  EXPECT_EQ(split.train.size() + split.test.size(), pairs.size());
  for (const auto& p : unseen_unseen(split.test, split.held_out).pairs) {
    EXPECT_TRUE(held.count(p.a) && held.count(p.b));
  }
}

TEST(EvalNegatives, CapAndMultiplier) {
  auto big = random_pairs(3000, 23268, 3);
  SeededRng rng(42);
  auto neg = sample_eval_negatives(big, 3000, 5, 50000, rng);
  EXPECT_EQ(neg.size(), 50000u);
  expect_clean(neg);
  auto keys = big.key_set();
  for (const auto& p : neg.pairs) EXPECT_FALSE(keys.count(pair_key(p.a, p.b)));
  EXPECT_EQ(neg.role, PairRole::eval_negative);

  SeededRng rng2(42);
  EXPECT_EQ(sample_eval_negatives(random_pairs(30, 10, 1), 30, 5, 50000, rng2).size(), 50u);
}

TEST(EvalNegatives, CompleteGraphHasNoNegatives) {
  PairSet all{{}, PairRole::train_positive};
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = a + 1; b < 6; ++b) all.pairs.push_back({a, b});
  SeededRng rng(1);
  EXPECT_THROW(sample_eval_negatives(all, 6, 1, 100, rng), SamplingError);
}

TEST(EvalNegatives, Deterministic) {
  auto pos = random_pairs(300, 1000, 3);
  SeededRng a(5), b(5);
  EXPECT_EQ(sample_eval_negatives(pos, 300, 5, 50000, a).pairs,
            sample_eval_negatives(pos, 300, 5, 50000, b).pairs);
}

TEST(DegreeBins, PowersOfTwo) {
  EXPECT_EQ(DegreeBins::bin_of_degree(0), 0);
  EXPECT_EQ(DegreeBins::bin_of_degree(1), 0);
  EXPECT_EQ(DegreeBins::bin_of_degree(2), 1);
  EXPECT_EQ(DegreeBins::bin_of_degree(3), 1);
  EXPECT_EQ(DegreeBins::bin_of_degree(4), 2);
  EXPECT_EQ(DegreeBins::bin_of_degree(1023), 9);
  EXPECT_EQ(DegreeBins::bin_of_degree(1024), 10);
}

TEST(DegreeMatched, SingleBinBehavesUniformly) {
  auto pos = random_pairs(400, 300, 6);
  std::vector<double> deg(400, 5.0);
  SeededRng rng(3);
  std::size_t fallbacks = 99;
  auto neg = sample_degree_matched_negatives(pos, deg, rng, &fallbacks);
  EXPECT_EQ(neg.size(), pos.size());
  EXPECT_EQ(fallbacks, 0u);
  expect_clean(neg);
}

TEST(DegreeMatched, HistogramMatchesWithoutFallback) {
  auto pos = random_pairs(800, 4000, 12);
  auto deg = pair_degrees(pos, 800);
  SeededRng rng(3);
  std::size_t fallbacks = 0;
  auto neg = sample_degree_matched_negatives(pos, deg, rng, &fallbacks);
  ASSERT_EQ(fallbacks, 0u);
  std::map<std::pair<int, int>, int> hp, hn;
  for (const auto& p : pos.pairs)
    ++hp[{DegreeBins::bin_of_degree(deg[p.a]), DegreeBins::bin_of_degree(deg[p.b])}];
  for (const auto& p : neg.pairs)
    ++hn[{DegreeBins::bin_of_degree(deg[p.a]), DegreeBins::bin_of_degree(deg[p.b])}];
  EXPECT_EQ(hp, hn);
  auto keys = pos.key_set();
  for (const auto& p : neg.pairs) EXPECT_FALSE(keys.count(pair_key(p.a, p.b)));
}

TEST(PairTsv, RoundTrip) {
  auto e = random_embeddings(20, 3, 1);
  std::vector<PairSet> sets{{{{0, 1}, {2, 3}}, PairRole::eval_positive},
                            {{{4, 5}}, PairRole::eval_negative}};
  const auto path = (std::filesystem::temp_directory_path() / "cal_pairs.tsv").string();
  write_pairs_tsv(path, sets, e);
  auto back = read_pairs_tsv(path, e);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].pairs, sets[0].pairs);
  EXPECT_EQ(back[1].role, PairRole::eval_negative);
  EXPECT_EQ(back[1].pairs, sets[1].pairs);
  std::filesystem::remove(path);
}
