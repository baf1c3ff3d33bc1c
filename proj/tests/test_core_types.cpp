#include <gtest/gtest.h>

#include <vector>

#include "cal/rng.hpp"
#include "cal/types.hpp"

using namespace cal;

TEST(L2Normalize, PythagoreanTriple) {
  Eigen::Vector2d v(3, 4);
  auto n = l2_normalize(v);
  EXPECT_NEAR(n(0), 0.6, 1e-15);
  EXPECT_NEAR(n(1), 0.8, 1e-15);
}

TEST(L2Normalize, UnitVectorUnchanged) {
  Eigen::Vector3d v(1, 0, 0);
  EXPECT_EQ(l2_normalize(v), v);
}

TEST(L2Normalize, ZeroVectorThrows) {
  Eigen::Vector2d v(0, 0);
  EXPECT_THROW(l2_normalize(v), NormalizationError);
}

TEST(L2Normalize, IdempotentOnRandomVectors) {
  SeededRng rng(7);
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd v(1 + rng.uniform_index(64));
    for (auto& x : v) x = rng.normal() * 10.0;
    auto once = l2_normalize(v);
    auto twice = l2_normalize(once);
    EXPECT_NEAR(once.norm(), 1.0, 1e-9);
    EXPECT_LE((once - twice).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Cosine, BasicCases) {
  Eigen::Vector2d e1(1, 0), e2(0, 1), m1(-1, 0);
  EXPECT_DOUBLE_EQ(cosine(e1, e1), 1.0);
  EXPECT_DOUBLE_EQ(cosine(e1, e2), 0.0);
  EXPECT_DOUBLE_EQ(cosine(e1, m1), -1.0);
}

TEST(Cosine, DimensionMismatchThrows) {
  Eigen::Vector2d a(1, 0);
  Eigen::Vector3d b(1, 0, 0);
  EXPECT_THROW(cosine(a, b), DimensionError);
}

TEST(Cosine, SymmetricAndBounded) {
  SeededRng rng(11);
  for (int t = 0; t < 500; ++t) {
    Eigen::VectorXd a(16), b(16);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    a = l2_normalize(a);
    b = l2_normalize(b);
    EXPECT_EQ(cosine(a, b), cosine(b, a));
    EXPECT_LE(std::abs(cosine(a, b)), 1.0 + 1e-9);
  }
}

TEST(SeededRng, SameSeedSameStream) {
  SeededRng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next(), b.next());
}

TEST(SeededRng, FrozenReferenceValues) {
  // xoshiro256** seeded by SplitMix64(42); these values pin the algorithm.
  SeededRng rng(42);
  std::vector<std::uint64_t> got;
  for (int i = 0; i < 3; ++i) got.push_back(rng.next());
  SeededRng again(42);
  EXPECT_EQ(again.next(), got[0]);
  std::uint64_t s = 42;
  std::uint64_t s0 = splitmix64(s), s1 = splitmix64(s);
  (void)s0;
  const std::uint64_t expected = ((s1 * 5) << 7 | (s1 * 5) >> 57) * 9;
  EXPECT_EQ(got[0], expected);
}

TEST(SeededRng, UniformIndexInRangeAndRoughlyUniform) {
  SeededRng rng(3);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 100000; ++i) {
    auto k = rng.uniform_index(10);
    ASSERT_LT(k, 10u);
    ++counts[k];
  }
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(SeededRng, NormalMoments) {
  SeededRng rng(5);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(SeededRng, ChildStreamsDifferAndAreStable) {
  SeededRng parent(42);
  auto c0 = parent.child(0), c1 = parent.child(1), c0b = parent.child(0);
  EXPECT_NE(c0.seed(), c1.seed());
  EXPECT_EQ(c0.next(), c0b.next());
  EXPECT_EQ(c0.seed(), derive_seed(42, 0));
}

TEST(EmbeddingSet, NormalizesRowsAndIndexesIds) {
  RowMatrixF m(2, 2);
  m << 3, 4, 0, 2;
  EmbeddingSet e({"a", "b"}, m);
  EXPECT_NEAR(e.row(0).norm(), 1.0f, 1e-6f);
  EXPECT_EQ(*e.index_of("b"), 1u);
  EXPECT_FALSE(e.index_of("B").has_value());  // case-sensitive
}

TEST(EmbeddingSet, RejectsDuplicateIdsAndZeroRows) {
  RowMatrixF m(2, 2);
  m << 1, 0, 0, 1;
  EXPECT_THROW(EmbeddingSet({"a", "a"}, m), DataError);
  m.row(1).setZero();
  EXPECT_THROW(EmbeddingSet({"a", "b"}, m), NormalizationError);
}

TEST(AssociationGraph, DropsLoopsAndDuplicatesAndCountsDegree) {
  AssociationGraph g;
  EXPECT_TRUE(g.add_edge({"a", "b", {{"combined_score", 900}}}));
  EXPECT_FALSE(g.add_edge({"b", "a", {{"combined_score", 900}}}));
  EXPECT_FALSE(g.add_edge({"c", "c", {{"combined_score", 900}}}));
  EXPECT_TRUE(g.add_edge({"a", "c", {{"combined_score", 400}}}));
  EXPECT_EQ(g.edges().size(), 2u);
  EXPECT_EQ(g.degree("a"), 2u);
  EXPECT_EQ(g.degree("b"), 1u);
  EXPECT_EQ(g.degree("zzz"), 0u);
}

TEST(PairSet, ValidateCatchesViolations) {
  PairSet ok{{{0, 1}, {1, 2}}, PairRole::train_positive};
  EXPECT_NO_THROW(ok.validate(3));
  PairSet self{{{1, 1}}, PairRole::train_positive};
  EXPECT_THROW(self.validate(3), DataError);
  PairSet dup{{{0, 1}, {1, 0}}, PairRole::train_positive};
  EXPECT_THROW(dup.validate(3), DataError);
  PairSet range{{{0, 3}}, PairRole::train_positive};
  EXPECT_THROW(range.validate(3), DataError);
  auto cleaned = dedup_pairs(PairSet{{{0, 1}, {1, 0}, {2, 2}, {1, 2}}, PairRole::eval_negative});
  EXPECT_EQ(cleaned.pairs, (std::vector<IndexPair>{{0, 1}, {1, 2}}));
}
