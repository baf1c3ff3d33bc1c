#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "cal/errors.hpp"
#include "cal/eval.hpp"
#include "cal/sampler.hpp"

using namespace cal;

namespace {

double brute_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::vector<double> random_scores(SeededRng& rng, std::size_t n, double shift, bool coarse) {
  std::vector<double> v(n);
  for (auto& x : v) {
    x = rng.normal() + shift;
    if (coarse) x = std::round(x * 4) / 4;  // force ties
  }
  return v;
}

EmbeddingSet random_embeddings(std::size_t n, int d, std::uint64_t seed) {
  SeededRng rng(seed);
  RowMatrixF v(n, d);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(rng.normal());
  l2_normalize_rows(v);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("g" + std::to_string(i));
  return EmbeddingSet(ids, v);
}

PairSet random_pairs(std::size_t n, std::size_t count, std::uint64_t seed, PairRole role) {
  SeededRng rng(seed);
  std::unordered_set<std::uint64_t> seen;
  PairSet out{{}, role};
  while (out.size() < count) {
    std::size_t a = rng.uniform_index(n), b = rng.uniform_index(n);
    if (a != b && seen.insert(pair_key(a, b)).second) out.pairs.push_back({a, b});
  }
  return out;
}

CalModelF identity_model(int d) {
  SeededRng rng(1);
  auto m = init_model<float>(d, 8, rng);
  m.alpha_logit = 40.0f;  // sigmoid rounds to exactly 1 in float
  return m;
}

struct Fixture {
  EmbeddingSet emb = random_embeddings(300, 6, 11);
  CalModelF model;
  PairSet pos = random_pairs(300, 400, 1, PairRole::eval_positive);
  PairSet neg = random_pairs(300, 2000, 2, PairRole::eval_negative);
  Fixture() {
    SeededRng rng(3);
    model = init_model<float>(6, 16, rng);
  }
};

}  // namespace

TEST(Auc, HandExamples) {
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.8}, std::vector<double>{0.1, 0.2}), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.5}, std::vector<double>{0.5}), 0.5);
  EXPECT_EQ(auc(std::vector<double>{0.3, 0.7}, std::vector<double>{0.4, 0.6}), 0.5);
  EXPECT_THROW(auc(std::vector<double>{}, std::vector<double>{0.1}), EmptyDataError);
}

TEST(Auc, MatchesBruteForceOracle) {
  SeededRng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(200), m = 1 + rng.uniform_index(200);
    const bool coarse = trial % 2 == 0;
    auto pos = random_scores(rng, n, 0.7, coarse), neg = random_scores(rng, m, 0.0, coarse);
    EXPECT_NEAR(auc(pos, neg), brute_auc(pos, neg), 1e-12);
  }
}

TEST(Auc, ComplementAndMonotoneInvariance) {
  SeededRng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto pos = random_scores(rng, 1 + rng.uniform_index(150), 0.5, trial % 3 == 0);
    auto neg = random_scores(rng, 1 + rng.uniform_index(150), 0.0, trial % 3 == 0);
    EXPECT_EQ(auc(pos, neg) + auc(neg, pos), 1.0);
    std::vector<double> tp, tn;
    for (double x : pos) tp.push_back(std::exp(3 * x) - 2);
    for (double x : neg) tn.push_back(std::exp(3 * x) - 2);
    EXPECT_EQ(auc(tp, tn), auc(pos, neg));
  }
}

TEST(Bootstrap, PerfectSeparationAndCoverage) {
  SeededRng rng(1);
  auto ci = bootstrap_auc_ci(std::vector<double>{2, 3, 4}, std::vector<double>{0, 1}, 200, rng);
  EXPECT_EQ(ci.first, 1.0);
  EXPECT_EQ(ci.second, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    auto pos = random_scores(rng, 80, 0.5, trial % 2), neg = random_scores(rng, 120, 0, trial % 2);
    auto [lo, hi] = bootstrap_auc_ci(pos, neg, 500, rng);
    const double point = auc(pos, neg);
    EXPECT_LE(lo, point);
    EXPECT_GE(hi, point);
  }
  EXPECT_THROW(bootstrap_auc_ci(std::vector<double>{1}, std::vector<double>{0, 1}, 10, rng),
               EmptyDataError);
}

TEST(Bootstrap, ReplicateMatchesDirectAuc) {
  // One replicate with n_boot=1 must equal the AUC of the same resample drawn
  // with an identically seeded generator.
  SeededRng data(2);
  auto pos = random_scores(data, 30, 0.4, true), neg = random_scores(data, 40, 0, true);
  SeededRng a(9), b(9);
  auto ci = bootstrap_auc_ci(pos, neg, 1, a);
  std::vector<double> rp, rn;
  for (std::size_t i = 0; i < pos.size(); ++i) rp.push_back(pos[b.uniform_index(pos.size())]);
  for (std::size_t i = 0; i < neg.size(); ++i) rn.push_back(neg[b.uniform_index(neg.size())]);
  EXPECT_NEAR(ci.first, auc(rp, rn), 1e-12);
}

TEST(Bootstrap, WidthShrinksLikeInverseRootN) {
  SeededRng rng(3);
  auto width = [&](std::size_t n) {
    auto pos = random_scores(rng, n, 1.0, false), neg = random_scores(rng, n, 0.0, false);
    auto [lo, hi] = bootstrap_auc_ci(pos, neg, 1000, rng);
    return hi - lo;
  };
  const double w100 = width(100), w400 = width(400), w1600 = width(1600);
  EXPECT_NEAR(w100 / w400, 2.0, 0.6);
  EXPECT_NEAR(w400 / w1600, 2.0, 0.6);
}

TEST(Scoring, IdentityModelCollapsesToCosine) {
  auto e = random_embeddings(20, 5, 1);
  auto m = identity_model(5);
  for (std::size_t i = 0; i + 1 < 20; ++i) {
    EXPECT_NEAR(association_score(m, e.row(i), e.row(i + 1)), e.cosine(i, i + 1), 1e-6);
  }
}

TEST(Scoring, SymmetricAndConsistentWithScorer) {
  Fixture f;
  PairScorer scorer(f.model, f.emb);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto [a, b] = std::pair{f.pos.pairs[i].a, f.pos.pairs[i].b};
    for (auto kind : {ScoringKind::half_transformed, ScoringKind::both_transformed}) {
      ScoringMode mode{kind, 1.0};
      EXPECT_EQ(scorer.score(a, b, mode), scorer.score(b, a, mode));
      EXPECT_NEAR(association_score(f.model, f.emb.row(a), f.emb.row(b), mode),
                  scorer.score(a, b, mode), 1e-6);
    }
    EXPECT_NEAR(scorer.score(a, b, ScoringMode::blend(0.3)),
                0.3 * scorer.half(a, b) + 0.7 * scorer.cosine(a, b), 1e-15);
  }
  EXPECT_THROW(ScoringMode::blend(1.5), ConfigError);
  RowVector<float> wrong(4);
  wrong.setOnes();
  EXPECT_THROW(association_score(f.model, wrong, wrong), DimensionError);
}

TEST(CrossBoundary, InfiniteThresholdIsOverallBitExact) {
  Fixture f;
  PairScorer scorer(f.model, f.emb);
  const std::vector<double> t{std::numeric_limits<double>::infinity(), 1.0, 1e-9};
  auto rows = cross_boundary_eval(scorer, f.pos, f.neg, t);
  const double overall = auc(scorer.scores(f.pos, {}), scorer.scores(f.neg, {}));
  EXPECT_EQ(rows[0].cal_auc, overall);
  EXPECT_EQ(rows[0].pos_count, f.pos.size());
  EXPECT_EQ(rows[1].cal_auc, overall);
  EXPECT_TRUE(rows[2].insufficient);
  EXPECT_FALSE(rows[0].insufficient);
}

TEST(CrossBoundary, FiltersBothSides) {
  Fixture f;
  PairScorer scorer(f.model, f.emb);
  const std::vector<double> t{0.2};
  auto row = cross_boundary_eval(scorer, f.pos, f.neg, t)[0];
  std::size_t np = 0, nn = 0;
  for (const auto& p : f.pos.pairs) np += std::abs(f.emb.cosine(p.a, p.b)) < 0.2;
  for (const auto& p : f.neg.pairs) nn += std::abs(f.emb.cosine(p.a, p.b)) < 0.2;
  EXPECT_EQ(row.pos_count, np);
  EXPECT_EQ(row.neg_count, nn);
}

TEST(LambdaSweep, EndpointsReproduceCosineAndAssociation) {
  Fixture f;
  PairScorer scorer(f.model, f.emb);
  auto rows = lambda_sweep(scorer, f.pos, f.neg, default_lambda_grid());
  ASSERT_EQ(rows.size(), 11u);
  const double cos_auc = auc(scorer.cosines(f.pos), scorer.cosines(f.neg));
  const double cal_auc = auc(scorer.scores(f.pos, {}), scorer.scores(f.neg, {}));
  EXPECT_NEAR(rows.front().overall_auc, cos_auc, 1e-12);
  EXPECT_NEAR(rows.back().overall_auc, cal_auc, 1e-12);
  EXPECT_DOUBLE_EQ(rows[3].lambda, 0.3);
}

TEST(LambdaSweep, IdentityModelIsFlat) {
  auto e = random_embeddings(300, 6, 11);
  auto m = identity_model(6);
  PairScorer scorer(m, e);
  auto pos = random_pairs(300, 400, 1, PairRole::eval_positive);
  auto neg = random_pairs(300, 2000, 2, PairRole::eval_negative);
  auto rows = lambda_sweep(scorer, pos, neg, default_lambda_grid());
  for (const auto& r : rows) EXPECT_NEAR(r.overall_auc, rows[0].overall_auc, 1e-9);
}

TEST(Spearman, PerfectAndIndependent) {
  std::vector<double> x, y;
  for (int i = 0; i < 50; ++i) {
    x.push_back(i);
    y.push_back(-std::pow(i, 3));
  }
  EXPECT_NEAR(*spearman(x, y), -1.0, 1e-12);
  SeededRng rng(5);
  std::vector<double> a(2000), b(2000);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  EXPECT_LT(std::abs(*spearman(a, b)), 0.1);
  EXPECT_FALSE(spearman(std::vector<double>(10, 1.0), a.size() ? std::vector<double>(a.begin(), a.begin() + 10) : a));
}

TEST(Spearman, MatchesRankDifferenceFormulaWithoutTies) {
  SeededRng rng(6);
  std::vector<double> x(100), y(100);
  for (auto& v : x) v = rng.normal();
  for (auto& v : y) v = rng.normal();
  auto rank = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      for (double w : v) r[i] += w < v[i];
    return r;
  };
  const auto rx = rank(x), ry = rank(y);
  double d2 = 0;
  for (std::size_t i = 0; i < 100; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  EXPECT_NEAR(*spearman(x, y), 1 - 6 * d2 / (100.0 * (100.0 * 100.0 - 1)), 1e-12);
}

TEST(Quantiles, LinearInterpolationAndLowerTies) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 1.0), 4.0);
  const std::vector<double> edges{2, 4}, values{1, 2, 3, 4, 5};
  EXPECT_EQ(assign_buckets(values, edges), (std::vector<int>{0, 0, 1, 1, 2}));
}

TEST(DegreeAnalysis, QuintileCountsCoverCrossBoundaryPositives) {
  Fixture f;
  PairScorer scorer(f.model, f.emb);
  auto deg = pair_degrees(f.pos, 300);
  auto da = degree_analysis(scorer, deg, f.pos, f.neg, 0.2);
  std::size_t cb = 0;
  for (const auto& p : f.pos.pairs) cb += std::abs(scorer.cosine(p.a, p.b)) < 0.2;
  std::size_t total = 0, entity_total = 0;
  for (const auto& r : da.pair_quintiles) {
    total += r.n;
    if (r.n) {
      EXPECT_NEAR(r.delta, r.mean_association - r.mean_cosine, 1e-15);
    }
  }
  for (const auto& r : da.entity_quintiles) entity_total += r.n;
  EXPECT_EQ(total, cb);
  EXPECT_EQ(entity_total, 2 * cb);
  EXPECT_TRUE(da.spearman_mean.has_value());
  EXPECT_TRUE(da.spearman_max.has_value());
}

TEST(DegreeAnalysis, ConstantDegreeGivesNullSpearman) {
  Fixture f;
  PairScorer scorer(f.model, f.emb);
  std::vector<double> deg(300, 3.0);
  auto da = degree_analysis(scorer, deg, f.pos, f.neg);
  EXPECT_FALSE(da.spearman_mean.has_value());
  EXPECT_FALSE(da.spearman_note.empty());
}

TEST(DegreeComparison, IdenticalModelsHaveZeroDelta) {
  Fixture f;
  PairScorer a(f.model, f.emb), b(f.model, f.emb);
  auto deg = pair_degrees(f.pos, 300);
  auto rows = degree_quantile_model_comparison(a, b, f.pos, f.neg, deg, 5);
  ASSERT_EQ(rows.size(), 5u);
  std::size_t total = 0;
  for (const auto& r : rows) {
    total += r.n_pos + r.n_neg;
    if (!r.insufficient) {
      EXPECT_EQ(r.delta, 0.0);
    }
  }
  EXPECT_EQ(total, f.pos.size() + f.neg.size());
}

TEST(TopImprovement, SortedAndRecomputable) {
  Fixture f;
  PairScorer scorer(f.model, f.emb);
  auto rows = top_improvement_pairs(scorer, f.pos, 15);
  ASSERT_EQ(rows.size(), 15u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i) {
      EXPECT_GE(rows[i - 1].delta, rows[i].delta);
    }
    const auto a = *f.emb.index_of(rows[i].id_a), b = *f.emb.index_of(rows[i].id_b);
    EXPECT_EQ(rows[i].delta, scorer.half(a, b) - f.emb.cosine(a, b));
  }
  auto m = identity_model(6);
  PairScorer ident(m, f.emb);
  for (const auto& r : top_improvement_pairs(ident, f.pos, 5)) EXPECT_NEAR(r.delta, 0.0, 1e-6);
  EXPECT_THROW(top_improvement_pairs(scorer, f.pos, 0), ConfigError);
}

TEST(Export, TransformedRowsAndDistanceMatrix) {
  Fixture f;
  PairScorer scorer(f.model, f.emb);
  const auto dir = std::filesystem::temp_directory_path();
  const auto rows_path = (dir / "cal_rows.tsv").string(), dist_path = (dir / "cal_dist.tsv").string();
  export_transformed(scorer, rows_path, DistanceFormat::tsv, dist_path);
  std::ifstream rows(rows_path);
  std::string line;
  std::size_t count = 0;
  while (std::getline(rows, line)) {
    std::istringstream fields(line);
    std::string id;
    fields >> id;
    double v, sq = 0;
    while (fields >> v) sq += v * v;
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-5);
    ++count;
  }
  EXPECT_EQ(count, 300u);

  std::ifstream dist(dist_path);
  std::getline(dist, line);
  std::vector<std::vector<double>> m;
  while (std::getline(dist, line)) {
    std::istringstream fields(line);
    std::string id;
    fields >> id;
    m.emplace_back();
    double v;
    while (fields >> v) m.back().push_back(v);
  }
  ASSERT_EQ(m.size(), 300u);
  for (std::size_t i = 0; i < 300; ++i) {
    EXPECT_NEAR(m[i][i], 0.0, 1e-6);
    for (std::size_t j = 0; j < i; ++j) EXPECT_NEAR(m[i][j], m[j][i], 1e-9);
  }

  const auto bin_path = (dir / "cal_dist.bin").string();
  export_transformed(scorer, rows_path, DistanceFormat::binary, bin_path);
  EXPECT_EQ(std::filesystem::file_size(bin_path), 8u + 4u + 4u * (300u * 301u / 2u));
  for (const auto& p : {rows_path, dist_path, bin_path}) std::filesystem::remove(p);
}

TEST(Evaluate, ReportIsDeterministic) {
  Fixture f;
  PairScorer scorer(f.model, f.emb);
  auto deg = pair_degrees(f.pos, 300);
  EvalOptions opt;
  opt.n_boot = 200;
  auto r1 = evaluate(scorer, f.pos, f.neg, deg, opt);
  auto r2 = evaluate(scorer, f.pos, f.neg, deg, opt);
  EXPECT_EQ(r1.overall_auc, r2.overall_auc);
  EXPECT_EQ(r1.auc_ci, r2.auc_ci);
  EXPECT_EQ(r1.n_pos, 400u);
  EXPECT_LE(r1.auc_ci.first, r1.overall_auc);
  EXPECT_GE(r1.auc_ci.second, r1.overall_auc);
  EXPECT_EQ(r1.lambda_sweep.size(), 11u);
  EXPECT_EQ(r1.cb_sweep.size(), 5u);
}
