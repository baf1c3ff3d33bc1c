#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "cal/errors.hpp"
#include "cal/eval.hpp"
#include "cal/sampler.hpp"
#include "cal/synth.hpp"

using namespace cal;

namespace {

ScenarioSpec spec_of(ScenarioKind kind, std::size_t n, std::size_t pairs, std::uint64_t seed = 42) {
  ScenarioSpec s;
  s.kind = kind;
  s.n_entities = n;
  s.n_pairs = pairs;
  s.seed = seed;
  return s;
}

double cosine_auc(const Scenario& sc, std::uint64_t seed) {
  SeededRng rng(seed);
  const auto neg = sample_eval_negatives(sc.positives, sc.embeddings.size(), 5, 50000, rng);
  std::vector<double> p, q;
  for (const auto& x : sc.positives.pairs) p.push_back(sc.embeddings.cosine(x.a, x.b));
  for (const auto& x : neg.pairs) q.push_back(sc.embeddings.cosine(x.a, x.b));
  return auc(p, q);
}

void expect_core_invariants(const Scenario& sc) {
  const auto& v = sc.embeddings.vectors();
  for (Eigen::Index r = 0; r < v.rows(); ++r) EXPECT_NEAR(v.row(r).norm(), 1.0, 1e-5);
  std::unordered_set<std::uint64_t> seen;
  for (const auto& q : sc.positives.pairs) {
    EXPECT_NE(q.a, q.b);
    EXPECT_TRUE(seen.insert(pair_key(q.a, q.b)).second);
  }
  EXPECT_EQ(sc.positives.size(), sc.spec.n_pairs);
  EXPECT_EQ(sc.graph.edges().size(), sc.spec.n_pairs);
}

}  // namespace

TEST(Synth, LatentSignalHiddenFromCosineVisibleToOracle) {
  const auto sc = generate(spec_of(ScenarioKind::latent_signal, 2000, 20000));
  expect_core_invariants(sc);
  EXPECT_LE(cosine_auc(sc, 1), 0.60);

  SeededRng rng(2);
  const auto neg = sample_eval_negatives(sc.positives, sc.embeddings.size(), 5, 50000, rng);
  std::vector<double> p, q;
  for (const auto& x : sc.positives.pairs) p.push_back(oracle_score(sc, x.a, x.b));
  for (const auto& x : neg.pairs) q.push_back(oracle_score(sc, x.a, x.b));
  EXPECT_GE(auc(p, q), 0.95);
}

TEST(Synth, ClusteredPositivesAreCosineClose) {
  const auto sc = generate(spec_of(ScenarioKind::clustered_positives, 2000, 20000));
  expect_core_invariants(sc);
  std::size_t above = 0;
  for (const auto& x : sc.positives.pairs) above += sc.embeddings.cosine(x.a, x.b) > 0.5;
  EXPECT_GE(static_cast<double>(above) / static_cast<double>(sc.positives.size()), 0.9);
}

TEST(Synth, ClusteredPositivesInfeasibleCount) {
  // 40 entities -> 16 cluster members -> 120 within-cluster pairs.
  EXPECT_THROW(generate(spec_of(ScenarioKind::clustered_positives, 40, 121)), ConfigError);
  EXPECT_NO_THROW(generate(spec_of(ScenarioKind::clustered_positives, 40, 120)));
}

TEST(Synth, DegreeConfoundIsDense) {
  const auto sc = generate(spec_of(ScenarioKind::degree_confound, 600, 20000));
  expect_core_invariants(sc);
  const auto deg = pair_degrees(sc.positives, sc.embeddings.size());
  double total = 0;
  for (double d : deg) total += d;
  EXPECT_GE(total / static_cast<double>(deg.size()), 50.0);

  // heavy tail: the top tenth of entities touch far more than a tenth of the pairs
  std::vector<double> sorted(deg.begin(), deg.end());
  std::sort(sorted.rbegin(), sorted.rend());
  double top = 0;
  for (std::size_t i = 0; i < sorted.size() / 10; ++i) top += sorted[i];
  EXPECT_GT(top / total, 0.25);
}

TEST(Synth, NoSignalCosineNearChance) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto sc = generate(spec_of(ScenarioKind::no_signal, 2000, 20000, seed));
    expect_core_invariants(sc);
    const double a = cosine_auc(sc, seed + 10);
    EXPECT_GE(a, 0.45) << seed;
    EXPECT_LE(a, 0.55) << seed;
  }
}

TEST(Synth, BitReproducible) {
  for (auto kind : {ScenarioKind::latent_signal, ScenarioKind::clustered_positives,
                    ScenarioKind::degree_confound, ScenarioKind::no_signal}) {
    const auto s = spec_of(kind, 300, 2000, 9);
    const auto x = generate(s), y = generate(s);
    EXPECT_TRUE(x.embeddings.vectors() == y.embeddings.vectors()) << to_string(kind);
    ASSERT_EQ(x.positives.size(), y.positives.size());
    for (std::size_t i = 0; i < x.positives.size(); ++i) {
      EXPECT_EQ(x.positives.pairs[i].a, y.positives.pairs[i].a);
      EXPECT_EQ(x.positives.pairs[i].b, y.positives.pairs[i].b);
    }
    auto other = s;
    other.seed = 10;
    EXPECT_FALSE(generate(other).embeddings.vectors() == x.embeddings.vectors());
  }
}

TEST(Synth, SpecValidation) {
  auto s = spec_of(ScenarioKind::no_signal, 10, 46);
  EXPECT_THROW(s.validate(), ConfigError);
  s.n_pairs = 45;
  EXPECT_NO_THROW(s.validate());
  s.dim = 1;
  EXPECT_THROW(s.validate(), ConfigError);
  s.dim = 8;
  s.noise_level = -0.1;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(scenario_kind_from_string("bogus"), ConfigError);
  EXPECT_EQ(scenario_kind_from_string("degree_confound"), ScenarioKind::degree_confound);
}

TEST(Synth, NoiseKnob) {
  auto s = spec_of(ScenarioKind::latent_signal, 200, 500);
  s.noise_level = 0;
  const auto clean = generate(s);
  s.noise_level = 1.0;
  const auto noisy = generate(s);
  EXPECT_GT(oracle_score(clean, clean.positives.pairs[0].a, clean.positives.pairs[0].b),
            oracle_score(noisy, noisy.positives.pairs[0].a, noisy.positives.pairs[0].b));
  EXPECT_THROW(oracle_score(generate(spec_of(ScenarioKind::no_signal, 50, 50)), 0, 1), ConfigError);
}

TEST(Synth, WritesIngestFormats) {
  const auto sc = generate(spec_of(ScenarioKind::no_signal, 30, 40));
  const auto dir = std::filesystem::temp_directory_path() / "cal_synth_files";
  std::filesystem::remove_all(dir);
  const auto files = write_scenario(sc, dir.string());

  std::ifstream emb(files.embeddings);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(emb, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), sc.spec.dim);
  }
  EXPECT_EQ(rows, 30u);

  std::ifstream assoc(files.associations);
  std::getline(assoc, line);
  EXPECT_EQ(line, "protein1 protein2 experimental combined_score");
  std::size_t links = 0;
  while (std::getline(assoc, line)) {
    ++links;
    EXPECT_TRUE(line.ends_with(" 999"));
  }
  EXPECT_EQ(links, 40u);

  std::ifstream mf(files.manifest);
  const auto j = nlohmann::json::parse(mf);
  EXPECT_EQ(j.at("kind"), "no_signal");
  EXPECT_EQ(j.at("seed"), 42);
  EXPECT_EQ(j.at("n_pairs"), 40);
  std::filesystem::remove_all(dir);
}
