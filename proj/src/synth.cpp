#include "cal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <unordered_set>

#include <json.hpp>

#include "cal/errors.hpp"
#include "cal/rng.hpp"

namespace cal {

namespace {

constexpr int kAssociationScore = 999;

RowMatrixD gaussian(Eigen::Index rows, Eigen::Index cols, double scale, SeededRng& rng) {
  RowMatrixD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

RowMatrixD unit_rows(Eigen::Index rows, Eigen::Index cols, SeededRng& rng) {
  RowMatrixD m = gaussian(rows, cols, 1.0, rng);
  l2_normalize_rows(m);
  return m;
}

/// Fixed random two-layer GELU network, outputs centred then row-normalised.
RowMatrixD hidden_map(const RowMatrixD& x, SeededRng& rng) {
  const auto d = x.cols();
  const RowMatrixD w1 = gaussian(kLatentHidden, d, kLatentGain / std::sqrt(static_cast<double>(d)), rng);
  const RowMatrixD w2 = gaussian(d, kLatentHidden, 1.0 / std::sqrt(double{kLatentHidden}), rng);
  RowMatrixD h = x * w1.transpose();
  h = h.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
  h.rowwise() -= h.colwise().mean();
  RowMatrixD p = h * w2.transpose();
  l2_normalize_rows(p);
  return p;
}

struct Scored {
  double score;
  std::size_t a, b;
};

/// Highest-scoring unordered pairs among `members` under (P(a).x_b + P(b).x_a)/2.
std::vector<IndexPair> top_pairs(const RowMatrixD& p, const RowMatrixD& x,
                                 const std::vector<std::size_t>& members, std::size_t count) {
  RowMatrixD pm(static_cast<Eigen::Index>(members.size()), p.cols());
  RowMatrixD xm(pm.rows(), x.cols());
  for (std::size_t i = 0; i < members.size(); ++i) {
    pm.row(static_cast<Eigen::Index>(i)) = p.row(static_cast<Eigen::Index>(members[i]));
    xm.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(members[i]));
  }
  const RowMatrixD cross = pm * xm.transpose();
  std::vector<Scored> all;
  all.reserve(members.size() * (members.size() - 1) / 2);
  for (Eigen::Index i = 0; i < cross.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < cross.cols(); ++j) {
      all.push_back({0.5 * (cross(i, j) + cross(j, i)), members[i], members[j]});
    }
  }
  auto better = [](const Scored& l, const Scored& r) {
    if (l.score != r.score) return l.score > r.score;
    return l.a != r.a ? l.a < r.a : l.b < r.b;
  };
  count = std::min(count, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count), all.end(), better);
  std::vector<IndexPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back({all[i].a, all[i].b});
  return out;
}

std::vector<IndexPair> uniform_pairs(std::size_t n, std::size_t count, SeededRng& rng) {
  std::unordered_set<std::uint64_t> seen;
  std::vector<IndexPair> out;
  while (out.size() < count) {
    const auto a = rng.uniform_index(n), b = rng.uniform_index(n);
    if (a != b && seen.insert(pair_key(a, b)).second) out.push_back({a, b});
  }
  return out;
}

/// Published embeddings: isotropic noise with expected norm `noise`, then unit rows.
RowMatrixF publish(const RowMatrixD& x, double noise, SeededRng& rng) {
  RowMatrixD e = x + gaussian(x.rows(), x.cols(), noise / std::sqrt(static_cast<double>(x.cols())), rng);
  l2_normalize_rows(e);
  return e.cast<float>();
}

std::vector<std::string> entity_ids(std::size_t n) {
  const int width = static_cast<int>(std::to_string(n).size());
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string num = std::to_string(i);
    ids.push_back("E" + std::string(width - num.size(), '0') + num);
  }
  return ids;
}

}  // namespace

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::latent_signal: return "latent_signal";
    case ScenarioKind::clustered_positives: return "clustered_positives";
    case ScenarioKind::degree_confound: return "degree_confound";
    case ScenarioKind::no_signal: return "no_signal";
  }
  return "?";
}

ScenarioKind scenario_kind_from_string(const std::string& s) {
  for (auto k : {ScenarioKind::latent_signal, ScenarioKind::clustered_positives,
                 ScenarioKind::degree_confound, ScenarioKind::no_signal}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown scenario kind '" + s + "'");
}

void ScenarioSpec::validate() const {
  if (dim < 2) throw ConfigError("scenario dim must be at least 2");
  if (n_entities < 2) throw ConfigError("scenario needs at least 2 entities");
  if (n_pairs > n_entities * (n_entities - 1) / 2) {
    throw ConfigError("n_pairs exceeds the number of unordered entity pairs");
  }
  if (!(noise_level >= 0) || !std::isfinite(noise_level)) {
    throw ConfigError("noise_level must be a finite non-negative number");
  }
  if (n_pairs == 0) throw ConfigError("n_pairs must be positive");
}

Scenario generate(const ScenarioSpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed);
  const auto n = static_cast<Eigen::Index>(spec.n_entities);
  const std::size_t count = spec.n_pairs;
  Scenario sc;
  sc.spec = spec;
  std::vector<IndexPair> pairs;
  RowMatrixD x;

  switch (spec.kind) {
    case ScenarioKind::latent_signal: {
      x = unit_rows(n, spec.dim, rng);
      RowMatrixD p = hidden_map(x, rng);
      std::vector<std::size_t> all(spec.n_entities);
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      pairs = top_pairs(p, x, all, count);
      sc.planted = std::move(p);
      break;
    }
    case ScenarioKind::no_signal: {
      const RowMatrixD protos = unit_rows(kNoSignalPrototypes, spec.dim, rng);
      x.resize(n, spec.dim);
      for (Eigen::Index i = 0; i < n; ++i) {
        x.row(i) = protos.row(static_cast<Eigen::Index>(rng.uniform_index(kNoSignalPrototypes)));
      }
      pairs = uniform_pairs(spec.n_entities, count, rng);
      break;
    }
    case ScenarioKind::clustered_positives: {
      const auto members_n = static_cast<std::size_t>(kClusterFraction * static_cast<double>(n));
      if (members_n < 2 || count > members_n * (members_n - 1) / 2) {
        throw ConfigError("clustered_positives cannot fit " + std::to_string(count) +
                          " pairs inside a cluster of " + std::to_string(members_n));
      }
      x = unit_rows(n, spec.dim, rng);
      const RowMatrixD centre = unit_rows(1, spec.dim, rng);
      const RowMatrixD residual = unit_rows(n, spec.dim, rng);
      const RowMatrixD p = hidden_map(residual, rng);
      std::vector<std::size_t> members(members_n);
      for (std::size_t i = 0; i < members_n; ++i) {
        members[i] = i;
        x.row(static_cast<Eigen::Index>(i)) =
            l2_normalize(centre.row(0) + kClusterSpread * residual.row(static_cast<Eigen::Index>(i)));
      }
      pairs = top_pairs(p, residual, members, count);
      break;
    }
    case ScenarioKind::degree_confound: {
      x = unit_rows(n, spec.dim, rng);
      const RowMatrixD u = unit_rows(1, spec.dim, rng);
      const RowMatrixD p = hidden_map(x, rng);
      const Eigen::VectorXd z = (x * u.row(0).transpose()) * std::sqrt(static_cast<double>(spec.dim));
      std::vector<double> cumulative(spec.n_entities);
      double total = 0;
      for (Eigen::Index i = 0; i < n; ++i) cumulative[i] = total += std::exp(kConfoundBeta * z(i));
      auto draw = [&] {
        const double r = rng.uniform01() * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
        return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cumulative.begin(), n - 1));
      };
      std::vector<std::size_t> all(spec.n_entities);
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      const auto genuine = static_cast<std::size_t>(kConfoundGenuineFraction * static_cast<double>(count));
      pairs = top_pairs(p, x, all, genuine);
      std::unordered_set<std::uint64_t> seen;
      for (const auto& q : pairs) seen.insert(pair_key(q.a, q.b));
      const std::size_t max_draws = 1000 * count + 100000;
      for (std::size_t draws = 0; pairs.size() < count; ++draws) {
        if (draws > max_draws) {
          throw ConfigError("degree_confound could not place " + std::to_string(count) +
                            " popularity-weighted pairs; lower n_pairs or raise n_entities");
        }
        const auto a = draw(), b = draw();
        if (a != b && seen.insert(pair_key(a, b)).second) pairs.push_back({a, b});
      }
      rng.shuffle(std::span(pairs));
      for (auto& q : pairs) {
        if (rng.uniform01() < 0.5) std::swap(q.a, q.b);
      }
      break;
    }
  }

  sc.embeddings = EmbeddingSet(entity_ids(spec.n_entities), publish(x, spec.noise_level, rng));
  sc.positives = {std::move(pairs), PairRole::train_positive};
  const auto& ids = sc.embeddings.ids();
  for (const auto& q : sc.positives.pairs) {
    sc.graph.add_edge({ids[q.a], ids[q.b], {{"experimental", kAssociationScore},
                                            {"combined_score", kAssociationScore}}});
  }
  return sc;
}

double oracle_score(const Scenario& scenario, std::size_t a, std::size_t b) {
  if (!scenario.planted) throw ConfigError("scenario has no planted map");
  const auto& p = *scenario.planted;
  const auto& e = scenario.embeddings.vectors();
  const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
  return 0.5 * (p.row(ia).dot(e.row(ib).cast<double>()) + p.row(ib).dot(e.row(ia).cast<double>()));
}

ScenarioFiles write_scenario(const Scenario& scenario, const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  ScenarioFiles files{(fs::path(directory) / "embeddings.tsv").string(),
                      (fs::path(directory) / "associations.txt").string(),
                      (fs::path(directory) / "manifest.json").string()};
  const auto& ids = scenario.embeddings.ids();
  const auto& v = scenario.embeddings.vectors();
  {
    std::ofstream out(files.embeddings);
    if (!out) throw IoError("cannot write " + files.embeddings);
    out.precision(std::numeric_limits<float>::max_digits10);
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      out << ids[r];
      for (Eigen::Index c = 0; c < v.cols(); ++c) out << '\t' << v(r, c);
      out << '\n';
    }
  }
  {
    std::ofstream out(files.associations);
    if (!out) throw IoError("cannot write " + files.associations);
    out << "protein1 protein2 experimental combined_score\n";
    for (const auto& e : scenario.graph.edges()) {
      out << e.a << ' ' << e.b << ' ' << e.channels.at("experimental") << ' '
          << e.channels.at("combined_score") << '\n';
    }
  }
  const auto& s = scenario.spec;
  nlohmann::ordered_json manifest = {
      {"kind", to_string(s.kind)},
      {"n_entities", s.n_entities},
      {"dim", s.dim},
      {"n_pairs", s.n_pairs},
      {"noise_level", s.noise_level},
      {"seed", s.seed},
      {"embeddings", fs::path(files.embeddings).filename().string()},
      {"associations", fs::path(files.associations).filename().string()},
      {"embeddings_header", false},
      {"pca_components", nullptr},
      {"confidence_channel", "combined_score"},
      {"confidence_min", kAssociationScore},
      {"generator",
       {{"latent_hidden", kLatentHidden},
        {"latent_gain", kLatentGain},
        {"no_signal_prototypes", kNoSignalPrototypes},
        {"cluster_fraction", kClusterFraction},
        {"cluster_spread", kClusterSpread},
        {"confound_beta", kConfoundBeta},
        {"confound_genuine_fraction", kConfoundGenuineFraction}}},
  };
  std::ofstream out(files.manifest);
  if (!out) throw IoError("cannot write " + files.manifest);
  out << manifest.dump(2) << '\n';
  return files;
}

}  // namespace cal
