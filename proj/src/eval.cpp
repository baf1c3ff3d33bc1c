#include "cal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "cal/binary_io.hpp"
#include "cal/errors.hpp"
#include "cal/hash.hpp"

namespace cal {

namespace {

constexpr Eigen::Index kScoreChunk = 4096;

double dot(const RowMatrixF& x, std::size_t i, const RowMatrixF& y, std::size_t j) {
  return cal::cosine(x.row(static_cast<Eigen::Index>(i)), y.row(static_cast<Eigen::Index>(j)));
}

struct Filtered {
  std::vector<double> pos, neg;
};

Filtered filter_cb(const std::vector<double>& pos_scores, const std::vector<double>& pos_cos,
                   const std::vector<double>& neg_scores, const std::vector<double>& neg_cos,
                   double t) {
  Filtered out;
  for (std::size_t i = 0; i < pos_scores.size(); ++i) {
    if (std::abs(pos_cos[i]) < t) out.pos.push_back(pos_scores[i]);
  }
  for (std::size_t i = 0; i < neg_scores.size(); ++i) {
    if (std::abs(neg_cos[i]) < t) out.neg.push_back(neg_scores[i]);
  }
  return out;
}

double auc_or_nan(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) return std::numeric_limits<double>::quiet_NaN();
  return auc(pos, neg);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::vector<double> quantile_edges(const std::vector<double>& values, int n_quantiles) {
  std::vector<double> edges;
  for (int q = 1; q < n_quantiles; ++q) {
    edges.push_back(quantile(values, static_cast<double>(q) / n_quantiles));
  }
  return edges;
}

std::vector<QuintileRow> quantile_rows(const std::vector<double>& keys,
                                       const std::vector<double>& cosines,
                                       const std::vector<double>& assoc, int n_quantiles) {
  std::vector<QuintileRow> rows;
  if (keys.empty()) return rows;
  const auto edges = quantile_edges(keys, n_quantiles);
  const auto bucket = assign_buckets(keys, edges);
  rows.resize(n_quantiles);
  for (int q = 0; q < n_quantiles; ++q) {
    rows[q].quintile = q + 1;
    rows[q].degree_lo = std::numeric_limits<double>::infinity();
    rows[q].degree_hi = -std::numeric_limits<double>::infinity();
  }
  for (std::size_t i = 0; i < keys.size(); ++i) {
    auto& r = rows[bucket[i]];
    ++r.n;
    r.degree_lo = std::min(r.degree_lo, keys[i]);
    r.degree_hi = std::max(r.degree_hi, keys[i]);
    r.mean_cosine += cosines[i];
    r.mean_association += assoc[i];
  }
  for (auto& r : rows) {
    if (r.n == 0) {
      r.degree_lo = r.degree_hi = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    r.mean_cosine /= static_cast<double>(r.n);
    r.mean_association /= static_cast<double>(r.n);
    r.delta = r.mean_association - r.mean_cosine;
  }
  return rows;
}

}  // namespace

ScoringMode ScoringMode::blend(double lambda) {
  ScoringMode m{ScoringKind::blend, lambda};
  m.validate();
  return m;
}

void ScoringMode::validate() const {
  if (kind == ScoringKind::blend && !(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("blend lambda must lie in [0, 1]");
  }
}

std::string to_string(ScoringKind kind) {
  switch (kind) {
    case ScoringKind::half_transformed: return "half_transformed";
    case ScoringKind::both_transformed: return "both_transformed";
    case ScoringKind::cosine_only: return "cosine_only";
    case ScoringKind::blend: return "blend";
  }
  return "?";
}

ScoringKind scoring_kind_from_string(const std::string& s) {
  if (s == "half_transformed" || s == "half") return ScoringKind::half_transformed;
  if (s == "both_transformed" || s == "both") return ScoringKind::both_transformed;
  if (s == "cosine_only" || s == "cosine") return ScoringKind::cosine_only;
  if (s == "blend") return ScoringKind::blend;
  throw ConfigError("unknown scoring mode '" + s + "'");
}

double association_score(const CalModelF& model, const Eigen::Ref<const RowVector<float>>& e_a,
                         const Eigen::Ref<const RowVector<float>>& e_b, ScoringMode mode) {
  mode.validate();
  if (e_a.size() != model.d || e_b.size() != model.d) {
    throw DimensionError("pair vectors must have dimension " + std::to_string(model.d));
  }
  RowMatrixF x(2, model.d);
  x.row(0) = e_a;
  x.row(1) = e_b;
  const RowMatrixF f = forward(model, x);
  const double cos = cal::cosine(e_a, e_b);
  const double half = 0.5 * (cal::cosine(f.row(0), e_b) + cal::cosine(f.row(1), e_a));
  switch (mode.kind) {
    case ScoringKind::half_transformed: return half;
    case ScoringKind::both_transformed: return cal::cosine(f.row(0), f.row(1));
    case ScoringKind::cosine_only: return cos;
    case ScoringKind::blend: return mode.lambda * half + (1.0 - mode.lambda) * cos;
  }
  return half;
}

PairScorer::PairScorer(const CalModelF& model, const EmbeddingSet& embeddings)
    : embeddings_(&embeddings), transformed_(embeddings.vectors().rows(), embeddings.dim()) {
  if (model.d != embeddings.dim()) {
    throw DimensionError("model expects dim " + std::to_string(model.d) + ", embeddings have " +
                         std::to_string(embeddings.dim()));
  }
  const RowMatrixF& x = embeddings.vectors();
  for (Eigen::Index start = 0; start < x.rows(); start += kScoreChunk) {
    const Eigen::Index rows = std::min(kScoreChunk, x.rows() - start);
    transformed_.middleRows(start, rows) = forward(model, RowMatrixF(x.middleRows(start, rows)));
  }
}

double PairScorer::cosine(std::size_t a, std::size_t b) const {
  return dot(embeddings_->vectors(), a, embeddings_->vectors(), b);
}

double PairScorer::half(std::size_t a, std::size_t b) const {
  const auto& x = embeddings_->vectors();
  return 0.5 * (dot(transformed_, a, x, b) + dot(transformed_, b, x, a));
}

double PairScorer::both(std::size_t a, std::size_t b) const {
  return dot(transformed_, a, transformed_, b);
}

double PairScorer::score(std::size_t a, std::size_t b, ScoringMode mode) const {
  switch (mode.kind) {
    case ScoringKind::half_transformed: return half(a, b);
    case ScoringKind::both_transformed: return both(a, b);
    case ScoringKind::cosine_only: return cosine(a, b);
    case ScoringKind::blend: return mode.lambda * half(a, b) + (1.0 - mode.lambda) * cosine(a, b);
  }
  return half(a, b);
}

std::vector<double> PairScorer::scores(const PairSet& pairs, ScoringMode mode) const {
  mode.validate();
  pairs.validate(embeddings_->size());
  std::vector<double> out(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out[i] = score(pairs.pairs[i].a, pairs.pairs[i].b, mode);
  }
  return out;
}

std::vector<double> PairScorer::cosines(const PairSet& pairs) const {
  return scores(pairs, {ScoringKind::cosine_only, 0.0});
}

double auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw EmptyDataError("AUC needs positive and negative scores");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(pos.size() + neg.size());
  for (double s : pos) items.push_back({s, true});
  for (double s : neg) items.push_back({s, false});
  for (const auto& it : items) {
    if (std::isnan(it.score)) throw NumericsError("NaN score passed to AUC");
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  // Twice the positive rank sum keeps midranks integral.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    std::uint64_t n_pos = 0;
    while (j < items.size() && items[j].score == items[i].score) n_pos += items[j++].positive;
    twice_rank_sum += n_pos * (static_cast<std::uint64_t>(i + 1) + static_cast<std::uint64_t>(j));
    i = j;
  }
  const auto n = static_cast<std::uint64_t>(pos.size()), m = static_cast<std::uint64_t>(neg.size());
  const std::uint64_t twice_u = twice_rank_sum - n * (n + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n) * static_cast<double>(m));
}

std::pair<double, double> bootstrap_auc_ci(std::span<const double> pos, std::span<const double> neg,
                                           std::size_t n_boot, SeededRng& rng) {
  if (pos.size() < 2 || neg.size() < 2) {
    throw EmptyDataError("bootstrap needs at least 2 scores on each side");
  }
  if (n_boot == 0) throw ConfigError("n_boot must be positive");
  // Sort once into tie groups; each replicate only redraws multiplicities.
  struct Item {
    double score;
    bool positive;
    std::size_t index;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < pos.size(); ++i) items.push_back({pos[i], true, i});
  for (std::size_t i = 0; i < neg.size(); ++i) items.push_back({neg[i], false, i});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  std::vector<std::size_t> group(items.size());
  for (std::size_t i = 1; i < items.size(); ++i) {
    group[i] = group[i - 1] + (items[i].score != items[i - 1].score);
  }
  const std::size_t n_groups = items.empty() ? 0 : group.back() + 1;

  std::vector<std::uint32_t> wpos(pos.size()), wneg(neg.size());
  std::vector<double> gpos(n_groups), gneg(n_groups);
  std::vector<double> samples;
  samples.reserve(n_boot);
  const double denom = static_cast<double>(pos.size()) * static_cast<double>(neg.size());
  for (std::size_t b = 0; b < n_boot; ++b) {
    std::fill(wpos.begin(), wpos.end(), 0u);
    std::fill(wneg.begin(), wneg.end(), 0u);
    for (std::size_t i = 0; i < pos.size(); ++i) ++wpos[rng.uniform_index(pos.size())];
    for (std::size_t i = 0; i < neg.size(); ++i) ++wneg[rng.uniform_index(neg.size())];
    std::fill(gpos.begin(), gpos.end(), 0.0);
    std::fill(gneg.begin(), gneg.end(), 0.0);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& it = items[i];
      (it.positive ? gpos : gneg)[group[i]] += it.positive ? wpos[it.index] : wneg[it.index];
    }
    double u = 0, below = 0;
    for (std::size_t g = 0; g < n_groups; ++g) {
      u += gpos[g] * (below + 0.5 * gneg[g]);
      below += gneg[g];
    }
    samples.push_back(u / denom);
  }
  return {quantile(samples, 0.025), quantile(samples, 0.975)};
}

std::vector<CbRow> cross_boundary_eval(const PairScorer& scorer, const PairSet& pos,
                                       const PairSet& neg, std::span<const double> thresholds,
                                       ScoringMode mode) {
  const auto ps = scorer.scores(pos, mode), ns = scorer.scores(neg, mode);
  const auto pc = scorer.cosines(pos), nc = scorer.cosines(neg);
  std::vector<CbRow> rows;
  for (double t : thresholds) {
    const auto cal_f = filter_cb(ps, pc, ns, nc, t);
    const auto cos_f = filter_cb(pc, pc, nc, nc, t);
    CbRow row{t, cal_f.pos.size(), cal_f.neg.size(), 0, 0, false};
    row.insufficient = row.pos_count < kMinCbPositives || row.neg_count == 0;
    if (row.insufficient) {
      row.cosine_auc = row.cal_auc = std::numeric_limits<double>::quiet_NaN();
    } else {
      row.cosine_auc = auc(cos_f.pos, cos_f.neg);
      row.cal_auc = auc(cal_f.pos, cal_f.neg);
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

std::vector<LambdaRow> lambda_sweep(const PairScorer& scorer, const PairSet& pos,
                                    const PairSet& neg, std::span<const double> grid,
                                    double cb_threshold) {
  const auto pc = scorer.cosines(pos), nc = scorer.cosines(neg);
  std::vector<LambdaRow> rows;
  for (double lambda : grid) {
    const auto mode = ScoringMode::blend(lambda);
    const auto ps = scorer.scores(pos, mode), ns = scorer.scores(neg, mode);
    const auto cb = filter_cb(ps, pc, ns, nc, cb_threshold);
    rows.push_back({lambda, auc(ps, ns), auc_or_nan(cb.pos, cb.neg)});
  }
  return rows;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman inputs differ in length");
  if (x.size() < 2) return std::nullopt;
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw EmptyDataError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<int> assign_buckets(std::span<const double> values, std::span<const double> edges) {
  std::vector<int> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<int>(std::lower_bound(edges.begin(), edges.end(), values[i]) - edges.begin());
  }
  return out;
}

double pair_degree(std::span<const double> degrees, const IndexPair& p) {
  return 0.5 * (degrees[p.a] + degrees[p.b]);
}

DegreeAnalysis degree_analysis(const PairScorer& scorer, std::span<const double> degrees,
                               const PairSet& pos, const PairSet& neg, double cb_threshold,
                               int n_quantiles) {
  if (degrees.size() != scorer.embeddings().size()) {
    throw ShapeError("degree vector does not cover every entity");
  }
  DegreeAnalysis out;
  std::vector<double> mean_deg, max_deg, scores;
  for (const PairSet* set : {&pos, &neg}) {
    for (const auto& p : set->pairs) {
      mean_deg.push_back(pair_degree(degrees, p));
      max_deg.push_back(std::max(degrees[p.a], degrees[p.b]));
      scores.push_back(scorer.half(p.a, p.b));
    }
  }
  out.spearman_mean = spearman(mean_deg, scores);
  out.spearman_max = spearman(max_deg, scores);
  if (!out.spearman_mean) out.spearman_note = "undefined: pair degree or score is constant";

  std::vector<double> keys, cosines, assoc, ekeys, ecos, eassoc;
  for (const auto& p : pos.pairs) {
    const double c = scorer.cosine(p.a, p.b);
    if (!(std::abs(c) < cb_threshold)) continue;
    const double s = scorer.half(p.a, p.b);
    keys.push_back(pair_degree(degrees, p));
    cosines.push_back(c);
    assoc.push_back(s);
    for (std::size_t e : {p.a, p.b}) {
      ekeys.push_back(degrees[e]);
      ecos.push_back(c);
      eassoc.push_back(s);
    }
  }
  out.pair_quintiles = quantile_rows(keys, cosines, assoc, n_quantiles);
  out.entity_quintiles = quantile_rows(ekeys, ecos, eassoc, n_quantiles);
  return out;
}

std::vector<BucketComparison> degree_quantile_model_comparison(
    const PairScorer& reference, const PairScorer& shuffled, const PairSet& pos, const PairSet& neg,
    std::span<const double> degrees, int n_quantiles) {
  if (&reference.embeddings() != &shuffled.embeddings() &&
      reference.embeddings().vectors() != shuffled.embeddings().vectors()) {
    throw ConfigError("models must be compared on the same embeddings");
  }
  std::vector<double> keys, ref, shuf;
  std::vector<bool> label;
  for (const PairSet* set : {&pos, &neg}) {
    for (const auto& p : set->pairs) {
      keys.push_back(pair_degree(degrees, p));
      ref.push_back(reference.half(p.a, p.b));
      shuf.push_back(shuffled.half(p.a, p.b));
      label.push_back(set == &pos);
    }
  }
  std::vector<BucketComparison> rows(n_quantiles);
  if (keys.empty()) return rows;
  const auto bucket = assign_buckets(keys, quantile_edges(keys, n_quantiles));
  for (int q = 0; q < n_quantiles; ++q) {
    std::vector<double> rp, rn, sp, sn;
    auto& row = rows[q];
    row.bucket = q;
    row.degree_lo = std::numeric_limits<double>::infinity();
    row.degree_hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (bucket[i] != q) continue;
      row.degree_lo = std::min(row.degree_lo, keys[i]);
      row.degree_hi = std::max(row.degree_hi, keys[i]);
      (label[i] ? rp : rn).push_back(ref[i]);
      (label[i] ? sp : sn).push_back(shuf[i]);
    }
    row.n_pos = rp.size();
    row.n_neg = rn.size();
    row.insufficient = rp.empty() || rn.empty();
    if (row.insufficient) {
      row.reference_auc = row.shuffled_auc = row.delta = std::numeric_limits<double>::quiet_NaN();
    } else {
      row.reference_auc = auc(rp, rn);
      row.shuffled_auc = auc(sp, sn);
      row.delta = row.reference_auc - row.shuffled_auc;
    }
  }
  return rows;
}

std::vector<ImprovementRow> top_improvement_pairs(const PairScorer& scorer, const PairSet& positives,
                                                  std::size_t k) {
  if (k == 0) throw ConfigError("k must be at least 1");
  const auto& ids = scorer.embeddings().ids();
  std::vector<ImprovementRow> rows;
  rows.reserve(positives.size());
  for (const auto& p : positives.pairs) {
    const double c = scorer.cosine(p.a, p.b), s = scorer.half(p.a, p.b);
    rows.push_back({ids[p.a], ids[p.b], c, s, s - c});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ImprovementRow& x, const ImprovementRow& y) { return x.delta > y.delta; });
  if (rows.size() > k) rows.resize(k);
  return rows;
}

void export_transformed(const PairScorer& scorer, const std::string& path,
                        DistanceFormat distance_format, const std::string& distance_path) {
  const auto& ids = scorer.embeddings().ids();
  const RowMatrixF& f = scorer.transformed();
  {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(std::numeric_limits<float>::max_digits10);
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
      out << ids[r];
      for (Eigen::Index c = 0; c < f.cols(); ++c) out << '\t' << f(r, c);
      out << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
  }
  if (distance_format == DistanceFormat::none) return;
  if (distance_path.empty()) throw ConfigError("distance export needs an output path");
  const RowMatrixD fd = f.cast<double>();
  const Eigen::MatrixXd dist = (1.0 - (fd * fd.transpose()).array()).matrix();
  std::ofstream out(distance_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + distance_path);
  const auto n = static_cast<std::size_t>(f.rows());
  auto entry = [&](std::size_t i, std::size_t j) {
    if (i == j) return 0.0;
    return i < j ? dist(i, j) : dist(j, i);  // upper triangle keeps the matrix symmetric
  };
  if (distance_format == DistanceFormat::tsv) {
    out.precision(9);
    out << "id";
    for (const auto& id : ids) out << '\t' << id;
    out << '\n';
    for (std::size_t i = 0; i < n; ++i) {
      out << ids[i];
      for (std::size_t j = 0; j < n; ++j) out << '\t' << entry(i, j);
      out << '\n';
    }
  } else {
    out.write("CALDST1\n", 8);
    binary::write_u32(out, static_cast<std::uint32_t>(n));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) binary::write_f32(out, static_cast<float>(entry(i, j)));
    }
  }
  if (!out) throw IoError("write failed for " + distance_path);
}

std::string eval_set_hash(const PairSet& pos, const PairSet& neg) {
  Fnv1a h;
  for (const auto* set : {&pos, &neg}) {
    h.u64(set->size());
    for (const auto& p : set->pairs) h.u64(p.a).u64(p.b);
  }
  return h.hex();
}

EvalReport evaluate(const PairScorer& scorer, const PairSet& pos, const PairSet& neg,
                    std::span<const double> degrees, const EvalOptions& options) {
  options.mode.validate();
  EvalReport r;
  r.n_pos = pos.size();
  r.n_neg = neg.size();
  r.scoring_mode = to_string(options.mode.kind);
  r.eval_set_hash = eval_set_hash(pos, neg);
  r.cb_threshold = options.cb_threshold;
  const auto ps = scorer.scores(pos, options.mode), ns = scorer.scores(neg, options.mode);
  const auto pc = scorer.cosines(pos), nc = scorer.cosines(neg);
  r.overall_auc = auc(ps, ns);
  r.cosine_auc = auc(pc, nc);
  const auto cal_cb = filter_cb(ps, pc, ns, nc, options.cb_threshold);
  const auto cos_cb = filter_cb(pc, pc, nc, nc, options.cb_threshold);
  r.cb_pos = cal_cb.pos.size();
  r.cb_neg = cal_cb.neg.size();
  r.cb_auc = auc_or_nan(cal_cb.pos, cal_cb.neg);
  r.cosine_cb_auc = auc_or_nan(cos_cb.pos, cos_cb.neg);
  if (options.n_boot > 0 && ps.size() >= 2 && ns.size() >= 2) {
    SeededRng rng(options.bootstrap_seed);
    r.auc_ci = bootstrap_auc_ci(ps, ns, options.n_boot, rng);
  } else {
    r.auc_ci = {r.overall_auc, r.overall_auc};
  }
  r.cb_sweep = cross_boundary_eval(scorer, pos, neg, options.cb_thresholds, options.mode);
  r.lambda_sweep = lambda_sweep(scorer, pos, neg, options.lambda_grid, options.cb_threshold);
  if (!degrees.empty()) {
    r.degree = degree_analysis(scorer, degrees, pos, neg, options.cb_threshold, options.n_quantiles);
  }
  if (options.top_k > 0 && !pos.empty()) r.top_improvement_pairs = top_improvement_pairs(scorer, pos, options.top_k);
  return r;
}

}  // namespace cal
