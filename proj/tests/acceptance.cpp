// Acceptance suite: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cal/experiment.hpp"
#include "cal/model.hpp"
#include "cal/report.hpp"

using namespace cal;
namespace fs = std::filesystem;

namespace {

// Scenario model width; see README for the measured runtime.
constexpr int kHidden = 128;

constexpr double kGradTolerance = 1e-4;
constexpr double kAucExact = 1e-12;
constexpr double kSeedSdMax = 0.02;
constexpr double kLatentCosineMax = 0.60;
constexpr double kLatentAucMin = 0.85;
constexpr double kLatentCbMin = 0.80;
constexpr double kLatentSecondsMax = 180;
constexpr double kShuffleGap = 0.05;
constexpr double kNoSignalGapMax = 0.05;
constexpr double kNodeSplitGap = 0.05;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ScenarioSpec scenario(ScenarioKind kind, std::size_t n, std::size_t pairs) {
  ScenarioSpec s;
  s.kind = kind;
  s.n_entities = n;
  s.dim = 50;
  s.n_pairs = pairs;
  s.seed = 42;
  return s;
}

TrainConfig scenario_config(NegativeKind negatives = NegativeKind::in_batch) {
  TrainConfig c;
  c.hidden = kHidden;
  c.negative_mode = {negatives, 0};
  return c;
}

EvalOptions eval_options() {
  EvalOptions o;
  o.n_boot = 200;
  return o;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---- oracles written independently of the library -------------------------

double brute_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  long double wins = 0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0L : (p == n ? 0.5L : 0.0L);
  return static_cast<double>(wins / (static_cast<long double>(pos.size()) * neg.size()));
}

double xent(const std::vector<double>& logits, std::size_t target) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l);
  double z = 0;
  for (double l : logits) z += std::exp(l - mx);
  return std::log(z) + mx - logits[target];
}

double reference_loss(const RowMatrixD& fa, const RowMatrixD& b, double tau) {
  const auto n = static_cast<std::size_t>(fa.rows());
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row, col;
    for (std::size_t j = 0; j < n; ++j) {
      row.push_back(fa.row(i).dot(b.row(j)) / tau);
      col.push_back(fa.row(j).dot(b.row(i)) / tau);
    }
    total += xent(row, i) + xent(col, i);
  }
  return total / (2.0 * static_cast<double>(n));
}

RowMatrixD unit_rows(int n, int d, SeededRng& rng) {
  RowMatrixD m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  l2_normalize_rows(m);
  return m;
}

// ---- criteria ---------------------------------------------------------------

Outcome parameter_count_criterion() {
  SeededRng rng(1);
  const auto m = init_model<float>(50, 1024, rng);
  std::int64_t counted = 0;
  m.for_each_tensor([&](std::string_view, const float*, Eigen::Index n, bool) { counted += n; });
  return {counted == 2208919 && m.parameter_count() == 2208919,
          "counted " + std::to_string(counted) + ", expected 2208919"};
}

Outcome gradient_criterion() {
  double worst = 0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SeededRng rng(7000 + seed);
    const int d = 2 + static_cast<int>(seed % 3);
    const int h = 3 + static_cast<int>(seed % 4);
    const int batch = 2 + static_cast<int>(seed % 3);
    auto m = init_model<double>(d, h, rng);
    m.for_each_tensor([&](std::string_view, double* p, Eigen::Index n, bool) {
      for (Eigen::Index i = 0; i < n; ++i) p[i] += 0.3 * rng.normal();
    });
    const auto a = unit_rows(batch, d, rng), b = unit_rows(batch, d, rng);
    const double tau = 0.5;
    auto grad = CalModel<double>::zeros_like(m);
    info_nce_loss<double>(m, a, b, tau, grad);
    std::vector<double> analytic;
    grad.for_each_tensor([&](std::string_view, const double* p, Eigen::Index n, bool) {
      analytic.insert(analytic.end(), p, p + n);
    });
    std::size_t k = 0;
    m.for_each_tensor([&](std::string_view, double* p, Eigen::Index n, bool) {
      for (Eigen::Index i = 0; i < n; ++i, ++k) {
        const double saved = p[i];
        auto central = [&](double eps) {
          p[i] = saved + eps;
          const double up = reference_loss(forward(m, a), b, tau);
          p[i] = saved - eps;
          const double down = reference_loss(forward(m, a), b, tau);
          p[i] = saved;
          return (up - down) / (2 * eps);
        };
        const double numeric = (4 * central(5e-5) - central(1e-4)) / 3;
        const double scale = std::max({std::abs(numeric), std::abs(analytic[k]), 1e-5});
        worst = std::max(worst, std::abs(numeric - analytic[k]) / scale);
        ++checked;
      }
    });
  }
  return {worst <= kGradTolerance,
          std::to_string(checked) + " parameters, worst relative error " + sci(worst)};
}

Outcome auc_oracle_criterion() {
  SeededRng rng(11);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(200), m = 1 + rng.uniform_index(200);
    const bool coarse = trial % 2 == 0;
    std::vector<double> pos(n), neg(m);
    for (auto& x : pos) x = coarse ? std::round(4 * (rng.normal() + 0.5)) / 4 : rng.normal() + 0.5;
    for (auto& x : neg) x = coarse ? std::round(4 * rng.normal()) / 4 : rng.normal();
    worst = std::max(worst, std::abs(auc(pos, neg) - brute_auc(pos, neg)));
  }
  return {worst <= kAucExact, "100 sets, worst |rank - brute| = " + sci(worst)};
}

struct LatentRuns {
  Dataset data;
  EvalSplit eval;
  RunResult first;
  double first_seconds = 0;
};

Outcome determinism_criterion(const LatentRuns& latent) {
  const auto dir = fs::temp_directory_path() / "cal_acceptance";
  fs::create_directories(dir);
  const auto again = train_and_evaluate(latent.data, latent.eval, latent.eval.split.train, scenario_config(),
                                        eval_options());
  save_checkpoint(latent.first.trained.model, (dir / "a.ckpt").string());
  save_checkpoint(again.trained.model, (dir / "b.ckpt").string());
  const bool same_ckpt = file_bytes((dir / "a.ckpt").string()) == file_bytes((dir / "b.ckpt").string());
  const bool same_report = to_json(latent.first.report).dump() == to_json(again.report).dump();
  fs::remove_all(dir);

  std::vector<double> aucs{latent.first.report.overall_auc};
  for (std::uint64_t seed : {123ULL, 456ULL}) {
    auto cfg = scenario_config();
    cfg.seed = seed;
    aucs.push_back(train_and_evaluate(latent.data, latent.eval, latent.eval.split.train, cfg, eval_options())
                       .report.overall_auc);
  }
  const double mean = (aucs[0] + aucs[1] + aucs[2]) / 3;
  double ss = 0;
  for (double a : aucs) ss += (a - mean) * (a - mean);
  const double sd = std::sqrt(ss / 2);
  return {same_ckpt && same_report && sd < kSeedSdMax,
          std::string("checkpoints ") + (same_ckpt ? "identical" : "DIFFER") + ", reports " +
              (same_report ? "identical" : "DIFFER") + ", AUC seeds 42/123/456 = " + num(aucs[0]) + "/" +
              num(aucs[1]) + "/" + num(aucs[2]) + " SD " + num(sd)};
}

Outcome latent_criterion(const LatentRuns& latent) {
  const auto& r = latent.first.report;
  const bool pass = r.cosine_auc <= kLatentCosineMax && r.overall_auc >= kLatentAucMin && r.cb_auc >= kLatentCbMin &&
                    latent.first_seconds <= kLatentSecondsMax;
  return {pass, "cosine " + num(r.cosine_auc) + ", CAL " + num(r.overall_auc) + ", CB " + num(r.cb_auc) + ", train+eval " +
                    num(latent.first_seconds, 1) + " s"};
}

Outcome shuffled_criterion(const LatentRuns& latent) {
  SeededRng rng(derive_seed(42, 3));
  const auto pairs = dedup_pairs(shuffle_ablation(latent.eval.split.train, rng));
  const auto shuffled = train_and_evaluate(latent.data, latent.eval, pairs, scenario_config(), eval_options());
  const auto verdict = shuffled_verdict(latent.first.report, shuffled.report);
  const double ref = latent.first.report.overall_auc, shuf = shuffled.report.overall_auc;
  return {shuf <= ref - kShuffleGap && verdict.verdict == Verdict::pass,
          "reference " + num(ref) + ", shuffled " + num(shuf) + ", verdict " + to_string(verdict.verdict)};
}

Outcome clustered_criterion() {
  const auto data = dataset_from_scenario(generate(scenario(ScenarioKind::clustered_positives, 2000, 20000)));
  const auto eval = make_eval_split(data, {});
  const auto in_batch = train_and_evaluate(data, eval, eval.split.train, scenario_config(), eval_options()).report;
  const auto random_k =
      train_and_evaluate(data, eval, eval.split.train, scenario_config(NegativeKind::random_k), eval_options()).report;
  const double cos = in_batch.cosine_auc;
  return {in_batch.overall_auc < cos && random_k.overall_auc > cos,
          "cosine " + num(cos) + ", in_batch " + num(in_batch.overall_auc) + ", random_k " + num(random_k.overall_auc)};
}

Outcome degree_confound_criterion() {
  const auto data = dataset_from_scenario(generate(scenario(ScenarioKind::degree_confound, 600, 20000)));
  const auto pre = preflight(data.embeddings, data.positives, data.graph);
  const auto ablation = run_ablation(data, {}, scenario_config(), eval_options(), AblationKind::shuffled);
  const auto& q0 = ablation.degree_buckets.front();
  const bool overall = ablation.ablated.overall_auc >= ablation.reference.overall_auc;
  const bool fail_fires = ablation.verdict && ablation.verdict->verdict == Verdict::fail;
  const bool low_bucket = !q0.insufficient && q0.reference_auc > q0.shuffled_auc;
  return {overall && fail_fires && low_bucket,
          "pairs/entity " + num(pre.entity_to_pair_ratio, 1) + ", reference " + num(ablation.reference.overall_auc) +
              ", shuffled " + num(ablation.ablated.overall_auc) + ", verdict " +
              (ablation.verdict ? to_string(ablation.verdict->verdict) : "none") + ", Q0 reference " +
              num(q0.reference_auc) + " vs shuffled " + num(q0.shuffled_auc)};
}

Outcome no_signal_criterion() {
  const auto data = dataset_from_scenario(generate(scenario(ScenarioKind::no_signal, 2000, 20000)));
  const auto eval = make_eval_split(data, {});
  const auto r = train_and_evaluate(data, eval, eval.split.train, scenario_config(), eval_options()).report;
  return {r.overall_auc - r.cosine_auc < kNoSignalGapMax,
          "CAL " + num(r.overall_auc) + ", cosine " + num(r.cosine_auc) + ", gap " + num(r.overall_auc - r.cosine_auc)};
}

Outcome node_split_criterion(const LatentRuns& latent) {
  EvalSetSpec spec;
  spec.split.kind = SplitKind::node_split;
  const auto eval = make_eval_split(latent.data, spec);
  const auto r = train_and_evaluate(latent.data, eval, eval.split.train, scenario_config(), eval_options()).report;
  return {r.overall_auc - r.cosine_auc >= kNodeSplitGap,
          std::to_string(eval.split.held_out.size()) + " held-out entities, test AUC " + num(r.overall_auc) +
              ", cosine " + num(r.cosine_auc) + ", gap " + num(r.overall_auc - r.cosine_auc)};
}

Outcome sweep_criterion(const LatentRuns& latent) {
  const PairScorer scorer(latent.first.trained.model, latent.data.embeddings);
  const auto& pos = latent.eval.split.test;
  const auto& neg = latent.eval.negatives;
  const std::vector<double> grid{0.0, 1.0};
  const auto rows = lambda_sweep(scorer, pos, neg, grid);
  std::vector<double> pc, nc, ph, nh;
  for (const auto& p : pos.pairs) {
    pc.push_back(latent.data.embeddings.cosine(p.a, p.b));
    ph.push_back(scorer.half(p.a, p.b));
  }
  for (const auto& p : neg.pairs) {
    nc.push_back(latent.data.embeddings.cosine(p.a, p.b));
    nh.push_back(scorer.half(p.a, p.b));
  }
  const double d0 = std::abs(rows[0].overall_auc - auc(pc, nc));
  const double d1 = std::abs(rows[1].overall_auc - auc(ph, nh));
  const std::vector<double> inf{std::numeric_limits<double>::infinity()};
  const auto cb = cross_boundary_eval(scorer, pos, neg, inf);
  const bool cb_exact = cb[0].cal_auc == auc(ph, nh) && cb[0].pos_count == pos.size();
  return {d0 <= kAucExact && d1 <= kAucExact && cb_exact,
          "|lambda0 - cosine| " + sci(d0) + ", |lambda1 - association| " + sci(d1) +
              ", CB(inf) " + (cb_exact ? "equals" : "DIFFERS from") + " overall"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
  auto wanted = [&](int c) { return only.empty() || only.count(c); };

  const auto start = std::chrono::steady_clock::now();
  int failures = 0, run = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    ++run;
    failures += !o.pass;
    std::printf("criterion %2d %s  %-22s %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, "parameter count", parameter_count_criterion);
  report(2, "gradient check", gradient_criterion);
  report(3, "AUC oracle", auc_oracle_criterion);

  std::optional<LatentRuns> latent;
  if (wanted(4) || wanted(5) || wanted(6) || wanted(10) || wanted(11)) {
    latent.emplace();
    latent->data = dataset_from_scenario(generate(scenario(ScenarioKind::latent_signal, 2000, 20000)));
    latent->eval = make_eval_split(latent->data, {});
    const auto t0 = std::chrono::steady_clock::now();
    latent->first = train_and_evaluate(latent->data, latent->eval, latent->eval.split.train, scenario_config(),
                                       eval_options());
    latent->first_seconds = seconds_since(t0);
  }
  report(4, "determinism", [&] { return determinism_criterion(*latent); });
  report(5, "latent signal", [&] { return latent_criterion(*latent); });
  report(6, "shuffled ablation", [&] { return shuffled_criterion(*latent); });
  report(7, "clustered positives", clustered_criterion);
  report(8, "degree confound", degree_confound_criterion);
  report(9, "no signal", no_signal_criterion);
  report(10, "node split", [&] { return node_split_criterion(*latent); });
  report(11, "sweep consistency", [&] { return sweep_criterion(*latent); });

  std::printf("acceptance: %d/%d passed in %.1f s\n", run - failures, run, seconds_since(start));
  return failures == 0 ? 0 : 1;
}
