#include "cal/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "cal/errors.hpp"

namespace cal {

namespace {

std::string fmt(double v, int digits = 4) {
  if (!std::isfinite(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Counts print without decimals.
std::string fmt_extra(double v) {
  return v == std::floor(v) && std::abs(v) < 1e15 ? std::to_string(static_cast<long long>(v)) : fmt(v);
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "n/a"; }

Json optional_or_null(const std::optional<double>& v) { return v ? number_or_null(*v) : Json(nullptr); }

Json quintiles_json(const std::vector<QuintileRow>& rows) {
  Json out = Json::array();
  for (const auto& q : rows) {
    out.push_back({{"quintile", q.quintile},
                   {"degree_lo", number_or_null(q.degree_lo)},
                   {"degree_hi", number_or_null(q.degree_hi)},
                   {"n", q.n},
                   {"mean_cosine", number_or_null(q.mean_cosine)},
                   {"mean_association", number_or_null(q.mean_association)},
                   {"delta", number_or_null(q.delta)}});
  }
  return out;
}

}  // namespace

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_or_nan(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

Json to_json(const EvalReport& r) {
  Json j;
  j["n_pos"] = r.n_pos;
  j["n_neg"] = r.n_neg;
  j["scoring_mode"] = r.scoring_mode;
  j["overall_auc"] = number_or_null(r.overall_auc);
  j["auc_ci"] = {number_or_null(r.auc_ci.first), number_or_null(r.auc_ci.second)};
  j["cosine_auc"] = number_or_null(r.cosine_auc);
  j["cb_threshold"] = r.cb_threshold;
  j["cb_auc"] = number_or_null(r.cb_auc);
  j["cosine_cb_auc"] = number_or_null(r.cosine_cb_auc);
  j["cb_pos"] = r.cb_pos;
  j["cb_neg"] = r.cb_neg;
  Json sweep = Json::array();
  for (const auto& l : r.lambda_sweep) {
    sweep.push_back({{"lambda", l.lambda}, {"overall_auc", number_or_null(l.overall_auc)},
                     {"cb_auc", number_or_null(l.cb_auc)}});
  }
  j["lambda_sweep"] = std::move(sweep);
  Json cb = Json::array();
  for (const auto& c : r.cb_sweep) {
    cb.push_back({{"threshold", number_or_null(c.threshold)},
                  {"pos_count", c.pos_count},
                  {"neg_count", c.neg_count},
                  {"cosine_auc", number_or_null(c.cosine_auc)},
                  {"cal_auc", number_or_null(c.cal_auc)},
                  {"insufficient", c.insufficient}});
  }
  j["cb_sweep"] = std::move(cb);
  j["degree"] = {{"spearman_mean", optional_or_null(r.degree.spearman_mean)},
                 {"spearman_max", optional_or_null(r.degree.spearman_max)},
                 {"spearman_note", r.degree.spearman_note},
                 {"pair_quintiles", quintiles_json(r.degree.pair_quintiles)},
                 {"entity_quintiles", quintiles_json(r.degree.entity_quintiles)}};
  Json top = Json::array();
  for (const auto& t : r.top_improvement_pairs) {
    top.push_back({{"id_a", t.id_a}, {"id_b", t.id_b}, {"cosine", number_or_null(t.cosine)},
                   {"association", number_or_null(t.association)}, {"delta", number_or_null(t.delta)}});
  }
  j["top_improvement_pairs"] = std::move(top);
  Json extras = Json::object();
  for (const auto& [k, v] : r.extras) extras[k] = number_or_null(v);
  j["extras"] = std::move(extras);
  j["eval_set_hash"] = r.eval_set_hash;
  j["config_hash"] = r.config_hash;
  j["seeds"] = r.seeds;
  return j;
}

EvalReport eval_report_from_json(const Json& j) {
  try {
    EvalReport r;
    r.n_pos = j.at("n_pos").get<std::size_t>();
    r.n_neg = j.at("n_neg").get<std::size_t>();
    r.scoring_mode = j.at("scoring_mode").get<std::string>();
    r.overall_auc = number_or_nan(j.at("overall_auc"));
    r.auc_ci = {number_or_nan(j.at("auc_ci").at(0)), number_or_nan(j.at("auc_ci").at(1))};
    r.cosine_auc = number_or_nan(j.at("cosine_auc"));
    r.cb_threshold = j.at("cb_threshold").get<double>();
    r.cb_auc = number_or_nan(j.at("cb_auc"));
    r.cosine_cb_auc = number_or_nan(j.at("cosine_cb_auc"));
    r.cb_pos = j.at("cb_pos").get<std::size_t>();
    r.cb_neg = j.at("cb_neg").get<std::size_t>();
    for (const auto& l : j.at("lambda_sweep")) {
      r.lambda_sweep.push_back({l.at("lambda").get<double>(), number_or_nan(l.at("overall_auc")),
                                number_or_nan(l.at("cb_auc"))});
    }
    for (const auto& c : j.at("cb_sweep")) {
      r.cb_sweep.push_back({number_or_nan(c.at("threshold")), c.at("pos_count").get<std::size_t>(),
                            c.at("neg_count").get<std::size_t>(), number_or_nan(c.at("cosine_auc")),
                            number_or_nan(c.at("cal_auc")), c.at("insufficient").get<bool>()});
    }
    for (const auto& [k, v] : j.at("extras").items()) r.extras.emplace_back(k, number_or_nan(v));
    r.eval_set_hash = j.at("eval_set_hash").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed eval report: ") + e.what());
  }
}

Json to_json(const std::vector<BucketComparison>& rows) {
  Json out = Json::array();
  for (const auto& b : rows) {
    out.push_back({{"bucket", b.bucket},
                   {"degree_lo", number_or_null(b.degree_lo)},
                   {"degree_hi", number_or_null(b.degree_hi)},
                   {"n_pos", b.n_pos},
                   {"n_neg", b.n_neg},
                   {"reference_auc", number_or_null(b.reference_auc)},
                   {"shuffled_auc", number_or_null(b.shuffled_auc)},
                   {"delta", number_or_null(b.delta)},
                   {"insufficient", b.insufficient}});
  }
  return out;
}

std::string format_table(const EvalReport& r) {
  std::ostringstream out;
  out << "pairs               " << r.n_pos << " positive / " << r.n_neg << " negative\n";
  out << "scoring             " << r.scoring_mode << '\n';
  out << "overall AUC         " << fmt(r.overall_auc) << "  [" << fmt(r.auc_ci.first) << ", "
      << fmt(r.auc_ci.second) << "]\n";
  out << "cosine AUC          " << fmt(r.cosine_auc) << "  (delta " << fmt(r.overall_auc - r.cosine_auc) << ")\n";
  out << "CB AUC |cos|<" << fmt(r.cb_threshold, 2) << "    " << fmt(r.cb_auc) << "  cosine " << fmt(r.cosine_cb_auc)
      << "  (" << r.cb_pos << " / " << r.cb_neg << ")\n";
  if (!r.cb_sweep.empty()) {
    out << "\n  threshold    pos    neg   cosine      CAL\n";
    for (const auto& c : r.cb_sweep) {
      char line[128];
      std::snprintf(line, sizeof line, "  %9s %6zu %6zu %8s %8s%s\n", fmt(c.threshold, 2).c_str(), c.pos_count,
                    c.neg_count, fmt(c.cosine_auc).c_str(), fmt(c.cal_auc).c_str(),
                    c.insufficient ? "  (insufficient)" : "");
      out << line;
    }
  }
  if (!r.lambda_sweep.empty()) {
    out << "\n  lambda   overall       CB\n";
    for (const auto& l : r.lambda_sweep) {
      char line[96];
      std::snprintf(line, sizeof line, "  %6s %9s %8s\n", fmt(l.lambda, 2).c_str(), fmt(l.overall_auc).c_str(),
                    fmt(l.cb_auc).c_str());
      out << line;
    }
  }
  if (!r.degree.pair_quintiles.empty() || r.degree.spearman_mean) {
    out << "\ndegree Spearman     mean " << fmt_opt(r.degree.spearman_mean) << "  max "
        << fmt_opt(r.degree.spearman_max);
    if (!r.degree.spearman_note.empty()) out << "  (" << r.degree.spearman_note << ")";
    out << '\n';
    for (const auto& q : r.degree.pair_quintiles) {
      char line[160];
      std::snprintf(line, sizeof line, "  Q%d [%s, %s] n=%zu cosine %s association %s delta %s\n", q.quintile,
                    fmt(q.degree_lo, 1).c_str(), fmt(q.degree_hi, 1).c_str(), q.n, fmt(q.mean_cosine).c_str(),
                    fmt(q.mean_association).c_str(), fmt(q.delta).c_str());
      out << line;
    }
  }
  if (!r.top_improvement_pairs.empty()) {
    out << "\ntop improvements\n";
    for (const auto& t : r.top_improvement_pairs) {
      out << "  " << t.id_a << " - " << t.id_b << "  cosine " << fmt(t.cosine, 3) << "  association "
          << fmt(t.association, 3) << "  delta " << fmt(t.delta, 3) << '\n';
    }
  }
  for (const auto& [k, v] : r.extras) out << k << "  " << fmt_extra(v) << '\n';
  return out.str();
}

std::string format_table(const std::vector<BucketComparison>& rows) {
  std::ostringstream out;
  out << "  bucket      degree      pos    neg  reference  shuffled    delta\n";
  for (const auto& b : rows) {
    char line[160];
    std::snprintf(line, sizeof line, "  Q%-5d %5s-%-6s %6zu %6zu %10s %9s %8s%s\n", b.bucket,
                  fmt(b.degree_lo, 1).c_str(), fmt(b.degree_hi, 1).c_str(), b.n_pos, b.n_neg,
                  fmt(b.reference_auc).c_str(), fmt(b.shuffled_auc).c_str(), fmt(b.delta).c_str(),
                  b.insufficient ? "  (insufficient)" : "");
    out << line;
  }
  return out.str();
}

void write_json(const Json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace cal
