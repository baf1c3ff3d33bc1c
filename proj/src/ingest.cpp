#include "cal/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "cal/binary_io.hpp"
#include "cal/errors.hpp"

namespace cal {

namespace {

const std::string kEmbeddingMagic = "CALEMB1\n";

std::ifstream open_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

std::vector<std::string_view> split_on(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const auto start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

void write_string(std::ostream& out, const std::string& s) {
  binary::write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto len = binary::read_u32(in, "id length");
  std::string s(len, '\0');
  if (!in.read(s.data(), len)) throw FormatError("truncated reading id");
  return s;
}

}  // namespace

void IngestConfig::validate() const {
  if (pca_components < 0) throw ConfigError("pca_components must be positive, or 0 to skip PCA");
  if (confidence_min < 0 || confidence_min > 1000) {
    throw ConfigError("confidence_min must lie in [0, 1000]");
  }
  if (confidence_channel.empty()) throw ConfigError("confidence_channel is empty");
}

RawTable read_embedding_table(const std::string& path, bool header) {
  auto in = open_text(path);
  std::string line;
  std::size_t line_no = 0;
  if (header) {
    std::getline(in, line);
    ++line_no;
  }
  std::vector<std::string> ids;
  std::vector<double> values;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() < 2) throw ParseError("line " + std::to_string(line_no) + ": no values");
    if (width == 0) width = fields.size() - 1;
    if (fields.size() - 1 != width) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                       " values, found " + std::to_string(fields.size() - 1));
    }
    ids.emplace_back(fields[0]);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      double v = 0;
      const auto f = fields[c];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        // from_chars rejects "nan"/"inf" spellings with a sign or case it does not know
        const std::string text(f);
        char* end = nullptr;
        v = std::strtod(text.c_str(), &end);
        if (text.empty() || end != text.c_str() + text.size()) {
          throw ParseError("line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) +
                           ": not a number '" + text + "'");
        }
      }
      if (!std::isfinite(v)) {
        throw DataError("line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) +
                        ": non-finite value");
      }
      values.push_back(v);
    }
  }
  if (ids.empty()) throw EmptyDataError("no embedding rows in " + path);
  RawTable t{std::move(ids), RowMatrixD(static_cast<Eigen::Index>(values.size() / width),
                                        static_cast<Eigen::Index>(width))};
  std::copy(values.begin(), values.end(), t.values.data());
  return t;
}

PcaBasis fit_pca(const RowMatrixD& raw, int k) {
  const auto n = raw.rows(), dim = raw.cols();
  if (k <= 0 || k > std::min(n, dim)) {
    throw ConfigError("pca_components=" + std::to_string(k) + " exceeds min(n_entities=" +
                      std::to_string(n) + ", raw_dim=" + std::to_string(dim) + ")");
  }
  const Eigen::RowVectorXd mean = raw.colwise().mean();
  const Eigen::MatrixXd centred = raw.rowwise() - mean;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double total = sv.squaredNorm();

  PcaBasis basis;
  basis.mean = mean.transpose().cast<float>();
  RowMatrixD comps = svd.matrixV().leftCols(k).transpose();
  for (Eigen::Index r = 0; r < k; ++r) {
    Eigen::Index arg = 0;
    comps.row(r).cwiseAbs().maxCoeff(&arg);
    if (comps(r, arg) < 0) comps.row(r) *= -1.0;
  }
  basis.components = comps.cast<float>();
  basis.variance_explained = total > 0 ? sv.head(k).squaredNorm() / total : 1.0;
  return basis;
}

RowMatrixF project(const RowMatrixD& raw, const PcaBasis& basis) {
  if (raw.cols() != basis.raw_dim()) {
    throw DimensionError("raw rows have " + std::to_string(raw.cols()) + " columns, PCA expects " +
                         std::to_string(basis.raw_dim()));
  }
  const RowMatrixD centred = raw.rowwise() - basis.mean.cast<double>().transpose();
  return (centred * basis.components.cast<double>().transpose()).cast<float>();
}

IdMapping apply_id_mapping(const std::vector<std::string>& raw_ids, const std::string& mapping_file) {
  auto in = open_text(mapping_file);
  std::unordered_map<std::string, std::string> table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() != 2) {
      throw ParseError(mapping_file + " line " + std::to_string(line_no) + ": expected 2 columns");
    }
    if (!table.emplace(std::string(fields[0]), std::string(fields[1])).second) {
      throw MappingError("duplicate source id '" + std::string(fields[0]) + "' in " + mapping_file);
    }
  }
  IdMapping m;
  std::unordered_set<std::string> targets;
  for (std::size_t i = 0; i < raw_ids.size(); ++i) {
    const auto it = table.find(raw_ids[i]);
    if (it == table.end()) {
      m.unmapped.push_back(raw_ids[i]);
      continue;
    }
    if (!targets.insert(it->second).second) {
      throw MappingError("several ids map to '" + it->second + "'");
    }
    m.mapped.push_back(it->second);
    m.kept.push_back(i);
  }
  m.coverage = raw_ids.empty() ? 0.0
                               : static_cast<double>(m.kept.size()) / static_cast<double>(raw_ids.size());
  return m;
}

EmbeddingSet load_embeddings(const std::string& path, const IngestConfig& config, IdMapping* mapping_out) {
  config.validate();
  auto table = read_embedding_table(path, config.header);
  std::optional<PcaBasis> basis;
  RowMatrixF vectors;
  if (config.pca_components > 0) {
    basis = fit_pca(table.values, config.pca_components);
    vectors = project(table.values, *basis);
  } else {
    vectors = table.values.cast<float>();
  }
  if (config.mapping_file) {
    auto mapping = apply_id_mapping(table.ids, *config.mapping_file);
    if (mapping.kept.empty()) throw EmptyDataError("no embedding id is covered by " + *config.mapping_file);
    RowMatrixF kept(static_cast<Eigen::Index>(mapping.kept.size()), vectors.cols());
    for (std::size_t i = 0; i < mapping.kept.size(); ++i) {
      kept.row(static_cast<Eigen::Index>(i)) = vectors.row(static_cast<Eigen::Index>(mapping.kept[i]));
    }
    table.ids = mapping.mapped;
    vectors = std::move(kept);
    if (mapping_out) *mapping_out = std::move(mapping);
  } else if (mapping_out) {
    *mapping_out = IdMapping{table.ids, {}, {}, 1.0};
    for (std::size_t i = 0; i < table.ids.size(); ++i) mapping_out->kept.push_back(i);
  }
  return EmbeddingSet(std::move(table.ids), std::move(vectors), std::move(basis));
}

void save_embedding_set(const EmbeddingSet& embeddings, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(kEmbeddingMagic.data(), static_cast<std::streamsize>(kEmbeddingMagic.size()));
  binary::write_u32(out, static_cast<std::uint32_t>(embeddings.size()));
  binary::write_u32(out, static_cast<std::uint32_t>(embeddings.dim()));
  for (const auto& id : embeddings.ids()) write_string(out, id);
  const auto& v = embeddings.vectors();
  binary::write_f32_array(out, v.data(), static_cast<std::size_t>(v.size()));
  const auto& pca = embeddings.pca();
  binary::write_u32(out, pca ? static_cast<std::uint32_t>(pca->raw_dim()) : 0u);
  if (pca) {
    binary::write_f32_array(out, pca->mean.data(), static_cast<std::size_t>(pca->mean.size()));
    binary::write_f32_array(out, pca->components.data(), static_cast<std::size_t>(pca->components.size()));
    binary::write_f32(out, static_cast<float>(pca->variance_explained));
  }
  if (!out) throw IoError("failed writing " + path);
}

EmbeddingSet load_embedding_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  binary::expect_magic(in, kEmbeddingMagic);
  const auto n = binary::read_u32(in, "entity count");
  const auto d = binary::read_u32(in, "dimension");
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) ids.push_back(read_string(in));
  RowMatrixF v(n, d);
  binary::read_f32_array(in, v.data(), static_cast<std::size_t>(v.size()), "vectors");
  const auto raw_dim = binary::read_u32(in, "raw dimension");
  std::optional<PcaBasis> pca;
  if (raw_dim > 0) {
    PcaBasis b;
    b.mean.resize(raw_dim);
    b.components.resize(d, raw_dim);
    binary::read_f32_array(in, b.mean.data(), raw_dim, "PCA mean");
    binary::read_f32_array(in, b.components.data(), static_cast<std::size_t>(b.components.size()), "PCA projection");
    b.variance_explained = binary::read_f32(in, "variance explained");
    pca = std::move(b);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path);
  return EmbeddingSet::from_unit_rows(std::move(ids), std::move(v), std::move(pca));
}

AssociationLoad load_associations(const std::string& path, const IngestConfig& config,
                                  const EmbeddingSet& embeddings) {
  config.validate();
  auto in = open_text(path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path + " has no header");
  strip_cr(line);
  const auto header = split_ws(line);
  if (header.size() < 3) throw SchemaError(path + " header needs two id columns and a score column");

  auto find_column = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 2; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };
  auto column = find_column(config.confidence_channel);
  if (!column && config.confidence_channel == "combined") column = find_column("combined_score");
  if (!column) {
    throw SchemaError("channel '" + config.confidence_channel + "' not in header of " + path);
  }
  std::vector<std::string> names;
  for (std::size_t i = 2; i < header.size(); ++i) names.emplace_back(header[i]);

  AssociationLoad load;
  load.positives.role = PairRole::train_positive;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    if (fields.size() != header.size()) {
      throw ParseError(path + " line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    ++load.n_lines;
    Edge edge{std::string(fields[0]), std::string(fields[1]), {}};
    for (std::size_t i = 2; i < fields.size(); ++i) {
      int v = 0;
      const auto f = fields[i];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw ParseError(path + " line " + std::to_string(line_no) + ": bad score '" + std::string(f) + "'");
      }
      edge.channels[names[i - 2]] = v;
    }
    if (edge.channels.at(names[*column - 2]) < config.confidence_min) {
      ++load.n_below_threshold;
      continue;
    }
    const auto ia = embeddings.index_of(edge.a), ib = embeddings.index_of(edge.b);
    if (!ia || !ib) {
      ++load.n_unmappable;
      continue;
    }
    if (*ia == *ib) {
      ++load.n_self;
      continue;
    }
    if (!load.graph.add_edge(std::move(edge))) {
      ++load.n_duplicate;
      continue;
    }
    load.positives.pairs.push_back({*ia, *ib});
  }
  if (load.positives.empty()) {
    throw EmptyDataError("no mappable edges with " + config.confidence_channel +
                         " >= " + std::to_string(config.confidence_min) + " in " + path);
  }
  return load;
}

DatasetStats dataset_stats(const EmbeddingSet& embeddings, const PairSet& positives, double cb_threshold,
                           double mapping_coverage) {
  if (positives.empty()) throw EmptyDataError("dataset_stats needs at least one positive pair");
  DatasetStats s;
  s.n_pairs = positives.size();
  s.mapping_coverage = mapping_coverage;
  std::size_t cb = 0, above = 0;
  double total = 0;
  for (const auto& p : positives.pairs) {
    const double c = embeddings.cosine(p.a, p.b);
    total += c;
    cb += std::abs(c) < cb_threshold;
    above += c > 0.5;
  }
  const auto n = static_cast<double>(s.n_pairs);
  s.cross_boundary_fraction = static_cast<double>(cb) / n;
  s.mean_positive_cosine = total / n;
  s.fraction_cosine_above_half = static_cast<double>(above) / n;
  return s;
}

}  // namespace cal
