#include "fedlora/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "fedlora/error.hpp"
#include "fedlora/rng.hpp"

namespace fedlora {
namespace {

Matrix unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m = Matrix::gaussian(rows, cols, 1.0, rng);
  return row_normalize(m);
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_real(const std::string& text, double& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  out = std::strtod(text.c_str(), &end);
  return *end == '\0' && std::isfinite(out);
}

bool parse_index(const std::string& text, std::size_t& out) {
  if (text.empty() || text[0] == '-' || text[0] == '+') return false;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  if (*end != '\0') return false;
  out = static_cast<std::size_t>(v);
  return true;
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw Error(ErrorCode::kShape, "dataset is empty");
  if (features.rows() != labels.size()) {
    throw Error(ErrorCode::kShape, "dataset has " + std::to_string(features.rows()) +
                                       " feature rows but " + std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 1) throw Error(ErrorCode::kRange, "dataset must declare at least one class");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw Error(ErrorCode::kRange, "row " + std::to_string(i) + ": label " +
                                         std::to_string(labels[i]) + " >= K=" + std::to_string(num_classes));
    }
  }
  if (!all_finite(features)) throw Error(ErrorCode::kNumeric, "dataset features contain non-finite values");
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.features = gather_rows(data.features, indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(data.labels[i]);
  out.num_classes = data.num_classes;
  out.provenance = data.provenance;
  return out;
}

std::vector<std::size_t> label_histogram(const Dataset& data) {
  std::vector<std::size_t> counts(data.num_classes, 0);
  for (std::size_t label : data.labels) ++counts[label];
  return counts;
}

std::vector<std::size_t> label_histogram(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<std::size_t> counts(data.num_classes, 0);
  for (std::size_t i : indices) ++counts[data.labels[i]];
  return counts;
}

Dataset synth_dataset(const SynthSpec& spec) {
  if (spec.classes < 1 || spec.feature_dim < 1 || spec.per_class < 1) {
    throw Error(ErrorCode::kParameter, "synthetic dataset needs classes, feature_dim and per_class >= 1");
  }
  if (!(spec.separation >= 0.0) || !(spec.shift >= 0.0)) {
    throw Error(ErrorCode::kParameter, "separation and shift must be >= 0");
  }
  Rng mean_rng(derive_seed(spec.seed, {1}));
  Matrix means = unit_rows(spec.classes, spec.feature_dim, mean_rng);
  if (spec.shift > 0.0) {
    Rng shift_rng(derive_seed(spec.seed, {2}));
    Matrix directions = unit_rows(spec.classes, spec.feature_dim, shift_rng);
    means = row_normalize(add(means, scale(directions, spec.shift)));
  }
  means = scale(means, spec.separation);

  Rng sample_rng(derive_seed(spec.seed, {3, spec.variant}));
  const std::size_t n = spec.classes * spec.per_class;
  Dataset data;
  data.features = Matrix(n, spec.feature_dim);
  data.labels.resize(n);
  data.num_classes = spec.classes;
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t s = 0; s < spec.per_class; ++s, ++row) {
      auto x = data.features.row(row);
      for (std::size_t j = 0; j < spec.feature_dim; ++j) x[j] = means(c, j) + sample_rng.normal();
      data.labels[row] = c;
    }
  }
  std::ostringstream prov;
  prov << "synthetic(seed=" << spec.seed << ",K=" << spec.classes << ",d=" << spec.feature_dim
       << ",per_class=" << spec.per_class << ",separation=" << spec.separation
       << ",shift=" << spec.shift << ",variant=" << spec.variant << ")";
  data.provenance = prov.str();
  return data;
}

void write_dataset(std::ostream& out, const Dataset& data) {
  out << data.feature_dim() << ',' << data.num_classes << '\n';
  char buf[40];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.features.row(i)) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << buf << ',';
    }
    out << data.labels[i] << '\n';
  }
}

Dataset read_dataset(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kParse, source + ": empty dataset file");
  const auto header = split_commas(line);
  std::size_t d = 0, k = 0;
  if (header.size() != 2 || !parse_index(header[0], d) || !parse_index(header[1], k) || d == 0 || k == 0) {
    throw Error(ErrorCode::kParse, source + ":1: header must be '<d_feat>,<K>' with positive integers");
  }

  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != d + 1) {
      throw Error(ErrorCode::kParse, source + ":" + std::to_string(line_no) + ": expected " +
                                         std::to_string(d + 1) + " fields, got " + std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.0;
      if (!parse_real(fields[j], v)) {
        throw Error(ErrorCode::kParse, source + ":" + std::to_string(line_no) + ": bad real '" + fields[j] + "'");
      }
      values.push_back(v);
    }
    std::size_t label = 0;
    if (!parse_index(fields[d], label)) {
      throw Error(ErrorCode::kParse, source + ":" + std::to_string(line_no) + ": bad label '" + fields[d] + "'");
    }
    if (label >= k) {
      throw Error(ErrorCode::kRange, source + ":" + std::to_string(line_no) + ": label " +
                                         std::to_string(label) + " >= K=" + std::to_string(k));
    }
    labels.push_back(label);
  }
  if (labels.empty()) throw Error(ErrorCode::kParse, source + ": dataset has no rows");

  Dataset data;
  data.features = Matrix(labels.size(), d, std::move(values));
  data.labels = std::move(labels);
  data.num_classes = k;
  data.provenance = source;
  return data;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  write_dataset(out, data);
  if (!out) throw Error(ErrorCode::kIo, "failed writing '" + path.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return read_dataset(in, path.string());
}

}  // namespace fedlora
