#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "dcp/error.hpp"
#include "dcp/rng.hpp"

namespace dcp {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = std::size_t;

/// Rows of (id, label, feature vector). Validated on construction and
/// immutable afterwards.
class Dataset {
 public:
  Dataset(std::vector<std::string> ids, std::vector<double> labels, Matrix features)
      : ids_(std::move(ids)), labels_(std::move(labels)), features_(std::move(features)) {
    detail::require(!ids_.empty(), "dataset must have at least one row");
    detail::require(ids_.size() == labels_.size() &&
                        static_cast<Eigen::Index>(ids_.size()) == features_.rows(),
                    "dataset ids, labels and feature rows differ in length");
    detail::require(features_.cols() >= 1, "dataset must have at least one feature");
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!seen.insert(ids_[i]).second) throw InvalidArgument("duplicate id '" + ids_[i] + "'");
      if (!std::isfinite(labels_[i]))
        throw InvalidArgument("non-finite label at row " + std::to_string(i + 1));
    }
    if (!features_.allFinite()) throw InvalidArgument("dataset contains non-finite feature values");
  }

  std::size_t size() const { return ids_.size(); }
  std::size_t n_features() const { return static_cast<std::size_t>(features_.cols()); }

  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<double>& labels() const { return labels_; }
  const Matrix& features() const { return features_; }

  /// Copy of the given rows, in the given order.
  Dataset subset(const std::vector<Index>& rows) const {
    std::vector<std::string> ids;
    std::vector<double> labels;
    Matrix features(static_cast<Eigen::Index>(rows.size()), features_.cols());
    ids.reserve(rows.size());
    labels.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      detail::require(rows[r] < size(), "subset row index out of range");
      ids.push_back(ids_[rows[r]]);
      labels.push_back(labels_[rows[r]]);
      features.row(static_cast<Eigen::Index>(r)) = features_.row(static_cast<Eigen::Index>(rows[r]));
    }
    return Dataset(std::move(ids), std::move(labels), std::move(features));
  }

  bool operator==(const Dataset& other) const {
    return ids_ == other.ids_ && labels_ == other.labels_ &&
           features_.rows() == other.features_.rows() && features_.cols() == other.features_.cols() &&
           features_ == other.features_;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<double> labels_;
  Matrix features_;
};

struct SplitIndices {
  std::vector<Index> train;
  std::vector<Index> validation;
  std::vector<Index> test;
  std::uint64_t seed = 0;
};

struct SplitFractions {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;
};

/// Column naming convention for tables: one id column, one label column,
/// every other column is a feature in header order.
struct TableSchema {
  std::string id_column = "id";
  std::string label_column = "y";
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

/// Parses a finite double. Returns false on garbage, trailing characters,
/// NaN or infinity.
inline bool parse_finite(std::string_view text, double& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

/// Shortest representation that parses back to the same double.
inline std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

}  // namespace detail

inline Dataset load_table(const std::filesystem::path& path, const TableSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open table '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError("table '" + path.string() + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header_cells = detail::split_csv_line(line);
  std::vector<std::string> header;
  for (auto c : header_cells) header.emplace_back(detail::trim(c));

  std::ptrdiff_t id_col = -1;
  std::ptrdiff_t label_col = -1;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == schema.id_column) {
      if (id_col >= 0) throw ParseError("malformed header: duplicate id column");
      id_col = static_cast<std::ptrdiff_t>(c);
    } else if (header[c] == schema.label_column) {
      if (label_col >= 0) throw ParseError("malformed header: duplicate label column");
      label_col = static_cast<std::ptrdiff_t>(c);
    } else {
      if (header[c].empty()) throw ParseError("malformed header: empty column name");
      feature_cols.push_back(c);
    }
  }
  if (id_col < 0) throw ParseError("malformed header: missing id column '" + schema.id_column + "'");
  if (label_col < 0)
    throw ParseError("malformed header: missing label column '" + schema.label_column + "'");
  if (feature_cols.empty()) throw ParseError("malformed header: no feature columns");

  std::vector<std::string> ids;
  std::vector<double> labels;
  std::vector<double> values;
  std::unordered_set<std::string> seen;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                       " cells, found " + std::to_string(cells.size()));
    std::string id(detail::trim(cells[static_cast<std::size_t>(id_col)]));
    if (!seen.insert(id).second) throw ParseError("row " + std::to_string(row) + ": duplicate id '" + id + "'");
    double y;
    if (!detail::parse_finite(cells[static_cast<std::size_t>(label_col)], y))
      throw ParseError("row " + std::to_string(row) + ", column " + schema.label_column +
                       ": not a finite number");
    for (auto c : feature_cols) {
      double v;
      if (!detail::parse_finite(cells[c], v))
        throw ParseError("row " + std::to_string(row) + ", column " + header[c] + ": not a finite number");
      values.push_back(v);
    }
    ids.push_back(std::move(id));
    labels.push_back(y);
  }
  if (ids.empty()) throw ParseError("table '" + path.string() + "' has no data rows");

  const auto n = static_cast<Eigen::Index>(ids.size());
  const auto d = static_cast<Eigen::Index>(feature_cols.size());
  Matrix features = Eigen::Map<Matrix>(values.data(), n, d);
  return Dataset(std::move(ids), std::move(labels), std::move(features));
}

/// Writes `id,y,f0,...,f{d-1}` with shortest round-trip number formatting.
inline void write_table(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write table '" + path.string() + "'");
  out << "id,y";
  for (std::size_t f = 0; f < data.n_features(); ++f) out << ",f" << f;
  out << '\n';
  const auto& x = data.features();
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.ids()[i] << ',' << detail::format_double(data.labels()[i]);
    for (Eigen::Index f = 0; f < x.cols(); ++f)
      out << ',' << detail::format_double(x(static_cast<Eigen::Index>(i), f));
    out << '\n';
  }
  if (!out) throw IoError("failed writing table '" + path.string() + "'");
}

/// Seeded permutation cut at floor(n*f_train) and floor(n*(f_train+f_val));
/// the remainder goes to test.
inline SplitIndices random_split(std::size_t n_rows, const SplitFractions& fractions, std::uint64_t seed) {
  detail::require(fractions.train > 0 && fractions.validation > 0 && fractions.test > 0,
                  "split fractions must be positive");
  detail::require(std::abs(fractions.train + fractions.validation + fractions.test - 1.0) <= 1e-9,
                  "split fractions must sum to 1");
  detail::require(n_rows >= 3, "need at least 3 rows to split");

  const auto cut1 = static_cast<std::size_t>(std::floor(static_cast<double>(n_rows) * fractions.train));
  const auto cut2 = static_cast<std::size_t>(
      std::floor(static_cast<double>(n_rows) * (fractions.train + fractions.validation)));
  if (cut1 == 0 || cut2 <= cut1 || cut2 >= n_rows)
    throw InvalidArgument("n_rows=" + std::to_string(n_rows) + " too small for every partition to be non-empty");

  std::vector<Index> perm(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<Index>(perm));

  SplitIndices split;
  split.seed = seed;
  split.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(cut1));
  split.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(cut1),
                          perm.begin() + static_cast<std::ptrdiff_t>(cut2));
  split.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(cut2), perm.end());
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class NoiseKind { homoscedastic, heteroscedastic };

/// Homoscedastic: constant noise sd `scale`. Heteroscedastic: sd grows
/// linearly along the last feature, from 0.25*scale to 1.75*scale (mean `scale`).
struct NoiseModel {
  NoiseKind kind = NoiseKind::homoscedastic;
  double scale = 0.0;
};

/// Smooth generating function on [-1,1]^d with values around 4.5..8.5.
template <typename Row>
double synthetic_function(const Row& x) {
  const auto d = x.size();
  double y = 6.5 + 1.2 * std::sin(std::numbers::pi * x[0]);
  if (d > 1) y += 0.8 * x[1];
  if (d > 2) y += 0.6 * x[2] * x[2];
  return y;
}

template <typename Row>
double synthetic_noise_sd(const NoiseModel& noise, const Row& x) {
  if (noise.kind == NoiseKind::homoscedastic) return noise.scale;
  const double u = (x[x.size() - 1] + 1.0) / 2.0;
  return noise.scale * (0.25 + 1.5 * u);
}

inline Dataset make_synthetic(std::size_t n, std::size_t d, const NoiseModel& noise, std::uint64_t seed) {
  detail::require(n >= 10, "synthetic dataset needs n >= 10");
  detail::require(d >= 1, "synthetic dataset needs d >= 1");
  detail::require(noise.scale >= 0 && std::isfinite(noise.scale), "noise scale must be >= 0");

  Rng rng(seed);
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<double> y(n);
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index f = 0; f < x.cols(); ++f) x(r, f) = rng.uniform(-1.0, 1.0);
    const auto row = x.row(r);
    const double eps = rng.normal();
    y[i] = synthetic_function(row) + synthetic_noise_sd(noise, row) * eps;
    ids[i] = "row" + std::to_string(i);
  }
  return Dataset(std::move(ids), std::move(y), std::move(x));
}

}  // namespace dcp
