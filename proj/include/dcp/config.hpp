#pragma once

// Experiment configuration: a flat `key = value` text file. Blank lines and
// `#` comments are ignored; list values are comma separated; unknown keys
// are rejected.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dcp/conformal.hpp"
#include "dcp/data.hpp"
#include "dcp/error.hpp"
#include "dcp/forest.hpp"
#include "dcp/net.hpp"

namespace dcp {

/// Config problem tied to one key.
class ConfigError : public InvalidArgument {
 public:
  ConfigError(std::string key, const std::string& message)
      : InvalidArgument(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct SyntheticSpec {
  std::size_t n = 1000;
  std::size_t d = 8;
  NoiseModel noise{NoiseKind::heteroscedastic, 0.3};
  std::optional<std::uint64_t> seed;  // default: derived from the experiment seed
};

enum class ModelKind { dnn, rf };

struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset;
  std::optional<SyntheticSpec> synthetic;
  std::uint64_t seed = 0;
  std::size_t n_runs = 20;
  SplitFractions split;
  std::vector<ModelKind> models{ModelKind::dnn, ModelKind::rf};
  std::vector<double> dropout_p{0.1, 0.25, 0.5};
  std::size_t n_passes = 100;
  NetConfig net;
  ForestConfig forest;
  std::size_t cv_folds = 10;
  std::vector<double> cl_grid = default_cl_grid();
  double default_cl = 0.80;
  std::vector<double> cutoffs{5.0, 6.0, 7.0, 8.0, 9.0};
  std::size_t retry_limit = 3;
  std::filesystem::path output_dir = "dcp_out";
  std::size_t workers = 1;
  bool emit_plots = true;
  bool emit_pass_matrix = false;
  bool save_models = false;
  /// Split the validation partition in half: first half for early stopping,
  /// second half for conformal calibration.
  bool strict_calibration = false;

  bool uses(ModelKind m) const { return std::find(models.begin(), models.end(), m) != models.end(); }

  /// cl_grid plus default_cl, ascending, deduplicated.
  std::vector<ConfidenceLevel> levels() const {
    std::vector<double> v = cl_grid;
    v.push_back(default_cl);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    std::vector<ConfidenceLevel> out;
    for (double x : v) out.emplace_back(x);
    return out;
  }

  static std::vector<double> default_cl_grid() {
    std::vector<double> g;
    for (int i = 1; i <= 19; ++i) g.push_back(i / 20.0);
    return g;
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  for (auto cell : split_csv_line(value)) {
    auto t = trim(cell);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

class ConfigParser {
 public:
  explicit ConfigParser(std::filesystem::path base_dir) : base_dir_(std::move(base_dir)) {}

  ExperimentConfig parse(std::istream& in) {
    ExperimentConfig c;
    std::map<std::string, std::function<void(const std::string&, const std::string&)>> handlers = make_handlers(c);
    std::string line;
    std::size_t line_no = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto body = trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string_view::npos)
        throw ParseError("config line " + std::to_string(line_no) + ": expected 'key = value'");
      const std::string key(trim(body.substr(0, eq)));
      const std::string value(trim(body.substr(eq + 1)));
      const auto it = handlers.find(key);
      if (it == handlers.end()) throw ConfigError(key, "unknown key");
      if (!seen.insert(key).second) throw ConfigError(key, "given more than once");
      it->second(key, value);
    }
    if (synthetic_touched_) c.synthetic = synthetic_;
    validate(c);
    return c;
  }

 private:
  static double real(const std::string& key, const std::string& value) {
    double v;
    if (!parse_finite(value, v)) throw ConfigError(key, "expected a finite number, got '" + value + "'");
    return v;
  }
  static std::uint64_t count(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    auto t = trim(value);
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
      throw ConfigError(key, "expected a non-negative integer, got '" + value + "'");
    return v;
  }
  static bool boolean(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError(key, "expected true or false, got '" + value + "'");
  }
  static std::vector<double> reals(const std::string& key, const std::string& value) {
    std::vector<double> out;
    for (const auto& item : split_list(value)) out.push_back(real(key, item));
    if (out.empty()) throw ConfigError(key, "expected at least one value");
    return out;
  }

  std::map<std::string, std::function<void(const std::string&, const std::string&)>> make_handlers(
      ExperimentConfig& c) {
    using S = const std::string&;
    auto syn = [this](auto f) {
      return [this, f](S k, S v) {
        synthetic_touched_ = true;
        f(k, v);
      };
    };
    return {
        {"dataset",
         [&, this](S, S v) {
           std::filesystem::path p(v);
           c.dataset = p.is_absolute() ? p : base_dir_ / p;
         }},
        {"synthetic.n", syn([this](S k, S v) { synthetic_.n = count(k, v); })},
        {"synthetic.d", syn([this](S k, S v) { synthetic_.d = count(k, v); })},
        {"synthetic.noise", syn([this](S k, S v) { synthetic_.noise.scale = real(k, v); })},
        {"synthetic.noise_model", syn([this](S k, S v) {
           if (v == "homoscedastic")
             synthetic_.noise.kind = NoiseKind::homoscedastic;
           else if (v == "heteroscedastic")
             synthetic_.noise.kind = NoiseKind::heteroscedastic;
           else
             throw ConfigError(k, "expected homoscedastic or heteroscedastic");
         })},
        {"synthetic.seed", syn([this](S k, S v) { synthetic_.seed = count(k, v); })},
        {"seed", [&](S k, S v) { c.seed = count(k, v); }},
        {"n_runs", [&](S k, S v) { c.n_runs = count(k, v); }},
        {"split",
         [&](S k, S v) {
           const auto f = reals(k, v);
           if (f.size() != 3) throw ConfigError(k, "expected three fractions train,validation,test");
           c.split = {f[0], f[1], f[2]};
         }},
        {"models",
         [&](S k, S v) {
           c.models.clear();
           for (const auto& m : split_list(v)) {
             if (m == "dnn")
               c.models.push_back(ModelKind::dnn);
             else if (m == "rf")
               c.models.push_back(ModelKind::rf);
             else
               throw ConfigError(k, "unknown model '" + m + "' (expected dnn, rf)");
           }
         }},
        {"dropout_p", [&](S k, S v) { c.dropout_p = reals(k, v); }},
        {"n_passes", [&](S k, S v) { c.n_passes = count(k, v); }},
        {"net.hidden_sizes",
         [&](S k, S v) {
           c.net.hidden_sizes.clear();
           for (const auto& w : split_list(v)) c.net.hidden_sizes.push_back(count(k, w));
         }},
        {"net.lr0", [&](S k, S v) { c.net.lr0 = real(k, v); }},
        {"net.decay_factor", [&](S k, S v) { c.net.decay_factor = real(k, v); }},
        {"net.decay_every", [&](S k, S v) { c.net.decay_every = count(k, v); }},
        {"net.cycle_length", [&](S k, S v) { c.net.cycle_length = count(k, v); }},
        {"net.max_epochs", [&](S k, S v) { c.net.max_epochs = count(k, v); }},
        {"net.patience", [&](S k, S v) { c.net.patience = count(k, v); }},
        {"net.momentum", [&](S k, S v) { c.net.momentum = real(k, v); }},
        {"net.batch_fraction", [&](S k, S v) { c.net.batch_fraction = real(k, v); }},
        {"net.rmse_gate", [&](S k, S v) { c.net.rmse_gate = real(k, v); }},
        {"forest.n_trees", [&](S k, S v) { c.forest.n_trees = count(k, v); }},
        {"forest.max_features",
         [&](S k, S v) {
           if (v == "all")
             c.forest.max_features.reset();
           else
             c.forest.max_features = count(k, v);
         }},
        {"forest.min_samples_split", [&](S k, S v) { c.forest.min_samples_split = count(k, v); }},
        {"forest.min_samples_leaf", [&](S k, S v) { c.forest.min_samples_leaf = count(k, v); }},
        {"forest.bootstrap", [&](S k, S v) { c.forest.bootstrap = boolean(k, v); }},
        {"cv_folds", [&](S k, S v) { c.cv_folds = count(k, v); }},
        {"cl_grid", [&](S k, S v) { c.cl_grid = reals(k, v); }},
        {"default_cl", [&](S k, S v) { c.default_cl = real(k, v); }},
        {"cutoffs", [&](S k, S v) { c.cutoffs = reals(k, v); }},
        {"retry_limit", [&](S k, S v) { c.retry_limit = count(k, v); }},
        {"output_dir", [&](S, S v) { c.output_dir = v; }},
        {"workers", [&](S k, S v) { c.workers = count(k, v); }},
        {"emit_plots", [&](S k, S v) { c.emit_plots = boolean(k, v); }},
        {"emit_pass_matrix", [&](S k, S v) { c.emit_pass_matrix = boolean(k, v); }},
        {"save_models", [&](S k, S v) { c.save_models = boolean(k, v); }},
        {"strict_calibration", [&](S k, S v) { c.strict_calibration = boolean(k, v); }},
    };
  }

  static void check(bool ok, const char* key, const std::string& message) {
    if (!ok) throw ConfigError(key, message);
  }

  static void validate(const ExperimentConfig& c) {
    check(c.dataset || c.synthetic, "dataset", "either dataset or synthetic.* must be given");
    check(!(c.dataset && c.synthetic), "dataset", "dataset and synthetic.* are mutually exclusive");
    if (c.synthetic) {
      check(c.synthetic->n >= 10, "synthetic.n", "must be >= 10");
      check(c.synthetic->d >= 1, "synthetic.d", "must be >= 1");
      check(c.synthetic->noise.scale >= 0, "synthetic.noise", "must be >= 0");
    }
    check(c.n_runs >= 1, "n_runs", "must be >= 1");
    check(c.split.train > 0 && c.split.validation > 0 && c.split.test > 0, "split", "fractions must be positive");
    check(std::abs(c.split.train + c.split.validation + c.split.test - 1.0) <= 1e-9, "split", "fractions must sum to 1");
    check(!c.models.empty(), "models", "at least one model is required");
    for (double p : c.dropout_p)
      check(p >= 0.0 && p < 1.0, "dropout_p", "each value must be in [0, 1), got " + format_double(p));
    check(!c.dropout_p.empty(), "dropout_p", "at least one value is required");
    check(c.n_passes >= 1, "n_passes", "must be >= 1");
    const auto& n = c.net;
    check(!n.hidden_sizes.empty(), "net.hidden_sizes", "at least one layer is required");
    for (auto w : n.hidden_sizes) check(w >= 1, "net.hidden_sizes", "widths must be >= 1");
    check(n.lr0 >= 0.0, "net.lr0", "must be >= 0");
    check(n.decay_factor > 0.0 && n.decay_factor < 1.0, "net.decay_factor", "must be in (0, 1)");
    check(n.decay_every >= 1, "net.decay_every", "must be >= 1");
    check(n.cycle_length >= 1, "net.cycle_length", "must be >= 1");
    check(n.max_epochs >= 1, "net.max_epochs", "must be >= 1");
    check(n.momentum >= 0.0 && n.momentum < 1.0, "net.momentum", "must be in [0, 1)");
    check(n.batch_fraction > 0.0 && n.batch_fraction <= 1.0, "net.batch_fraction", "must be in (0, 1]");
    check(n.rmse_gate > 0.0, "net.rmse_gate", "must be > 0");
    const auto& f = c.forest;
    check(f.n_trees >= 1, "forest.n_trees", "must be >= 1");
    check(!f.max_features || *f.max_features >= 1, "forest.max_features", "must be >= 1 or all");
    check(f.min_samples_split >= 2, "forest.min_samples_split", "must be >= 2");
    check(f.min_samples_leaf >= 1, "forest.min_samples_leaf", "must be >= 1");
    check(c.cv_folds >= 2, "cv_folds", "must be >= 2");
    check(!c.cl_grid.empty(), "cl_grid", "at least one level is required");
    for (double cl : c.cl_grid) check(cl > 0.0 && cl < 1.0, "cl_grid", "levels must be in (0, 1)");
    check(c.default_cl > 0.0 && c.default_cl < 1.0, "default_cl", "must be in (0, 1)");
    check(c.levels().size() >= 2, "cl_grid", "need at least two distinct levels for a calibration curve");
    check(!c.cutoffs.empty(), "cutoffs", "at least one cutoff is required");
    check(c.workers >= 1, "workers", "must be >= 1");
    check(!c.output_dir.empty(), "output_dir", "must not be empty");
  }

  std::filesystem::path base_dir_;
  SyntheticSpec synthetic_;
  bool synthetic_touched_ = false;
};

}  // namespace detail

/// Parses config text. Relative dataset paths resolve against `base_dir`.
inline ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = ".") {
  std::istringstream in(text);
  return detail::ConfigParser(base_dir).parse(in);
}

/// Parses a config file. Relative dataset paths resolve against the file's
/// directory.
inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  return detail::ConfigParser(path.parent_path()).parse(in);
}

inline const char* to_string(ModelKind m) { return m == ModelKind::dnn ? "dnn" : "rf"; }

}  // namespace dcp
