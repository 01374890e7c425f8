#pragma once

// Feedforward ReLU regressor with inverted dropout on every hidden layer,
// trained by mini-batch SGD with Nesterov momentum, a cyclical step-decay
// learning rate and early stopping on validation RMSE.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dcp/data.hpp"
#include "dcp/error.hpp"
#include "dcp/rng.hpp"

namespace dcp {

using RowVector = Eigen::RowVectorXd;
/// Keep indicators (1 = kept, 0 = dropped), one row per instance.
using Mask = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NetConfig {
  std::vector<std::size_t> hidden_sizes{1000, 1000, 100, 10};
  double dropout_p = 0.1;
  double lr0 = 0.005;
  double decay_factor = 0.6;
  std::size_t decay_every = 200;
  std::size_t cycle_length = 1000;
  std::size_t max_epochs = 4000;
  std::size_t patience = 300;
  double momentum = 0.9;
  double batch_fraction = 0.15;
  double rmse_gate = 1.2;

  void validate() const {
    detail::require(!hidden_sizes.empty(), "hidden_sizes must name at least one layer");
    for (auto w : hidden_sizes) detail::require(w >= 1, "hidden layer widths must be >= 1");
    detail::require(dropout_p >= 0.0 && dropout_p < 1.0, "dropout_p must be in [0, 1)");
    detail::require(batch_fraction > 0.0 && batch_fraction <= 1.0, "batch_fraction must be in (0, 1]");
    detail::require(lr0 >= 0.0 && std::isfinite(lr0), "lr0 must be finite and >= 0");
    detail::require(decay_factor > 0.0 && decay_factor < 1.0, "decay_factor must be in (0, 1)");
    detail::require(decay_every >= 1, "decay_every must be >= 1");
    detail::require(cycle_length >= 1, "cycle_length must be >= 1");
    detail::require(max_epochs >= 1, "max_epochs must be >= 1");
    detail::require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
    detail::require(std::isfinite(rmse_gate) && rmse_gate > 0.0, "rmse_gate must be > 0");
  }

  bool operator==(const NetConfig&) const = default;
};

struct DenseLayer {
  Matrix weights;  // fan_in x fan_out
  RowVector bias;  // fan_out
};

struct MLPModel {
  std::size_t input_dim = 0;
  NetConfig config;
  std::vector<DenseLayer> layers;  // hidden layers then the scalar output layer
  std::size_t trained_epochs = 0;
  double best_val_rmse = std::numeric_limits<double>::quiet_NaN();

  std::size_t n_hidden() const { return layers.size() - 1; }
};

enum class StopReason { early_stop, max_epochs };

struct EpochRecord {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double val_rmse = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  StopReason stop_reason = StopReason::max_epochs;
  std::size_t best_epoch = 0;
  bool converged = false;
};

/// Per hidden layer keep masks for a batch of instances.
struct DropoutMasks {
  std::vector<Mask> layers;
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<RowVector> biases;
  double loss = 0.0;  // batch mean squared error
};

/// Cyclical step decay: lr0 * decay^floor((epoch mod cycle) / decay_every).
inline double lr_at_epoch(const NetConfig& config, std::size_t epoch) {
  const std::size_t steps = (epoch % config.cycle_length) / config.decay_every;
  double lr = config.lr0;
  for (std::size_t s = 0; s < steps; ++s) lr *= config.decay_factor;
  return lr;
}

/// He-style init: weights ~ N(0, 2/fan_in), zero biases.
inline MLPModel init_mlp(std::size_t input_dim, const NetConfig& config, std::uint64_t seed) {
  detail::require(input_dim >= 1, "input_dim must be >= 1");
  config.validate();
  MLPModel model;
  model.input_dim = input_dim;
  model.config = config;
  Rng rng(seed);
  std::size_t fan_in = input_dim;
  auto add_layer = [&](std::size_t fan_out) {
    DenseLayer layer;
    layer.weights.resize(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = sd * rng.normal();
    layer.bias = RowVector::Zero(static_cast<Eigen::Index>(fan_out));
    model.layers.push_back(std::move(layer));
    fan_in = fan_out;
  };
  for (auto w : config.hidden_sizes) add_layer(w);
  add_layer(1);
  return model;
}

/// Draws keep masks instance by instance, layer by layer, unit by unit.
inline DropoutMasks draw_masks(const MLPModel& model, std::size_t n_instances, Rng& rng) {
  DropoutMasks masks;
  const double keep = 1.0 - model.config.dropout_p;
  const auto n = static_cast<Eigen::Index>(n_instances);
  for (std::size_t l = 0; l < model.n_hidden(); ++l)
    masks.layers.emplace_back(n, model.layers[l].weights.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    for (auto& m : masks.layers)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform() < keep ? 1.0 : 0.0;
  return masks;
}

namespace detail {

struct ForwardCache {
  std::vector<Matrix> inputs;          // input to each layer (after dropout)
  std::vector<Matrix> pre_activations;  // hidden layers only
  Vector output;
};

inline void check_input(const MLPModel& model, Eigen::Index cols) {
  if (static_cast<std::size_t>(cols) != model.input_dim)
    throw InvalidArgument("feature dimension " + std::to_string(cols) + " does not match model input_dim " +
                          std::to_string(model.input_dim));
}

inline ForwardCache forward_cached(const MLPModel& model, const Matrix& x, const DropoutMasks* masks) {
  check_input(model, x.cols());
  if (masks) {
    if (masks->layers.size() != model.n_hidden())
      throw InvalidArgument("mask count does not match hidden layer count");
    for (std::size_t l = 0; l < masks->layers.size(); ++l)
      if (masks->layers[l].rows() != x.rows() || masks->layers[l].cols() != model.layers[l].weights.cols())
        throw InvalidArgument("mask shape does not match layer " + std::to_string(l));
  }
  const double scale = 1.0 / (1.0 - model.config.dropout_p);
  ForwardCache cache;
  Matrix a = x;
  for (std::size_t l = 0; l < model.n_hidden(); ++l) {
    const auto& layer = model.layers[l];
    Matrix z = a * layer.weights;
    z.rowwise() += layer.bias;
    Matrix h = z.cwiseMax(0.0);
    if (masks) h.array() *= masks->layers[l] * scale;
    cache.inputs.push_back(std::move(a));
    cache.pre_activations.push_back(std::move(z));
    a = std::move(h);
  }
  const auto& out = model.layers.back();
  cache.output = (a * out.weights).col(0).array() + out.bias(0);
  cache.inputs.push_back(std::move(a));
  return cache;
}

}  // namespace detail

/// Batch prediction. With masks, each row uses its own hidden-layer masks.
inline Vector predict(const MLPModel& model, const Matrix& x, const DropoutMasks* masks = nullptr) {
  return detail::forward_cached(model, x, masks).output;
}

/// Batch prediction with freshly drawn masks.
inline Vector predict_stochastic(const MLPModel& model, const Matrix& x, Rng& mask_source) {
  const auto masks = draw_masks(model, static_cast<std::size_t>(x.rows()), mask_source);
  return predict(model, x, &masks);
}

struct ForwardResult {
  double prediction = 0.0;
  std::vector<std::vector<bool>> masks;  // empty in deterministic mode
};

/// Deterministic forward pass for one instance.
inline ForwardResult forward(const MLPModel& model, std::span<const double> x) {
  Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  return {predict(model, row)(0), {}};
}

/// Stochastic forward pass for one instance; masks drawn from `mask_source`.
inline ForwardResult forward(const MLPModel& model, std::span<const double> x, Rng& mask_source) {
  Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  detail::check_input(model, row.cols());
  const auto masks = draw_masks(model, 1, mask_source);
  ForwardResult result{predict(model, row, &masks)(0), {}};
  for (const auto& m : masks.layers) {
    std::vector<bool> keep(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) keep[static_cast<std::size_t>(j)] = m(0, j) != 0.0;
    result.masks.push_back(std::move(keep));
  }
  return result;
}

/// Exact gradients of the batch mean squared error with the given masks held
/// fixed (nullptr = no dropout).
inline Gradients compute_gradients(const MLPModel& model, const Matrix& x, std::span<const double> y,
                                   const DropoutMasks* masks) {
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw InvalidArgument("batch features and labels differ in length");
  detail::require(x.rows() >= 1, "empty batch");
  const auto cache = detail::forward_cached(model, x, masks);
  const auto n = static_cast<double>(x.rows());
  const Eigen::Map<const Vector> target(y.data(), static_cast<Eigen::Index>(y.size()));
  const Vector residual = cache.output - target;

  Gradients g;
  g.loss = residual.squaredNorm() / n;
  const std::size_t n_layers = model.layers.size();
  g.weights.resize(n_layers);
  g.biases.resize(n_layers);

  Matrix delta = (2.0 / n) * residual;  // n x 1
  const double scale = 1.0 / (1.0 - model.config.dropout_p);
  for (std::size_t l = n_layers; l-- > 0;) {
    g.weights[l] = cache.inputs[l].transpose() * delta;
    g.biases[l] = delta.colwise().sum();
    if (l == 0) break;
    Matrix upstream = delta * model.layers[l].weights.transpose();
    if (masks) upstream.array() *= masks->layers[l - 1] * scale;
    upstream.array() *= (cache.pre_activations[l - 1].array() > 0.0).cast<double>();
    delta = std::move(upstream);
  }
  return g;
}

inline double rmse_of(const Vector& predictions, std::span<const double> y) {
  double sse = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = predictions(static_cast<Eigen::Index>(i)) - y[i];
    sse += r * r;
  }
  return std::sqrt(sse / static_cast<double>(y.size()));
}

struct TrainResult {
  MLPModel model;
  TrainingLog log;
};

/// Fits weights on `train_set`; `val_set` drives early stopping and the
/// returned model holds the best-validation-RMSE parameters.
inline TrainResult train(const Dataset& train_set, const Dataset& val_set, const NetConfig& config,
                         std::uint64_t seed) {
  config.validate();
  detail::require(train_set.n_features() == val_set.n_features(),
                  "train and validation feature dimensions differ");

  MLPModel model = init_mlp(train_set.n_features(), config, derive_seed(seed, Stream::net_init));
  Rng rng(derive_seed(seed, Stream::net_train));

  const std::size_t n = train_set.size();
  const auto batch_size = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(config.batch_fraction * static_cast<double>(n) - 1e-9)));
  const std::size_t bs = std::max<std::size_t>(batch_size, 1);

  std::vector<Matrix> vel_w;
  std::vector<RowVector> vel_b;
  for (const auto& layer : model.layers) {
    vel_w.push_back(Matrix::Zero(layer.weights.rows(), layer.weights.cols()));
    vel_b.push_back(RowVector::Zero(layer.bias.size()));
  }

  std::vector<Index> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TrainingLog log;
  double best = std::numeric_limits<double>::infinity();
  std::vector<DenseLayer> best_layers = model.layers;
  const double mu = config.momentum;

  Matrix xb;
  std::vector<double> yb;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = lr_at_epoch(config, epoch);
    rng.shuffle(std::span<Index>(order));
    double sse = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      const auto m = static_cast<Eigen::Index>(end - start);
      xb.resize(m, static_cast<Eigen::Index>(train_set.n_features()));
      yb.resize(static_cast<std::size_t>(m));
      for (std::size_t r = start; r < end; ++r) {
        xb.row(static_cast<Eigen::Index>(r - start)) = train_set.features().row(static_cast<Eigen::Index>(order[r]));
        yb[r - start] = train_set.labels()[order[r]];
      }
      const auto masks = draw_masks(model, static_cast<std::size_t>(m), rng);
      const auto g = compute_gradients(model, xb, yb, &masks);
      sse += g.loss * static_cast<double>(m);
      // PyTorch-style Nesterov: v = mu*v + g; p -= lr*(g + mu*v)
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        vel_w[l] = mu * vel_w[l] + g.weights[l];
        vel_b[l] = mu * vel_b[l] + g.biases[l];
        model.layers[l].weights -= lr * (g.weights[l] + mu * vel_w[l]);
        model.layers[l].bias -= lr * (g.biases[l] + mu * vel_b[l]);
      }
    }
    const double train_loss = sse / static_cast<double>(n);
    if (!std::isfinite(train_loss))
      throw TrainingDiverged("training loss became non-finite at epoch " + std::to_string(epoch));

    const double val_rmse = rmse_of(predict(model, val_set.features()), val_set.labels());
    if (!std::isfinite(val_rmse))
      throw TrainingDiverged("validation RMSE became non-finite at epoch " + std::to_string(epoch));
    log.epochs.push_back({epoch, lr, train_loss, val_rmse});
    if (val_rmse < best) {
      best = val_rmse;
      best_layers = model.layers;
      log.best_epoch = epoch;
    }
    if (epoch - log.best_epoch >= config.patience) {
      log.stop_reason = StopReason::early_stop;
      break;
    }
  }
  if (log.stop_reason != StopReason::early_stop) log.stop_reason = StopReason::max_epochs;

  model.layers = std::move(best_layers);
  model.trained_epochs = log.epochs.size();
  model.best_val_rmse = best;
  log.converged = best < config.rmse_gate;
  return {std::move(model), std::move(log)};
}

// ---------------------------------------------------------------------------
// Serialization: line-oriented text, shortest round-trip decimals.

inline constexpr const char* kModelMagic = "dcp-mlp";
inline constexpr int kModelVersion = 1;

namespace detail {

inline void write_net_config(std::ostream& out, const NetConfig& c) {
  out << "hidden_sizes " << c.hidden_sizes.size();
  for (auto w : c.hidden_sizes) out << ' ' << w;
  out << '\n'
      << "dropout_p " << format_double(c.dropout_p) << '\n'
      << "lr0 " << format_double(c.lr0) << '\n'
      << "decay_factor " << format_double(c.decay_factor) << '\n'
      << "decay_every " << c.decay_every << '\n'
      << "cycle_length " << c.cycle_length << '\n'
      << "max_epochs " << c.max_epochs << '\n'
      << "patience " << c.patience << '\n'
      << "momentum " << format_double(c.momentum) << '\n'
      << "batch_fraction " << format_double(c.batch_fraction) << '\n'
      << "rmse_gate " << format_double(c.rmse_gate) << '\n';
}

/// Token reader over a whitespace-separated stream with keyword checks.
class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) throw ParseError("unexpected end of model file");
    return w;
  }
  void expect(const std::string& keyword) {
    const auto w = word();
    if (w != keyword) throw ParseError("model file: expected '" + keyword + "', found '" + w + "'");
  }
  double real() {
    const auto w = word();
    double v;
    if (w == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (w == "inf") return std::numeric_limits<double>::infinity();
    if (!parse_finite(w, v)) throw ParseError("model file: bad number '" + w + "'");
    return v;
  }
  std::size_t count() {
    const auto w = word();
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
    if (ec != std::errc() || ptr != w.data() + w.size()) throw ParseError("model file: bad count '" + w + "'");
    return v;
  }
  std::uint64_t u64() { return count(); }

 private:
  std::istream& in_;
};

inline NetConfig read_net_config(TokenReader& r) {
  NetConfig c;
  r.expect("hidden_sizes");
  c.hidden_sizes.resize(r.count());
  for (auto& w : c.hidden_sizes) w = r.count();
  r.expect("dropout_p");
  c.dropout_p = r.real();
  r.expect("lr0");
  c.lr0 = r.real();
  r.expect("decay_factor");
  c.decay_factor = r.real();
  r.expect("decay_every");
  c.decay_every = r.count();
  r.expect("cycle_length");
  c.cycle_length = r.count();
  r.expect("max_epochs");
  c.max_epochs = r.count();
  r.expect("patience");
  c.patience = r.count();
  r.expect("momentum");
  c.momentum = r.real();
  r.expect("batch_fraction");
  c.batch_fraction = r.real();
  r.expect("rmse_gate");
  c.rmse_gate = r.real();
  return c;
}

inline std::string format_real_token(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return format_double(v);
}

}  // namespace detail

inline void save_model(const MLPModel& model, std::ostream& out) {
  out << kModelMagic << ' ' << kModelVersion << '\n';
  out << "input_dim " << model.input_dim << '\n';
  detail::write_net_config(out, model.config);
  out << "trained_epochs " << model.trained_epochs << '\n';
  out << "best_val_rmse " << detail::format_real_token(model.best_val_rmse) << '\n';
  out << "layers " << model.layers.size() << '\n';
  for (const auto& layer : model.layers) {
    out << "weights " << layer.weights.rows() << ' ' << layer.weights.cols() << '\n';
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
        out << (c ? " " : "") << detail::format_double(layer.weights(r, c));
      out << '\n';
    }
    out << "bias " << layer.bias.size() << '\n';
    for (Eigen::Index c = 0; c < layer.bias.size(); ++c) out << (c ? " " : "") << detail::format_double(layer.bias(c));
    out << '\n';
  }
}

inline MLPModel load_model(std::istream& in) {
  detail::TokenReader r(in);
  r.expect(kModelMagic);
  if (r.count() != static_cast<std::size_t>(kModelVersion)) throw ParseError("unsupported model version");
  MLPModel model;
  r.expect("input_dim");
  model.input_dim = r.count();
  model.config = detail::read_net_config(r);
  r.expect("trained_epochs");
  model.trained_epochs = r.count();
  r.expect("best_val_rmse");
  model.best_val_rmse = r.real();
  r.expect("layers");
  const auto n_layers = r.count();
  if (n_layers != model.config.hidden_sizes.size() + 1) throw ParseError("model file: layer count mismatch");
  std::size_t fan_in = model.input_dim;
  for (std::size_t l = 0; l < n_layers; ++l) {
    DenseLayer layer;
    r.expect("weights");
    const auto rows = r.count();
    const auto cols = r.count();
    const std::size_t expected_cols = l + 1 < n_layers ? model.config.hidden_sizes[l] : 1;
    if (rows != fan_in || cols != expected_cols) throw ParseError("model file: layer shapes do not chain");
    layer.weights.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < layer.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weights.cols(); ++j) layer.weights(i, j) = r.real();
    r.expect("bias");
    if (r.count() != cols) throw ParseError("model file: bias size mismatch");
    layer.bias.resize(static_cast<Eigen::Index>(cols));
    for (Eigen::Index j = 0; j < layer.bias.size(); ++j) layer.bias(j) = r.real();
    model.layers.push_back(std::move(layer));
    fan_in = cols;
  }
  return model;
}

inline void save_model(const MLPModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model '" + path.string() + "'");
  save_model(model, out);
}

inline MLPModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model '" + path.string() + "'");
  return load_model(in);
}

}  // namespace dcp
