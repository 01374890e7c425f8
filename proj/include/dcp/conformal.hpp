#pragma once

// Normalized inductive conformal prediction on top of ensemble predictions.
//
//   alpha_i  = |y_i - yhat_i| / exp(sigma_i)          nonconformity
//   alpha_CL = k-th smallest alpha, k = ceil(CL (n+1)) (+inf when k > n)
//   interval = yhat_j -/+ exp(sigma_j) * alpha_CL
//
// sigma is always the ensemble standard deviation of the instance being
// scored: calibration sigma for alphas, test sigma for intervals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "dcp/data.hpp"
#include "dcp/ensemble.hpp"
#include "dcp/error.hpp"
#include "dcp/forest.hpp"
#include "dcp/net.hpp"
#include "dcp/rng.hpp"

namespace dcp {

inline constexpr double kMaxExponent = 700.0;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class CalibrationSource { dropout, rf_crossconformal };

inline const char* to_string(CalibrationSource s) {
  return s == CalibrationSource::dropout ? "dropout" : "rf_crossconformal";
}

class ConfidenceLevel {
 public:
  constexpr ConfidenceLevel() = default;
  explicit ConfidenceLevel(double cl) : value_(cl) {
    if (!(cl > 0.0 && cl < 1.0)) throw InvalidArgument("confidence level must be in (0, 1), got " + std::to_string(cl));
  }
  constexpr double value() const { return value_; }
  auto operator<=>(const ConfidenceLevel&) const = default;

 private:
  double value_ = 0.80;
};

struct CalibrationModel {
  std::vector<double> alphas;  // ascending
  CalibrationSource source = CalibrationSource::dropout;

  std::size_t size() const { return alphas.size(); }
};

struct PredictionInterval {
  double center = 0.0;
  double sigma = 0.0;
  double half_width = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double cl = 0.80;
  bool unbounded = false;

  double width() const { return upper - lower; }
};

inline double exp_sigma(double sigma) { return std::exp(std::min(sigma, kMaxExponent)); }

inline double nonconformity(double y, double y_hat, double sigma) {
  if (!std::isfinite(y) || !std::isfinite(y_hat) || !std::isfinite(sigma))
    throw InvalidArgument("nonconformity inputs must be finite");
  if (sigma < 0.0) throw InvalidArgument("sigma must be >= 0");
  return std::abs(y - y_hat) / exp_sigma(sigma);
}

inline CalibrationModel build_calibration(std::span<const double> y, const EnsemblePrediction& preds,
                                          CalibrationSource source) {
  if (y.size() != preds.size())
    throw InvalidArgument("calibration labels (" + std::to_string(y.size()) + ") and predictions (" +
                          std::to_string(preds.size()) + ") differ in length");
  detail::require(!y.empty(), "calibration set is empty");
  CalibrationModel cal;
  cal.source = source;
  cal.alphas.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) cal.alphas.push_back(nonconformity(y[i], preds.means[i], preds.stds[i]));
  std::stable_sort(cal.alphas.begin(), cal.alphas.end());
  return cal;
}

/// Rank k = ceil(cl * (n + 1)). Products within 1e-9 of an integer are taken
/// as that integer so that e.g. 0.7 * 10 gives 7, not 8.
inline std::size_t calibration_rank(double cl, std::size_t n) {
  const double v = cl * static_cast<double>(n + 1);
  const double nearest = std::round(v);
  const double k = std::abs(v - nearest) <= 1e-9 ? nearest : std::ceil(v);
  return static_cast<std::size_t>(std::max(k, 1.0));
}

/// k-th smallest alpha, or +inf when k exceeds the calibration size.
inline double alpha_at_level(const CalibrationModel& cal, ConfidenceLevel cl) {
  detail::require(!cal.alphas.empty(), "calibration model is empty");
  const auto k = calibration_rank(cl.value(), cal.size());
  return k <= cal.size() ? cal.alphas[k - 1] : kInf;
}

namespace detail {

/// Moves x outward by a few ulps so that an instance whose score equals
/// alpha_CL stays inside its own interval despite rounding in exp()*alpha.
inline constexpr int kOutwardUlps = 4;

inline double step_out(double x, double direction) {
  for (int i = 0; i < kOutwardUlps; ++i) x = std::nextafter(x, direction);
  return x;
}

}  // namespace detail

inline PredictionInterval predict_interval(double y_hat, double sigma, double alpha_cl, ConfidenceLevel cl) {
  if (!std::isfinite(y_hat)) throw InvalidArgument("point prediction must be finite");
  if (!std::isfinite(sigma) || sigma < 0.0) throw InvalidArgument("sigma must be finite and >= 0");
  if (std::isnan(alpha_cl) || alpha_cl < 0.0) throw InvalidArgument("alpha_cl must be >= 0");
  PredictionInterval pi;
  pi.center = y_hat;
  pi.sigma = sigma;
  pi.cl = cl.value();
  if (std::isinf(alpha_cl)) {
    pi.unbounded = true;
    pi.half_width = kInf;
    pi.lower = -kInf;
    pi.upper = kInf;
    return pi;
  }
  pi.half_width = exp_sigma(sigma) * alpha_cl;
  if (pi.half_width == 0.0) {
    pi.lower = pi.upper = y_hat;
  } else {
    pi.lower = detail::step_out(y_hat - pi.half_width, -kInf);
    pi.upper = detail::step_out(y_hat + pi.half_width, kInf);
  }
  return pi;
}

/// Intervals for every test instance at every requested level, plus the
/// ingredients that produced them.
struct ConformalResult {
  CalibrationModel calibration;
  EnsemblePrediction calibration_pred;
  EnsemblePrediction test_pred;
  std::vector<ConfidenceLevel> levels;
  std::vector<double> alpha_cl;                         // per level
  std::vector<std::vector<PredictionInterval>> intervals;  // [level][instance]

  const std::vector<PredictionInterval>& at(ConfidenceLevel cl) const {
    for (std::size_t i = 0; i < levels.size(); ++i)
      if (levels[i] == cl) return intervals[i];
    throw InvalidArgument("confidence level " + std::to_string(cl.value()) + " was not computed");
  }
};

inline std::vector<std::vector<PredictionInterval>> conformal_intervals(const CalibrationModel& cal,
                                                                        const EnsemblePrediction& test,
                                                                        const std::vector<ConfidenceLevel>& levels,
                                                                        std::vector<double>* alpha_out = nullptr) {
  std::vector<std::vector<PredictionInterval>> out;
  out.reserve(levels.size());
  for (auto cl : levels) {
    const double a = alpha_at_level(cal, cl);
    if (alpha_out) alpha_out->push_back(a);
    std::vector<PredictionInterval> row;
    row.reserve(test.size());
    for (std::size_t j = 0; j < test.size(); ++j) row.push_back(predict_interval(test.means[j], test.stds[j], a, cl));
    out.push_back(std::move(row));
  }
  return out;
}

/// Calibrates on (y_cal, cal_pred) and builds intervals for test_pred.
inline ConformalResult icp_from_ensembles(std::span<const double> y_cal, EnsemblePrediction cal_pred,
                                          EnsemblePrediction test_pred, const std::vector<ConfidenceLevel>& levels,
                                          CalibrationSource source) {
  detail::require(!levels.empty(), "no confidence levels requested");
  ConformalResult r;
  r.calibration = build_calibration(y_cal, cal_pred, source);
  r.levels = levels;
  r.intervals = conformal_intervals(r.calibration, test_pred, levels, &r.alpha_cl);
  r.calibration_pred = std::move(cal_pred);
  r.test_pred = std::move(test_pred);
  return r;
}

/// Dropout conformal prediction with a trained network: test-time dropout
/// ensembles on the calibration rows (stream passes_calibration) and on the
/// test rows (stream passes_test), then normalized ICP.
inline ConformalResult dropout_icp(const MLPModel& model, const Dataset& calibration, const Dataset& test,
                                   std::size_t n_passes, const std::vector<ConfidenceLevel>& levels,
                                   std::uint64_t seed, std::size_t threads = 1) {
  auto cal_pred = mc_dropout_predict(model, calibration.features(), n_passes,
                                     derive_seed(seed, Stream::passes_calibration), threads);
  auto test_pred =
      mc_dropout_predict(model, test.features(), n_passes, derive_seed(seed, Stream::passes_test), threads);
  return icp_from_ensembles(calibration.labels(), std::move(cal_pred), std::move(test_pred), levels,
                            CalibrationSource::dropout);
}

struct CrossConformalResult {
  ConformalResult conformal;
  OofCalibrationData oof;
  Forest forest;  // fit on all of train; supplies the test ensemble
};

/// Random Forest cross-conformal: alphas from k-fold out-of-fold predictions
/// on `train`; test mean and sigma from one forest fit on all of `train`.
inline CrossConformalResult rf_ccp(const Dataset& train, const Dataset& test, const ForestConfig& config,
                                   std::size_t k, const std::vector<ConfidenceLevel>& levels, std::uint64_t seed) {
  detail::require(train.n_features() == test.n_features(), "train and test feature dimensions differ");
  CrossConformalResult out;
  out.oof = oof_calibration(train, config, k, seed);
  EnsemblePrediction cal_pred;
  cal_pred.means = out.oof.y_hat;
  cal_pred.stds = out.oof.sigma;
  cal_pred.n_members = config.n_trees;
  out.forest = fit_forest(train, config, derive_seed(seed, Stream::forest_final));
  auto test_pred = forest_predict(out.forest, test.features());
  out.conformal = icp_from_ensembles(out.oof.y, std::move(cal_pred), std::move(test_pred), levels,
                                     CalibrationSource::rf_crossconformal);
  return out;
}

// ---------------------------------------------------------------------------
// Tables

/// `id,y,y_hat,sigma,alpha`, rows sorted by alpha (stable).
inline void write_calibration_dump(const std::filesystem::path& path, const std::vector<std::string>& ids,
                                   std::span<const double> y, const EnsemblePrediction& preds) {
  detail::require(ids.size() == y.size() && y.size() == preds.size(), "calibration dump inputs differ in length");
  std::vector<double> alpha(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) alpha[i] = nonconformity(y[i], preds.means[i], preds.stds[i]);
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return alpha[a] < alpha[b]; });

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "id,y,y_hat,sigma,alpha\n";
  for (auto i : order)
    out << ids[i] << ',' << detail::format_double(y[i]) << ',' << detail::format_double(preds.means[i]) << ','
        << detail::format_double(preds.stds[i]) << ',' << detail::format_double(alpha[i]) << '\n';
}

/// `id,cl,y_hat,sigma,lower,upper,unbounded`, grouped by level.
inline void write_interval_table(const std::filesystem::path& path, const std::vector<std::string>& ids,
                                 const ConformalResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "id,cl,y_hat,sigma,lower,upper,unbounded\n";
  for (std::size_t l = 0; l < result.levels.size(); ++l) {
    const auto& row = result.intervals[l];
    detail::require(row.size() == ids.size(), "interval count does not match id count");
    for (std::size_t j = 0; j < row.size(); ++j) {
      const auto& pi = row[j];
      out << ids[j] << ',' << detail::format_double(pi.cl) << ',' << detail::format_double(pi.center) << ','
          << detail::format_double(pi.sigma) << ',' << detail::format_real_token(pi.lower) << ','
          << detail::format_real_token(pi.upper) << ',' << (pi.unbounded ? 1 : 0) << '\n';
    }
  }
}

}  // namespace dcp
