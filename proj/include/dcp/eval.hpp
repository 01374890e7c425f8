#pragma once

// Validity, efficiency, accuracy and retrieval metrics for conformal
// predictors, and their aggregation over repeated runs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcp/conformal.hpp"
#include "dcp/error.hpp"

namespace dcp {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline double rmse(std::span<const double> y_true, std::span<const double> y_hat) {
  if (y_true.size() != y_hat.size()) throw InvalidArgument("rmse: length mismatch");
  detail::require(!y_true.empty(), "rmse of empty sequences");
  double sse = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) sse += (y_true[i] - y_hat[i]) * (y_true[i] - y_hat[i]);
  return std::sqrt(sse / static_cast<double>(y_true.size()));
}

/// Closed-interval coverage; unbounded intervals always cover.
inline bool covers(const PredictionInterval& pi, double y) {
  return pi.unbounded || (pi.lower <= y && y <= pi.upper);
}

inline double coverage(std::span<const PredictionInterval> intervals, std::span<const double> y_true) {
  if (intervals.size() != y_true.size()) throw InvalidArgument("coverage: length mismatch");
  detail::require(!y_true.empty(), "coverage of empty sequences");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) hit += covers(intervals[i], y_true[i]) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(y_true.size());
}

/// Pearson correlation; nullopt when either side has zero variance or n < 2.
inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("pearson: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

struct CurvePoint {
  double cl = 0.0;
  double coverage = 0.0;
};

struct CalibrationCurve {
  std::vector<CurvePoint> points;
  std::optional<double> r_squared;  // absent for a degenerate grid or constant coverage
};

/// Coverage per level and the squared Pearson correlation of (cl, coverage).
inline CalibrationCurve calibration_curve(const std::vector<std::vector<PredictionInterval>>& per_level,
                                          std::span<const double> y_true, const std::vector<ConfidenceLevel>& grid) {
  if (per_level.size() != grid.size()) throw InvalidArgument("calibration_curve: one interval set per level required");
  if (grid.size() < 2) throw InvalidArgument("calibration_curve: grid needs at least 2 levels");
  CalibrationCurve curve;
  std::vector<double> cls, covs;
  for (std::size_t l = 0; l < grid.size(); ++l) {
    const double c = coverage(per_level[l], y_true);
    curve.points.push_back({grid[l].value(), c});
    cls.push_back(grid[l].value());
    covs.push_back(c);
  }
  if (const auto r = pearson(cls, covs)) curve.r_squared = *r * *r;
  return curve;
}

struct WidthStats {
  double cl = 0.0;
  std::size_t n = 0;
  std::size_t n_unbounded = 0;
  double fraction_unbounded = 0.0;
  // Over finite widths; NaN when every interval is unbounded.
  double mean = kNaN;
  double median = kNaN;
  double q1 = kNaN;
  double q3 = kNaN;
  double min = kNaN;
  double max = kNaN;
};

namespace detail {

/// Linear-interpolation quantile on sorted data (median of an even count is
/// the mean of the middle two).
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

inline WidthStats width_stats(std::span<const PredictionInterval> intervals) {
  detail::require(!intervals.empty(), "width_stats of no intervals");
  WidthStats s;
  s.cl = intervals.front().cl;
  s.n = intervals.size();
  std::vector<double> widths;
  for (const auto& pi : intervals) {
    if (pi.unbounded)
      ++s.n_unbounded;
    else
      widths.push_back(pi.upper - pi.lower);
  }
  s.fraction_unbounded = static_cast<double>(s.n_unbounded) / static_cast<double>(s.n);
  if (widths.empty()) return s;
  std::sort(widths.begin(), widths.end());
  double sum = 0.0;
  for (double w : widths) sum += w;
  s.mean = sum / static_cast<double>(widths.size());
  s.median = detail::sorted_quantile(widths, 0.5);
  s.q1 = detail::sorted_quantile(widths, 0.25);
  s.q3 = detail::sorted_quantile(widths, 0.75);
  s.min = widths.front();
  s.max = widths.back();
  return s;
}

enum class ScreenCategory { uncertain, true_positive, false_positive, false_negative, true_negative };

inline const char* to_string(ScreenCategory c) {
  switch (c) {
    case ScreenCategory::uncertain:
      return "uncertain";
    case ScreenCategory::true_positive:
      return "true_positive";
    case ScreenCategory::false_positive:
      return "false_positive";
    case ScreenCategory::false_negative:
      return "false_negative";
    case ScreenCategory::true_negative:
      return "true_negative";
  }
  return "?";
}

/// Virtual-screening call for one compound. Strict comparisons throughout:
/// lower > cutoff is a positive call, upper < cutoff a negative call,
/// anything touching the cutoff is uncertain.
inline ScreenCategory screen_classify(const PredictionInterval& pi, double y_true, double cutoff) {
  const bool active = y_true > cutoff;
  if (!pi.unbounded && pi.lower > cutoff) return active ? ScreenCategory::true_positive : ScreenCategory::false_positive;
  if (!pi.unbounded && pi.upper < cutoff) return active ? ScreenCategory::false_negative : ScreenCategory::true_negative;
  return ScreenCategory::uncertain;
}

struct RetrievalCounts {
  double cutoff = 0.0;
  std::size_t n_test = 0;
  std::size_t uncertain = 0;
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  std::size_t true_negative = 0;
  double tp_percent = 0.0;               // of all test instances
  double tp_percent_of_positive_calls = kNaN;  // of TP + FP; NaN with no positive calls
};

inline const std::vector<double>& default_cutoffs() {
  static const std::vector<double> cutoffs{5.0, 6.0, 7.0, 8.0, 9.0};
  return cutoffs;
}

inline std::vector<RetrievalCounts> screen_counts(std::span<const PredictionInterval> intervals,
                                                  std::span<const double> y_true, std::span<const double> cutoffs) {
  if (intervals.size() != y_true.size()) throw InvalidArgument("screen_counts: length mismatch");
  detail::require(!intervals.empty(), "screen_counts of no intervals");
  std::vector<RetrievalCounts> out;
  for (double cutoff : cutoffs) {
    RetrievalCounts c;
    c.cutoff = cutoff;
    c.n_test = intervals.size();
    for (std::size_t i = 0; i < intervals.size(); ++i) {
      switch (screen_classify(intervals[i], y_true[i], cutoff)) {
        case ScreenCategory::uncertain: ++c.uncertain; break;
        case ScreenCategory::true_positive: ++c.true_positive; break;
        case ScreenCategory::false_positive: ++c.false_positive; break;
        case ScreenCategory::false_negative: ++c.false_negative; break;
        case ScreenCategory::true_negative: ++c.true_negative; break;
      }
    }
    c.tp_percent = 100.0 * static_cast<double>(c.true_positive) / static_cast<double>(c.n_test);
    const auto calls = c.true_positive + c.false_positive;
    if (calls > 0) c.tp_percent_of_positive_calls = 100.0 * static_cast<double>(c.true_positive) / static_cast<double>(calls);
    out.push_back(c);
  }
  return out;
}

/// Raw (sigma, |error|) pairs of the test set and their Pearson correlation.
struct VarianceError {
  std::vector<double> sigma;
  std::vector<double> abs_error;
  std::optional<double> correlation;
};

inline VarianceError variance_error(const EnsemblePrediction& test_pred, std::span<const double> y_true) {
  if (test_pred.size() != y_true.size()) throw InvalidArgument("variance_error: length mismatch");
  VarianceError ve;
  ve.sigma = test_pred.stds;
  for (std::size_t i = 0; i < y_true.size(); ++i) ve.abs_error.push_back(std::abs(y_true[i] - test_pred.means[i]));
  ve.correlation = pearson(ve.sigma, ve.abs_error);
  return ve;
}

struct EvaluationReport {
  std::string model;  // e.g. "dnn_p0.25", "rf"
  std::size_t n_calibration = 0;
  std::size_t n_test = 0;
  double default_cl = 0.80;
  double alpha_default_cl = kNaN;
  double rmse = kNaN;
  CalibrationCurve curve;
  std::vector<WidthStats> widths;           // one per grid level
  std::vector<RetrievalCounts> retrieval;   // at default_cl, one per cutoff
  VarianceError variance_error;
};

/// Full report for one conformal result. `default_cl` must be among the
/// computed levels.
inline EvaluationReport evaluate(const std::string& model, const ConformalResult& result,
                                 std::span<const double> y_test, ConfidenceLevel default_cl,
                                 std::span<const double> cutoffs) {
  EvaluationReport r;
  r.model = model;
  r.n_calibration = result.calibration.size();
  r.n_test = y_test.size();
  r.default_cl = default_cl.value();
  r.rmse = rmse(y_test, result.test_pred.means);
  r.curve = calibration_curve(result.intervals, y_test, result.levels);
  for (const auto& level : result.intervals) r.widths.push_back(width_stats(level));
  for (std::size_t l = 0; l < result.levels.size(); ++l)
    if (result.levels[l] == default_cl) r.alpha_default_cl = result.alpha_cl[l];
  r.retrieval = screen_counts(result.at(default_cl), y_test, cutoffs);
  r.variance_error = variance_error(result.test_pred, y_test);
  return r;
}

// ---------------------------------------------------------------------------
// Aggregation over runs

struct MeanStd {
  double mean = kNaN;
  double std = kNaN;  // population standard deviation across runs
  std::size_t n = 0;  // runs that contributed a value
};

/// Named scalar metrics of one report. Names are stable and sorted.
inline std::map<std::string, double> report_metrics(const EvaluationReport& r) {
  std::map<std::string, double> m;
  auto cl_tag = [](double cl) { return detail::format_double(cl); };
  m["rmse"] = r.rmse;
  m["r_squared"] = r.curve.r_squared.value_or(kNaN);
  m["alpha_default_cl"] = r.alpha_default_cl;
  m["sigma_error_correlation"] = r.variance_error.correlation.value_or(kNaN);
  for (const auto& p : r.curve.points) m["coverage@" + cl_tag(p.cl)] = p.coverage;
  for (const auto& w : r.widths) {
    const auto tag = cl_tag(w.cl);
    m["width_mean@" + tag] = w.mean;
    m["width_median@" + tag] = w.median;
    m["width_q1@" + tag] = w.q1;
    m["width_q3@" + tag] = w.q3;
    m["width_min@" + tag] = w.min;
    m["width_max@" + tag] = w.max;
    m["fraction_unbounded@" + tag] = w.fraction_unbounded;
  }
  for (const auto& c : r.retrieval) {
    const auto tag = "retrieval@" + detail::format_double(c.cutoff) + ".";
    m[tag + "uncertain"] = static_cast<double>(c.uncertain);
    m[tag + "true_positive"] = static_cast<double>(c.true_positive);
    m[tag + "false_positive"] = static_cast<double>(c.false_positive);
    m[tag + "false_negative"] = static_cast<double>(c.false_negative);
    m[tag + "true_negative"] = static_cast<double>(c.true_negative);
    m[tag + "tp_percent"] = c.tp_percent;
    m[tag + "tp_percent_of_positive_calls"] = c.tp_percent_of_positive_calls;
  }
  return m;
}

struct AggregateSummary {
  std::string model;
  std::size_t n_runs = 0;
  std::map<std::string, MeanStd> metrics;
};

/// Mean and population standard deviation of every metric across runs. NaN
/// values (absent metrics) are skipped per metric.
inline AggregateSummary aggregate_runs(std::span<const EvaluationReport> reports) {
  detail::require(!reports.empty(), "aggregate_runs needs at least one report");
  const auto& first = reports.front();
  auto grid_of = [](const EvaluationReport& r) {
    std::vector<double> g;
    for (const auto& p : r.curve.points) g.push_back(p.cl);
    return g;
  };
  auto cutoffs_of = [](const EvaluationReport& r) {
    std::vector<double> c;
    for (const auto& x : r.retrieval) c.push_back(x.cutoff);
    return c;
  };
  for (const auto& r : reports) {
    if (grid_of(r) != grid_of(first) || cutoffs_of(r) != cutoffs_of(first) || r.default_cl != first.default_cl)
      throw InvalidArgument("aggregate_runs: reports have mismatched grids or cutoffs");
  }

  std::map<std::string, std::vector<double>> values;
  for (const auto& r : reports)
    for (const auto& [name, v] : report_metrics(r))
      if (!std::isnan(v)) values[name].push_back(v);
  AggregateSummary out;
  out.model = first.model;
  out.n_runs = reports.size();
  for (const auto& [name, _] : report_metrics(first)) out.metrics[name] = MeanStd{};
  for (const auto& [name, vs] : values) {
    const auto s = pass_stats(vs);
    out.metrics[name] = {s.mean, s.std, vs.size()};
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double number_or_nan(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace detail

inline nlohmann::json to_json(const EvaluationReport& r) {
  using nlohmann::json;
  using detail::number_or_null;
  json j;
  j["model"] = r.model;
  j["n_calibration"] = r.n_calibration;
  j["n_test"] = r.n_test;
  j["default_cl"] = r.default_cl;
  j["alpha_default_cl"] = number_or_null(r.alpha_default_cl);
  j["rmse"] = number_or_null(r.rmse);
  json points = json::array();
  for (const auto& p : r.curve.points) points.push_back({{"cl", p.cl}, {"coverage", p.coverage}});
  j["calibration_curve"] = {{"points", points},
                            {"r_squared", r.curve.r_squared ? json(*r.curve.r_squared) : json(nullptr)}};
  json widths = json::array();
  for (const auto& w : r.widths)
    widths.push_back({{"cl", w.cl},
                      {"n", w.n},
                      {"n_unbounded", w.n_unbounded},
                      {"fraction_unbounded", w.fraction_unbounded},
                      {"mean", number_or_null(w.mean)},
                      {"median", number_or_null(w.median)},
                      {"q1", number_or_null(w.q1)},
                      {"q3", number_or_null(w.q3)},
                      {"min", number_or_null(w.min)},
                      {"max", number_or_null(w.max)}});
  j["width_stats"] = widths;
  json retrieval = json::array();
  for (const auto& c : r.retrieval)
    retrieval.push_back({{"cutoff", c.cutoff},
                         {"n_test", c.n_test},
                         {"uncertain", c.uncertain},
                         {"true_positive", c.true_positive},
                         {"false_positive", c.false_positive},
                         {"false_negative", c.false_negative},
                         {"true_negative", c.true_negative},
                         {"tp_percent", c.tp_percent},
                         {"tp_percent_of_positive_calls", number_or_null(c.tp_percent_of_positive_calls)}});
  j["retrieval"] = retrieval;
  j["variance_error"] = {{"sigma", r.variance_error.sigma},
                         {"abs_error", r.variance_error.abs_error},
                         {"correlation", r.variance_error.correlation ? json(*r.variance_error.correlation)
                                                                      : json(nullptr)}};
  return j;
}

inline EvaluationReport report_from_json(const nlohmann::json& j) {
  using detail::number_or_nan;
  try {
    EvaluationReport r;
    r.model = j.at("model").get<std::string>();
    r.n_calibration = j.at("n_calibration").get<std::size_t>();
    r.n_test = j.at("n_test").get<std::size_t>();
    r.default_cl = j.at("default_cl").get<double>();
    r.alpha_default_cl = number_or_nan(j.at("alpha_default_cl"));
    r.rmse = number_or_nan(j.at("rmse"));
    for (const auto& p : j.at("calibration_curve").at("points"))
      r.curve.points.push_back({p.at("cl").get<double>(), p.at("coverage").get<double>()});
    if (const auto& rs = j.at("calibration_curve").at("r_squared"); !rs.is_null()) r.curve.r_squared = rs.get<double>();
    for (const auto& w : j.at("width_stats")) {
      WidthStats s;
      s.cl = w.at("cl").get<double>();
      s.n = w.at("n").get<std::size_t>();
      s.n_unbounded = w.at("n_unbounded").get<std::size_t>();
      s.fraction_unbounded = w.at("fraction_unbounded").get<double>();
      s.mean = number_or_nan(w.at("mean"));
      s.median = number_or_nan(w.at("median"));
      s.q1 = number_or_nan(w.at("q1"));
      s.q3 = number_or_nan(w.at("q3"));
      s.min = number_or_nan(w.at("min"));
      s.max = number_or_nan(w.at("max"));
      r.widths.push_back(s);
    }
    for (const auto& c : j.at("retrieval")) {
      RetrievalCounts rc;
      rc.cutoff = c.at("cutoff").get<double>();
      rc.n_test = c.at("n_test").get<std::size_t>();
      rc.uncertain = c.at("uncertain").get<std::size_t>();
      rc.true_positive = c.at("true_positive").get<std::size_t>();
      rc.false_positive = c.at("false_positive").get<std::size_t>();
      rc.false_negative = c.at("false_negative").get<std::size_t>();
      rc.true_negative = c.at("true_negative").get<std::size_t>();
      rc.tp_percent = c.at("tp_percent").get<double>();
      rc.tp_percent_of_positive_calls = number_or_nan(c.at("tp_percent_of_positive_calls"));
      r.retrieval.push_back(rc);
    }
    const auto& ve = j.at("variance_error");
    r.variance_error.sigma = ve.at("sigma").get<std::vector<double>>();
    r.variance_error.abs_error = ve.at("abs_error").get<std::vector<double>>();
    if (!ve.at("correlation").is_null()) r.variance_error.correlation = ve.at("correlation").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed report JSON: ") + e.what());
  }
}

inline nlohmann::json to_json(const AggregateSummary& s) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [name, ms] : s.metrics)
    metrics[name] = {{"mean", detail::number_or_null(ms.mean)}, {"std", detail::number_or_null(ms.std)}, {"n", ms.n}};
  return {{"model", s.model}, {"n_runs", s.n_runs}, {"metrics", metrics}};
}

}  // namespace dcp
