#pragma once

// Experiment orchestration: repeated random splits, network training with
// retry on non-convergence, both conformal pipelines, evaluation, and report
// files under an output directory.
//
// Output layout (all paths relative to the output directory):
//   config.json                      normalized configuration
//   run_NNN/split.csv                id,row,partition
//   run_NNN/status.json              per-model status, attempts, seeds
//   run_NNN/<model>/...              per-model tables, report.json, plots
//   summary.json, aggregate.csv      cross-run aggregate per model
//   manifest.sha256                  `<sha256>  <path>` for every other file

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "dcp/config.hpp"
#include "dcp/conformal.hpp"
#include "dcp/data.hpp"
#include "dcp/digest.hpp"
#include "dcp/ensemble.hpp"
#include "dcp/error.hpp"
#include "dcp/eval.hpp"
#include "dcp/forest.hpp"
#include "dcp/net.hpp"
#include "dcp/plots.hpp"
#include "dcp/rng.hpp"

namespace dcp {

struct ModelRun {
  std::string label;
  ModelKind kind = ModelKind::dnn;
  double dropout_p = kNaN;
  bool ok = false;
  std::size_t attempts = 0;
  std::uint64_t seed = 0;  // seed of the accepted attempt
  std::string failure;
  std::optional<TrainingLog> log;
  std::optional<MLPModel> network;
  std::optional<Forest> forest;
  std::optional<ConformalResult> result;
  std::vector<std::string> calibration_ids;
  std::optional<EvaluationReport> report;
};

struct RunRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  SplitIndices split;
  std::vector<Index> early_stopping;  // rows used for early stopping
  std::vector<Index> calibration;     // rows used for dropout calibration
  std::vector<ModelRun> models;
};

struct RunArtifacts {
  ExperimentConfig config;
  std::shared_ptr<const Dataset> dataset;
  std::vector<RunRecord> runs;
};

inline std::string model_label(ModelKind kind, double dropout_p = 0.0) {
  return kind == ModelKind::rf ? std::string("rf") : "dnn_p" + detail::format_double(dropout_p);
}

inline std::string run_dir_name(std::size_t r) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "run_%03zu", r);
  return buf;
}

inline std::uint64_t run_seed(const ExperimentConfig& c, std::size_t r) { return derive_seed(c.seed, Stream::run, {r}); }

inline Dataset load_experiment_data(const ExperimentConfig& c) {
  if (c.dataset) return load_table(*c.dataset);
  const auto& s = *c.synthetic;
  return make_synthetic(s.n, s.d, s.noise, s.seed.value_or(derive_seed(c.seed, Stream::synthetic)));
}

namespace detail {

inline std::vector<Index> concat(const std::vector<Index>& a, const std::vector<Index>& b) {
  std::vector<Index> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline ModelRun run_dnn(const ExperimentConfig& c, const Dataset& data, const RunRecord& rec, std::size_t level,
                        const std::vector<ConfidenceLevel>& levels) {
  ModelRun m;
  m.kind = ModelKind::dnn;
  m.dropout_p = c.dropout_p[level];
  m.label = model_label(ModelKind::dnn, m.dropout_p);
  NetConfig net = c.net;
  net.dropout_p = m.dropout_p;

  const auto train_set = data.subset(rec.split.train);
  const auto stop_set = data.subset(rec.early_stopping);
  const auto cal_set = data.subset(rec.calibration);
  const auto test_set = data.subset(rec.split.test);

  std::optional<TrainResult> accepted;
  for (std::size_t attempt = 0; attempt <= c.retry_limit; ++attempt) {
    const auto seed = derive_seed(rec.seed, Stream::retry, {level, attempt});
    m.attempts = attempt + 1;
    try {
      auto result = train(train_set, stop_set, net, seed);
      m.log = result.log;
      if (result.log.converged) {
        m.seed = seed;
        accepted = std::move(result);
        break;
      }
      m.failure = "best validation RMSE " + format_double(result.model.best_val_rmse) + " >= rmse_gate " +
                  format_double(net.rmse_gate);
    } catch (const TrainingDiverged& e) {
      m.failure = e.what();
    }
  }
  if (!accepted) {
    m.failure = "retry limit exhausted after " + std::to_string(m.attempts) + " attempts: " + m.failure;
    return m;
  }
  m.failure.clear();
  m.ok = true;
  m.result = dropout_icp(accepted->model, cal_set, test_set, c.n_passes, levels,
                         derive_seed(rec.seed, Stream::dropout_level, {level}));
  m.calibration_ids = cal_set.ids();
  m.report = evaluate(m.label, *m.result, test_set.labels(), ConfidenceLevel(c.default_cl), c.cutoffs);
  m.network = std::move(accepted->model);
  return m;
}

inline ModelRun run_rf(const ExperimentConfig& c, const Dataset& data, const RunRecord& rec,
                       const std::vector<ConfidenceLevel>& levels) {
  ModelRun m;
  m.kind = ModelKind::rf;
  m.label = model_label(ModelKind::rf);
  m.attempts = 1;
  m.seed = derive_seed(rec.seed, Stream::forest_final);
  const auto rows = concat(rec.split.train, rec.split.validation);
  const auto train_set = data.subset(rows);
  const auto test_set = data.subset(rec.split.test);
  auto ccp = rf_ccp(train_set, test_set, c.forest, c.cv_folds, levels, m.seed);
  m.ok = true;
  m.calibration_ids = train_set.ids();
  m.report = evaluate(m.label, ccp.conformal, test_set.labels(), ConfidenceLevel(c.default_cl), c.cutoffs);
  m.result = std::move(ccp.conformal);
  m.forest = std::move(ccp.forest);
  return m;
}

}  // namespace detail

/// Runs repetition `r` of the experiment on `data`.
inline RunRecord run_single(const ExperimentConfig& c, const Dataset& data, std::size_t r) {
  RunRecord rec;
  rec.index = r;
  rec.seed = run_seed(c, r);
  rec.split = random_split(data.size(), c.split, derive_seed(rec.seed, Stream::split));
  if (c.strict_calibration) {
    const auto& v = rec.split.validation;
    if (v.size() < 2) throw InvalidArgument("strict_calibration needs at least 2 validation rows");
    const auto half = static_cast<std::ptrdiff_t>(v.size() / 2);
    rec.early_stopping.assign(v.begin(), v.begin() + half);
    rec.calibration.assign(v.begin() + half, v.end());
  } else {
    rec.early_stopping = rec.split.validation;
    rec.calibration = rec.split.validation;
  }
  const auto levels = c.levels();
  if (c.uses(ModelKind::dnn))
    for (std::size_t i = 0; i < c.dropout_p.size(); ++i) rec.models.push_back(detail::run_dnn(c, data, rec, i, levels));
  if (c.uses(ModelKind::rf)) rec.models.push_back(detail::run_rf(c, data, rec, levels));
  return rec;
}

/// Runs every repetition (or only `only_run`) with up to c.workers threads.
inline RunArtifacts run_experiment(const ExperimentConfig& c, std::optional<std::size_t> only_run = std::nullopt) {
  RunArtifacts art;
  art.config = c;
  art.dataset = std::make_shared<const Dataset>(load_experiment_data(c));
  std::vector<std::size_t> todo;
  if (only_run) {
    if (*only_run >= c.n_runs) throw InvalidArgument("run index " + std::to_string(*only_run) + " out of range");
    todo.push_back(*only_run);
  } else {
    for (std::size_t r = 0; r < c.n_runs; ++r) todo.push_back(r);
  }
  art.runs.resize(todo.size());

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(todo.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      try {
        art.runs[i] = run_single(c, *art.dataset, todo[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(std::max<std::size_t>(c.workers, 1), todo.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return art;
}

// ---------------------------------------------------------------------------
// Report emission

struct EmitOptions {
  bool plots = true;
  bool pass_matrix = false;
  bool models = false;
};

struct ManifestEntry {
  std::string path;  // relative, '/'-separated
  std::string sha256;
  std::uintmax_t bytes = 0;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

inline std::string csv_number(double v) { return format_real_token(v); }

inline void write_report_tables(const EvaluationReport& r, const std::vector<std::string>& test_ids,
                                const std::filesystem::path& dir, bool plots) {
  std::ostringstream curve;
  curve << "cl,coverage\n";
  for (const auto& p : r.curve.points) curve << csv_number(p.cl) << ',' << csv_number(p.coverage) << '\n';
  write_text(dir / "calibration_curve.csv", curve.str());

  std::ostringstream widths;
  widths << "cl,n,n_unbounded,fraction_unbounded,mean,median,q1,q3,min,max\n";
  for (const auto& w : r.widths)
    widths << csv_number(w.cl) << ',' << w.n << ',' << w.n_unbounded << ',' << csv_number(w.fraction_unbounded) << ','
           << csv_number(w.mean) << ',' << csv_number(w.median) << ',' << csv_number(w.q1) << ','
           << csv_number(w.q3) << ',' << csv_number(w.min) << ',' << csv_number(w.max) << '\n';
  write_text(dir / "width_stats.csv", widths.str());

  std::ostringstream retrieval;
  retrieval << "cutoff,n_test,uncertain,true_positive,false_positive,false_negative,true_negative,tp_percent,"
               "tp_percent_of_positive_calls\n";
  for (const auto& c : r.retrieval)
    retrieval << csv_number(c.cutoff) << ',' << c.n_test << ',' << c.uncertain << ',' << c.true_positive << ','
              << c.false_positive << ',' << c.false_negative << ',' << c.true_negative << ','
              << csv_number(c.tp_percent) << ',' << csv_number(c.tp_percent_of_positive_calls) << '\n';
  write_text(dir / "retrieval.csv", retrieval.str());

  std::ostringstream ve;
  ve << "id,sigma,abs_error\n";
  for (std::size_t i = 0; i < r.variance_error.sigma.size(); ++i)
    ve << test_ids[i] << ',' << csv_number(r.variance_error.sigma[i]) << ','
       << csv_number(r.variance_error.abs_error[i]) << '\n';
  write_text(dir / "variance_error.csv", ve.str());

  write_json(dir / "report.json", to_json(r));

  if (plots) {
    write_text(dir / "calibration_curve.svg", plots::calibration_curve_svg(r));
    write_text(dir / "width_box.svg", plots::width_box_svg(r));
    write_text(dir / "variance_error.svg", plots::variance_error_svg(r));
  }
}

inline nlohmann::json config_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json models = json::array();
  for (auto m : c.models) models.push_back(to_string(m));
  json j;
  if (c.dataset) j["dataset"] = c.dataset->generic_string();
  if (c.synthetic) {
    j["synthetic"] = {{"n", c.synthetic->n},
                      {"d", c.synthetic->d},
                      {"noise", c.synthetic->noise.scale},
                      {"noise_model", c.synthetic->noise.kind == NoiseKind::homoscedastic ? "homoscedastic"
                                                                                           : "heteroscedastic"},
                      {"seed", c.synthetic->seed ? json(*c.synthetic->seed) : json(nullptr)}};
  }
  j["seed"] = c.seed;
  j["n_runs"] = c.n_runs;
  j["split"] = {c.split.train, c.split.validation, c.split.test};
  j["models"] = models;
  j["dropout_p"] = c.dropout_p;
  j["n_passes"] = c.n_passes;
  j["net"] = {{"hidden_sizes", c.net.hidden_sizes}, {"lr0", c.net.lr0},
              {"decay_factor", c.net.decay_factor}, {"decay_every", c.net.decay_every},
              {"cycle_length", c.net.cycle_length}, {"max_epochs", c.net.max_epochs},
              {"patience", c.net.patience},         {"momentum", c.net.momentum},
              {"batch_fraction", c.net.batch_fraction}, {"rmse_gate", c.net.rmse_gate}};
  j["forest"] = {{"n_trees", c.forest.n_trees},
                 {"max_features", c.forest.max_features ? json(*c.forest.max_features) : json("all")},
                 {"min_samples_split", c.forest.min_samples_split},
                 {"min_samples_leaf", c.forest.min_samples_leaf},
                 {"bootstrap", c.forest.bootstrap}};
  j["cv_folds"] = c.cv_folds;
  j["cl_grid"] = c.cl_grid;
  j["default_cl"] = c.default_cl;
  j["cutoffs"] = c.cutoffs;
  j["retry_limit"] = c.retry_limit;
  j["strict_calibration"] = c.strict_calibration;
  return j;
}

}  // namespace detail

/// Writes one run's directory.
inline void emit_run(const RunArtifacts& art, const RunRecord& rec, const std::filesystem::path& out_dir,
                     const EmitOptions& opts) {
  using nlohmann::json;
  const auto& data = *art.dataset;
  const auto dir = out_dir / run_dir_name(rec.index);
  detail::ensure_dir(dir);

  std::vector<std::string> partition(data.size());
  for (auto i : rec.split.train) partition[i] = "train";
  for (auto i : rec.split.validation) partition[i] = "validation";
  for (auto i : rec.split.test) partition[i] = "test";
  if (art.config.strict_calibration)
    for (auto i : rec.calibration) partition[i] = "calibration";
  std::ostringstream split;
  split << "id,row,partition\n";
  for (std::size_t i = 0; i < data.size(); ++i) split << data.ids()[i] << ',' << i << ',' << partition[i] << '\n';
  detail::write_text(dir / "split.csv", split.str());

  std::vector<std::string> test_ids;
  for (auto i : rec.split.test) test_ids.push_back(data.ids()[i]);

  json status = json::array();
  for (const auto& m : rec.models) {
    json s = {{"model", m.label}, {"status", m.ok ? "ok" : "failed"}, {"attempts", m.attempts}, {"seed", m.seed}};
    if (!m.ok) s["failure"] = m.failure;
    if (m.log) {
      s["converged"] = m.log->converged;
      s["epochs"] = m.log->epochs.size();
      s["best_epoch"] = m.log->best_epoch;
      s["stop_reason"] = m.log->stop_reason == StopReason::early_stop ? "early_stop" : "max_epochs";
    }
    status.push_back(s);

    const auto mdir = dir / m.label;
    detail::ensure_dir(mdir);
    if (m.log) {
      std::ostringstream log;
      log << "epoch,learning_rate,train_loss,val_rmse\n";
      for (const auto& e : m.log->epochs)
        log << e.epoch << ',' << detail::format_double(e.learning_rate) << ',' << detail::format_double(e.train_loss)
            << ',' << detail::format_double(e.val_rmse) << '\n';
      detail::write_text(mdir / "training_log.csv", log.str());
    }
    if (!m.ok) continue;
    const auto& res = *m.result;
    std::vector<double> y_cal;
    if (m.kind == ModelKind::dnn) {
      for (auto i : rec.calibration) y_cal.push_back(data.labels()[i]);
    } else {
      for (auto i : detail::concat(rec.split.train, rec.split.validation)) y_cal.push_back(data.labels()[i]);
    }
    write_calibration_dump(mdir / "calibration.csv", m.calibration_ids, y_cal, res.calibration_pred);
    write_interval_table(mdir / "intervals.csv", test_ids, res);
    detail::write_report_tables(*m.report, test_ids, mdir, opts.plots);
    if (opts.pass_matrix && res.test_pred.passes.size() > 0) write_pass_matrix(res.test_pred, test_ids, mdir / "passes_test.csv");
    if (opts.models && m.network) save_model(*m.network, mdir / "model.txt");
    if (opts.models && m.forest) save_forest(*m.forest, mdir / "forest.txt");
  }
  detail::write_json(dir / "status.json", {{"run", rec.index}, {"seed", rec.seed}, {"models", status}});
}

/// Re-aggregates every run directory under `out_dir` into summary.json and
/// aggregate.csv.
inline void write_summary(const std::filesystem::path& out_dir) {
  using nlohmann::json;
  std::vector<std::filesystem::path> run_dirs;
  if (!std::filesystem::is_directory(out_dir)) throw IoError("'" + out_dir.string() + "' is not a directory");
  for (const auto& entry : std::filesystem::directory_iterator(out_dir))
    if (entry.is_directory() && entry.path().filename().string().rfind("run_", 0) == 0) run_dirs.push_back(entry.path());
  std::sort(run_dirs.begin(), run_dirs.end());
  if (run_dirs.empty()) throw IoError("no run directories under '" + out_dir.string() + "'");

  std::vector<std::string> labels;
  std::map<std::string, std::vector<EvaluationReport>> reports;
  json runs = json::array();
  json failures = json::array();
  for (const auto& dir : run_dirs) {
    const auto status = detail::read_json(dir / "status.json");
    runs.push_back(status);
    for (const auto& m : status.at("models")) {
      const auto label = m.at("model").get<std::string>();
      if (std::find(labels.begin(), labels.end(), label) == labels.end()) labels.push_back(label);
      if (m.at("status") == "ok") {
        reports[label].push_back(report_from_json(detail::read_json(dir / label / "report.json")));
      } else {
        failures.push_back({{"run", status.at("run")}, {"model", label}, {"failure", m.value("failure", "")}});
      }
    }
  }

  json aggregate = json::array();
  std::ostringstream csv;
  csv << "model,metric,mean,std,n\n";
  for (const auto& label : labels) {
    const auto it = reports.find(label);
    if (it == reports.end() || it->second.empty()) {
      aggregate.push_back({{"model", label}, {"n_runs", 0}, {"metrics", json::object()}});
      continue;
    }
    const auto summary = aggregate_runs(it->second);
    aggregate.push_back(to_json(summary));
    for (const auto& [name, ms] : summary.metrics)
      csv << label << ',' << name << ',' << detail::csv_number(ms.mean) << ',' << detail::csv_number(ms.std) << ','
          << ms.n << '\n';
  }
  detail::write_json(out_dir / "summary.json",
                     {{"n_run_dirs", run_dirs.size()}, {"aggregate", aggregate}, {"failures", failures}, {"runs", runs}});
  detail::write_text(out_dir / "aggregate.csv", csv.str());
}

/// SHA-256 of every file under `out_dir` except the manifest itself, written
/// to manifest.sha256 in `sha256sum` format.
inline std::vector<ManifestEntry> write_manifest(const std::filesystem::path& out_dir) {
  std::vector<ManifestEntry> entries;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(out_dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), out_dir).generic_string();
    if (rel == "manifest.sha256") continue;
    entries.push_back({rel, sha256_file(entry.path()), entry.file_size()});
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  std::ostringstream out;
  for (const auto& e : entries) out << e.sha256 << "  " << e.path << '\n';
  detail::write_text(out_dir / "manifest.sha256", out.str());
  return entries;
}

/// Writes every run, the aggregate summary and the manifest.
inline std::vector<ManifestEntry> emit_reports(const RunArtifacts& art, const std::filesystem::path& out_dir,
                                               const EmitOptions& opts) {
  detail::ensure_dir(out_dir);
  detail::write_json(out_dir / "config.json", detail::config_json(art.config));
  for (const auto& rec : art.runs) emit_run(art, rec, out_dir, opts);
  write_summary(out_dir);
  return write_manifest(out_dir);
}

inline EmitOptions emit_options(const ExperimentConfig& c) { return {c.emit_plots, c.emit_pass_matrix, c.save_models}; }

}  // namespace dcp
