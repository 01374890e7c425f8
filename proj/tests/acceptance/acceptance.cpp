// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.
//
// Usage: dcp_acceptance <path to dcp CLI> <path to fixtures/synthetic.cfg>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dcp.hpp"
#include "oracles/cart_oracle.hpp"
#include "oracles/finite_difference.hpp"
#include "oracles/quantile_oracle.hpp"
#include "test_support.hpp"

namespace {

using namespace dcp;

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Counts violations and keeps the first few messages.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) msg_ += (msg_.empty() ? "" : "; ") + what;
  }
  Outcome done(const std::string& summary) const {
    if (failures_ == 0) return {true, summary};
    return {false, std::to_string(failures_) + " violation(s): " + msg_};
  }

 private:
  int failures_ = 0;
  std::string msg_;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

bool close(double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol; }

std::vector<ConfidenceLevel> grid() {
  std::vector<ConfidenceLevel> g;
  for (int i = 1; i <= 19; ++i) g.emplace_back(i / 20.0);
  return g;
}

// Coverage and R^2 recomputed from the raw intervals without the eval module.
Outcome check_validity(const ConformalResult& r, std::span<const double> y, const std::string& label) {
  Check c;
  std::vector<double> cls, cov;
  for (std::size_t l = 0; l < r.levels.size(); ++l) {
    std::size_t hit = 0;
    for (std::size_t j = 0; j < y.size(); ++j) {
      const auto& pi = r.intervals[l][j];
      if (pi.unbounded || (pi.lower <= y[j] && y[j] <= pi.upper)) ++hit;
    }
    cls.push_back(r.levels[l].value());
    cov.push_back(static_cast<double>(hit) / static_cast<double>(y.size()));
  }
  const double k = static_cast<double>(cls.size());
  const double mx = std::accumulate(cls.begin(), cls.end(), 0.0) / k;
  const double my = std::accumulate(cov.begin(), cov.end(), 0.0) / k;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < cls.size(); ++i) {
    sxy += (cls[i] - mx) * (cov[i] - my);
    sxx += (cls[i] - mx) * (cls[i] - mx);
    syy += (cov[i] - my) * (cov[i] - my);
  }
  const double r2 = syy > 0 ? sxy * sxy / (sxx * syy) : 0.0;

  const double n = static_cast<double>(y.size());
  double worst = 1.0;
  for (std::size_t i = 0; i < cls.size(); ++i) {
    const double bound = cls[i] - 3.0 * std::sqrt(cls[i] * (1 - cls[i]) / n);
    worst = std::min(worst, cov[i] - bound);
    c.expect(cov[i] >= bound,
             "cl=" + fmt("%.2f", cls[i]) + " coverage " + fmt("%.4f", cov[i]) + " < " + fmt("%.4f", bound));
  }
  c.expect(r2 > 0.99, "R^2 " + fmt("%.5f", r2) + " <= 0.99");
  return c.done(label + " n_test=" + std::to_string(y.size()) + " R^2=" + fmt("%.5f", r2) +
                " min coverage margin=" + fmt("%+.4f", worst));
}

NetConfig desk_net(double p) {
  NetConfig n;
  n.hidden_sizes = {64, 32, 8};
  n.dropout_p = p;
  return n;
}

std::vector<Index> train_and_validation(const SplitIndices& s) {
  auto rows = s.train;
  rows.insert(rows.end(), s.validation.begin(), s.validation.end());
  return rows;
}

// Heteroscedastic experiment shared by criteria 1, 2 and 9.
struct HeteroRuns {
  Dataset data;
  SplitIndices split;
  std::string dnn_note;
  std::optional<ConformalResult> dnn;
  std::optional<ConformalResult> rf;

  std::vector<double> y_test() const { return data.subset(split.test).labels(); }
};

const HeteroRuns& hetero() {
  static const HeteroRuns h = [] {
    HeteroRuns out{make_synthetic(3000, 8, {NoiseKind::heteroscedastic, 0.3}, 101), {}, {}, {}, {}};
    out.split = random_split(out.data.size(), {}, 102);
    const auto tr = out.data.subset(out.split.train);
    const auto val = out.data.subset(out.split.validation);
    const auto test = out.data.subset(out.split.test);
    const auto trained = train(tr, val, desk_net(0.1), 103);
    out.dnn_note = "epochs=" + std::to_string(trained.log.epochs.size()) +
                   " best_val_rmse=" + fmt("%.4f", trained.model.best_val_rmse);
    out.dnn = dropout_icp(trained.model, val, test, 100, grid(), 104);
    out.rf = rf_ccp(out.data.subset(train_and_validation(out.split)), test, ForestConfig{}, 10, grid(), 105).conformal;
    return out;
  }();
  return h;
}

// 1
Outcome dnn_validity() {
  const auto& h = hetero();
  auto o = check_validity(*h.dnn, h.y_test(), "dropout ICP p=0.1 passes=100");
  o.detail += " (" + h.dnn_note + ")";
  return o;
}

// 2
Outcome rf_validity() {
  const auto& h = hetero();
  return check_validity(*h.rf, h.y_test(), "RF cross-conformal 100 trees 10 folds");
}

// 3
Outcome gradients() {
  Check c;
  double worst = 0.0;
  std::size_t params = 0;
  const int n_nets = 25;
  for (int t = 0; t < n_nets; ++t) {
    Rng rng(derive_seed(300, Stream::synthetic, {static_cast<std::uint64_t>(t)}));
    const auto d = static_cast<std::size_t>(1 + rng.below(8));
    NetConfig cfg;
    cfg.hidden_sizes = {1 + rng.below(16), 1 + rng.below(8)};
    if (t % 5 == 0) cfg.hidden_sizes = {1 + rng.below(16)};
    cfg.dropout_p = rng.uniform(0.0, 0.5);
    auto model = init_mlp(d, cfg, rng.next_u64());
    oracle::jitter_biases(model, rng);
    const auto n = static_cast<Eigen::Index>(2 + rng.below(7));
    Matrix x(n, static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.uniform(-1, 1);
    std::vector<double> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = rng.uniform(-2, 2);
    const auto masks = draw_masks(model, static_cast<std::size_t>(n), rng);
    const auto cmp = oracle::compare_gradients(model, x, y, &masks, 1e-5);
    worst = std::max(worst, cmp.max_relative_error);
    params += cmp.n_parameters;
    c.expect(cmp.max_relative_error < 1e-4, "net " + std::to_string(t) + " rel err " + fmt("%.3g", cmp.max_relative_error));
  }
  return c.done(std::to_string(n_nets) + " nets, " + std::to_string(params) + " parameters, max rel err " +
                fmt("%.3g", worst));
}

// 4
Outcome cart_oracle() {
  Check c;
  Rng rng(400);
  std::size_t probes = 0;
  for (int t = 0; t < 200; ++t) {
    const auto rows = static_cast<Eigen::Index>(1 + rng.below(16));
    const auto cols = static_cast<Eigen::Index>(1 + rng.below(3));
    const bool ties = t % 2 == 0;
    Matrix x(rows, cols);
    std::vector<double> y(static_cast<std::size_t>(rows));
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) x(i, j) = ties ? static_cast<double>(rng.below(4)) : rng.uniform(-1, 1);
      y[static_cast<std::size_t>(i)] = ties ? static_cast<double>(rng.below(3)) : rng.uniform(4, 9);
    }
    Rng unused(0);
    const auto tree = fit_cart(x, y, ForestConfig{}, unused);
    std::vector<Index> all(static_cast<std::size_t>(rows));
    std::iota(all.begin(), all.end(), Index{0});
    const auto expected = oracle::BruteForceCart(x, y, 2, 1).fit(all);
    c.expect(tree == expected, "table " + std::to_string(t) + " tree differs");
    // Predictions on training rows plus random probes.
    Matrix probe(rows + 20, cols);
    probe.topRows(rows) = x;
    for (Eigen::Index i = rows; i < probe.rows(); ++i)
      for (Eigen::Index j = 0; j < cols; ++j) probe(i, j) = rng.uniform(-1.5, 4.5);
    for (Eigen::Index i = 0; i < probe.rows(); ++i) {
      ++probes;
      c.expect(tree.predict(probe.row(i)) == expected.predict(probe.row(i)),
               "table " + std::to_string(t) + " prediction differs");
    }
  }
  return c.done("200 tables, " + std::to_string(probes) + " predictions identical");
}

// 5
Outcome quantile_oracle() {
  Check c;
  Rng rng(500);
  std::size_t infinite = 0, comparisons = 0;
  for (int t = 0; t < 500; ++t) {
    const auto n = static_cast<std::size_t>(1 + rng.below(50));
    std::vector<double> alphas(n);
    for (auto& a : alphas) a = t % 3 == 0 ? static_cast<double>(rng.below(6)) / 4.0 : rng.uniform(0, 2);
    std::sort(alphas.begin(), alphas.end());
    const CalibrationModel cal{alphas, CalibrationSource::dropout};
    for (std::size_t permille = 50; permille <= 950; permille += 50) {
      const double got = alpha_at_level(cal, ConfidenceLevel(static_cast<double>(permille) / 1000.0));
      const double want = oracle::alpha_by_scan(alphas, permille);
      ++comparisons;
      if (std::isinf(want)) ++infinite;
      c.expect(got == want, "n=" + std::to_string(n) + " cl=" + std::to_string(permille) + "/1000");
    }
  }
  return c.done("500 lists, " + std::to_string(comparisons) + " levels, " + std::to_string(infinite) + " unbounded");
}

// 6
Outcome self_calibration() {
  Check c;
  std::string counts;
  for (std::size_t n : {9u, 19u, 99u}) {
    Rng rng(600 + n);
    EnsemblePrediction pred;
    std::vector<double> y;
    for (std::size_t i = 0; i < n; ++i) {
      pred.means.push_back(rng.uniform(4, 9));
      pred.stds.push_back(rng.uniform(0, 1));
      y.push_back(pred.means.back() + rng.normal() * 0.4);
    }
    pred.n_members = 1;
    const std::vector<ConfidenceLevel> levels{ConfidenceLevel(0.5), ConfidenceLevel(0.8), ConfidenceLevel(0.9)};
    const auto r = icp_from_ensembles(y, pred, pred, levels, CalibrationSource::dropout);
    auto sorted = r.calibration.alphas;
    c.expect(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "alphas not distinct");
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto k = static_cast<std::size_t>(std::ceil(levels[l].value() * static_cast<double>(n + 1) - 1e-9));
      std::size_t covered = 0;
      for (std::size_t i = 0; i < n; ++i)
        covered += (r.intervals[l][i].lower <= y[i] && y[i] <= r.intervals[l][i].upper) ? 1 : 0;
      c.expect(covered == k, "n=" + std::to_string(n) + " cl=" + fmt("%.1f", levels[l].value()) + " covered " +
                                 std::to_string(covered) + " != " + std::to_string(k));
      counts += (counts.empty() ? "" : " ") + std::to_string(covered);
    }
  }
  return c.done("covered counts " + counts);
}

// 7
Outcome scaling_bound() {
  Check c;
  Rng rng(700);
  int equality_cases = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto n = static_cast<std::size_t>(1 + rng.below(60));
    EnsemblePrediction pred;
    std::vector<double> y;
    for (std::size_t i = 0; i < n; ++i) {
      pred.means.push_back(rng.uniform(-5, 5));
      pred.stds.push_back(rng.bernoulli(0.3) ? 0.0 : rng.uniform(0, 3));
      y.push_back(pred.means.back() + rng.normal() * rng.uniform(0.1, 2));
    }
    pred.n_members = 1;
    const auto cal = build_calibration(y, pred, CalibrationSource::dropout);
    std::size_t arg = 0;
    double max_res = -1;
    for (std::size_t i = 0; i < n; ++i) {
      const double res = std::abs(y[i] - pred.means[i]);
      if (res > max_res) {
        max_res = res;
        arg = i;
      }
    }
    c.expect(cal.alphas.back() <= max_res, "max alpha exceeds max residual");
    if (pred.stds[arg] == 0.0) {
      ++equality_cases;
      c.expect(cal.alphas.back() == max_res, "equality fails with sigma=0 at the max residual");
    }
  }
  return c.done("1000 calibration sets, " + std::to_string(equality_cases) + " equality cases");
}

// 8
Outcome conformal_examples() {
  Check c;
  const double ln2 = std::log(2.0);
  c.expect(close(nonconformity(5.0, 5.5, 0), 0.5), "nonconformity(5,5.5,0)");
  c.expect(close(nonconformity(7.0, 6.0, ln2), 0.5), "nonconformity(7,6,ln2)");
  c.expect(close(nonconformity(3.0, 3.0, 5.0), 0.0), "nonconformity(3,3,5)");

  auto ens = [](std::vector<double> m, std::vector<double> s) {
    EnsemblePrediction p;
    p.means = std::move(m);
    p.stds = std::move(s);
    p.n_members = 1;
    return p;
  };
  const auto single = build_calibration(std::vector<double>{1.4}, ens({1.0}, {0.0}), CalibrationSource::dropout);
  c.expect(single.size() == 1 && close(single.alphas[0], 0.4), "singleton calibration");
  const auto two =
      build_calibration(std::vector<double>{1.0, 0.2}, ens({0.0, 0.0}, {0.0, ln2}), CalibrationSource::dropout);
  c.expect(two.size() == 2 && close(two.alphas[0], 0.1) && close(two.alphas[1], 1.0), "two-instance calibration");

  const CalibrationModel nine{{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}, CalibrationSource::dropout};
  c.expect(close(alpha_at_level(nine, ConfidenceLevel(0.8)), 0.8), "alpha_at_level n=9 cl=0.8");
  const CalibrationModel three{{0.1, 0.2, 0.3}, CalibrationSource::dropout};
  c.expect(std::isinf(alpha_at_level(three, ConfidenceLevel(0.9))), "alpha_at_level n=3 cl=0.9");
  const CalibrationModel flat{std::vector<double>(7, 0.25), CalibrationSource::dropout};
  c.expect(alpha_at_level(flat, ConfidenceLevel(0.5)) == 0.25, "constant list");

  const auto a = predict_interval(6.0, 0.0, 0.5, ConfidenceLevel());
  c.expect(close(a.lower, 5.5) && close(a.upper, 6.5), "interval (6,0,0.5)");
  const auto b = predict_interval(7.0, ln2, 0.5, ConfidenceLevel());
  c.expect(close(b.lower, 6.0) && close(b.upper, 8.0), "interval (7,ln2,0.5)");
  const auto u = predict_interval(6.0, 0.0, kInf, ConfidenceLevel());
  c.expect(u.unbounded && std::isinf(u.lower) && u.lower < 0 && std::isinf(u.upper) && u.upper > 0, "unbounded");

  // Zero dropout: every sigma is 0 and every half-width is the k-th absolute residual.
  const auto data = make_synthetic(80, 3, {NoiseKind::homoscedastic, 0.3}, 8);
  std::vector<Index> cal_rows(50), test_rows(30);
  std::iota(cal_rows.begin(), cal_rows.end(), Index{0});
  std::iota(test_rows.begin(), test_rows.end(), Index{50});
  NetConfig net;
  net.hidden_sizes = {8, 4};
  net.dropout_p = 0.0;
  const auto model = init_mlp(3, net, 9);
  const auto cal_set = data.subset(cal_rows);
  const auto r = dropout_icp(model, cal_set, data.subset(test_rows), 5, {ConfidenceLevel(0.8)}, 10);
  const auto point = predict(model, cal_set.features());
  std::vector<double> res;
  for (std::size_t i = 0; i < cal_set.size(); ++i)
    res.push_back(std::abs(cal_set.labels()[i] - point(static_cast<Eigen::Index>(i))));
  std::sort(res.begin(), res.end());
  const double kth = res[static_cast<std::size_t>(std::ceil(0.8 * 51)) - 1];
  for (const auto& pi : r.intervals[0])
    c.expect(pi.sigma == 0.0 && close(pi.half_width, kth), "p=0 collapse");

  // Constant labels: zero residuals and point intervals at the constant.
  const Dataset constant(data.ids(), std::vector<double>(80, 6.5), data.features());
  ForestConfig fc;
  fc.n_trees = 5;
  const auto ccp =
      rf_ccp(constant.subset(cal_rows), constant.subset(test_rows), fc, 10, {ConfidenceLevel(0.8)}, 11);
  for (double alpha : ccp.conformal.calibration.alphas) c.expect(alpha == 0.0, "constant forest residual");
  for (const auto& pi : ccp.conformal.intervals[0])
    c.expect(pi.lower == 6.5 && pi.upper == 6.5, "constant forest interval");
  return c.done("nonconformity, calibration, level, interval and pipeline examples at 1e-12");
}

// 9
Outcome retrieval_partition() {
  Check c;
  const auto& h = hetero();
  const auto y = h.y_test();
  std::size_t tallies = 0;
  for (const auto* r : {&*h.dnn, &*h.rf}) {
    for (std::size_t l = 0; l < r->levels.size(); ++l) {
      for (const auto& counts : screen_counts(r->intervals[l], y, default_cutoffs())) {
        ++tallies;
        const auto sum = counts.uncertain + counts.true_positive + counts.false_positive + counts.false_negative +
                         counts.true_negative;
        c.expect(sum == y.size(), "cutoff " + fmt("%.0f", counts.cutoff) + " sums to " + std::to_string(sum));
      }
    }
  }
  auto box = [](double lo, double hi) {
    PredictionInterval pi;
    pi.lower = lo;
    pi.upper = hi;
    pi.center = (lo + hi) / 2;
    return pi;
  };
  for (double y_true : {5.0, 7.0, 7.5, 9.0})
    c.expect(screen_classify(box(6, 8), y_true, 7) == ScreenCategory::uncertain, "[6,8] cutoff 7 not uncertain");
  c.expect(screen_classify(box(4.0, 6.5), 7.2, 7) == ScreenCategory::false_negative, "[4,6.5] y=7.2 not FN");
  return c.done(std::to_string(tallies) + " (model, level, cutoff) tallies partition n_test; both examples exact");
}

// 10
Outcome determinism(const std::string& cli, const std::string& fixture) {
  Check c;
  testing::TempDir a("accept_a"), b("accept_b");
  auto run = [&](const std::filesystem::path& out) {
    const auto cmd = "\"" + cli + "\" run --config \"" + fixture + "\" --seed 7 --out \"" + out.string() +
                     "\" > \"" + (out.parent_path() / "stdout.log").string() + "\" 2>&1";
    return std::system(cmd.c_str());
  };
  auto read = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  const auto out_a = a / "out", out_b = b / "out";
  c.expect(run(out_a) == 0, "first run failed");
  c.expect(run(out_b) == 0, "second run failed");
  const auto ma = read(out_a / "manifest.sha256"), mb = read(out_b / "manifest.sha256");
  const auto lines = std::count(ma.begin(), ma.end(), '\n');
  c.expect(!ma.empty(), "empty manifest");
  c.expect(ma == mb, "manifests differ");
  return c.done("two CLI runs, " + std::to_string(lines) + " digests identical");
}

// 11
Outcome training_sanity() {
  Check c;
  const auto data = make_synthetic(3000, 8, {NoiseKind::homoscedastic, 0.3}, 1101);
  const auto split = random_split(data.size(), {}, 1102);
  const auto tr = data.subset(split.train), val = data.subset(split.validation), test = data.subset(split.test);

  const auto trained = train(tr, val, desk_net(0.1), 1103);
  const auto dnn_pred = mc_dropout_predict(trained.model, test.features(), 100, 1104);
  const double dnn_rmse = rmse(test.labels(), dnn_pred.means);
  c.expect(trained.log.converged, "desk network not converged");
  c.expect(dnn_rmse <= 0.45, "DNN test RMSE " + fmt("%.4f", dnn_rmse));

  const auto forest = fit_forest(data.subset(train_and_validation(split)), ForestConfig{}, 1105);
  const double rf_rmse = rmse(test.labels(), forest_predict(forest, test.features()).means);
  c.expect(rf_rmse <= 0.45, "RF test RMSE " + fmt("%.4f", rf_rmse));

  auto crippled = desk_net(0.1);
  crippled.lr0 = 0.0;
  crippled.max_epochs = 200;
  crippled.patience = 20;
  const auto dead = train(tr, val, crippled, 1106);
  c.expect(!dead.log.converged, "lr=0 run flagged converged");
  return c.done("DNN RMSE " + fmt("%.4f", dnn_rmse) + ", RF RMSE " + fmt("%.4f", rf_rmse) +
                ", lr=0 best_val_rmse " + fmt("%.3f", dead.model.best_val_rmse) + " not converged");
}

// 12
Outcome schedule() {
  Check c;
  const NetConfig cfg;
  c.expect(close(lr_at_epoch(cfg, 0), 0.005), "epoch 0");
  c.expect(close(lr_at_epoch(cfg, 1000), 0.005), "epoch 1000");
  c.expect(close(lr_at_epoch(cfg, 450), 0.0018), "epoch 450");

  const auto data = make_synthetic(200, 3, {NoiseKind::homoscedastic, 0.3}, 1201);
  const auto split = random_split(data.size(), {}, 1202);
  NetConfig net;
  net.hidden_sizes = {8};
  net.max_epochs = 1200;
  net.patience = 1200;
  const auto log = train(data.subset(split.train), data.subset(split.validation), net, 1203).log;
  c.expect(log.epochs.size() == 1200, "run stopped after " + std::to_string(log.epochs.size()) + " epochs");
  for (std::size_t e = 0; e < log.epochs.size(); ++e) {
    // Independent schedule: lr0 * 0.6^floor((e mod 1000) / 200).
    const double want = 0.005 * std::pow(0.6, static_cast<double>((e % 1000) / 200));
    c.expect(close(log.epochs[e].learning_rate, want), "epoch " + std::to_string(e));
  }
  return c.done("lr(0)=0.005 lr(1000)=0.005 lr(450)=0.0018, 1200 logged epochs match");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::fprintf(stderr, "usage: %s <dcp cli> <fixture config>\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1], fixture = argv[2];

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"validity: dropout ICP on heteroscedastic data", dnn_validity},
      {"validity: RF cross-conformal on heteroscedastic data", rf_validity},
      {"analytic gradients vs central differences", gradients},
      {"CART vs exhaustive-split oracle", cart_oracle},
      {"alpha_at_level vs scan oracle", quantile_oracle},
      {"self-calibration count", self_calibration},
      {"exponential scaling bound", scaling_bound},
      {"nonconformity and interval examples", conformal_examples},
      {"retrieval partition and examples", retrieval_partition},
      {"determinism of CLI output manifests", [&] { return determinism(cli, fixture); }},
      {"training sanity and convergence gate", training_sanity},
      {"learning rate schedule", schedule},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s [%2zu] %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
