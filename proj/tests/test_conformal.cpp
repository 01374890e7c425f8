#include <gtest/gtest.h>

#include <cmath>

#include "dcp/conformal.hpp"
#include "dcp/eval.hpp"
#include "oracles/quantile_oracle.hpp"
#include "test_support.hpp"

namespace dcp {
namespace {

constexpr double kTol = 1e-12;

EnsemblePrediction point_ensemble(std::vector<double> means, std::vector<double> stds) {
  EnsemblePrediction p;
  p.means = std::move(means);
  p.stds = std::move(stds);
  p.n_members = 1;
  return p;
}

TEST(Nonconformity, Examples) {
  EXPECT_NEAR(nonconformity(5.0, 5.5, 0.0), 0.5, kTol);
  EXPECT_NEAR(nonconformity(7.0, 6.0, std::log(2.0)), 0.5, kTol);
  EXPECT_EQ(nonconformity(3.0, 3.0, 5.0), 0.0);
}

TEST(Nonconformity, ClampsHugeSigma) {
  const double a = nonconformity(1.0, 0.0, 1e6);
  EXPECT_TRUE(std::isfinite(a));
  EXPECT_NEAR(a, std::exp(-700.0), 1e-300);
}

TEST(Nonconformity, Errors) {
  EXPECT_THROW(nonconformity(1.0, 0.0, -0.1), InvalidArgument);
  EXPECT_THROW(nonconformity(std::nan(""), 0.0, 0.0), InvalidArgument);
  EXPECT_THROW(nonconformity(1.0, kInf, 0.0), InvalidArgument);
  EXPECT_THROW(nonconformity(1.0, 0.0, kInf), InvalidArgument);
}

TEST(BuildCalibration, Examples) {
  auto single = build_calibration(std::vector<double>{1.4}, point_ensemble({1.0}, {0.0}), CalibrationSource::dropout);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_NEAR(single.alphas[0], 0.4, kTol);

  auto two = build_calibration(std::vector<double>{1.0, 0.2}, point_ensemble({0.0, 0.0}, {0.0, std::log(2.0)}),
                               CalibrationSource::rf_crossconformal);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_NEAR(two.alphas[0], 0.1, kTol);
  EXPECT_NEAR(two.alphas[1], 1.0, kTol);
  EXPECT_EQ(two.source, CalibrationSource::rf_crossconformal);
}

TEST(BuildCalibration, SortedAndLengthChecked) {
  Rng rng(3);
  std::vector<double> y(50), m(50), s(50);
  for (std::size_t i = 0; i < 50; ++i) {
    y[i] = rng.uniform(0, 10);
    m[i] = rng.uniform(0, 10);
    s[i] = rng.uniform(0, 2);
  }
  const auto cal = build_calibration(y, point_ensemble(m, s), CalibrationSource::dropout);
  EXPECT_TRUE(std::is_sorted(cal.alphas.begin(), cal.alphas.end()));
  EXPECT_THROW(build_calibration(std::vector<double>{1.0, 2.0}, point_ensemble({1.0}, {0.0}), CalibrationSource::dropout),
               InvalidArgument);
  EXPECT_THROW(build_calibration(std::vector<double>{}, point_ensemble({}, {}), CalibrationSource::dropout),
               InvalidArgument);
}

TEST(ConfidenceLevelType, RejectsOutOfRange) {
  EXPECT_EQ(ConfidenceLevel{}.value(), 0.80);
  EXPECT_THROW(ConfidenceLevel(0.0), InvalidArgument);
  EXPECT_THROW(ConfidenceLevel(1.0), InvalidArgument);
  EXPECT_THROW(ConfidenceLevel(-0.2), InvalidArgument);
}

TEST(AlphaAtLevel, Examples) {
  CalibrationModel nine{{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}, CalibrationSource::dropout};
  EXPECT_EQ(calibration_rank(0.8, 9), 8u);
  EXPECT_NEAR(alpha_at_level(nine, ConfidenceLevel(0.8)), 0.8, kTol);
  EXPECT_EQ(alpha_at_level(nine, ConfidenceLevel(0.8)), oracle::alpha_by_scan(nine.alphas, 800));

  CalibrationModel three{{0.1, 0.2, 0.3}, CalibrationSource::dropout};
  EXPECT_TRUE(std::isinf(alpha_at_level(three, ConfidenceLevel(0.9))));

  CalibrationModel flat{std::vector<double>(12, 0.7), CalibrationSource::dropout};
  for (double cl : {0.1, 0.5, 0.8, 0.9}) EXPECT_EQ(alpha_at_level(flat, ConfidenceLevel(cl)), 0.7);
}

TEST(AlphaAtLevel, MatchesScanOracle) {
  Rng rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<std::size_t>(1 + rng.below(60));
    std::vector<double> alphas(n);
    for (auto& a : alphas) a = trial % 4 == 0 ? static_cast<double>(rng.below(5)) : rng.uniform(0, 3);
    std::sort(alphas.begin(), alphas.end());
    const CalibrationModel cal{alphas, CalibrationSource::dropout};
    for (std::size_t permille = 50; permille < 1000; permille += 50) {
      const double cl = static_cast<double>(permille) / 1000.0;
      EXPECT_EQ(calibration_rank(cl, n), oracle::rank_permille(permille, n)) << "n=" << n << " cl=" << cl;
      EXPECT_EQ(alpha_at_level(cal, ConfidenceLevel(cl)), oracle::alpha_by_scan(alphas, permille));
    }
  }
}

TEST(AlphaAtLevel, MonotoneInLevel) {
  Rng rng(5);
  std::vector<double> alphas(40);
  for (auto& a : alphas) a = rng.uniform(0, 1);
  std::sort(alphas.begin(), alphas.end());
  const CalibrationModel cal{alphas, CalibrationSource::dropout};
  double prev = 0.0;
  for (int i = 1; i < 100; ++i) {
    const double a = alpha_at_level(cal, ConfidenceLevel(i / 100.0));
    EXPECT_GE(a, prev);
    prev = a;
  }
}

TEST(PredictInterval, Examples) {
  auto a = predict_interval(6.0, 0.0, 0.5, ConfidenceLevel());
  EXPECT_NEAR(a.lower, 5.5, kTol);
  EXPECT_NEAR(a.upper, 6.5, kTol);
  EXPECT_FALSE(a.unbounded);

  auto b = predict_interval(7.0, std::log(2.0), 0.5, ConfidenceLevel());
  EXPECT_NEAR(b.lower, 6.0, kTol);
  EXPECT_NEAR(b.upper, 8.0, kTol);
  EXPECT_NEAR(b.half_width, 1.0, kTol);

  auto c = predict_interval(6.0, 0.0, kInf, ConfidenceLevel());
  EXPECT_TRUE(c.unbounded);
  EXPECT_EQ(c.lower, -kInf);
  EXPECT_EQ(c.upper, kInf);
  EXPECT_EQ(c.half_width, kInf);

  auto d = predict_interval(6.0, 1.0, 0.0, ConfidenceLevel());
  EXPECT_EQ(d.lower, 6.0);
  EXPECT_EQ(d.upper, 6.0);
}

TEST(PredictInterval, SymmetricAndOrdered) {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const double c = rng.uniform(-10, 10);
    const auto pi = predict_interval(c, rng.uniform(0, 3), rng.uniform(0, 2), ConfidenceLevel(0.9));
    EXPECT_LE(pi.lower, pi.center);
    EXPECT_LE(pi.center, pi.upper);
    EXPECT_NEAR(pi.upper - pi.center, pi.center - pi.lower, 1e-12 * (1.0 + std::abs(c) + pi.half_width));
    EXPECT_NEAR(pi.half_width, std::exp(pi.sigma) * (pi.half_width / std::exp(pi.sigma)), kTol);
  }
}

TEST(PredictInterval, Errors) {
  EXPECT_THROW(predict_interval(1.0, -1.0, 0.5, ConfidenceLevel()), InvalidArgument);
  EXPECT_THROW(predict_interval(kInf, 0.0, 0.5, ConfidenceLevel()), InvalidArgument);
  EXPECT_THROW(predict_interval(1.0, 0.0, -0.5, ConfidenceLevel()), InvalidArgument);
}

TEST(PredictInterval, BoundaryInstanceIsCovered) {
  // y sits exactly at the calibrated residual; the interval must contain it.
  Rng rng(19);
  for (int i = 0; i < 2000; ++i) {
    const double y_hat = rng.uniform(-50, 50);
    const double sigma = rng.uniform(0, 4);
    const double y = y_hat + rng.uniform(-5, 5);
    const double alpha = nonconformity(y, y_hat, sigma);
    EXPECT_TRUE(covers(predict_interval(y_hat, sigma, alpha, ConfidenceLevel()), y));
  }
}

struct CalibrationFixture {
  std::vector<double> y;
  EnsemblePrediction pred;
};

CalibrationFixture random_calibration(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  CalibrationFixture f;
  std::vector<double> m(n), s(n);
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = rng.uniform(4, 9);
    s[i] = rng.uniform(0, 1.5);
    f.y.push_back(m[i] + rng.normal() * std::exp(s[i]) * 0.3);
  }
  f.pred = point_ensemble(m, s);
  return f;
}

TEST(Icp, SelfCalibrationCountIsExact) {
  for (std::size_t n : {9u, 19u, 99u, 250u}) {
    const auto f = random_calibration(n, n);
    std::vector<ConfidenceLevel> levels;
    for (double cl : {0.5, 0.8, 0.9}) levels.emplace_back(cl);
    const auto r = icp_from_ensembles(f.y, f.pred, f.pred, levels, CalibrationSource::dropout);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto k = calibration_rank(levels[l].value(), n);
      ASSERT_LE(k, n);
      std::size_t covered = 0;
      for (std::size_t i = 0; i < n; ++i) covered += covers(r.intervals[l][i], f.y[i]) ? 1 : 0;
      EXPECT_EQ(covered, k) << "n=" << n << " cl=" << levels[l].value();
    }
  }
}

TEST(Icp, ScalingBound) {
  const auto f = random_calibration(200, 4);
  const auto cal = build_calibration(f.y, f.pred, CalibrationSource::dropout);
  double max_residual = 0.0;
  for (std::size_t i = 0; i < f.y.size(); ++i) {
    const double r = std::abs(f.y[i] - f.pred.means[i]);
    EXPECT_LE(nonconformity(f.y[i], f.pred.means[i], f.pred.stds[i]), r);
    EXPECT_EQ(nonconformity(f.y[i], f.pred.means[i], 0.0), r);
    max_residual = std::max(max_residual, r);
  }
  EXPECT_LE(cal.alphas.back(), max_residual);
}

TEST(Icp, HalfWidthMonotoneInLevel) {
  const auto f = random_calibration(120, 8);
  const auto test = random_calibration(30, 9);
  std::vector<ConfidenceLevel> levels;
  for (int i = 1; i < 20; ++i) levels.emplace_back(i / 20.0);
  const auto r = icp_from_ensembles(f.y, f.pred, test.pred, levels, CalibrationSource::dropout);
  for (std::size_t l = 1; l < levels.size(); ++l) {
    EXPECT_GE(r.alpha_cl[l], r.alpha_cl[l - 1]);
    for (std::size_t j = 0; j < 30; ++j) EXPECT_GE(r.intervals[l][j].half_width, r.intervals[l - 1][j].half_width);
  }
  EXPECT_EQ(&r.at(ConfidenceLevel(0.8)), &r.intervals[15]);
  EXPECT_THROW(r.at(ConfidenceLevel(0.81)), InvalidArgument);
}

TEST(DropoutIcp, ZeroDropoutCollapsesToPlainIcp) {
  const auto data = make_synthetic(60, 3, {NoiseKind::homoscedastic, 0.3}, 2);
  NetConfig c;
  c.hidden_sizes = {8, 4};
  c.dropout_p = 0.0;
  const auto model = init_mlp(3, c, 5);
  std::vector<Index> cal_rows, test_rows;
  for (Index i = 0; i < 60; ++i) (i < 40 ? cal_rows : test_rows).push_back(i);
  const auto cal = data.subset(cal_rows);
  const auto test = data.subset(test_rows);
  const auto r = dropout_icp(model, cal, test, 10, {ConfidenceLevel(0.8)}, 3);
  const auto point = predict(model, cal.features());
  std::vector<double> residuals;
  for (std::size_t i = 0; i < cal.size(); ++i) residuals.push_back(std::abs(cal.labels()[i] - point[static_cast<Eigen::Index>(i)]));
  std::sort(residuals.begin(), residuals.end());
  const double expected = residuals[calibration_rank(0.8, 40) - 1];
  EXPECT_NEAR(r.alpha_cl[0], expected, kTol);
  for (const auto& pi : r.intervals[0]) {
    EXPECT_EQ(pi.sigma, 0.0);
    EXPECT_NEAR(pi.half_width, expected, kTol);
  }
  EXPECT_EQ(r.calibration.source, CalibrationSource::dropout);
}

TEST(DropoutIcp, SelfCalibrationWithDeterministicNet) {
  const auto data = make_synthetic(99, 3, {NoiseKind::heteroscedastic, 0.3}, 6);
  NetConfig c;
  c.hidden_sizes = {6};
  c.dropout_p = 0.0;
  const auto model = init_mlp(3, c, 1);
  const auto r = dropout_icp(model, data, data, 3, {ConfidenceLevel(0.5), ConfidenceLevel(0.9)}, 4);
  for (std::size_t l = 0; l < 2; ++l) {
    std::size_t covered = 0;
    for (std::size_t i = 0; i < data.size(); ++i) covered += covers(r.intervals[l][i], data.labels()[i]) ? 1 : 0;
    EXPECT_EQ(covered, calibration_rank(r.levels[l].value(), 99));
  }
}

TEST(RfCcp, ConstantLabelsGivePointIntervals) {
  auto base = make_synthetic(30, 2, {}, 1);
  const Dataset data(base.ids(), std::vector<double>(30, 5.0), base.features());
  std::vector<Index> train_rows, test_rows;
  for (Index i = 0; i < 30; ++i) (i < 20 ? train_rows : test_rows).push_back(i);
  ForestConfig c;
  c.n_trees = 5;
  const auto r = rf_ccp(data.subset(train_rows), data.subset(test_rows), c, 4, {ConfidenceLevel(0.8)}, 2);
  for (double a : r.conformal.calibration.alphas) EXPECT_EQ(a, 0.0);
  for (const auto& pi : r.conformal.intervals[0]) {
    EXPECT_EQ(pi.lower, 5.0);
    EXPECT_EQ(pi.upper, 5.0);
  }
  EXPECT_EQ(r.conformal.calibration.source, CalibrationSource::rf_crossconformal);
}

TEST(RfCcp, DeterministicUnderSeed) {
  const auto data = make_synthetic(80, 3, {NoiseKind::heteroscedastic, 0.3}, 1);
  std::vector<Index> train_rows, test_rows;
  for (Index i = 0; i < 80; ++i) (i < 60 ? train_rows : test_rows).push_back(i);
  ForestConfig c;
  c.n_trees = 8;
  const auto train = data.subset(train_rows);
  const auto test = data.subset(test_rows);
  const auto a = rf_ccp(train, test, c, 5, {ConfidenceLevel(0.8)}, 10);
  const auto b = rf_ccp(train, test, c, 5, {ConfidenceLevel(0.8)}, 10);
  EXPECT_EQ(a.conformal.calibration.alphas, b.conformal.calibration.alphas);
  for (std::size_t j = 0; j < test.size(); ++j) {
    EXPECT_EQ(a.conformal.intervals[0][j].lower, b.conformal.intervals[0][j].lower);
    EXPECT_EQ(a.conformal.intervals[0][j].upper, b.conformal.intervals[0][j].upper);
  }
  EXPECT_THROW(rf_ccp(train.subset({0, 1, 2}), test, c, 5, {ConfidenceLevel(0.8)}, 10), InvalidArgument);
}

TEST(Coverage, HoldsStatisticallyOnSyntheticData) {
  const auto data = make_synthetic(1200, 4, {NoiseKind::heteroscedastic, 0.3}, 31);
  std::vector<Index> train_rows, test_rows;
  for (Index i = 0; i < 1200; ++i) (i < 600 ? train_rows : test_rows).push_back(i);
  const auto test = data.subset(test_rows);
  ForestConfig c;
  c.n_trees = 20;
  std::vector<ConfidenceLevel> levels;
  for (double cl : {0.6, 0.7, 0.8, 0.9}) levels.emplace_back(cl);
  const auto r = rf_ccp(data.subset(train_rows), test, c, 5, levels, 3);
  const auto n = static_cast<double>(test.size());
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const double cl = levels[l].value();
    EXPECT_GE(coverage(r.conformal.intervals[l], test.labels()), cl - 3.0 * std::sqrt(cl * (1 - cl) / n)) << cl;
  }
}

TEST(Dumps, CalibrationAndIntervalTables) {
  const auto f = random_calibration(5, 2);
  std::vector<std::string> ids{"a", "b", "c", "d", "e"};
  testing::TempDir tmp("conformal_dump");
  const auto dir = tmp.path();
  write_calibration_dump(dir / "cal.csv", ids, f.y, f.pred);
  std::ifstream in(dir / "cal.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "id,y,y_hat,sigma,alpha");
  int rows = 0;
  double prev = -1.0;
  while (std::getline(in, line)) {
    ++rows;
    const double alpha = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_GE(alpha, prev);
    prev = alpha;
  }
  EXPECT_EQ(rows, 5);

  const auto r = icp_from_ensembles(f.y, f.pred, f.pred, {ConfidenceLevel(0.5)}, CalibrationSource::dropout);
  write_interval_table(dir / "iv.csv", ids, r);
  std::ifstream iv(dir / "iv.csv");
  std::getline(iv, line);
  EXPECT_EQ(line, "id,cl,y_hat,sigma,lower,upper,unbounded");
}

}  // namespace
}  // namespace dcp
