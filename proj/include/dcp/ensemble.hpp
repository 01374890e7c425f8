#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <thread>
#include <vector>

#include "dcp/data.hpp"
#include "dcp/error.hpp"
#include "dcp/net.hpp"
#include "dcp/rng.hpp"

namespace dcp {

/// Per-instance mean and population standard deviation over N members
/// (dropout passes or trees). `passes` is n_instances x N.
struct EnsemblePrediction {
  std::vector<double> means;
  std::vector<double> stds;
  Matrix passes;
  std::size_t n_members = 0;

  std::size_t size() const { return means.size(); }
};

struct PassStats {
  double mean = 0.0;
  double std = 0.0;
};

/// Arithmetic mean and population (divide-by-N) standard deviation. A
/// constant sequence reports its value and a spread of exactly 0.
inline PassStats pass_stats(std::span<const double> row) {
  if (row.empty()) throw InvalidArgument("pass_stats of an empty sequence");
  if (std::all_of(row.begin(), row.end(), [&](double v) { return v == row.front(); })) return {row.front(), 0.0};
  const auto n = static_cast<double>(row.size());
  double sum = 0.0;
  for (double v : row) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : row) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

/// Fills means/stds from the pass matrix.
inline EnsemblePrediction summarize_passes(Matrix passes) {
  detail::require(passes.cols() >= 1, "ensemble needs at least one member");
  EnsemblePrediction out;
  out.n_members = static_cast<std::size_t>(passes.cols());
  out.means.resize(static_cast<std::size_t>(passes.rows()));
  out.stds.resize(static_cast<std::size_t>(passes.rows()));
  for (Eigen::Index i = 0; i < passes.rows(); ++i) {
    const auto s = pass_stats(std::span<const double>(passes.row(i).data(), static_cast<std::size_t>(passes.cols())));
    out.means[static_cast<std::size_t>(i)] = s.mean;
    out.stds[static_cast<std::size_t>(i)] = s.std;
  }
  out.passes = std::move(passes);
  return out;
}

/// Test-time dropout: `n_passes` stochastic forward passes over every row.
/// Pass k draws its masks from the stream derive_seed(seed, pass, {k}), so the
/// result does not depend on `threads`.
inline EnsemblePrediction mc_dropout_predict(const MLPModel& model, const Matrix& features, std::size_t n_passes,
                                             std::uint64_t seed, std::size_t threads = 1) {
  detail::require(n_passes >= 1, "n_passes must be >= 1");
  detail::check_input(model, features.cols());
  Matrix passes(features.rows(), static_cast<Eigen::Index>(n_passes));

  auto run_pass = [&](std::size_t k) {
    Rng rng(derive_seed(seed, Stream::pass, {k}));
    passes.col(static_cast<Eigen::Index>(k)) = predict_stochastic(model, features, rng);
  };

  threads = std::clamp<std::size_t>(threads, 1, n_passes);
  if (threads == 1) {
    for (std::size_t k = 0; k < n_passes; ++k) run_pass(k);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t k = t; k < n_passes; k += threads) run_pass(k);
      });
    for (auto& th : pool) th.join();
  }
  return summarize_passes(std::move(passes));
}

/// Writes `id,pass_0,...,pass_{N-1}`.
inline void write_pass_matrix(const EnsemblePrediction& pred, const std::vector<std::string>& ids,
                              const std::filesystem::path& path) {
  detail::require(ids.size() == pred.size(), "id count does not match ensemble size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "id";
  for (std::size_t k = 0; k < pred.n_members; ++k) out << ",pass_" << k;
  out << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i];
    for (Eigen::Index k = 0; k < pred.passes.cols(); ++k)
      out << ',' << detail::format_double(pred.passes(static_cast<Eigen::Index>(i), k));
    out << '\n';
  }
}

}  // namespace dcp
