#pragma once

// Random Forest regression: CART trees grown on bootstrap resamples with
// variance-reduction splits, plus k-fold out-of-fold calibration data for
// cross-conformal prediction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcp/data.hpp"
#include "dcp/ensemble.hpp"
#include "dcp/error.hpp"
#include "dcp/net.hpp"
#include "dcp/rng.hpp"

namespace dcp {

struct ForestConfig {
  std::size_t n_trees = 100;
  std::optional<std::size_t> max_features;  // nullopt: all features
  std::size_t min_samples_split = 2;
  std::size_t min_samples_leaf = 1;
  bool bootstrap = true;

  void validate() const {
    detail::require(n_trees >= 1, "n_trees must be >= 1");
    detail::require(!max_features || *max_features >= 1, "max_features must be >= 1");
    detail::require(min_samples_split >= 2, "min_samples_split must be >= 2");
    detail::require(min_samples_leaf >= 1, "min_samples_leaf must be >= 1");
  }

  void validate(std::size_t n_features) const {
    validate();
    detail::require(!max_features || *max_features <= n_features, "max_features exceeds the feature count");
  }

  bool operator==(const ForestConfig&) const = default;
};

struct TreeNode {
  static constexpr std::int32_t kLeaf = -1;

  std::int32_t feature = kLeaf;
  double threshold = 0.0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  double value = 0.0;

  bool is_leaf() const { return feature == kLeaf; }
  bool operator==(const TreeNode&) const = default;
};

/// Nodes in depth-first preorder (left subtree first); node 0 is the root.
/// Rows with x[feature] <= threshold go left.
struct RegressionTree {
  std::vector<TreeNode> nodes;

  template <typename Row>
  double predict(const Row& x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& node = nodes[i];
      i = x[static_cast<Eigen::Index>(node.feature)] <= node.threshold ? node.left : node.right;
    }
    return nodes[i].value;
  }

  std::size_t n_leaves() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.is_leaf(); }));
  }

  bool operator==(const RegressionTree&) const = default;
};

struct Forest {
  std::vector<RegressionTree> trees;
  ForestConfig config;
  std::uint64_t seed = 0;
  std::size_t n_features = 0;

  bool operator==(const Forest&) const = default;
};

namespace detail {

/// Relative tolerance for comparing split scores; a candidate must beat the
/// incumbent by more than this fraction of the node's sum of squares.
inline constexpr double kSplitTolerance = 1e-10;

/// Leaf value: mean of the routed targets, summed in ascending order so the
/// result does not depend on row order.
inline double leaf_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

/// Midpoint threshold that keeps lo on the left and hi on the right.
inline double midpoint(double lo, double hi) {
  const double t = lo + (hi - lo) / 2.0;
  return (t >= hi) ? lo : t;
}

class CartBuilder {
 public:
  CartBuilder(const Matrix& x, std::span<const double> y, std::span<const Index> sample, const ForestConfig& config,
              Rng& rng)
      : x_(x), y_(y), sample_(sample), config_(config), rng_(rng) {
    const auto m = sample.size();
    const auto d = static_cast<std::size_t>(x.cols());
    natural_.resize(m);
    std::iota(natural_.begin(), natural_.end(), 0u);
    sorted_.assign(d, natural_);
    for (std::size_t f = 0; f < d; ++f) {
      std::stable_sort(sorted_[f].begin(), sorted_[f].end(),
                       [&](std::uint32_t a, std::uint32_t b) { return value(a, f) < value(b, f); });
    }
    goes_left_.assign(m, 0);
    buffer_.resize(m);
  }

  RegressionTree build() {
    grow(0, static_cast<std::uint32_t>(sample_.size()));
    return std::move(tree_);
  }

 private:
  double value(std::uint32_t pos, std::size_t f) const {
    return x_(static_cast<Eigen::Index>(sample_[pos]), static_cast<Eigen::Index>(f));
  }
  double label(std::uint32_t pos) const { return y_[sample_[pos]]; }

  std::uint32_t grow(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::uint32_t>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    const std::size_t count = end - begin;

    std::vector<double> ys;
    ys.reserve(count);
    for (auto i = begin; i < end; ++i) ys.push_back(label(natural_[i]));
    double sum = 0.0;
    for (double v : ys) sum += v;
    const double mean = sum / static_cast<double>(count);
    double parent_sse = 0.0;
    for (double v : ys) parent_sse += (v - mean) * (v - mean);
    const bool pure = std::all_of(ys.begin(), ys.end(), [&](double v) { return v == ys.front(); });

    tree_.nodes[id].value = leaf_mean(std::move(ys));
    if (count < config_.min_samples_split || pure) return id;

    std::vector<std::size_t> features(static_cast<std::size_t>(x_.cols()));
    std::iota(features.begin(), features.end(), std::size_t{0});
    if (config_.max_features && *config_.max_features < features.size()) {
      for (std::size_t i = 0; i < *config_.max_features; ++i) {
        const auto j = i + static_cast<std::size_t>(rng_.below(features.size() - i));
        std::swap(features[i], features[j]);
      }
      features.resize(*config_.max_features);
      std::sort(features.begin(), features.end());
    }

    const double tol = kSplitTolerance * parent_sse;
    double best_score = parent_sse;
    std::int32_t best_feature = TreeNode::kLeaf;
    double best_threshold = 0.0;
    const std::size_t min_leaf = config_.min_samples_leaf;

    for (auto f : features) {
      const auto& order = sorted_[f];
      double s1 = 0.0;
      double s2 = 0.0;
      for (auto i = begin; i < end; ++i) {
        const double c = label(order[i]) - mean;
        s1 += c;
        s2 += c * c;
      }
      double l1 = 0.0;
      double l2 = 0.0;
      for (auto i = begin; i + 1 < end; ++i) {
        const double c = label(order[i]) - mean;
        l1 += c;
        l2 += c * c;
        const std::size_t n_left = i + 1 - begin;
        const std::size_t n_right = count - n_left;
        const double lo = value(order[i], f);
        const double hi = value(order[i + 1], f);
        if (!(lo < hi) || n_left < min_leaf || n_right < min_leaf) continue;
        const double r1 = s1 - l1;
        const double r2 = s2 - l2;
        const double score = (l2 - l1 * l1 / static_cast<double>(n_left)) + (r2 - r1 * r1 / static_cast<double>(n_right));
        if (score < best_score - tol) {
          best_score = score;
          best_feature = static_cast<std::int32_t>(f);
          best_threshold = midpoint(lo, hi);
        }
      }
    }
    if (best_feature == TreeNode::kLeaf) return id;

    const auto bf = static_cast<std::size_t>(best_feature);
    std::uint32_t n_left = 0;
    for (auto i = begin; i < end; ++i) {
      const auto pos = natural_[i];
      goes_left_[pos] = value(pos, bf) <= best_threshold ? 1 : 0;
      n_left += goes_left_[pos];
    }
    partition(natural_, begin, end);
    for (auto& order : sorted_) partition(order, begin, end);

    tree_.nodes[id].feature = best_feature;
    tree_.nodes[id].threshold = best_threshold;
    const auto left = grow(begin, begin + n_left);
    const auto right = grow(begin + n_left, end);
    tree_.nodes[id].left = left;
    tree_.nodes[id].right = right;
    return id;
  }

  void partition(std::vector<std::uint32_t>& order, std::uint32_t begin, std::uint32_t end) {
    auto out = begin;
    std::size_t n_right = 0;
    for (auto i = begin; i < end; ++i) {
      if (goes_left_[order[i]])
        order[out++] = order[i];
      else
        buffer_[n_right++] = order[i];
    }
    std::copy(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(n_right), order.begin() + out);
  }

  const Matrix& x_;
  std::span<const double> y_;
  std::span<const Index> sample_;
  const ForestConfig& config_;
  Rng& rng_;
  std::vector<std::uint32_t> natural_;
  std::vector<std::vector<std::uint32_t>> sorted_;
  std::vector<std::uint8_t> goes_left_;
  std::vector<std::uint32_t> buffer_;
  RegressionTree tree_;
};

}  // namespace detail

/// Grows one CART tree on `sample` (row indices into x/y, duplicates allowed).
///
/// Splits minimise the summed child sum of squares over every feature and
/// every midpoint between consecutive distinct values. Ties go to the lowest
/// feature index, then the lowest threshold. A node becomes a leaf when it
/// has fewer than min_samples_split rows, is pure, or no split reduces its
/// sum of squares.
inline RegressionTree fit_cart(const Matrix& x, std::span<const double> y, std::span<const Index> sample,
                               const ForestConfig& config, Rng& rng) {
  detail::require(!sample.empty(), "fit_cart needs at least one row");
  detail::require(static_cast<std::size_t>(x.rows()) == y.size(), "features and labels differ in length");
  config.validate(static_cast<std::size_t>(x.cols()));
  for (auto r : sample) detail::require(r < y.size(), "sample row index out of range");
  return detail::CartBuilder(x, y, sample, config, rng).build();
}

inline RegressionTree fit_cart(const Matrix& x, std::span<const double> y, const ForestConfig& config, Rng& rng) {
  std::vector<Index> all(y.size());
  std::iota(all.begin(), all.end(), Index{0});
  return fit_cart(x, y, all, config, rng);
}

/// Each tree t is grown from the stream derive_seed(seed, tree, {t}) on a
/// bootstrap resample of size |train| (or on all rows when bootstrap is off).
inline Forest fit_forest(const Dataset& train, const ForestConfig& config, std::uint64_t seed) {
  config.validate(train.n_features());
  Forest forest;
  forest.config = config;
  forest.seed = seed;
  forest.n_features = train.n_features();
  forest.trees.reserve(config.n_trees);
  const std::size_t n = train.size();
  std::vector<Index> sample(n);
  for (std::size_t t = 0; t < config.n_trees; ++t) {
    Rng rng(derive_seed(seed, Stream::tree, {t}));
    if (config.bootstrap) {
      for (auto& s : sample) s = static_cast<Index>(rng.below(n));
    } else {
      std::iota(sample.begin(), sample.end(), Index{0});
    }
    forest.trees.push_back(fit_cart(train.features(), train.labels(), sample, config, rng));
  }
  return forest;
}

/// Per-tree predictions as ensemble members.
inline EnsemblePrediction forest_predict(const Forest& forest, const Matrix& features) {
  if (static_cast<std::size_t>(features.cols()) != forest.n_features)
    throw InvalidArgument("feature dimension " + std::to_string(features.cols()) +
                          " does not match forest width " + std::to_string(forest.n_features));
  Matrix passes(features.rows(), static_cast<Eigen::Index>(forest.trees.size()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const auto row = features.row(i);
    for (std::size_t t = 0; t < forest.trees.size(); ++t)
      passes(i, static_cast<Eigen::Index>(t)) = forest.trees[t].predict(row);
  }
  return summarize_passes(std::move(passes));
}

/// Out-of-fold (y, y_hat, sigma) for every training row, with the fold that
/// held it out.
struct OofCalibrationData {
  std::vector<double> y;
  std::vector<double> y_hat;
  std::vector<double> sigma;
  std::vector<std::size_t> fold;
  std::vector<std::vector<Index>> fold_members;

  std::size_t size() const { return y.size(); }
};

/// Seeded k-fold assignment: a permutation cut into k contiguous chunks, the
/// first n mod k chunks one row longer.
inline std::vector<std::vector<Index>> make_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  detail::require(k >= 2, "need at least 2 folds");
  if (n < k) throw InvalidArgument("fold size 0: " + std::to_string(n) + " rows for " + std::to_string(k) + " folds");
  std::vector<Index> perm(n);
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(derive_seed(seed, Stream::folds_partition));
  rng.shuffle(std::span<Index>(perm));
  std::vector<std::vector<Index>> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(perm.begin() + static_cast<std::ptrdiff_t>(pos), perm.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(folds[f].begin(), folds[f].end());
    pos += size;
  }
  return folds;
}

inline OofCalibrationData oof_calibration(const Dataset& train, const ForestConfig& config, std::size_t k,
                                          std::uint64_t seed) {
  const auto folds = make_folds(train.size(), k, seed);
  OofCalibrationData out;
  const std::size_t n = train.size();
  out.y = train.labels();
  out.y_hat.assign(n, 0.0);
  out.sigma.assign(n, 0.0);
  out.fold.assign(n, 0);
  out.fold_members = folds;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<Index> rest;
    rest.reserve(n - folds[f].size());
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) rest.insert(rest.end(), folds[g].begin(), folds[g].end());
    std::sort(rest.begin(), rest.end());
    const auto forest = fit_forest(train.subset(rest), config, derive_seed(seed, Stream::fold, {f}));
    const auto held_out = train.subset(folds[f]);
    const auto pred = forest_predict(forest, held_out.features());
    for (std::size_t j = 0; j < folds[f].size(); ++j) {
      const auto row = folds[f][j];
      out.y_hat[row] = pred.means[j];
      out.sigma[row] = pred.stds[j];
      out.fold[row] = f;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization, same conventions as the network model file.

inline constexpr const char* kForestMagic = "dcp-forest";
inline constexpr int kForestVersion = 1;

inline void save_forest(const Forest& forest, std::ostream& out) {
  const auto& c = forest.config;
  out << kForestMagic << ' ' << kForestVersion << '\n'
      << "n_features " << forest.n_features << '\n'
      << "seed " << forest.seed << '\n'
      << "n_trees " << c.n_trees << '\n'
      << "max_features " << (c.max_features ? std::to_string(*c.max_features) : std::string("all")) << '\n'
      << "min_samples_split " << c.min_samples_split << '\n'
      << "min_samples_leaf " << c.min_samples_leaf << '\n'
      << "bootstrap " << (c.bootstrap ? 1 : 0) << '\n';
  for (const auto& tree : forest.trees) {
    out << "tree " << tree.nodes.size() << '\n';
    for (const auto& node : tree.nodes)
      out << node.feature << ' ' << detail::format_double(node.threshold) << ' ' << node.left << ' ' << node.right
          << ' ' << detail::format_double(node.value) << '\n';
  }
}

inline Forest load_forest(std::istream& in) {
  detail::TokenReader r(in);
  r.expect(kForestMagic);
  if (r.count() != static_cast<std::size_t>(kForestVersion)) throw ParseError("unsupported forest version");
  Forest forest;
  r.expect("n_features");
  forest.n_features = r.count();
  r.expect("seed");
  forest.seed = r.u64();
  r.expect("n_trees");
  forest.config.n_trees = r.count();
  r.expect("max_features");
  const auto mf = r.word();
  if (mf != "all") {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(mf.data(), mf.data() + mf.size(), v);
    if (ec != std::errc() || ptr != mf.data() + mf.size()) throw ParseError("forest file: bad max_features");
    forest.config.max_features = v;
  }
  r.expect("min_samples_split");
  forest.config.min_samples_split = r.count();
  r.expect("min_samples_leaf");
  forest.config.min_samples_leaf = r.count();
  r.expect("bootstrap");
  forest.config.bootstrap = r.count() != 0;
  for (std::size_t t = 0; t < forest.config.n_trees; ++t) {
    r.expect("tree");
    RegressionTree tree;
    tree.nodes.resize(r.count());
    for (auto& node : tree.nodes) {
      const auto f = r.word();
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), node.feature);
      if (ec != std::errc() || ptr != f.data() + f.size()) throw ParseError("forest file: bad node feature");
      node.threshold = r.real();
      node.left = static_cast<std::uint32_t>(r.count());
      node.right = static_cast<std::uint32_t>(r.count());
      node.value = r.real();
    }
    forest.trees.push_back(std::move(tree));
  }
  return forest;
}

inline void save_forest(const Forest& forest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write forest '" + path.string() + "'");
  save_forest(forest, out);
}

inline Forest load_forest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open forest '" + path.string() + "'");
  return load_forest(in);
}

}  // namespace dcp
