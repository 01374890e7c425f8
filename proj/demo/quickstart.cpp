// Trains a small dropout network on generated data, calibrates it on the
// validation rows and prints a few 80% intervals next to the true labels.

#include <cstdio>

#include "dcp.hpp"

int main() {
  using namespace dcp;
  const auto data = make_synthetic(1200, 6, {NoiseKind::heteroscedastic, 0.3}, 1);
  const auto split = random_split(data.size(), {}, 2);
  const auto train_set = data.subset(split.train);
  const auto val = data.subset(split.validation);
  const auto test = data.subset(split.test);

  NetConfig net;
  net.hidden_sizes = {64, 32};
  net.max_epochs = 800;
  net.patience = 150;
  const auto trained = dcp::train(train_set, val, net, 3);
  std::printf("epochs=%zu best_val_rmse=%.4f converged=%s\n", trained.log.epochs.size(),
              trained.model.best_val_rmse, trained.log.converged ? "yes" : "no");

  const std::vector<ConfidenceLevel> levels{ConfidenceLevel(0.5), ConfidenceLevel(0.8), ConfidenceLevel(0.9)};
  const auto result = dropout_icp(trained.model, val, test, 100, levels, 4);
  for (std::size_t l = 0; l < levels.size(); ++l)
    std::printf("cl=%.2f alpha=%.4f coverage=%.3f\n", levels[l].value(), result.alpha_cl[l],
                coverage(result.intervals[l], test.labels()));

  const auto& at80 = result.at(ConfidenceLevel(0.8));
  for (std::size_t j = 0; j < 5; ++j)
    std::printf("%-8s y=%.3f  [%.3f, %.3f]  sigma=%.4f\n", test.ids()[j].c_str(), test.labels()[j], at80[j].lower,
                at80[j].upper, at80[j].sigma);
  return 0;
}
