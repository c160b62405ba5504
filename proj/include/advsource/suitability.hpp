#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

#include "advsource/models.hpp"

namespace advsource {

// Prediction-error estimates computed from a softmax output and the true
// class. All take a valid probability vector (nonnegative, summing to 1
// within 1e-9).

// Ratio of the second-largest probability to the largest. 0 iff one-hot,
// 1 when the top two are tied.
double q_ratio(const Eigen::VectorXd& probs);

// 1 - max(probs). Equals half the L1 error against the one-hot truth whenever
// the prediction is correct.
double one_minus_max(const Eigen::VectorXd& probs);

// (1/M) * sum_k (y_k - p_k)^2 against the one-hot truth.
double mse(const Eigen::VectorXd& probs, int true_class);

// 1-D Wasserstein-1 distance between probs and the one-hot truth with classes
// as unit-spaced support points: sum_k |CDF_p(k) - CDF_y(k)|.
double wasserstein(const Eigen::VectorXd& probs, int true_class);

// Sample Pearson correlation coefficient. Requires length >= 3 and nonzero
// variance in both sequences.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct SuitabilityScore {
  std::string image_id;
  std::string model_id;
  double q = 0.0;
  double one_minus_max = 0.0;
  double mse = 0.0;
  double wd = 0.0;
};

// All four estimates for every (image, ensemble member) pair.
std::vector<SuitabilityScore> score_images(const Ensemble& ensemble,
                                           std::span<const ImageTensor> images);

// How a per-image Q is produced from per-model scores for filtering. The
// paper leaves the model choice open; the mean over members is the default.
enum class QAggregate { kMeanOverModels, kPerModel };

std::vector<std::pair<std::string, double>> aggregate_q(std::span<const SuitabilityScore> scores,
                                                        QAggregate mode,
                                                        const std::string& model_id = {});

// Nearest-rank percentile split of images by Q: images at or below the
// lower_P cut value, images strictly above the upper_P cut value, and the
// middle band. Ties at either cut stay in the lower bucket. The three sets
// partition the input.
struct PercentileSplit {
  std::vector<std::string> below_lower;
  std::vector<std::string> above_upper;
  std::vector<std::string> middle;
};

PercentileSplit percentile_filter(std::span<const std::pair<std::string, double>> q_by_image,
                                  double lower_percentile, double upper_percentile);

}  // namespace advsource
