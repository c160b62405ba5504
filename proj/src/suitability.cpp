#include "advsource/suitability.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "advsource/error.hpp"

namespace advsource {

namespace {

void require_distribution(const Eigen::VectorXd& probs, const char* where) {
  if (probs.size() < 1) throw ArgumentError(std::string(where) + ": empty distribution");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    if (!(probs[k] >= -1e-12) || !std::isfinite(probs[k])) {
      throw ArgumentError(std::string(where) + ": negative or non-finite probability");
    }
    sum += probs[k];
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ArgumentError(std::string(where) + ": probabilities sum to " + std::to_string(sum));
  }
}

void require_class(const Eigen::VectorXd& probs, int true_class, const char* where) {
  if (true_class < 0 || true_class >= probs.size()) {
    throw ArgumentError(std::string(where) + ": true class out of range");
  }
}

}  // namespace

double q_ratio(const Eigen::VectorXd& probs) {
  require_distribution(probs, "q_ratio");
  if (probs.size() < 2) throw ArgumentError("q_ratio: needs at least 2 classes");
  double largest = -1.0, second = -1.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    if (probs[k] > largest) {
      second = largest;
      largest = probs[k];
    } else if (probs[k] > second) {
      second = probs[k];
    }
  }
  return second / largest;
}

double one_minus_max(const Eigen::VectorXd& probs) {
  require_distribution(probs, "one_minus_max");
  return 1.0 - probs.maxCoeff();
}

double mse(const Eigen::VectorXd& probs, int true_class) {
  require_distribution(probs, "mse");
  require_class(probs, true_class, "mse");
  double acc = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    const double y = (k == true_class) ? 1.0 : 0.0;
    acc += (y - probs[k]) * (y - probs[k]);
  }
  return acc / static_cast<double>(probs.size());
}

double wasserstein(const Eigen::VectorXd& probs, int true_class) {
  require_distribution(probs, "wasserstein");
  require_class(probs, true_class, "wasserstein");
  // Classes sit at unit-spaced support points, so W1 is the CDF difference.
  double acc = 0.0, cdf_p = 0.0, cdf_y = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    cdf_p += probs[k];
    if (k == true_class) cdf_y = 1.0;
    acc += std::abs(cdf_p - cdf_y);
  }
  return acc;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ArgumentError("pearson: length mismatch");
  const size_t n = xs.size();
  if (n < 3) throw ArgumentError("pearson: needs at least 3 points, got " + std::to_string(n));
  double mean_x = 0.0, mean_y = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mean_x += xs[i];
    mean_y += ys[i];
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mean_x;
    const double dy = ys[i] - mean_y;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) {
    throw NumericError("pearson: undefined correlation (zero variance)");
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<SuitabilityScore> score_images(const Ensemble& ensemble,
                                           std::span<const ImageTensor> images) {
  std::vector<SuitabilityScore> scores;
  scores.reserve(images.size() * static_cast<size_t>(ensemble.size()));
  for (const auto& img : images) {
    for (int i = 0; i < ensemble.size(); ++i) {
      const Eigen::VectorXd probs = predict_probs(ensemble.member(i), img);
      SuitabilityScore s;
      s.image_id = img.image_id;
      s.model_id = ensemble.member(i).model_id();
      s.q = q_ratio(probs);
      s.one_minus_max = one_minus_max(probs);
      s.mse = mse(probs, img.true_class);
      s.wd = wasserstein(probs, img.true_class);
      scores.push_back(std::move(s));
    }
  }
  return scores;
}

std::vector<std::pair<std::string, double>> aggregate_q(std::span<const SuitabilityScore> scores,
                                                        QAggregate mode,
                                                        const std::string& model_id) {
  std::vector<std::pair<std::string, double>> out;
  if (mode == QAggregate::kPerModel) {
    if (model_id.empty()) throw ArgumentError("aggregate_q: per-model mode needs a model id");
    for (const auto& s : scores) {
      if (s.model_id == model_id) out.emplace_back(s.image_id, s.q);
    }
    return out;
  }
  // Mean over ensemble members, first-seen image order.
  std::vector<std::string> order;
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& s : scores) {
    auto [it, inserted] = acc.try_emplace(s.image_id, std::pair<double, int>{0.0, 0});
    if (inserted) order.push_back(s.image_id);
    it->second.first += s.q;
    it->second.second += 1;
  }
  for (const auto& id : order) {
    const auto& [sum, count] = acc.at(id);
    out.emplace_back(id, sum / count);
  }
  return out;
}

PercentileSplit percentile_filter(std::span<const std::pair<std::string, double>> q_by_image,
                                  double lower_percentile, double upper_percentile) {
  if (!(lower_percentile >= 0.0 && lower_percentile < upper_percentile &&
        upper_percentile <= 100.0)) {
    throw ArgumentError("percentile_filter: need 0 <= lower < upper <= 100");
  }
  const size_t n = q_by_image.size();
  if (n == 0) throw ArgumentError("percentile_filter: empty score set");

  std::vector<double> sorted;
  sorted.reserve(n);
  for (const auto& [_, q] : q_by_image) sorted.push_back(q);
  std::sort(sorted.begin(), sorted.end());

  // Nearest rank: the P-th percentile is the ceil(P/100 * n)-th smallest.
  const auto rank = [&](double p) {
    return static_cast<size_t>(
        std::ceil(p * static_cast<double>(n) / 100.0 - 1e-9));
  };
  const size_t k_low = rank(lower_percentile);
  const size_t k_up = rank(upper_percentile);

  PercentileSplit split;
  const bool has_low = k_low >= 1;
  const double cut_low = has_low ? sorted[k_low - 1] : 0.0;
  const double cut_up = sorted[k_up - 1];
  for (const auto& [id, q] : q_by_image) {
    if (has_low && q <= cut_low) {
      split.below_lower.push_back(id);  // ties at the cut stay below
    } else if (q > cut_up) {
      split.above_upper.push_back(id);
    } else {
      split.middle.push_back(id);
    }
  }
  return split;
}

}  // namespace advsource
