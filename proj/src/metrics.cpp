#include "advsource/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "advsource/error.hpp"

namespace advsource {

double l2_norm(const ImageTensor& x, const ImageTensor& x_hat) {
  require_same_shape(x, x_hat, "l2_norm");
  return (x.pixels - x_hat.pixels).norm();
}

double linf_norm(const ImageTensor& x, const ImageTensor& x_hat) {
  require_same_shape(x, x_hat, "linf_norm");
  if (x.pixels.size() == 0) return 0.0;
  return (x.pixels - x_hat.pixels).cwiseAbs().maxCoeff();
}

std::optional<double> min_perturbation_for_target(std::span<const AttackRecord> records,
                                                  int target_model, Norm p) {
  std::optional<double> best;
  for (const auto& r : records) {
    if (r.target_model != target_model || r.source_model == target_model) continue;
    if (!r.success) continue;
    const auto norm = record_norm(r, p);
    if (!norm) throw DataError("min_perturbation_for_target: successful record without norms");
    if (!best || *norm < *best) best = *norm;
  }
  return best;
}

std::optional<double> min_perturbation_any_target(std::span<const AttackRecord> records, Norm p) {
  std::set<int> targets;
  for (const auto& r : records) targets.insert(r.target_model);
  std::optional<double> best;
  for (const int j : targets) {
    const auto d = min_perturbation_for_target(records, j, p);
    if (d && (!best || *d < *best)) best = *d;
  }
  return best;
}

int transfer_count(std::span<const AttackRecord> records) {
  std::set<std::pair<int, int>> seen;
  int count = 0;
  for (const auto& r : records) {
    if (r.source_model == r.target_model) continue;  // white-box bookkeeping
    if (!seen.insert({r.source_model, r.target_model}).second) {
      throw DataError("transfer_count: duplicate record for pair (" +
                      std::to_string(r.source_model) + "," + std::to_string(r.target_model) + ")");
    }
    if (r.success) ++count;
  }
  return count;
}

TransferMatrix transfer_matrix(std::span<const AttackRecord> records,
                               const std::vector<std::string>& image_ids, int num_models,
                               MatrixMode mode) {
  if (num_models < 1) throw ArgumentError("transfer_matrix: num_models must be positive");
  TransferMatrix m;
  m.num_models = num_models;
  m.cells.assign(static_cast<size_t>(num_models) * num_models, std::nullopt);
  if (image_ids.empty()) return m;  // undefined-empty: all cells absent

  std::set<std::string> wanted(image_ids.begin(), image_ids.end());
  // Per cell, the set of images with at least one qualifying record.
  std::vector<std::set<std::string>> hits(m.cells.size());
  std::optional<AttackKind> kind;
  for (const auto& r : records) {
    if (!kind) {
      kind = r.attack_kind;
    } else if (*kind != r.attack_kind) {
      throw ArgumentError("transfer_matrix: records mix attack kinds");
    }
    if (r.source_model < 0 || r.source_model >= num_models || r.target_model < 0 ||
        r.target_model >= num_models) {
      throw ArgumentError("transfer_matrix: record model index out of range");
    }
    if (!wanted.count(r.image_id)) continue;
    const bool qualifies =
        mode == MatrixMode::kUntargeted ? r.success : (r.success && r.targeted_hit);
    if (qualifies) {
      hits[r.source_model * num_models + r.target_model].insert(r.image_id);
    }
  }
  const double denom = static_cast<double>(wanted.size());
  for (size_t c = 0; c < m.cells.size(); ++c) {
    m.cells[c] = static_cast<double>(hits[c].size()) / denom;
  }
  return m;
}

double TransferSummary::mean_transfer_count() const {
  if (transfer_counts.empty()) {
    throw DataError("TransferSummary: no attacks recorded for image '" + image_id + "'");
  }
  double sum = 0.0;
  for (const auto& [_, t] : transfer_counts) sum += t;
  return sum / static_cast<double>(transfer_counts.size());
}

TransferSummary summarize_image(std::span<const AttackRecord> records_for_image, int num_models) {
  TransferSummary summary;
  std::map<AttackKind, std::vector<AttackRecord>> by_attack;
  for (const auto& r : records_for_image) {
    if (is_noise_kind(r.attack_kind)) continue;
    if (summary.image_id.empty()) {
      summary.image_id = r.image_id;
    } else if (summary.image_id != r.image_id) {
      throw ArgumentError("summarize_image: records mix images");
    }
    by_attack[r.attack_kind].push_back(r);
  }
  for (const auto& [kind, recs] : by_attack) {
    summary.transfer_counts[kind] = transfer_count(recs);
    auto& d2 = summary.d_l2[kind];
    auto& dinf = summary.d_linf[kind];
    d2.resize(num_models);
    dinf.resize(num_models);
    for (int j = 0; j < num_models; ++j) {
      d2[j] = min_perturbation_for_target(recs, j, Norm::kL2);
      dinf[j] = min_perturbation_for_target(recs, j, Norm::kLinf);
    }
    summary.overall_l2[kind] = min_perturbation_any_target(recs, Norm::kL2);
    summary.overall_linf[kind] = min_perturbation_any_target(recs, Norm::kLinf);
  }
  return summary;
}

}  // namespace advsource
