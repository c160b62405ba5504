#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advsource/attacks.hpp"
#include "advsource/tensor.hpp"

namespace advsource {

// Perturbation norms in [0,1] pixel units over all C*H*W elements.
double l2_norm(const ImageTensor& x, const ImageTensor& x_hat);
double linf_norm(const ImageTensor& x, const ImageTensor& x_hat);

enum class Norm { kL2, kLinf };

inline std::optional<double> record_norm(const AttackRecord& r, Norm p) {
  return p == Norm::kL2 ? r.l2 : r.linf;
}

// d_p: least perturbation converting the image into an adversarial example
// for target model j, over source models i != j. Records must belong to one
// (image, attack). Absent when no transfer to j succeeded.
std::optional<double> min_perturbation_for_target(std::span<const AttackRecord> records,
                                                  int target_model, Norm p);

// D_p: least perturbation achieving transfer to any model (min over targets).
std::optional<double> min_perturbation_any_target(std::span<const AttackRecord> records, Norm p);

// Transferability count T: successful ordered pairs (i, j), i != j, for one
// (image, attack). White-box records are ignored. Duplicate (i, j) records
// raise DataError.
int transfer_count(std::span<const AttackRecord> records);

enum class MatrixMode { kUntargeted, kTargeted };

// N x N proportion matrix over an image set: cell (i, j) is the fraction of
// images with a successful i -> j record (targeted mode additionally requires
// targeted_hit); the diagonal reports the white-box success fraction. Cells
// are absent when the image set is empty.
struct TransferMatrix {
  int num_models = 0;
  std::vector<std::optional<double>> cells;  // row-major
  std::optional<double>& at(int i, int j) { return cells[i * num_models + j]; }
  const std::optional<double>& at(int i, int j) const { return cells[i * num_models + j]; }
};

TransferMatrix transfer_matrix(std::span<const AttackRecord> records,
                               const std::vector<std::string>& image_ids, int num_models,
                               MatrixMode mode);

// Everything the analyses need about one source image.
struct TransferSummary {
  std::string image_id;
  std::map<AttackKind, int> transfer_counts;                       // T per attack
  std::map<AttackKind, std::vector<std::optional<double>>> d_l2;   // per target model
  std::map<AttackKind, std::vector<std::optional<double>>> d_linf;
  std::map<AttackKind, std::optional<double>> overall_l2;          // D_p
  std::map<AttackKind, std::optional<double>> overall_linf;

  // Mean of T over the attacks present.
  double mean_transfer_count() const;
};

TransferSummary summarize_image(std::span<const AttackRecord> records_for_image, int num_models);

}  // namespace advsource
