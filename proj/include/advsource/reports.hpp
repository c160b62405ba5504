#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "advsource/experiments.hpp"
#include "advsource/metrics.hpp"
#include "advsource/suitability.hpp"

namespace advsource {

// CSV emission shared by the CLI and the test suites. All writers are
// deterministic: fixed column orders, '.' decimals, proportions with four
// fractional digits, norms with %.9g, absent values as "null".

void write_matrix_csv(const std::filesystem::path& out, const TransferMatrix& matrix,
                      const std::vector<std::string>& model_ids);

void write_histogram_csv(const std::filesystem::path& out, const Histogram& hist);

void write_correlation_csv(const std::filesystem::path& out,
                           std::span<const CorrelationRow> rows);

// Columns: one per named subset, rows = (source, target, attack, metric, stat).
// Norm rows appear in [0,1] units and in /255 units.
void write_sampling_csv(const std::filesystem::path& out,
                        const std::vector<std::string>& subset_names,
                        std::span<const SamplingReport> reports);

// Stacked matrix blocks (set, attack) separated by blank lines.
void write_split_csv(const std::filesystem::path& out, const SplitReport& report,
                     const std::vector<std::string>& model_ids);

void write_scores_csv(const std::filesystem::path& out, std::span<const SuitabilityScore> scores);

std::vector<SuitabilityScore> read_scores_csv(const std::filesystem::path& path);

std::string format_proportion(double v);
std::string format_norm(double v);

}  // namespace advsource
