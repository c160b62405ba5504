#include "advsource/reports.hpp"

#include <cstdio>
#include <fstream>

#include "advsource/error.hpp"

namespace advsource {

std::string format_proportion(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string format_norm(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& out) {
  std::ofstream os(out, std::ios::trunc);
  if (!os) throw IoError("cannot write CSV: " + out.string());
  return os;
}

void close_csv(std::ofstream& os, const std::filesystem::path& out) {
  os.flush();
  if (!os) throw IoError("short write to CSV: " + out.string());
}

void write_matrix_block(std::ofstream& os, const TransferMatrix& matrix,
                        const std::vector<std::string>& model_ids) {
  os << "source";
  for (const auto& id : model_ids) os << "," << id;
  os << "\n";
  for (int i = 0; i < matrix.num_models; ++i) {
    os << model_ids[i];
    for (int j = 0; j < matrix.num_models; ++j) {
      const auto& cell = matrix.at(i, j);
      os << "," << (cell ? format_proportion(*cell) : std::string("null"));
    }
    os << "\n";
  }
}

}  // namespace

void write_matrix_csv(const std::filesystem::path& out, const TransferMatrix& matrix,
                      const std::vector<std::string>& model_ids) {
  if (static_cast<int>(model_ids.size()) != matrix.num_models) {
    throw ArgumentError("write_matrix_csv: label count does not match matrix size");
  }
  auto os = open_csv(out);
  write_matrix_block(os, matrix, model_ids);
  close_csv(os, out);
}

void write_histogram_csv(const std::filesystem::path& out, const Histogram& hist) {
  auto os = open_csv(out);
  os << "bin_low,bin_high,count\n";
  for (size_t b = 0; b < hist.counts.size(); ++b) {
    os << format_norm(hist.edges[b]) << "," << format_norm(hist.edges[b + 1]) << ","
       << hist.counts[b] << "\n";
  }
  close_csv(os, out);
}

void write_correlation_csv(const std::filesystem::path& out,
                           std::span<const CorrelationRow> rows) {
  auto os = open_csv(out);
  os << "attack,estimate,property,pearson_r,pairs\n";
  for (const auto& row : rows) {
    os << to_string(row.attack) << "," << row.estimate << "," << row.property << ","
       << format_proportion(row.r) << "," << row.pairs << "\n";
  }
  close_csv(os, out);
}

void write_sampling_csv(const std::filesystem::path& out,
                        const std::vector<std::string>& subset_names,
                        std::span<const SamplingReport> reports) {
  if (subset_names.size() != reports.size()) {
    throw ArgumentError("write_sampling_csv: one report per subset required");
  }
  if (reports.empty()) throw ArgumentError("write_sampling_csv: no reports");
  const size_t n_cells = reports.front().cells.size();
  for (const auto& r : reports) {
    if (r.cells.size() != n_cells) {
      throw ArgumentError("write_sampling_csv: reports disagree on cell grid");
    }
  }

  auto os = open_csv(out);
  os << "source,target,attack,metric,stat";
  for (const auto& name : subset_names) os << "," << name;
  os << "\n";

  static const char* kStats[3] = {"low", "avg", "high"};
  // Norm rows appear in [0,1] units and in /255 units.
  struct MetricRow {
    const char* metric;
    double scale;
    bool is_transfer;
  };
  static const MetricRow kMetrics[] = {
      {"transfer", 1.0, true},    {"l2", 1.0, false},       {"linf", 1.0, false},
      {"l2_255", 255.0, false},   {"linf_255", 255.0, false},
  };

  for (size_t c = 0; c < n_cells; ++c) {
    const SamplingCell& head = reports.front().cells[c];
    for (const auto& metric : kMetrics) {
      for (int s = 0; s < 3; ++s) {
        os << head.source_model << "," << head.target_model << "," << to_string(head.attack)
           << "," << metric.metric << "," << kStats[s];
        for (const auto& report : reports) {
          const SamplingCell& cell = report.cells[c];
          std::optional<double> value;
          if (metric.is_transfer) {
            value = (s == 0) ? cell.transfer_low : (s == 1) ? cell.transfer_avg : cell.transfer_high;
          } else {
            const bool is_l2 =
                std::string(metric.metric) == "l2" || std::string(metric.metric) == "l2_255";
            const auto lo = is_l2 ? cell.l2_low : cell.linf_low;
            const auto av = is_l2 ? cell.l2_avg : cell.linf_avg;
            const auto hi = is_l2 ? cell.l2_high : cell.linf_high;
            value = (s == 0) ? lo : (s == 1) ? av : hi;
            if (value) value = *value * metric.scale;
          }
          if (!value) {
            os << ",null";
          } else if (metric.is_transfer) {
            os << "," << format_proportion(*value);
          } else {
            os << "," << format_norm(*value);
          }
        }
        os << "\n";
      }
    }
  }
  close_csv(os, out);
}

void write_split_csv(const std::filesystem::path& out, const SplitReport& report,
                     const std::vector<std::string>& model_ids) {
  auto os = open_csv(out);
  struct Block {
    const char* set_name;
    const std::map<AttackKind, TransferMatrix>* matrices;
  };
  const Block blocks[] = {
      {"S", &report.all}, {"S_f", &report.fragile}, {"S_h", &report.hard}};
  bool first = true;
  for (const auto& block : blocks) {
    for (const auto& [kind, matrix] : *block.matrices) {
      if (!first) os << "\n";
      first = false;
      os << "set,attack\n" << block.set_name << "," << to_string(kind) << "\n";
      write_matrix_block(os, matrix, model_ids);
    }
  }
  close_csv(os, out);
}

void write_scores_csv(const std::filesystem::path& out,
                      std::span<const SuitabilityScore> scores) {
  auto os = open_csv(out);
  os << "image_id,model_id,q,one_minus_max,mse,wd\n";
  for (const auto& s : scores) {
    os << s.image_id << "," << s.model_id << "," << format_norm(s.q) << ","
       << format_norm(s.one_minus_max) << "," << format_norm(s.mse) << "," << format_norm(s.wd)
       << "\n";
  }
  close_csv(os, out);
}

std::vector<SuitabilityScore> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open scores CSV: " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "image_id,model_id,q,one_minus_max,mse,wd") {
    throw DataError("scores CSV " + path.string() + ": unexpected header");
  }
  std::vector<SuitabilityScore> scores;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t start = 0;
    for (size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        fields.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != 6) {
      throw DataError("scores CSV " + path.string() + ":" + std::to_string(line_no) +
                      ": expected 6 fields");
    }
    try {
      SuitabilityScore s;
      s.image_id = fields[0];
      s.model_id = fields[1];
      s.q = std::stod(fields[2]);
      s.one_minus_max = std::stod(fields[3]);
      s.mse = std::stod(fields[4]);
      s.wd = std::stod(fields[5]);
      scores.push_back(std::move(s));
    } catch (const std::exception&) {
      throw DataError("scores CSV " + path.string() + ":" + std::to_string(line_no) +
                      ": malformed numeric field");
    }
  }
  return scores;
}

}  // namespace advsource
