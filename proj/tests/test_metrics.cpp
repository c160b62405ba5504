#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "advsource/error.hpp"
#include "advsource/metrics.hpp"
#include "advsource/rng.hpp"
#include "support/test_models.hpp"

using namespace advsource;
using namespace advsource::testing;

namespace {

AttackRecord make_record(const std::string& image, AttackKind kind, int i, int j, bool success,
                         double l2 = 0.0, double linf = 0.0) {
  AttackRecord r;
  r.image_id = image;
  r.attack_kind = kind;
  r.source_model = i;
  r.target_model = j;
  r.success = success;
  if (success) {
    r.l2 = l2;
    r.linf = linf;
  }
  return r;
}

// Independent random record set over one image: every ordered pair present.
std::vector<AttackRecord> random_record_set(CounterRng& rng, int n_models) {
  std::vector<AttackRecord> records;
  for (int i = 0; i < n_models; ++i) {
    for (int j = 0; j < n_models; ++j) {
      if (i == j) continue;
      const bool success = rng.next_below(3) != 0;
      records.push_back(make_record("img", AttackKind::kPgd, i, j, success,
                                    0.5 + 9.5 * rng.next_double(),
                                    0.01 + 0.14 * rng.next_double()));
    }
  }
  return records;
}

}  // namespace

TEST_CASE("norms of identical tensors vanish") {
  const ImageTensor x = random_grid_image(Shape{2, 3, 3}, 1);
  CHECK(l2_norm(x, x) == 0.0);
  CHECK(linf_norm(x, x) == 0.0);
}

TEST_CASE("uniform perturbation has the closed-form norms") {
  const Shape big{3, 224, 224};
  const ImageTensor x = uniform_image(big, 0.3);
  ImageTensor shifted = x;
  shifted.pixels.array() += 0.1;
  CHECK(linf_norm(x, shifted) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(l2_norm(x, shifted) ==
        doctest::Approx(0.1 * std::sqrt(3.0 * 224 * 224)).epsilon(1e-12));
}

TEST_CASE("norms match a naive elementwise loop") {
  CounterRng rng(StreamKey(77));
  for (int t = 0; t < 50; ++t) {
    const Shape shape{1, 4, 5};
    ImageTensor a = ImageTensor::zeros(shape), b = ImageTensor::zeros(shape);
    for (Eigen::Index i = 0; i < a.pixels.size(); ++i) {
      a.pixels[i] = rng.next_double();
      b.pixels[i] = rng.next_double();
    }
    double sum_sq = 0.0, max_abs = 0.0;
    for (Eigen::Index i = 0; i < a.pixels.size(); ++i) {
      const double d = a.pixels[i] - b.pixels[i];
      sum_sq += d * d;
      max_abs = std::max(max_abs, std::abs(d));
    }
    CHECK(std::abs(l2_norm(a, b) - std::sqrt(sum_sq)) <= 1e-12);
    CHECK(std::abs(linf_norm(a, b) - max_abs) <= 1e-12);
  }
}

TEST_CASE("norms reject shape mismatches") {
  const ImageTensor a = uniform_image(Shape{1, 2, 2}, 0.5);
  const ImageTensor b = uniform_image(Shape{1, 2, 3}, 0.5);
  CHECK_THROWS_AS(l2_norm(a, b), ShapeError);
  CHECK_THROWS_AS(linf_norm(a, b), ShapeError);
}

TEST_CASE("per-target minimum picks the smallest successful transfer") {
  std::vector<AttackRecord> records{
      make_record("img", AttackKind::kPgd, 0, 2, true, 3.0, 0.10),
      make_record("img", AttackKind::kPgd, 1, 2, true, 2.5, 0.12),
      make_record("img", AttackKind::kPgd, 2, 2, true, 0.1, 0.01),  // white-box, excluded
      make_record("img", AttackKind::kPgd, 0, 1, false),
  };
  const auto d2 = min_perturbation_for_target(records, 2, Norm::kL2);
  REQUIRE(d2.has_value());
  CHECK(*d2 == 2.5);
  CHECK_FALSE(min_perturbation_for_target(records, 1, Norm::kL2).has_value());
}

TEST_CASE("overall minimum is the min over targets") {
  std::vector<AttackRecord> records{
      make_record("img", AttackKind::kPgd, 0, 1, true, 4.1, 0.1),
      make_record("img", AttackKind::kPgd, 0, 2, true, 3.3, 0.2),
      make_record("img", AttackKind::kPgd, 1, 0, false),
  };
  const auto d = min_perturbation_any_target(records, Norm::kL2);
  REQUIRE(d.has_value());
  CHECK(*d == 3.3);

  std::vector<AttackRecord> none{make_record("img", AttackKind::kPgd, 0, 1, false)};
  CHECK_FALSE(min_perturbation_any_target(none, Norm::kL2).has_value());
}

TEST_CASE("minimum perturbations match brute-force scans on random sets") {
  CounterRng rng(StreamKey(5));
  for (int t = 0; t < 200; ++t) {
    const int n = 3 + static_cast<int>(rng.next_below(5));
    const auto records = random_record_set(rng, n);
    for (int j = 0; j < n; ++j) {
      std::optional<double> expected;
      for (const auto& r : records) {
        if (r.target_model == j && r.source_model != j && r.success) {
          if (!expected || *r.l2 < *expected) expected = *r.l2;
        }
      }
      CHECK(min_perturbation_for_target(records, j, Norm::kL2) == expected);
    }
    // Flat scan over every successful transfer.
    std::optional<double> flat;
    for (const auto& r : records) {
      if (r.success && r.source_model != r.target_model) {
        if (!flat || *r.linf < *flat) flat = *r.linf;
      }
    }
    CHECK(min_perturbation_any_target(records, Norm::kLinf) == flat);
  }
}

TEST_CASE("transfer count spans 0 to N(N-1)") {
  std::vector<AttackRecord> none;
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j) {
      if (i != j) none.push_back(make_record("img", AttackKind::kPgd, i, j, false));
    }
  }
  CHECK(transfer_count(none) == 0);

  std::vector<AttackRecord> all;
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j) {
      if (i != j) all.push_back(make_record("img", AttackKind::kPgd, i, j, true, 1.0, 0.1));
    }
  }
  CHECK(transfer_count(all) == 42);
}

TEST_CASE("transfer count matches a double loop and rejects duplicates") {
  CounterRng rng(StreamKey(6));
  for (int t = 0; t < 200; ++t) {
    const int n = 2 + static_cast<int>(rng.next_below(6));
    const auto records = random_record_set(rng, n);
    int expected = 0;
    for (const auto& r : records) {
      if (r.source_model != r.target_model && r.success) ++expected;
    }
    CHECK(transfer_count(records) == expected);
  }

  std::vector<AttackRecord> dup{make_record("img", AttackKind::kPgd, 0, 1, true, 1.0, 0.1),
                                make_record("img", AttackKind::kPgd, 0, 1, false)};
  CHECK_THROWS_AS(transfer_count(dup), DataError);
}

TEST_CASE("transfer matrix basics") {
  const std::vector<std::string> images{"a", "b"};

  const TransferMatrix zeros = transfer_matrix({}, images, 3, MatrixMode::kUntargeted);
  for (const auto& cell : zeros.cells) {
    REQUIRE(cell.has_value());
    CHECK(*cell == 0.0);
  }

  const TransferMatrix empty = transfer_matrix({}, {}, 3, MatrixMode::kUntargeted);
  for (const auto& cell : empty.cells) CHECK_FALSE(cell.has_value());

  std::vector<AttackRecord> records;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i != j) records.push_back(make_record("a", AttackKind::kPgd, i, j, true, 1.0, 0.1));
    }
  }
  const TransferMatrix single = transfer_matrix(records, {"a"}, 3, MatrixMode::kUntargeted);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i != j) CHECK(*single.at(i, j) == 1.0);
    }
  }
}

TEST_CASE("transfer matrix matches per-cell counting and the partition identity") {
  CounterRng rng(StreamKey(8));
  const int n_models = 3;
  std::vector<AttackRecord> records;
  std::vector<std::string> images;
  for (int img = 0; img < 40; ++img) {
    const std::string id = "img" + std::to_string(img);
    images.push_back(id);
    for (int i = 0; i < n_models; ++i) {
      for (int j = 0; j < n_models; ++j) {
        if (i == j) continue;
        records.push_back(make_record(id, AttackKind::kPgd, i, j, rng.next_below(2) == 0,
                                      1.0 + rng.next_double(), 0.05));
      }
    }
  }
  const TransferMatrix m = transfer_matrix(records, images, n_models, MatrixMode::kUntargeted);
  for (int i = 0; i < n_models; ++i) {
    for (int j = 0; j < n_models; ++j) {
      if (i == j) continue;
      int count = 0;
      for (const auto& id : images) {
        for (const auto& r : records) {
          if (r.image_id == id && r.source_model == i && r.target_model == j && r.success) {
            ++count;
            break;
          }
        }
      }
      CHECK(*m.at(i, j) == doctest::Approx(count / 40.0).epsilon(1e-12));
    }
  }

  // Weighted average over a partition reconstructs the full matrix exactly.
  const std::vector<std::string> part_a(images.begin(), images.begin() + 15);
  const std::vector<std::string> part_b(images.begin() + 15, images.end());
  const TransferMatrix ma = transfer_matrix(records, part_a, n_models, MatrixMode::kUntargeted);
  const TransferMatrix mb = transfer_matrix(records, part_b, n_models, MatrixMode::kUntargeted);
  for (size_t c = 0; c < m.cells.size(); ++c) {
    const double reconstructed =
        (*ma.cells[c] * part_a.size() + *mb.cells[c] * part_b.size()) / images.size();
    CHECK(*m.cells[c] == doctest::Approx(reconstructed).epsilon(1e-12));
  }
}

TEST_CASE("targeted matrix requires targeted hits") {
  std::vector<AttackRecord> records{make_record("a", AttackKind::kPgd, 0, 1, true, 1.0, 0.1)};
  records[0].targeted_hit = false;
  const TransferMatrix untargeted =
      transfer_matrix(records, {"a"}, 2, MatrixMode::kUntargeted);
  const TransferMatrix targeted = transfer_matrix(records, {"a"}, 2, MatrixMode::kTargeted);
  CHECK(*untargeted.at(0, 1) == 1.0);
  CHECK(*targeted.at(0, 1) == 0.0);
}

TEST_CASE("transfer matrix rejects mixed attack kinds") {
  std::vector<AttackRecord> mixed{make_record("a", AttackKind::kPgd, 0, 1, true, 1.0, 0.1),
                                  make_record("a", AttackKind::kCw, 1, 0, false)};
  CHECK_THROWS_AS(transfer_matrix(mixed, {"a"}, 2, MatrixMode::kUntargeted), ArgumentError);
}

TEST_CASE("adding a success never lowers T nor raises the minima") {
  CounterRng rng(StreamKey(9));
  for (int t = 0; t < 100; ++t) {
    const int n = 4;
    auto records = random_record_set(rng, n);
    // Drop one pair's records so a success can be added.
    records.erase(std::remove_if(records.begin(), records.end(),
                                 [](const AttackRecord& r) {
                                   return r.source_model == 0 && r.target_model == 1;
                                 }),
                  records.end());
    const int t_before = transfer_count(records);
    const auto d_before = min_perturbation_for_target(records, 1, Norm::kL2);
    const auto overall_before = min_perturbation_any_target(records, Norm::kL2);

    records.push_back(make_record("img", AttackKind::kPgd, 0, 1, true,
                                  0.5 + 9.5 * rng.next_double(), 0.1));
    CHECK(transfer_count(records) >= t_before);
    const auto d_after = min_perturbation_for_target(records, 1, Norm::kL2);
    REQUIRE(d_after.has_value());
    if (d_before) CHECK(*d_after <= *d_before);
    const auto overall_after = min_perturbation_any_target(records, Norm::kL2);
    if (overall_before) CHECK(*overall_after <= *overall_before);
  }
}

TEST_CASE("summarize_image aggregates per attack") {
  std::vector<AttackRecord> records{
      make_record("img", AttackKind::kPgd, 0, 1, true, 2.0, 0.1),
      make_record("img", AttackKind::kPgd, 1, 0, false),
      make_record("img", AttackKind::kMifgsm, 0, 1, true, 1.0, 0.05),
      make_record("img", AttackKind::kMifgsm, 1, 0, true, 3.0, 0.2),
      make_record("img", AttackKind::kGaussian, -1, 0, true, 0.5, 0.02),  // ignored
  };
  const TransferSummary s = summarize_image(records, 2);
  CHECK(s.transfer_counts.at(AttackKind::kPgd) == 1);
  CHECK(s.transfer_counts.at(AttackKind::kMifgsm) == 2);
  CHECK(s.transfer_counts.count(AttackKind::kGaussian) == 0);
  CHECK(s.mean_transfer_count() == doctest::Approx(1.5));
  CHECK(*s.overall_l2.at(AttackKind::kPgd) == 2.0);
  CHECK(*s.d_l2.at(AttackKind::kMifgsm)[0] == 3.0);
  CHECK(*s.d_l2.at(AttackKind::kMifgsm)[1] == 1.0);
}
