#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "ncx/taskgen.hpp"
#include "support.hpp"

using namespace ncx;

TEST_SUITE_BEGIN("taskgen");

TEST_CASE("sinusoid: labels follow A*sin(x + b) exactly") {
  Rng rng(70);
  TaskBatch t = make_sinusoid_task(1.0, 0.0, rng);
  REQUIRE(t.sinusoid.has_value());
  CHECK(t.sinusoid->amplitude * std::sin(0.0 + t.sinusoid->phase) == 0.0);
  CHECK(std::fabs(t.sinusoid->amplitude * std::sin(1.5707963267948966 + t.sinusoid->phase) -
                  1.0) < 1e-15);
  for (std::size_t i = 0; i < t.x_tr.rows; ++i)
    CHECK(std::fabs(t.y_tr(i, 0) - std::sin(t.x_tr(i, 0))) < 1e-12);

  Rng rng2(71);
  for (int k = 0; k < 50; ++k) {
    TaskBatch s = sample_sinusoid_task(rng2);
    REQUIRE(s.sinusoid.has_value());
    for (std::size_t i = 0; i < s.y_te.rows; ++i) {
      CHECK(std::fabs(s.y_te(i, 0)) <= s.sinusoid->amplitude + 1e-12);
      CHECK(s.sinusoid->amplitude <= 5.0);
      CHECK(std::fabs(s.y_te(i, 0) - s.sinusoid->amplitude *
                                         std::sin(s.x_te(i, 0) + s.sinusoid->phase)) < 1e-12);
    }
  }
}

TEST_CASE("sinusoid: amplitude distribution matches U[0.1, 5]") {
  Rng rng(72);
  double sum = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) sum += sample_sinusoid_task(rng, 1, 1).sinusoid->amplitude;
  CHECK(std::fabs(sum / n - 2.55) < 0.05);
}

TEST_CASE("sinusoid tasks are deterministic in the seed") {
  Rng a(73), b(73);
  TaskBatch ta = sample_sinusoid_task(a);
  TaskBatch tb = sample_sinusoid_task(b);
  CHECK(ta.x_tr == tb.x_tr);
  CHECK(ta.y_te == tb.y_te);
}

namespace {
double nearest_center_accuracy(const TaskBatch& t) {
  // centers re-estimated as per-class train means
  const std::size_t c = t.classes, d = t.x_tr.cols;
  Matrix centers(c, d);
  std::vector<double> counts(c, 0.0);
  for (std::size_t i = 0; i < t.x_tr.rows; ++i) {
    std::size_t label = 0;
    for (std::size_t j = 0; j < c; ++j)
      if (t.y_tr(i, j) > 0.5) label = j;
    counts[label] += 1;
    for (std::size_t j = 0; j < d; ++j) centers(label, j) += t.x_tr(i, j);
  }
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t j = 0; j < d; ++j) centers(k, j) /= std::max(counts[k], 1.0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < t.x_te.rows; ++i) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t k = 0; k < c; ++k) {
      double dist = 0;
      for (std::size_t j = 0; j < d; ++j)
        dist += (t.x_te(i, j) - centers(k, j)) * (t.x_te(i, j) - centers(k, j));
      if (dist < bd) {
        bd = dist;
        best = k;
      }
    }
    if (t.y_te(i, best) > 0.5) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(t.x_te.rows);
}
}  // namespace

TEST_CASE("classification: separable at sigma 0, balanced, chance at huge sigma") {
  Rng rng(74);
  TaskBatch sep = sample_synthetic_classification_task(rng, 3, 12, 12, 4, 0.0);
  CHECK(nearest_center_accuracy(sep) == 1.0);

  TaskBatch bal = sample_synthetic_classification_task(rng, 2, 4, 6, 3, 0.3);
  double class0 = 0;
  for (std::size_t i = 0; i < 4; ++i) class0 += bal.y_tr(i, 0);
  CHECK(class0 == 2.0);

  double acc_sum = 0;
  const int trials = 1000;
  for (int i = 0; i < trials; ++i) {
    TaskBatch noisy = sample_synthetic_classification_task(rng, 4, 8, 8, 3, 20.0);
    acc_sum += nearest_center_accuracy(noisy);
  }
  CHECK(std::fabs(acc_sum / trials - 0.25) < 0.05);

  CHECK_THROWS_AS(sample_synthetic_classification_task(rng, 3, 10, 9, 2), ContractError);
}

TEST_CASE("subtask sampling: partitions, disjointness, determinism") {
  Rng rng(75);
  Dataset ds;
  ds.kind = TaskKind::kRegression;
  ds.x = ncx::testing::random_matrix(20, 2, rng);
  ds.y = ncx::testing::random_matrix(20, 1, rng);

  SplitProtocol proto{&ds, 12, 8};
  Rng srng(76);
  TaskBatch t = sample_subtask(proto, srng);
  std::set<std::uint64_t> seen(t.idx_tr.begin(), t.idx_tr.end());
  seen.insert(t.idx_te.begin(), t.idx_te.end());
  CHECK(seen.size() == 20);  // exact partition when train + val = rows

  Rng s1(77), s2(78);
  TaskBatch a = sample_subtask(proto, s1);
  TaskBatch b = sample_subtask(proto, s2);
  CHECK(a.idx_tr != b.idx_tr);

  Rng s3(79), s4(79);
  CHECK(sample_subtask(proto, s3).idx_tr == sample_subtask(proto, s4).idx_tr);

  SplitProtocol small{&ds, 18, 8};
  Rng s5(80);
  CHECK_THROWS_AS(sample_subtask(small, s5), ContractError);

  // disjoint on every draw
  SplitProtocol loose{&ds, 5, 5};
  Rng s6(81);
  for (int i = 0; i < 1000; ++i) {
    TaskBatch sub = sample_subtask(loose, s6);
    std::set<std::uint64_t> tr(sub.idx_tr.begin(), sub.idx_tr.end());
    for (std::uint64_t ix : sub.idx_te) CHECK(!tr.contains(ix));
  }
}

TEST_CASE("subtask rows match the dataset rows they reference") {
  Rng rng(82);
  Dataset ds;
  ds.kind = TaskKind::kRegression;
  ds.x = ncx::testing::random_matrix(15, 3, rng);
  ds.y = ncx::testing::random_matrix(15, 1, rng);
  SplitProtocol proto{&ds, 6, 4};
  Rng srng(83);
  TaskBatch t = sample_subtask(proto, srng);
  for (std::size_t i = 0; i < t.idx_tr.size(); ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(t.x_tr(i, j) == ds.x(t.idx_tr[i], j));
}

TEST_CASE("dataset file round-trip and corruption") {
  Rng rng(84);
  Dataset ds;
  ds.kind = TaskKind::kClassification;
  ds.classes = 3;
  ds.x = ncx::testing::random_matrix(10, 4, rng);
  ds.y = Matrix(10, 3);
  for (std::size_t i = 0; i < 10; ++i) ds.y(i, rng.index(3)) = 1.0;

  const auto dir = std::filesystem::temp_directory_path() / "ncx_taskgen_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "data.ncxdata";
  save_dataset(ds, path);
  Dataset back = load_dataset(path);
  CHECK(back.kind == ds.kind);
  CHECK(back.classes == 3);
  CHECK(back.x == ds.x);
  CHECK(back.y == ds.y);

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(12);
  const char junk = 0x5a;
  f.write(&junk, 1);
  f.close();
  CHECK_THROWS_AS(load_dataset(path), FormatError);
}

TEST_CASE("feature scaler whitens to zero mean and unit variance") {
  Rng rng(85);
  Matrix x = ncx::testing::random_matrix(50, 3, rng, -4, 9);
  FeatureScaler scaler = FeatureScaler::fit(x);
  Matrix w = scaler.apply(x);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < 50; ++i) mean += w(i, j);
    mean /= 50;
    for (std::size_t i = 0; i < 50; ++i) var += (w(i, j) - mean) * (w(i, j) - mean);
    var /= 50;
    CHECK(std::fabs(mean) < 1e-12);
    CHECK(std::fabs(var - 1.0) < 1e-10);
  }
}

TEST_SUITE_END();
