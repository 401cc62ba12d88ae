#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ncx/matrix.hpp"
#include "ncx/rng.hpp"
#include "ncx/types.hpp"

namespace ncx {

/// One sampled task: a train/test split with labels. When drawn from a
/// fixed dataset the original row indices are kept so snapshots can store
/// indices instead of data.
struct TaskBatch {
  TaskKind kind = TaskKind::kRegression;
  Matrix x_tr, y_tr, x_te, y_te;
  std::size_t classes = 0;  // classification only

  struct SinusoidParams {
    double amplitude = 1.0;
    double phase = 0.0;
  };
  std::optional<SinusoidParams> sinusoid;

  std::vector<std::uint64_t> idx_tr, idx_te;  // provenance for dataset sub-tasks
  std::uint64_t seed = 0;
};

/// y = A·sin(x + b) with A ~ U[0.1, 5], b ~ U[0, π], x i.i.d. U[-5, 5];
/// labels are noise-free.
TaskBatch sample_sinusoid_task(Rng& rng, std::size_t m = 10, std::size_t m_te = 15);

/// Same task family with amplitude and phase pinned (for tests).
TaskBatch make_sinusoid_task(double amplitude, double phase, Rng& rng, std::size_t m = 10,
                             std::size_t m_te = 15);

/// Gaussian blobs: class centers uniform on the unit sphere, points are
/// center + sigma·noise, one-hot labels, classes balanced in both splits.
TaskBatch sample_synthetic_classification_task(Rng& rng, std::size_t classes, std::size_t m,
                                               std::size_t m_te, std::size_t dim,
                                               double sigma = 0.25);

/// In-memory dataset backing the single-task protocol.
struct Dataset {
  TaskKind kind = TaskKind::kRegression;
  std::size_t classes = 0;  // classification: y is one-hot with this width
  Matrix x, y;

  std::size_t rows() const { return x.rows; }
  std::size_t feature_dim() const { return x.cols; }
  std::size_t label_dim() const { return y.cols; }
  void validate() const;
};

/// Binary dataset file, layout (little-endian):
///   magic "NCXDATA1", u32 version=1,
///   u64 rows, u64 feature_dim, u64 label_dim, u8 kind, u64 classes,
///   f64 X payload (rows×feature_dim, row-major),
///   f64 Y payload (rows×label_dim, row-major),
///   u32 CRC-32 of everything above.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Per-feature whitening fit on a reference matrix.
struct FeatureScaler {
  std::vector<double> mean, stddev;
  static FeatureScaler fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;
};

/// Repeated random disjoint train/validation splits of one dataset.
struct SplitProtocol {
  const Dataset* dataset = nullptr;
  std::size_t train_count = 0;
  std::size_t val_count = 0;

  void validate() const;
};

/// Fresh disjoint index sets each call; validation rows fill the test side.
TaskBatch sample_subtask(const SplitProtocol& protocol, Rng& rng);

}  // namespace ncx
