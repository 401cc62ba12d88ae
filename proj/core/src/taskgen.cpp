#include "ncx/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ncx/serialize.hpp"

namespace ncx {

namespace {
constexpr std::string_view kDatasetMagic = "NCXDATA1";
constexpr std::uint32_t kDatasetVersion = 1;
constexpr double kPi = 3.14159265358979323846;

TaskBatch sinusoid_with(double amplitude, double phase, Rng& rng, std::size_t m,
                        std::size_t m_te) {
  if (m == 0 || m_te == 0) throw ContractError("sinusoid task: need m, m' >= 1");
  TaskBatch t;
  t.kind = TaskKind::kRegression;
  t.sinusoid = TaskBatch::SinusoidParams{amplitude, phase};
  t.seed = rng.seed();
  t.x_tr = Matrix(m, 1);
  t.y_tr = Matrix(m, 1);
  t.x_te = Matrix(m_te, 1);
  t.y_te = Matrix(m_te, 1);
  for (std::size_t i = 0; i < m; ++i) {
    const double x = rng.uniform(-5.0, 5.0);
    t.x_tr(i, 0) = x;
    t.y_tr(i, 0) = amplitude * std::sin(x + phase);
  }
  for (std::size_t i = 0; i < m_te; ++i) {
    const double x = rng.uniform(-5.0, 5.0);
    t.x_te(i, 0) = x;
    t.y_te(i, 0) = amplitude * std::sin(x + phase);
  }
  return t;
}
}  // namespace

TaskBatch sample_sinusoid_task(Rng& rng, std::size_t m, std::size_t m_te) {
  const double amplitude = rng.uniform(0.1, 5.0);
  const double phase = rng.uniform(0.0, kPi);
  return sinusoid_with(amplitude, phase, rng, m, m_te);
}

TaskBatch make_sinusoid_task(double amplitude, double phase, Rng& rng, std::size_t m,
                             std::size_t m_te) {
  return sinusoid_with(amplitude, phase, rng, m, m_te);
}

TaskBatch sample_synthetic_classification_task(Rng& rng, std::size_t classes, std::size_t m,
                                               std::size_t m_te, std::size_t dim, double sigma) {
  if (classes < 2) throw ContractError("classification task: need c >= 2");
  if (dim == 0) throw ContractError("classification task: need dim >= 1");
  if (m % classes != 0 || m_te % classes != 0)
    throw ContractError("classification task: split sizes " + std::to_string(m) + "/" +
                        std::to_string(m_te) + " are not divisible by " +
                        std::to_string(classes) + " classes");

  // class centers uniform on the unit sphere
  Matrix centers(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    double norm = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      centers(c, j) = rng.normal();
      norm += centers(c, j) * centers(c, j);
    }
    norm = std::sqrt(std::max(norm, 1e-12));
    for (std::size_t j = 0; j < dim; ++j) centers(c, j) /= norm;
  }

  TaskBatch t;
  t.kind = TaskKind::kClassification;
  t.classes = classes;
  t.seed = rng.seed();

  auto fill = [&](Matrix& x, Matrix& y, std::size_t n) {
    x = Matrix(n, dim);
    y = Matrix(n, classes);
    const std::size_t per_class = n / classes;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i / per_class;  // balanced by construction
      for (std::size_t j = 0; j < dim; ++j) x(i, j) = centers(c, j) + sigma * rng.normal();
      y(i, c) = 1.0;
    }
  };
  fill(t.x_tr, t.y_tr, m);
  fill(t.x_te, t.y_te, m_te);
  return t;
}

void Dataset::validate() const {
  if (x.rows != y.rows) throw DimensionError("Dataset: X/Y row mismatch");
  if (x.rows == 0) throw ContractError("Dataset: empty");
  if (kind == TaskKind::kClassification && (classes < 2 || y.cols != classes))
    throw ContractError("Dataset: classification labels must be one-hot with `classes` columns");
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  BinaryWriter w(path);
  w.bytes(kDatasetMagic.data(), kDatasetMagic.size());
  w.u32(kDatasetVersion);
  w.u64(ds.rows());
  w.u64(ds.feature_dim());
  w.u64(ds.label_dim());
  w.u8(ds.kind == TaskKind::kRegression ? 0 : 1);
  w.u64(ds.classes);
  w.f64_array(ds.x.v);
  w.f64_array(ds.y.v);
  w.finish();
}

Dataset load_dataset(const std::filesystem::path& path) {
  BinaryReader r(path);
  r.verify_crc_trailer();
  r.expect_magic(kDatasetMagic);
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw FormatError("dataset '" + path.string() + "': unsupported version " +
                      std::to_string(version));
  Dataset ds;
  const std::size_t rows = r.u64();
  const std::size_t fdim = r.u64();
  const std::size_t ldim = r.u64();
  ds.kind = r.u8() == 0 ? TaskKind::kRegression : TaskKind::kClassification;
  ds.classes = r.u64();
  ds.x = Matrix(rows, fdim, r.f64_array(rows * fdim));
  ds.y = Matrix(rows, ldim, r.f64_array(rows * ldim));
  if (!r.at_payload_end())
    throw FormatError("dataset '" + path.string() + "': trailing bytes at offset " +
                      std::to_string(r.offset()));
  ds.validate();
  return ds;
}

FeatureScaler FeatureScaler::fit(const Matrix& x) {
  if (x.rows == 0) throw ContractError("FeatureScaler: empty input");
  FeatureScaler s;
  s.mean.assign(x.cols, 0.0);
  s.stddev.assign(x.cols, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) s.mean[j] += x(i, j);
  for (double& mj : s.mean) mj /= static_cast<double>(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double d = x(i, j) - s.mean[j];
      s.stddev[j] += d * d;
    }
  for (double& v : s.stddev) v = std::max(std::sqrt(v / static_cast<double>(x.rows)), 1e-12);
  return s;
}

Matrix FeatureScaler::apply(const Matrix& x) const {
  if (x.cols != mean.size()) throw DimensionError("FeatureScaler: width mismatch");
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = (x(i, j) - mean[j]) / stddev[j];
  return out;
}

void SplitProtocol::validate() const {
  if (!dataset) throw ContractError("SplitProtocol: no dataset");
  dataset->validate();
  if (train_count == 0 || val_count == 0)
    throw ContractError("SplitProtocol: train_count and val_count must be >= 1");
  if (train_count + val_count > dataset->rows())
    throw ContractError("SplitProtocol: dataset has " + std::to_string(dataset->rows()) +
                        " rows, split needs " + std::to_string(train_count + val_count));
}

TaskBatch sample_subtask(const SplitProtocol& protocol, Rng& rng) {
  protocol.validate();
  const Dataset& ds = *protocol.dataset;
  const std::size_t n = ds.rows();
  const std::size_t take = protocol.train_count + protocol.val_count;

  // partial Fisher-Yates: the first `take` entries are a uniform sample
  // of distinct indices
  std::vector<std::uint64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.index(n - i);
    std::swap(idx[i], idx[j]);
  }

  TaskBatch t;
  t.kind = ds.kind;
  t.classes = ds.classes;
  t.seed = rng.seed();
  t.idx_tr.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(protocol.train_count));
  t.idx_te.assign(idx.begin() + static_cast<std::ptrdiff_t>(protocol.train_count),
                  idx.begin() + static_cast<std::ptrdiff_t>(take));

  auto gather = [&](const std::vector<std::uint64_t>& rows, Matrix& x, Matrix& y) {
    x = Matrix(rows.size(), ds.feature_dim());
    y = Matrix(rows.size(), ds.label_dim());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < ds.feature_dim(); ++j) x(i, j) = ds.x(rows[i], j);
      for (std::size_t j = 0; j < ds.label_dim(); ++j) y(i, j) = ds.y(rows[i], j);
    }
  };
  gather(t.idx_tr, t.x_tr, t.y_tr);
  gather(t.idx_te, t.x_te, t.y_te);
  return t;
}

}  // namespace ncx
