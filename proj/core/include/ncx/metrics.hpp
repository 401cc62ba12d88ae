#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace ncx {

/// One run-metrics row. `gap` is always test_loss − train_loss.
struct MetricsRecord {
  std::int64_t episode = 0;
  std::int64_t step = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double gap = 0.0;
  double nc_estimate = 0.0;
  double lambda = 0.0;
  double meta_loss = 0.0;
};

/// Shortest round-trip decimal rendering; deterministic.
std::string format_double(double v);

/// Appends rows to <dir>/<name>.ndjson plus a CSV mirror <name>.csv.
/// Rows carry no wall-clock fields, so identical runs produce
/// byte-identical streams. Run timing belongs in the sidecar run.json.
class MetricsWriter {
public:
  MetricsWriter(const std::filesystem::path& dir, const std::string& name);

  void write(const MetricsRecord& row);
  std::size_t rows_written() const { return rows_; }
  void flush();

  static constexpr std::string_view kCsvHeader =
      "episode,step,train_loss,test_loss,gap,nc_estimate,lambda,meta_loss";

private:
  std::ofstream ndjson_, csv_;
  std::size_t rows_ = 0;
};

/// Parses a stream written by MetricsWriter (either format by extension).
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& file);

}  // namespace ncx
