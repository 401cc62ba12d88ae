#include "ncx/metrics.hpp"

#include <array>
#include <charconv>
#include <cmath>

#include <json.hpp>

#include "ncx/errors.hpp"

namespace ncx {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

MetricsWriter::MetricsWriter(const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  ndjson_.open(dir / (name + ".ndjson"), std::ios::trunc);
  csv_.open(dir / (name + ".csv"), std::ios::trunc);
  if (!ndjson_ || !csv_)
    throw FormatError("cannot open metrics streams under '" + dir.string() + "'");
  csv_ << kCsvHeader << "\n";
}

void MetricsWriter::write(const MetricsRecord& r) {
  nlohmann::ordered_json row{
      {"episode", r.episode},   {"step", r.step},
      {"train_loss", r.train_loss}, {"test_loss", r.test_loss},
      {"gap", r.gap},           {"nc_estimate", r.nc_estimate},
      {"lambda", r.lambda},     {"meta_loss", r.meta_loss},
  };
  ndjson_ << row.dump() << "\n";
  csv_ << r.episode << ',' << r.step << ',' << format_double(r.train_loss) << ','
       << format_double(r.test_loss) << ',' << format_double(r.gap) << ','
       << format_double(r.nc_estimate) << ',' << format_double(r.lambda) << ','
       << format_double(r.meta_loss) << "\n";
  ++rows_;
}

void MetricsWriter::flush() {
  ndjson_.flush();
  csv_.flush();
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open metrics file '" + file.string() + "'");
  std::vector<MetricsRecord> out;
  std::string line;
  const bool csv = file.extension() == ".csv";
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (csv && first) {
      first = false;  // header
      if (line != std::string(MetricsWriter::kCsvHeader))
        throw FormatError("metrics file '" + file.string() + "': unexpected CSV header");
      continue;
    }
    MetricsRecord r;
    if (csv) {
      std::array<std::string, 8> cells;
      std::size_t cell = 0, start = 0;
      for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
          if (cell >= cells.size())
            throw FormatError("metrics file '" + file.string() + "': too many columns");
          cells[cell++] = line.substr(start, i - start);
          start = i + 1;
        }
      }
      if (cell != cells.size())
        throw FormatError("metrics file '" + file.string() + "': short row");
      r.episode = std::stoll(cells[0]);
      r.step = std::stoll(cells[1]);
      r.train_loss = std::stod(cells[2]);
      r.test_loss = std::stod(cells[3]);
      r.gap = std::stod(cells[4]);
      r.nc_estimate = std::stod(cells[5]);
      r.lambda = std::stod(cells[6]);
      r.meta_loss = std::stod(cells[7]);
    } else {
      const auto row = nlohmann::json::parse(line);
      r.episode = row.at("episode").get<std::int64_t>();
      r.step = row.at("step").get<std::int64_t>();
      r.train_loss = row.at("train_loss").get<double>();
      r.test_loss = row.at("test_loss").get<double>();
      r.gap = row.at("gap").get<double>();
      r.nc_estimate = row.at("nc_estimate").get<double>();
      r.lambda = row.at("lambda").get<double>();
      r.meta_loss = row.at("meta_loss").get<double>();
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace ncx
