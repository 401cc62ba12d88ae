#include "ncx/memory_bank.hpp"

#include <algorithm>
#include <cmath>

#include "ncx/serialize.hpp"

namespace ncx {

namespace {
constexpr std::string_view kBankMagic = "NCXBANK1";
constexpr std::uint32_t kBankVersion = 1;
}  // namespace

void Snapshot::validate() const {
  if (!std::isfinite(gap)) throw ContractError("Snapshot: non-finite gap");
  const bool by_index = stores_indices();
  if (by_index == x_tr.has_value())
    throw ContractError("Snapshot: exactly one of inline data and indices must be set");
  const std::size_t m = by_index ? idx_tr.size() : x_tr->rows;
  const std::size_t mt = by_index ? idx_te.size() : x_te->rows;
  if (m == 0 || mt == 0) throw ContractError("Snapshot: empty split");
  if (pred_tr.rows != m || pred_te.rows != mt || y_tr.rows != m)
    throw DimensionError("Snapshot: prediction/label rows inconsistent with X");
  if (kind == TaskKind::kClassification &&
      (!train_loss_per_example || train_loss_per_example->rows != m))
    throw ContractError("Snapshot: classification snapshot needs per-example train loss");
}

HypothesisEval materialize(const Snapshot& s, const Dataset* dataset) {
  s.validate();
  HypothesisEval ev;
  ev.kind = s.kind;
  if (s.stores_indices()) {
    if (!dataset)
      throw ContractError("materialize: snapshot stores indices but no dataset was given");
    auto gather = [&](const std::vector<std::uint64_t>& rows) {
      Matrix out(rows.size(), dataset->feature_dim());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= dataset->rows())
          throw ContractError("materialize: index " + std::to_string(rows[i]) +
                              " out of range for dataset with " +
                              std::to_string(dataset->rows()) + " rows");
        for (std::size_t j = 0; j < dataset->feature_dim(); ++j)
          out(i, j) = dataset->x(rows[i], j);
      }
      return out;
    };
    ev.x_tr = gather(s.idx_tr);
    ev.x_te = gather(s.idx_te);
  } else {
    ev.x_tr = *s.x_tr;
    ev.x_te = *s.x_te;
  }
  ev.y_tr = s.y_tr;
  ev.pred_tr = s.pred_tr;
  ev.pred_te = s.pred_te;
  ev.train_loss_per_example = s.train_loss_per_example;
  return ev;
}

MemoryBank::MemoryBank(BankConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.capacity == 0) throw ContractError("MemoryBank: capacity must be >= 1");
}

MemoryBank::MemoryBank(MemoryBank&& other) noexcept {
  std::lock_guard lock(other.mu_);
  cfg_ = std::move(other.cfg_);
  items_ = std::move(other.items_);
}

MemoryBank& MemoryBank::operator=(MemoryBank&& other) noexcept {
  if (this != &other) {
    std::scoped_lock lock(mu_, other.mu_);
    cfg_ = std::move(other.cfg_);
    items_ = std::move(other.items_);
  }
  return *this;
}

void MemoryBank::append(Snapshot s) {
  s.validate();
  auto item = std::make_shared<const Snapshot>(std::move(s));
  std::lock_guard lock(mu_);
  if (items_.size() == cfg_.capacity) {
    if (cfg_.eviction == BankConfig::Eviction::kReject)
      throw CapacityError("MemoryBank: at capacity " + std::to_string(cfg_.capacity) +
                          " with reject policy");
    items_.pop_front();
  }
  items_.push_back(std::move(item));
}

std::size_t MemoryBank::size() const {
  std::lock_guard lock(mu_);
  return items_.size();
}

std::vector<std::shared_ptr<const Snapshot>> MemoryBank::sample_batch(std::size_t n,
                                                                      Rng& rng) const {
  std::lock_guard lock(mu_);
  if (items_.empty()) throw ContractError("MemoryBank: sample from empty bank");
  std::vector<std::shared_ptr<const Snapshot>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(items_[rng.index(items_.size())]);
  return out;
}

std::vector<std::shared_ptr<const Snapshot>> MemoryBank::contents() const {
  std::lock_guard lock(mu_);
  return {items_.begin(), items_.end()};
}

namespace {

void write_matrix(BinaryWriter& w, const Matrix& m) {
  w.u64(m.rows);
  w.u64(m.cols);
  w.f64_array(m.v);
}

Matrix read_matrix(BinaryReader& r) {
  const std::size_t rows = r.u64();
  const std::size_t cols = r.u64();
  return Matrix(rows, cols, r.f64_array(rows * cols));
}

void write_snapshot(BinaryWriter& w, const Snapshot& s) {
  w.u64(s.task_id);
  w.u64(s.step);
  w.u8(s.kind == TaskKind::kRegression ? 0 : 1);
  w.u8(s.stores_indices() ? 1 : 0);
  w.str(s.learner.arch);
  w.f64(s.learner.learning_rate);
  w.u64(s.val_count);
  if (s.stores_indices()) {
    w.u64(s.idx_tr.size());
    w.u64_array(s.idx_tr);
    w.u64(s.idx_te.size());
    w.u64_array(s.idx_te);
  } else {
    write_matrix(w, *s.x_tr);
    write_matrix(w, *s.x_te);
  }
  write_matrix(w, s.y_tr);
  write_matrix(w, s.pred_tr);
  write_matrix(w, s.pred_te);
  w.u8(s.train_loss_per_example ? 1 : 0);
  if (s.train_loss_per_example) write_matrix(w, *s.train_loss_per_example);
  w.f64(s.gap);
}

Snapshot read_snapshot(BinaryReader& r) {
  Snapshot s;
  s.task_id = r.u64();
  s.step = r.u64();
  s.kind = r.u8() == 0 ? TaskKind::kRegression : TaskKind::kClassification;
  const bool by_index = r.u8() != 0;
  s.learner.arch = r.str();
  s.learner.learning_rate = r.f64();
  s.val_count = r.u64();
  if (by_index) {
    s.idx_tr = r.u64_array(r.u64());
    s.idx_te = r.u64_array(r.u64());
  } else {
    s.x_tr = read_matrix(r);
    s.x_te = read_matrix(r);
  }
  s.y_tr = read_matrix(r);
  s.pred_tr = read_matrix(r);
  s.pred_te = read_matrix(r);
  if (r.u8() != 0) s.train_loss_per_example = read_matrix(r);
  s.gap = r.f64();
  return s;
}

}  // namespace

void MemoryBank::persist(const std::filesystem::path& path) const {
  const auto items = contents();
  BinaryWriter w(path);
  w.bytes(kBankMagic.data(), kBankMagic.size());
  w.u32(kBankVersion);
  w.u64(items.size());
  for (const auto& s : items) write_snapshot(w, *s);
  w.finish();
}

void MemoryBank::persist() const {
  if (cfg_.storage_path.empty())
    throw ContractError("MemoryBank: persist() without a configured storage path");
  persist(std::filesystem::path(cfg_.storage_path));
}

MemoryBank MemoryBank::load(const std::filesystem::path& path, BankConfig cfg) {
  BinaryReader r(path);
  r.verify_crc_trailer();
  r.expect_magic(kBankMagic);
  const std::uint32_t version = r.u32();
  if (version != kBankVersion)
    throw FormatError("bank '" + path.string() + "': unsupported version " +
                      std::to_string(version) + " at offset " + std::to_string(r.offset() - 4));
  const std::uint64_t count = r.u64();
  MemoryBank bank(std::move(cfg));
  if (count > bank.cfg_.capacity)
    throw CapacityError("bank '" + path.string() + "': " + std::to_string(count) +
                        " snapshots exceed capacity " + std::to_string(bank.cfg_.capacity));
  for (std::uint64_t i = 0; i < count; ++i) bank.append(read_snapshot(r));
  if (!r.at_payload_end())
    throw FormatError("bank '" + path.string() + "': trailing bytes at offset " +
                      std::to_string(r.offset()));
  return bank;
}

void persist_segment(const MemoryBank& bank, const std::filesystem::path& dir,
                     std::string_view tag) {
  std::filesystem::create_directories(dir);
  bank.persist(dir / ("segment-" + std::string(tag) + ".ncxbank"));
}

MemoryBank load_segments(const std::filesystem::path& dir, BankConfig cfg) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".ncxbank") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  MemoryBank merged(std::move(cfg));
  for (const auto& f : files) {
    BankConfig part_cfg;
    part_cfg.capacity = merged.config().capacity;
    MemoryBank part = MemoryBank::load(f, part_cfg);
    for (const auto& s : part.contents()) merged.append(*s);
  }
  return merged;
}

}  // namespace ncx
