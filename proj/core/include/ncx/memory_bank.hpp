#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ncx/matrix.hpp"
#include "ncx/model.hpp"
#include "ncx/rng.hpp"
#include "ncx/taskgen.hpp"
#include "ncx/types.hpp"

namespace ncx {

struct LearnerMeta {
  std::string arch;
  double learning_rate = 0.0;
};

/// One stored observation of a task learner: the split it saw, its
/// predictions, and the observed generalization gap. When the task came
/// from a fixed dataset only the row indices are kept.
struct Snapshot {
  std::uint64_t task_id = 0;
  std::uint64_t step = 0;
  TaskKind kind = TaskKind::kRegression;

  std::optional<Matrix> x_tr, x_te;           // inline storage
  std::vector<std::uint64_t> idx_tr, idx_te;  // index storage (dataset rows)
  std::uint64_t val_count = 0;                // size of the gap's validation side

  Matrix y_tr;
  Matrix pred_tr, pred_te;
  std::optional<Matrix> train_loss_per_example;  // classification
  double gap = 0.0;
  LearnerMeta learner;

  bool stores_indices() const { return !idx_tr.empty(); }
  void validate() const;
};

/// Resolves a snapshot into the record the gap estimator consumes;
/// `dataset` is required for index-stored snapshots.
HypothesisEval materialize(const Snapshot& s, const Dataset* dataset = nullptr);

struct BankConfig {
  std::size_t capacity = 100000;
  enum class Eviction { kFifo, kReject } eviction = Eviction::kFifo;
  std::string storage_path;  // optional default for persist()
};

/// Replay store of snapshots. Contents are immutable once appended.
/// Single-writer / multi-reader: appends are serialized, sampling sees a
/// consistent state and may run concurrently with appends.
class MemoryBank {
public:
  explicit MemoryBank(BankConfig cfg = {});
  MemoryBank(MemoryBank&& other) noexcept;
  MemoryBank& operator=(MemoryBank&& other) noexcept;

  void append(Snapshot s);
  std::size_t size() const;
  const BankConfig& config() const { return cfg_; }

  /// Uniform with replacement over current contents; n may exceed size().
  std::vector<std::shared_ptr<const Snapshot>> sample_batch(std::size_t n, Rng& rng) const;

  /// Stable copy of the current contents (cheap pointer copies).
  std::vector<std::shared_ptr<const Snapshot>> contents() const;

  void persist(const std::filesystem::path& path) const;
  void persist() const;  // uses config().storage_path
  static MemoryBank load(const std::filesystem::path& path, BankConfig cfg = {});

private:
  BankConfig cfg_;
  mutable std::mutex mu_;
  std::deque<std::shared_ptr<const Snapshot>> items_;
};

/// Directory-of-segments layout for cross-process appends: each producer
/// writes its own segment file, a consumer merges them (sorted by name).
void persist_segment(const MemoryBank& bank, const std::filesystem::path& dir,
                     std::string_view tag);
MemoryBank load_segments(const std::filesystem::path& dir, BankConfig cfg = {});

}  // namespace ncx
