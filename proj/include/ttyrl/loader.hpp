#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttyrl/store.hpp"

namespace ttyrl {

enum class LoaderMode : std::uint8_t { InMemory, Memmap, CompressedOnRead };

std::string_view to_string(LoaderMode mode);
// "in_memory", "memmap", "compressed".
LoaderMode parse_loader_mode(std::string_view text);

enum class PadPolicy : std::uint8_t { RejectShort, LeftClamp };

struct SamplerConfig {
  std::size_t batch_size = 64;
  std::size_t seq_len = 16;
  std::uint64_t seed = 0;
  PadPolicy pad_policy = PadPolicy::RejectShort;
};

// [B, L] training tuples plus the (L+1)-th bootstrap observation per row.
// Observation-axis arrays are [B, L+1, ...]; transition arrays are [B, L].
struct SequenceBatch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::uint8_t> tty_chars;
  std::vector<std::int8_t> tty_colors;
  std::vector<std::int16_t> tty_cursor;
  std::vector<std::uint8_t> prev_actions;
  std::vector<std::uint8_t> actions;
  std::vector<std::int32_t> rewards;
  std::vector<std::uint8_t> dones;
  // 0 marks right-padding past the end of a short episode (left_clamp only).
  std::vector<std::uint8_t> mask;
  std::vector<std::uint64_t> episode_index;
  std::vector<std::uint64_t> start_step;

  std::size_t obs_len() const noexcept { return seq_len + 1; }
  void resize(std::size_t batch, std::size_t len);

  friend bool operator==(const SequenceBatch&, const SequenceBatch&) = default;
};

struct LoadOptions {
  // Overrides the available-memory probe for the InMemory check.
  std::optional<std::uint64_t> memory_budget;
};

struct CleanupReport {
  std::uint64_t freed_bytes = 0;
  std::vector<std::filesystem::path> deleted_files;
};

// An opened task dataset under one loader mode. Sampling is const and may
// run concurrently; close() must not race with sampling.
class DatasetHandle {
 public:
  static std::shared_ptr<DatasetHandle> load(const std::filesystem::path& store_path, LoaderMode mode,
                                             LoadOptions options = {});
  ~DatasetHandle();
  DatasetHandle(const DatasetHandle&) = delete;
  DatasetHandle& operator=(const DatasetHandle&) = delete;

  LoaderMode mode() const noexcept { return mode_; }
  const StoreHandle& store() const;
  std::size_t episode_count() const noexcept { return lengths_.size(); }
  std::span<const std::uint64_t> episode_lengths() const noexcept { return lengths_; }
  std::uint64_t total_transitions() const noexcept { return total_; }
  const std::filesystem::path& artifact_path() const noexcept { return artifact_; }
  bool closed() const noexcept { return closed_; }

  // Draw number `call_index` of the sampler stream seeded by cfg.seed.
  SequenceBatch sample(const SamplerConfig& cfg, std::uint64_t call_index) const;
  void sample_into(const SamplerConfig& cfg, std::uint64_t call_index, SequenceBatch& out) const;

  // Reads one episode back through the active mode.
  EpisodeRecord episode(std::size_t idx) const;

  CleanupReport close();

 private:
  DatasetHandle() = default;
  struct Backing;

  void ensure_open() const;
  void copy_steps(Field field, std::size_t episode, std::size_t first, std::size_t count, std::byte* dst,
                  const std::vector<std::vector<std::byte>>* decoded) const;

  LoaderMode mode_ = LoaderMode::InMemory;
  std::shared_ptr<StoreHandle> store_;
  std::vector<std::uint64_t> lengths_;
  std::vector<std::uint64_t> offsets_;
  std::uint64_t total_ = 0;
  std::filesystem::path artifact_;
  std::unique_ptr<Backing> backing_;
  bool closed_ = false;
};

std::shared_ptr<DatasetHandle> load(const std::filesystem::path& store_path, LoaderMode mode,
                                    LoadOptions options = {});

// Stateful sampler: owns its RNG stream and counts calls.
class SequenceSampler {
 public:
  SequenceSampler(std::shared_ptr<const DatasetHandle> handle, SamplerConfig cfg)
      : handle_(std::move(handle)), cfg_(cfg) {}
  SequenceBatch next() { return handle_->sample(cfg_, calls_++); }
  void next_into(SequenceBatch& out) { handle_->sample_into(cfg_, calls_++, out); }
  std::uint64_t calls() const noexcept { return calls_; }
  const SamplerConfig& config() const noexcept { return cfg_; }

 private:
  std::shared_ptr<const DatasetHandle> handle_;
  SamplerConfig cfg_;
  std::uint64_t calls_ = 0;
};

SequenceBatch sample_sequences(const DatasetHandle& handle, const SamplerConfig& cfg, std::uint64_t call_index = 0);

// One epoch is ceil(total transitions / (B * L)) batches.
class EpochIterator {
 public:
  EpochIterator(std::shared_ptr<const DatasetHandle> handle, SamplerConfig cfg);
  std::optional<SequenceBatch> next();
  std::uint64_t batches_per_epoch() const noexcept { return total_; }
  std::uint64_t produced() const noexcept { return produced_; }

 private:
  std::shared_ptr<const DatasetHandle> handle_;
  SamplerConfig cfg_;
  std::uint64_t total_ = 0;
  std::uint64_t produced_ = 0;
};

EpochIterator iterate_epoch(std::shared_ptr<const DatasetHandle> handle, SamplerConfig cfg);

CleanupReport close(DatasetHandle& handle);

struct BenchmarkRow {
  LoaderMode mode;
  std::size_t batch_size;
  std::size_t seq_len;
  std::size_t iterations;
  double mean_ms;
  double load_ms;
};

struct BenchmarkShape {
  std::size_t batch_size;
  std::size_t seq_len;
};

std::vector<BenchmarkRow> benchmark_loader(const std::filesystem::path& store_path, std::span<const LoaderMode> modes,
                                           std::span<const BenchmarkShape> shapes, std::size_t iterations,
                                           std::uint64_t seed = 0);

// Columns: variant,batch_size,seq_len,memmap_ms,in_memory_ms,compressed_ms
std::string benchmark_csv(std::span<const BenchmarkRow> rows);

}  // namespace ttyrl
