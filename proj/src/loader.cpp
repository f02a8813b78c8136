#include "ttyrl/loader.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "bytes.hpp"
#include "ttyrl/random.hpp"

namespace ttyrl {

namespace {

constexpr std::array<char, 4> kArtifactMagic = {'K', 'T', 'M', '1'};
constexpr std::size_t kArtifactHeaderBytes = 64;

std::uint64_t available_memory() {
  std::ifstream meminfo("/proc/meminfo");
  std::string key;
  std::uint64_t value = 0;
  std::string unit;
  while (meminfo >> key >> value) {
    std::getline(meminfo, unit);
    if (key == "MemAvailable:") return value * 1024;
  }
  const long pages = ::sysconf(_SC_AVPHYS_PAGES);
  const long page = ::sysconf(_SC_PAGESIZE);
  return pages > 0 && page > 0 ? static_cast<std::uint64_t>(pages) * static_cast<std::uint64_t>(page) : 0;
}

std::uint32_t index_fingerprint(const StoreHandle& store) {
  std::uint32_t crc = 0;
  for (const auto& e : store.index()) {
    for (const auto& f : e.fields) crc = detail::crc32_of(std::as_bytes(std::span(&f.crc32, 1)), crc);
    crc = detail::crc32_of(std::as_bytes(std::span(&e.step_count, 1)), crc);
  }
  return crc;
}

class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorKind::IoError, "cannot create lock '" + path.string() + "'");
    while (::flock(fd_, LOCK_EX) != 0) {
      if (errno != EINTR) throw Error(ErrorKind::IoError, "cannot lock '" + path.string() + "'");
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

}  // namespace

std::string_view to_string(LoaderMode mode) {
  switch (mode) {
    case LoaderMode::InMemory: return "in_memory";
    case LoaderMode::Memmap: return "memmap";
    case LoaderMode::CompressedOnRead: return "compressed";
  }
  return "?";
}

LoaderMode parse_loader_mode(std::string_view text) {
  if (text == "in_memory") return LoaderMode::InMemory;
  if (text == "memmap") return LoaderMode::Memmap;
  if (text == "compressed") return LoaderMode::CompressedOnRead;
  throw Error(ErrorKind::InvalidArgument, "unknown loader mode '" + std::string(text) + "'");
}

void SequenceBatch::resize(std::size_t batch, std::size_t len) {
  batch_size = batch;
  seq_len = len;
  const std::size_t obs = batch * (len + 1);
  tty_chars.resize(obs * kScreenCells);
  tty_colors.resize(obs * kScreenCells);
  tty_cursor.resize(obs * 2);
  prev_actions.resize(obs);
  actions.resize(batch * len);
  rewards.resize(batch * len);
  dones.resize(batch * len);
  mask.resize(batch * len);
  episode_index.resize(batch);
  start_step.resize(batch);
}

// Decompressed field regions laid out field-major over all steps, either
// owned in RAM or mapped from the on-disk artifact.
struct DatasetHandle::Backing {
  std::vector<std::byte> memory;
  void* map = nullptr;
  std::size_t map_bytes = 0;
  const std::byte* base = nullptr;
  std::array<std::uint64_t, kFieldCount> region{};
  std::uint64_t bytes = 0;

  ~Backing() { unmap(); }

  void unmap() {
    if (map) {
      ::munmap(map, map_bytes);
      map = nullptr;
    }
  }
};

std::shared_ptr<DatasetHandle> DatasetHandle::load(const std::filesystem::path& store_path, LoaderMode mode,
                                                   LoadOptions options) {
  std::shared_ptr<DatasetHandle> h(new DatasetHandle());
  h->mode_ = mode;
  h->store_ = open_store(store_path);
  const auto& index = h->store_->index();
  h->lengths_.reserve(index.size());
  h->offsets_.reserve(index.size());
  for (const auto& e : index) {
    h->offsets_.push_back(h->total_);
    h->lengths_.push_back(e.step_count);
    h->total_ += e.step_count;
  }
  if (mode == LoaderMode::CompressedOnRead) return h;

  auto backing = std::make_unique<Backing>();
  std::uint64_t offset = 0;
  for (std::size_t f = 0; f < kFieldCount; ++f) {
    backing->region[f] = offset;
    offset += h->total_ * field_step_bytes(static_cast<Field>(f));
  }
  backing->bytes = offset;

  auto fill = [&](std::byte* base) {
    for (std::size_t e = 0; e < index.size(); ++e) {
      for (std::size_t f = 0; f < kFieldCount; ++f) {
        const auto field = static_cast<Field>(f);
        const auto sb = field_step_bytes(field);
        h->store_->read_field_into(e, field,
                                   std::span(base + backing->region[f] + h->offsets_[e] * sb, h->lengths_[e] * sb));
      }
    }
  };

  if (mode == LoaderMode::InMemory) {
    const auto budget = options.memory_budget.value_or(available_memory());
    if (backing->bytes > budget) {
      throw Error(ErrorKind::InsufficientMemory, "need " + std::to_string(backing->bytes) + " bytes, " +
                                                     std::to_string(budget) + " available");
    }
    backing->memory.resize(backing->bytes);
    fill(backing->memory.data());
    backing->base = backing->memory.data();
    h->backing_ = std::move(backing);
    return h;
  }

  // Memmap: decompress once to "<store>.decompressed" and map it read-only.
  h->artifact_ = store_path;
  h->artifact_ += ".decompressed";
  auto lock_path = h->artifact_;
  lock_path += ".lock";
  const std::uint64_t file_bytes = kArtifactHeaderBytes + backing->bytes;
  const std::uint32_t fingerprint = index_fingerprint(*h->store_);

  detail::ByteWriter header;
  header.put_raw(std::string_view(kArtifactMagic.data(), kArtifactMagic.size()));
  header.put(std::uint32_t{1});
  header.put(static_cast<std::uint64_t>(h->total_));
  header.put(static_cast<std::uint64_t>(index.size()));
  header.put(fingerprint);
  header.bytes().resize(kArtifactHeaderBytes);

  {
    FileLock lock(lock_path);
    bool reusable = false;
    if (std::error_code ec; std::filesystem::exists(h->artifact_, ec) &&
                            std::filesystem::file_size(h->artifact_, ec) == file_bytes) {
      std::ifstream in(h->artifact_, std::ios::binary);
      std::vector<char> existing(kArtifactHeaderBytes);
      in.read(existing.data(), static_cast<std::streamsize>(existing.size()));
      reusable = in && std::memcmp(existing.data(), header.bytes().data(), kArtifactHeaderBytes) == 0;
    }
    if (!reusable) {
      auto tmp = h->artifact_;
      tmp += ".tmp";
      const int fd = ::open(tmp.c_str(), O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
      if (fd < 0) throw Error(ErrorKind::IoError, "cannot create '" + tmp.string() + "'");
      if (::ftruncate(fd, static_cast<off_t>(file_bytes)) != 0) {
        ::close(fd);
        throw Error(ErrorKind::IoError, "cannot size '" + tmp.string() + "'");
      }
      void* rw = ::mmap(nullptr, file_bytes, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
      ::close(fd);
      if (rw == MAP_FAILED) throw Error(ErrorKind::IoError, "cannot map '" + tmp.string() + "'");
      auto* bytes = static_cast<std::byte*>(rw);
      std::memcpy(bytes, header.bytes().data(), kArtifactHeaderBytes);
      try {
        fill(bytes + kArtifactHeaderBytes);
      } catch (...) {
        ::munmap(rw, file_bytes);
        std::filesystem::remove(tmp);
        throw;
      }
      ::msync(rw, file_bytes, MS_SYNC);
      ::munmap(rw, file_bytes);
      std::filesystem::rename(tmp, h->artifact_);
    }
  }

  const int fd = ::open(h->artifact_.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) throw Error(ErrorKind::IoError, "cannot open '" + h->artifact_.string() + "'");
  void* ro = ::mmap(nullptr, file_bytes, PROT_READ, MAP_SHARED, fd, 0);
  ::close(fd);
  if (ro == MAP_FAILED) throw Error(ErrorKind::IoError, "cannot map '" + h->artifact_.string() + "'");
  ::madvise(ro, file_bytes, MADV_RANDOM);
  backing->map = ro;
  backing->map_bytes = file_bytes;
  backing->base = static_cast<const std::byte*>(ro) + kArtifactHeaderBytes;
  h->backing_ = std::move(backing);
  return h;
}

DatasetHandle::~DatasetHandle() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
    }
  }
}

const StoreHandle& DatasetHandle::store() const {
  ensure_open();
  return *store_;
}

void DatasetHandle::ensure_open() const {
  if (closed_) throw Error(ErrorKind::UseAfterClose, "dataset handle is closed");
}

void DatasetHandle::copy_steps(Field field, std::size_t episode, std::size_t first, std::size_t count,
                               std::byte* dst, const std::vector<std::vector<std::byte>>* decoded) const {
  const auto sb = field_step_bytes(field);
  const auto f = static_cast<std::size_t>(field);
  const std::byte* src = decoded ? (*decoded)[f].data() + first * sb
                                 : backing_->base + backing_->region[f] + (offsets_[episode] + first) * sb;
  std::memcpy(dst, src, count * sb);
}

SequenceBatch DatasetHandle::sample(const SamplerConfig& cfg, std::uint64_t call_index) const {
  SequenceBatch out;
  sample_into(cfg, call_index, out);
  return out;
}

void DatasetHandle::sample_into(const SamplerConfig& cfg, std::uint64_t call_index, SequenceBatch& out) const {
  ensure_open();
  if (cfg.batch_size < 1 || cfg.seq_len < 1) throw Error(ErrorKind::InvalidArgument, "batch and seq_len must be >= 1");
  const std::size_t len = cfg.seq_len;
  if (lengths_.empty()) throw Error(ErrorKind::EmptyDataset, "dataset has no episodes");

  // Weight of an episode = number of admissible window starts.
  std::vector<std::uint64_t> cumulative(lengths_.size());
  std::uint64_t total_weight = 0;
  for (std::size_t e = 0; e < lengths_.size(); ++e) {
    const auto t = lengths_[e];
    std::uint64_t w = 0;
    if (t >= len + 1) {
      w = t - len;
    } else if (cfg.pad_policy == PadPolicy::LeftClamp && t >= 1) {
      w = 1;
    }
    total_weight += w;
    cumulative[e] = total_weight;
  }
  if (total_weight == 0) {
    throw Error(ErrorKind::AllEpisodesTooShort,
                "no episode has " + std::to_string(len + 1) + " steps for a window of length " + std::to_string(len));
  }

  out.resize(cfg.batch_size, len);
  Rng rng(derive_seed(cfg.seed, call_index));
  const std::size_t obs = len + 1;

  std::vector<std::vector<std::byte>> decoded(kFieldCount);
  std::size_t decoded_episode = SIZE_MAX;

  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    const auto u = uniform_below(rng, total_weight);
    const auto e = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                            cumulative.begin());
    const auto t_len = static_cast<std::size_t>(lengths_[e]);
    const std::size_t start = t_len >= len + 1 ? static_cast<std::size_t>(uniform_below(rng, t_len - len)) : 0;
    out.episode_index[b] = e;
    out.start_step[b] = start;

    const std::vector<std::vector<std::byte>>* source = nullptr;
    if (mode_ == LoaderMode::CompressedOnRead) {
      if (decoded_episode != e) {
        for (std::size_t f = 0; f < kFieldCount; ++f) decoded[f] = store_->read_field(e, static_cast<Field>(f));
        decoded_episode = e;
      }
      source = &decoded;
    }

    const std::size_t real_obs = std::min(obs, t_len - start);
    const std::size_t pad_obs = obs - real_obs;
    auto* chars = reinterpret_cast<std::byte*>(out.tty_chars.data() + b * obs * kScreenCells);
    auto* colors = reinterpret_cast<std::byte*>(out.tty_colors.data() + b * obs * kScreenCells);
    auto* cursor = reinterpret_cast<std::byte*>(out.tty_cursor.data() + b * obs * 2);
    copy_steps(Field::TtyChars, e, start, real_obs, chars, source);
    copy_steps(Field::TtyColors, e, start, real_obs, colors, source);
    copy_steps(Field::TtyCursor, e, start, real_obs, cursor, source);
    for (std::size_t i = real_obs; i < real_obs + pad_obs; ++i) {
      // Terminal observation repeated into the padding.
      std::memcpy(chars + i * kScreenCells, chars + (real_obs - 1) * kScreenCells, kScreenCells);
      std::memcpy(colors + i * kScreenCells, colors + (real_obs - 1) * kScreenCells, kScreenCells);
      std::memcpy(cursor + i * 4, cursor + (real_obs - 1) * 4, 4);
    }

    const std::size_t real_steps = std::min(len, t_len - start);
    std::uint8_t* actions = out.actions.data() + b * len;
    copy_steps(Field::Actions, e, start, real_steps, reinterpret_cast<std::byte*>(actions), source);
    copy_steps(Field::Rewards, e, start, real_steps, reinterpret_cast<std::byte*>(out.rewards.data() + b * len),
               source);
    copy_steps(Field::Dones, e, start, real_steps, reinterpret_cast<std::byte*>(out.dones.data() + b * len), source);
    for (std::size_t i = 0; i < len; ++i) out.mask[b * len + i] = i < real_steps ? 1 : 0;
    for (std::size_t i = real_steps; i < len; ++i) {
      actions[i] = 0;
      out.rewards[b * len + i] = 0;
      out.dones[b * len + i] = 1;
    }

    std::uint8_t* prev = out.prev_actions.data() + b * obs;
    std::uint8_t before = 0;
    if (start > 0) copy_steps(Field::Actions, e, start - 1, 1, reinterpret_cast<std::byte*>(&before), source);
    prev[0] = before;
    for (std::size_t i = 1; i < obs; ++i) prev[i] = i - 1 < real_steps ? actions[i - 1] : actions[real_steps - 1];
  }
}

EpisodeRecord DatasetHandle::episode(std::size_t idx) const {
  ensure_open();
  if (idx >= lengths_.size()) throw Error(ErrorKind::IndexOutOfRange, "episode " + std::to_string(idx));
  if (mode_ == LoaderMode::CompressedOnRead) return store_->read_episode(idx);
  EpisodeRecord r;
  const auto n = static_cast<std::size_t>(lengths_[idx]);
  r.tty_chars.resize(n * kScreenCells);
  r.tty_colors.resize(n * kScreenCells);
  r.tty_cursor.resize(n * 2);
  r.actions.resize(n);
  r.rewards.resize(n);
  r.dones.resize(n);
  copy_steps(Field::TtyChars, idx, 0, n, reinterpret_cast<std::byte*>(r.tty_chars.data()), nullptr);
  copy_steps(Field::TtyColors, idx, 0, n, reinterpret_cast<std::byte*>(r.tty_colors.data()), nullptr);
  copy_steps(Field::TtyCursor, idx, 0, n, reinterpret_cast<std::byte*>(r.tty_cursor.data()), nullptr);
  copy_steps(Field::Actions, idx, 0, n, reinterpret_cast<std::byte*>(r.actions.data()), nullptr);
  copy_steps(Field::Rewards, idx, 0, n, reinterpret_cast<std::byte*>(r.rewards.data()), nullptr);
  copy_steps(Field::Dones, idx, 0, n, reinterpret_cast<std::byte*>(r.dones.data()), nullptr);
  r.metadata = store_->read_metadata(idx);
  return r;
}

CleanupReport DatasetHandle::close() {
  if (closed_) throw Error(ErrorKind::DoubleClose, "dataset handle already closed");
  closed_ = true;
  CleanupReport report;
  if (!backing_) return report;
  report.freed_bytes = backing_->bytes;
  backing_.reset();
  if (mode_ == LoaderMode::Memmap) {
    std::error_code ec;
    if (std::filesystem::remove(artifact_, ec)) report.deleted_files.push_back(artifact_);
    auto lock_path = artifact_;
    lock_path += ".lock";
    if (std::filesystem::remove(lock_path, ec)) report.deleted_files.push_back(lock_path);
  }
  return report;
}

std::shared_ptr<DatasetHandle> load(const std::filesystem::path& store_path, LoaderMode mode, LoadOptions options) {
  return DatasetHandle::load(store_path, mode, options);
}

SequenceBatch sample_sequences(const DatasetHandle& handle, const SamplerConfig& cfg, std::uint64_t call_index) {
  return handle.sample(cfg, call_index);
}

CleanupReport close(DatasetHandle& handle) { return handle.close(); }

EpochIterator::EpochIterator(std::shared_ptr<const DatasetHandle> handle, SamplerConfig cfg)
    : handle_(std::move(handle)), cfg_(cfg) {
  if (cfg_.batch_size < 1 || cfg_.seq_len < 1) throw Error(ErrorKind::InvalidArgument, "batch and seq_len must be >= 1");
  const std::uint64_t per_batch = cfg_.batch_size * cfg_.seq_len;
  total_ = (handle_->total_transitions() + per_batch - 1) / per_batch;
}

std::optional<SequenceBatch> EpochIterator::next() {
  if (produced_ >= total_) return std::nullopt;
  return handle_->sample(cfg_, produced_++);
}

EpochIterator iterate_epoch(std::shared_ptr<const DatasetHandle> handle, SamplerConfig cfg) {
  return EpochIterator(std::move(handle), cfg);
}

std::vector<BenchmarkRow> benchmark_loader(const std::filesystem::path& store_path, std::span<const LoaderMode> modes,
                                           std::span<const BenchmarkShape> shapes, std::size_t iterations,
                                           std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  std::vector<BenchmarkRow> rows;
  for (const auto mode : modes) {
    const auto t0 = clock::now();
    auto handle = load(store_path, mode);
    const double load_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    for (const auto& shape : shapes) {
      SamplerConfig cfg{shape.batch_size, shape.seq_len, seed, PadPolicy::RejectShort};
      SequenceBatch batch;
      handle->sample_into(cfg, 0, batch);  // warm-up, sizes the buffers
      const auto start = clock::now();
      for (std::size_t i = 0; i < iterations; ++i) handle->sample_into(cfg, i + 1, batch);
      const double total_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
      rows.push_back({mode, shape.batch_size, shape.seq_len, iterations,
                      iterations ? total_ms / static_cast<double>(iterations) : 0.0, load_ms});
    }
    handle->close();
  }
  return rows;
}

std::string benchmark_csv(std::span<const BenchmarkRow> rows) {
  std::map<std::pair<std::size_t, std::size_t>, std::map<LoaderMode, double>> table;
  for (const auto& r : rows) table[{r.batch_size, r.seq_len}][r.mode] = r.mean_ms;
  std::ostringstream out;
  out << "variant,batch_size,seq_len,memmap_ms,in_memory_ms,compressed_ms\n";
  auto cell = [](const std::map<LoaderMode, double>& m, LoaderMode mode) {
    auto it = m.find(mode);
    if (it == m.end()) return std::string();
    std::ostringstream s;
    s.precision(6);
    s << it->second;
    return s.str();
  };
  for (const auto& [shape, by_mode] : table) {
    out << "\"batch_size=" << shape.first << ", seq_len=" << shape.second << "\"," << shape.first << ','
        << shape.second << ',' << cell(by_mode, LoaderMode::Memmap) << ',' << cell(by_mode, LoaderMode::InMemory)
        << ',' << cell(by_mode, LoaderMode::CompressedOnRead) << '\n';
  }
  return out.str();
}

}  // namespace ttyrl
