#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ttyrl/episode.hpp"

namespace ttyrl {

// KTB1 container: header, per-episode compressed field blocks, index.
// The byte layout is documented in docs/FORMATS.md.

inline constexpr std::array<char, 4> kStoreMagic = {'K', 'T', 'B', '1'};
inline constexpr std::uint32_t kStoreFormatVersion = 1;

enum class Compression : std::uint8_t { None = 0, Deflate = 1, Xz = 2 };

std::string_view to_string(Compression codec);
Compression parse_compression(std::string_view text);

enum class ElementType : std::uint8_t { U8 = 1, I8 = 2, I16 = 3, I32 = 4 };

std::size_t element_size(ElementType type);

// Canonical episode fields in on-disk order.
enum class Field : std::uint8_t { TtyChars = 0, TtyColors, TtyCursor, Actions, Rewards, Dones };
inline constexpr std::size_t kFieldCount = 6;

struct FieldSpec {
  std::string name;
  ElementType type;
  std::vector<std::uint16_t> step_shape;

  std::size_t step_elements() const;
  std::size_t step_bytes() const { return step_elements() * element_size(type); }
};

const std::array<FieldSpec, kFieldCount>& canonical_schema();
std::size_t field_step_bytes(Field field);

struct ContainerHeader {
  std::uint32_t format_version = kStoreFormatVersion;
  std::string task_id;
  std::uint64_t episode_count = 0;
  std::uint64_t index_offset = 0;
  Compression compression = Compression::None;
  std::vector<FieldSpec> field_schema;
};

struct BlockRef {
  std::uint64_t offset = 0;
  std::uint64_t stored_length = 0;
  std::uint64_t raw_length = 0;
  std::uint32_t crc32 = 0;
};

struct EpisodeIndexEntry {
  std::uint64_t step_count = 0;
  std::array<BlockRef, kFieldCount> fields{};
  BlockRef metadata{};
};

struct WriteSummary {
  std::uint64_t episode_count = 0;
  std::uint64_t raw_bytes = 0;
  std::uint64_t compressed_bytes = 0;
  std::uint64_t file_bytes = 0;
};

struct WriteOptions {
  Compression compression = Compression::Deflate;
  // Codec-specific effort; -1 picks the codec default.
  int level = -1;
};

// Streaming single-writer. Episodes are validated as they are added.
class StoreWriter {
 public:
  StoreWriter(const std::filesystem::path& path, std::string task_id, WriteOptions options);
  ~StoreWriter();
  StoreWriter(const StoreWriter&) = delete;
  StoreWriter& operator=(const StoreWriter&) = delete;

  void add(const EpisodeRecord& episode);
  WriteSummary finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

WriteSummary write_store(const std::filesystem::path& path, std::span<const EpisodeRecord> episodes,
                         WriteOptions options = {});

struct EpisodeDigest {
  std::uint32_t crc32 = 0;
  std::uint64_t bytes = 0;

  friend bool operator==(const EpisodeDigest&, const EpisodeDigest&) = default;
};

// Read-only view over a KTB1 file. Reads use positional IO, so one handle
// may be shared between threads.
class StoreHandle {
 public:
  using ReadObserver = std::function<void(std::uint64_t offset, std::uint64_t length)>;

  static std::shared_ptr<StoreHandle> open(const std::filesystem::path& path);

  ~StoreHandle();
  StoreHandle(const StoreHandle&) = delete;
  StoreHandle& operator=(const StoreHandle&) = delete;

  const ContainerHeader& header() const noexcept { return header_; }
  const std::vector<EpisodeIndexEntry>& index() const noexcept { return index_; }
  const std::filesystem::path& path() const noexcept { return path_; }
  std::size_t episode_count() const noexcept { return index_.size(); }
  std::uint64_t total_steps() const noexcept;
  std::uint64_t decompressed_bytes() const noexcept;

  EpisodeRecord read_episode(std::size_t idx) const;
  EpisodeMetadata read_metadata(std::size_t idx) const;
  // Decompresses one field block into `out`, which must be exactly raw_length bytes.
  void read_field_into(std::size_t idx, Field field, std::span<std::byte> out) const;
  std::vector<std::byte> read_field(std::size_t idx, Field field) const;

  // Test hook: invoked with every payload byte range read from disk.
  void set_read_observer(ReadObserver observer) { observer_ = std::move(observer); }

 private:
  StoreHandle() = default;

  std::vector<std::byte> read_block(const BlockRef& block) const;
  void check_index(std::size_t idx) const;

  std::filesystem::path path_;
  int fd_ = -1;
  ContainerHeader header_;
  std::vector<EpisodeIndexEntry> index_;
  std::array<std::size_t, kFieldCount> field_slot_{};
  ReadObserver observer_;
};

std::shared_ptr<StoreHandle> open_store(const std::filesystem::path& path);

EpisodeRecord read_episode(const StoreHandle& handle, std::size_t idx);

std::vector<EpisodeDigest> store_checksum(const StoreHandle& handle);

// Digest over the same bytes store_checksum covers, computed from a record.
EpisodeDigest episode_digest(const EpisodeRecord& record);

// Codec primitives, exposed for the loader and tests.
std::vector<std::byte> compress_block(std::span<const std::byte> raw, Compression codec, int level = -1);
void decompress_block(std::span<const std::byte> stored, Compression codec, std::span<std::byte> out);

}  // namespace ttyrl
