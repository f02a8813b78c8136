#include "ttyrl/store.hpp"

#include <fcntl.h>
#include <lzma.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include "bytes.hpp"

namespace ttyrl {

namespace detail {

std::uint32_t crc32_of(std::span<const std::byte> bytes, std::uint32_t seed) {
  uLong crc = seed;
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

namespace {

using detail::ByteReader;
using detail::ByteWriter;
using detail::crc32_of;

constexpr std::array<char, 4> kIndexTrailer = {'K', 'T', 'B', 'E'};
constexpr std::size_t kMetadataBytes = 32;
constexpr std::size_t kBlockRefBytes = 8 + 8 + 8 + 4;
constexpr std::size_t kIndexEntryBytes = 8 + (kFieldCount + 1) * kBlockRefBytes;

template <typename T>
std::span<const std::byte> as_bytes_of(const std::vector<T>& v) {
  return std::as_bytes(std::span<const T>(v));
}

std::span<const std::byte> field_bytes(const EpisodeRecord& e, Field f) {
  switch (f) {
    case Field::TtyChars: return as_bytes_of(e.tty_chars);
    case Field::TtyColors: return as_bytes_of(e.tty_colors);
    case Field::TtyCursor: return as_bytes_of(e.tty_cursor);
    case Field::Actions: return as_bytes_of(e.actions);
    case Field::Rewards: return as_bytes_of(e.rewards);
    case Field::Dones: return as_bytes_of(e.dones);
  }
  return {};
}

template <typename T>
void fill_from(std::vector<T>& v, std::span<const std::byte> raw) {
  v.resize(raw.size() / sizeof(T));
  std::memcpy(v.data(), raw.data(), raw.size());
}

std::vector<std::byte> encode_metadata(const EpisodeMetadata& m) {
  ByteWriter w;
  w.put(static_cast<std::uint8_t>(m.character.role));
  w.put(static_cast<std::uint8_t>(m.character.race));
  w.put(static_cast<std::uint8_t>(m.character.alignment));
  w.put(std::uint8_t{0});
  w.put(static_cast<std::int64_t>(m.final_score));
  w.put(static_cast<std::int32_t>(m.death_level));
  w.put(static_cast<std::int64_t>(m.turns));
  w.put(static_cast<std::uint64_t>(m.episode_id));
  return std::move(w.bytes());
}

EpisodeMetadata decode_metadata(std::span<const std::byte> bytes) {
  ByteReader r(bytes, ErrorKind::CorruptIndex);
  EpisodeMetadata m;
  const auto role = r.get<std::uint8_t>();
  const auto race = r.get<std::uint8_t>();
  const auto alignment = r.get<std::uint8_t>();
  r.get<std::uint8_t>();
  if (role > 12 || race > 4 || alignment > 2) throw Error(ErrorKind::CorruptIndex, "bad character codes");
  m.character = {static_cast<Role>(role), static_cast<Race>(race), static_cast<Alignment>(alignment)};
  m.final_score = r.get<std::int64_t>();
  m.death_level = r.get<std::int32_t>();
  m.turns = r.get<std::int64_t>();
  m.episode_id = r.get<std::uint64_t>();
  return m;
}

std::vector<std::byte> encode_header(const ContainerHeader& h) {
  ByteWriter w;
  w.put_raw(std::string_view(kStoreMagic.data(), kStoreMagic.size()));
  w.put(h.format_version);
  w.put(static_cast<std::uint8_t>(h.compression));
  for (int i = 0; i < 3; ++i) w.put(std::uint8_t{0});
  w.put(h.episode_count);
  w.put(h.index_offset);
  w.put_string16(h.task_id);
  w.put(static_cast<std::uint16_t>(h.field_schema.size()));
  for (const auto& f : h.field_schema) {
    w.put_string16(f.name);
    w.put(static_cast<std::uint8_t>(f.type));
    w.put(static_cast<std::uint8_t>(f.step_shape.size()));
    for (auto d : f.step_shape) w.put(d);
  }
  w.put(crc32_of(w.bytes()));
  return std::move(w.bytes());
}

void encode_block_ref(ByteWriter& w, const BlockRef& b) {
  w.put(b.offset);
  w.put(b.stored_length);
  w.put(b.raw_length);
  w.put(b.crc32);
}

BlockRef decode_block_ref(ByteReader& r) {
  BlockRef b;
  b.offset = r.get<std::uint64_t>();
  b.stored_length = r.get<std::uint64_t>();
  b.raw_length = r.get<std::uint64_t>();
  b.crc32 = r.get<std::uint32_t>();
  return b;
}

[[noreturn]] void throw_io(const std::string& what, const std::filesystem::path& path) {
  throw Error(ErrorKind::IoError, what + " '" + path.string() + "': " + std::strerror(errno));
}

void pread_exact(int fd, std::uint64_t offset, std::span<std::byte> out, const std::filesystem::path& path,
                 ErrorKind on_short) {
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::pread(fd, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_io("read failed", path);
    }
    if (n == 0) throw Error(on_short, "short read in '" + path.string() + "'");
    done += static_cast<std::size_t>(n);
  }
}

}  // namespace

std::string_view to_string(Compression codec) {
  switch (codec) {
    case Compression::None: return "none";
    case Compression::Deflate: return "deflate";
    case Compression::Xz: return "xz";
  }
  return "?";
}

Compression parse_compression(std::string_view text) {
  if (text == "none") return Compression::None;
  if (text == "deflate") return Compression::Deflate;
  if (text == "xz") return Compression::Xz;
  throw Error(ErrorKind::InvalidArgument, "unknown codec '" + std::string(text) + "'");
}

std::size_t element_size(ElementType type) {
  switch (type) {
    case ElementType::U8:
    case ElementType::I8: return 1;
    case ElementType::I16: return 2;
    case ElementType::I32: return 4;
  }
  return 0;
}

std::size_t FieldSpec::step_elements() const {
  std::size_t n = 1;
  for (auto d : step_shape) n *= d;
  return n;
}

const std::array<FieldSpec, kFieldCount>& canonical_schema() {
  static const std::array<FieldSpec, kFieldCount> schema = {{
      {"tty_chars", ElementType::U8, {kScreenRows, kScreenCols}},
      {"tty_colors", ElementType::I8, {kScreenRows, kScreenCols}},
      {"tty_cursor", ElementType::I16, {2}},
      {"actions", ElementType::U8, {}},
      {"rewards", ElementType::I32, {}},
      {"dones", ElementType::U8, {}},
  }};
  return schema;
}

std::size_t field_step_bytes(Field field) { return canonical_schema()[static_cast<std::size_t>(field)].step_bytes(); }

std::vector<std::byte> compress_block(std::span<const std::byte> raw, Compression codec, int level) {
  switch (codec) {
    case Compression::None: return {raw.begin(), raw.end()};
    case Compression::Deflate: {
      uLongf bound = compressBound(static_cast<uLong>(raw.size()));
      std::vector<std::byte> out(bound);
      const int rc = compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                               reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                               level < 0 ? 6 : level);
      if (rc != Z_OK) throw Error(ErrorKind::IoError, "deflate failed");
      out.resize(bound);
      return out;
    }
    case Compression::Xz: {
      std::vector<std::byte> out(lzma_stream_buffer_bound(raw.size()));
      std::size_t pos = 0;
      const auto preset = static_cast<std::uint32_t>(level < 0 ? 3 : level);
      const lzma_ret rc = lzma_easy_buffer_encode(preset, LZMA_CHECK_NONE, nullptr,
                                                  reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size(),
                                                  reinterpret_cast<std::uint8_t*>(out.data()), &pos, out.size());
      if (rc != LZMA_OK) throw Error(ErrorKind::IoError, "xz encode failed");
      out.resize(pos);
      return out;
    }
  }
  throw Error(ErrorKind::InvalidArgument, "unknown codec");
}

void decompress_block(std::span<const std::byte> stored, Compression codec, std::span<std::byte> out) {
  switch (codec) {
    case Compression::None:
      if (stored.size() != out.size()) throw Error(ErrorKind::DecompressFailed, "raw block size mismatch");
      std::memcpy(out.data(), stored.data(), out.size());
      return;
    case Compression::Deflate: {
      uLongf len = static_cast<uLongf>(out.size());
      const int rc = uncompress(reinterpret_cast<Bytef*>(out.data()), &len,
                                reinterpret_cast<const Bytef*>(stored.data()), static_cast<uLong>(stored.size()));
      if (rc != Z_OK || len != out.size()) throw Error(ErrorKind::DecompressFailed, "inflate failed");
      return;
    }
    case Compression::Xz: {
      std::uint64_t memlimit = UINT64_MAX;
      std::size_t in_pos = 0;
      std::size_t out_pos = 0;
      const lzma_ret rc = lzma_stream_buffer_decode(
          &memlimit, 0, nullptr, reinterpret_cast<const std::uint8_t*>(stored.data()), &in_pos, stored.size(),
          reinterpret_cast<std::uint8_t*>(out.data()), &out_pos, out.size());
      if (rc != LZMA_OK || out_pos != out.size()) throw Error(ErrorKind::DecompressFailed, "xz decode failed");
      return;
    }
  }
  throw Error(ErrorKind::DecompressFailed, "unknown codec");
}

// ---------------------------------------------------------------- writer

struct StoreWriter::Impl {
  std::filesystem::path path;
  std::filesystem::path tmp_path;
  std::ofstream out;
  ContainerHeader header;
  WriteOptions options;
  std::vector<EpisodeIndexEntry> index;
  std::uint64_t position = 0;
  std::uint64_t header_bytes = 0;
  WriteSummary summary;
  bool finished = false;

  void write(std::span<const std::byte> bytes) {
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw_io("write failed", tmp_path);
    position += bytes.size();
  }

  BlockRef write_block(std::span<const std::byte> raw, Compression codec) {
    const auto stored = compress_block(raw, codec, options.level);
    BlockRef ref{position, stored.size(), raw.size(), crc32_of(stored)};
    write(stored);
    return ref;
  }
};

StoreWriter::StoreWriter(const std::filesystem::path& path, std::string task_id, WriteOptions options)
    : impl_(std::make_unique<Impl>()) {
  impl_->path = path;
  impl_->tmp_path = path;
  impl_->tmp_path += ".tmp";
  impl_->options = options;
  impl_->header.task_id = std::move(task_id);
  impl_->header.compression = options.compression;
  const auto& schema = canonical_schema();
  impl_->header.field_schema.assign(schema.begin(), schema.end());
  impl_->out.open(impl_->tmp_path, std::ios::binary | std::ios::trunc);
  if (!impl_->out) throw_io("cannot create", impl_->tmp_path);
  const auto header = encode_header(impl_->header);
  impl_->header_bytes = header.size();
  impl_->write(header);
}

StoreWriter::~StoreWriter() {
  if (impl_ && !impl_->finished) {
    impl_->out.close();
    std::error_code ec;
    std::filesystem::remove(impl_->tmp_path, ec);
  }
}

void StoreWriter::add(const EpisodeRecord& episode) {
  const auto report = validate_episode(episode);
  if (!report.empty()) {
    throw Error(ErrorKind::ValidationFailed,
                "episode " + std::to_string(impl_->index.size()) + ": " + describe(report));
  }
  const auto task = canonical_string(episode.metadata.character);
  if (task != impl_->header.task_id) {
    throw Error(ErrorKind::ValidationFailed, "episode task " + task + " differs from store task " +
                                                 impl_->header.task_id);
  }
  EpisodeIndexEntry entry;
  entry.step_count = episode.steps();
  for (std::size_t f = 0; f < kFieldCount; ++f) {
    const auto raw = field_bytes(episode, static_cast<Field>(f));
    entry.fields[f] = impl_->write_block(raw, impl_->options.compression);
    impl_->summary.raw_bytes += raw.size();
    impl_->summary.compressed_bytes += entry.fields[f].stored_length;
  }
  const auto meta = encode_metadata(episode.metadata);
  entry.metadata = impl_->write_block(meta, Compression::None);
  impl_->index.push_back(entry);
}

WriteSummary StoreWriter::finish() {
  auto& s = *impl_;
  if (s.finished) throw Error(ErrorKind::InvalidArgument, "store already finished");
  if (s.index.empty()) throw Error(ErrorKind::ValidationFailed, "store must contain at least one episode");
  s.header.index_offset = s.position;
  s.header.episode_count = s.index.size();

  ByteWriter w;
  for (const auto& e : s.index) {
    w.put(e.step_count);
    for (const auto& b : e.fields) encode_block_ref(w, b);
    encode_block_ref(w, e.metadata);
  }
  w.put(crc32_of(w.bytes()));
  w.put_raw(std::string_view(kIndexTrailer.data(), kIndexTrailer.size()));
  s.write(w.bytes());

  const auto header = encode_header(s.header);
  s.out.seekp(0);
  s.out.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  s.out.close();
  if (!s.out) throw_io("write failed", s.tmp_path);
  std::error_code ec;
  std::filesystem::rename(s.tmp_path, s.path, ec);
  if (ec) throw Error(ErrorKind::IoError, "rename to '" + s.path.string() + "' failed: " + ec.message());
  s.finished = true;
  s.summary.episode_count = s.index.size();
  s.summary.file_bytes = s.position;
  return s.summary;
}

WriteSummary write_store(const std::filesystem::path& path, std::span<const EpisodeRecord> episodes,
                         WriteOptions options) {
  if (episodes.empty()) throw Error(ErrorKind::ValidationFailed, "empty episode list");
  StoreWriter writer(path, canonical_string(episodes.front().metadata.character), options);
  for (const auto& e : episodes) writer.add(e);
  return writer.finish();
}

// ---------------------------------------------------------------- reader

std::shared_ptr<StoreHandle> StoreHandle::open(const std::filesystem::path& path) {
  std::shared_ptr<StoreHandle> h(new StoreHandle());
  h->path_ = path;
  h->fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (h->fd_ < 0) throw_io("cannot open", path);
  struct stat st {};
  if (::fstat(h->fd_, &st) != 0) throw_io("stat failed", path);
  const auto file_size = static_cast<std::uint64_t>(st.st_size);

  std::array<std::byte, 8> lead{};
  if (file_size < lead.size()) throw Error(ErrorKind::BadMagic, "file too small");
  pread_exact(h->fd_, 0, lead, path, ErrorKind::BadMagic);
  if (std::memcmp(lead.data(), kStoreMagic.data(), 4) != 0) throw Error(ErrorKind::BadMagic, path.string());
  {
    ByteReader r(std::span<const std::byte>(lead).subspan(4), ErrorKind::BadMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kStoreFormatVersion) {
      throw Error(ErrorKind::VersionMismatch, "format version " + std::to_string(version));
    }
  }

  std::vector<std::byte> head(std::min<std::uint64_t>(file_size, 1 << 16));
  pread_exact(h->fd_, 0, head, path, ErrorKind::CorruptIndex);
  ByteReader r(head, ErrorKind::CorruptIndex);
  r.get_raw(4);
  auto& hdr = h->header_;
  hdr.format_version = r.get<std::uint32_t>();
  const auto codec = r.get<std::uint8_t>();
  if (codec > 2) throw Error(ErrorKind::CorruptIndex, "unknown codec id");
  hdr.compression = static_cast<Compression>(codec);
  r.get_raw(3);
  hdr.episode_count = r.get<std::uint64_t>();
  hdr.index_offset = r.get<std::uint64_t>();
  hdr.task_id = r.get_string16();
  const auto field_count = r.get<std::uint16_t>();
  for (std::uint16_t i = 0; i < field_count; ++i) {
    FieldSpec f;
    f.name = r.get_string16();
    const auto type = r.get<std::uint8_t>();
    if (type < 1 || type > 4) throw Error(ErrorKind::CorruptIndex, "bad element type");
    f.type = static_cast<ElementType>(type);
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t d = 0; d < rank; ++d) f.step_shape.push_back(r.get<std::uint16_t>());
    hdr.field_schema.push_back(std::move(f));
  }
  const auto header_len = r.position();
  const auto stored_crc = r.get<std::uint32_t>();
  if (crc32_of(std::span<const std::byte>(head).first(header_len)) != stored_crc) {
    throw Error(ErrorKind::CorruptIndex, "header checksum mismatch");
  }
  const auto header_bytes = r.position();

  const auto& canonical = canonical_schema();
  for (std::size_t f = 0; f < kFieldCount; ++f) {
    auto it = std::find_if(hdr.field_schema.begin(), hdr.field_schema.end(),
                           [&](const FieldSpec& s) { return s.name == canonical[f].name; });
    if (it == hdr.field_schema.end()) throw Error(ErrorKind::CorruptIndex, "schema lacks " + canonical[f].name);
    if (it->type != canonical[f].type || it->step_shape != canonical[f].step_shape) {
      throw Error(ErrorKind::CorruptIndex, "schema mismatch for " + canonical[f].name);
    }
    h->field_slot_[f] = static_cast<std::size_t>(it - hdr.field_schema.begin());
  }

  const std::uint64_t schema_fields = hdr.field_schema.size();
  const std::uint64_t entry_bytes = 8 + (schema_fields + 1) * kBlockRefBytes;
  const std::uint64_t index_bytes = hdr.episode_count * entry_bytes + 4 + kIndexTrailer.size();
  if (hdr.index_offset < header_bytes || hdr.index_offset > file_size ||
      file_size - hdr.index_offset != index_bytes) {
    throw Error(ErrorKind::CorruptIndex, "index region does not match file size");
  }
  std::vector<std::byte> raw_index(index_bytes);
  pread_exact(h->fd_, hdr.index_offset, raw_index, path, ErrorKind::CorruptIndex);
  const auto body = std::span<const std::byte>(raw_index).first(index_bytes - 4 - kIndexTrailer.size());
  ByteReader ir(std::span<const std::byte>(raw_index).subspan(body.size()), ErrorKind::CorruptIndex);
  if (ir.get<std::uint32_t>() != crc32_of(body)) throw Error(ErrorKind::CorruptIndex, "index checksum mismatch");
  if (ir.get_raw(4) != std::string(kIndexTrailer.data(), 4)) throw Error(ErrorKind::CorruptIndex, "bad trailer");

  ByteReader br(body, ErrorKind::CorruptIndex);
  std::uint64_t cursor = header_bytes;
  h->index_.resize(hdr.episode_count);
  for (auto& entry : h->index_) {
    entry.step_count = br.get<std::uint64_t>();
    if (entry.step_count == 0) throw Error(ErrorKind::CorruptIndex, "episode with zero steps");
    std::vector<BlockRef> refs(schema_fields);
    for (auto& ref : refs) ref = decode_block_ref(br);
    entry.metadata = decode_block_ref(br);
    for (std::size_t f = 0; f < kFieldCount; ++f) {
      entry.fields[f] = refs[h->field_slot_[f]];
      if (entry.fields[f].raw_length != entry.step_count * canonical[f].step_bytes()) {
        throw Error(ErrorKind::CorruptIndex, "field length disagrees with step count");
      }
    }
    // Blocks are laid out in schema order followed by the metadata block.
    refs.push_back(entry.metadata);
    for (const auto& ref : refs) {
      if (ref.offset < cursor || ref.offset + ref.stored_length > hdr.index_offset) {
        throw Error(ErrorKind::CorruptIndex, "block offsets out of order or out of range");
      }
      cursor = ref.offset + ref.stored_length;
    }
    if (entry.metadata.stored_length != kMetadataBytes) throw Error(ErrorKind::CorruptIndex, "bad metadata block");
  }
  return h;
}

StoreHandle::~StoreHandle() {
  if (fd_ >= 0) ::close(fd_);
}

std::uint64_t StoreHandle::total_steps() const noexcept {
  std::uint64_t n = 0;
  for (const auto& e : index_) n += e.step_count;
  return n;
}

std::uint64_t StoreHandle::decompressed_bytes() const noexcept {
  std::uint64_t n = 0;
  for (const auto& e : index_) {
    for (const auto& f : e.fields) n += f.raw_length;
  }
  return n;
}

void StoreHandle::check_index(std::size_t idx) const {
  if (idx >= index_.size()) {
    throw Error(ErrorKind::IndexOutOfRange,
                "episode " + std::to_string(idx) + " of " + std::to_string(index_.size()));
  }
}

std::vector<std::byte> StoreHandle::read_block(const BlockRef& block) const {
  std::vector<std::byte> stored(block.stored_length);
  pread_exact(fd_, block.offset, stored, path_, ErrorKind::DecompressFailed);
  if (observer_) observer_(block.offset, block.stored_length);
  if (crc32_of(stored) != block.crc32) {
    throw Error(ErrorKind::DecompressFailed, "block checksum mismatch at offset " + std::to_string(block.offset));
  }
  return stored;
}

void StoreHandle::read_field_into(std::size_t idx, Field field, std::span<std::byte> out) const {
  check_index(idx);
  const auto& block = index_[idx].fields[static_cast<std::size_t>(field)];
  if (out.size() != block.raw_length) throw Error(ErrorKind::InvalidArgument, "output buffer size mismatch");
  if (header_.compression == Compression::None) {
    pread_exact(fd_, block.offset, out, path_, ErrorKind::DecompressFailed);
    if (observer_) observer_(block.offset, block.stored_length);
    if (crc32_of(out) != block.crc32) throw Error(ErrorKind::DecompressFailed, "block checksum mismatch");
    return;
  }
  const auto stored = read_block(block);
  decompress_block(stored, header_.compression, out);
}

std::vector<std::byte> StoreHandle::read_field(std::size_t idx, Field field) const {
  check_index(idx);
  std::vector<std::byte> out(index_[idx].fields[static_cast<std::size_t>(field)].raw_length);
  read_field_into(idx, field, out);
  return out;
}

EpisodeMetadata StoreHandle::read_metadata(std::size_t idx) const {
  check_index(idx);
  return decode_metadata(read_block(index_[idx].metadata));
}

EpisodeRecord StoreHandle::read_episode(std::size_t idx) const {
  check_index(idx);
  EpisodeRecord e;
  fill_from(e.tty_chars, read_field(idx, Field::TtyChars));
  fill_from(e.tty_colors, read_field(idx, Field::TtyColors));
  fill_from(e.tty_cursor, read_field(idx, Field::TtyCursor));
  fill_from(e.actions, read_field(idx, Field::Actions));
  fill_from(e.rewards, read_field(idx, Field::Rewards));
  fill_from(e.dones, read_field(idx, Field::Dones));
  e.metadata = read_metadata(idx);
  return e;
}

std::shared_ptr<StoreHandle> open_store(const std::filesystem::path& path) { return StoreHandle::open(path); }

EpisodeRecord read_episode(const StoreHandle& handle, std::size_t idx) { return handle.read_episode(idx); }

EpisodeDigest episode_digest(const EpisodeRecord& record) {
  EpisodeDigest d;
  for (std::size_t f = 0; f < kFieldCount; ++f) {
    const auto bytes = field_bytes(record, static_cast<Field>(f));
    d.crc32 = crc32_of(bytes, d.crc32);
    d.bytes += bytes.size();
  }
  const auto meta = encode_metadata(record.metadata);
  d.crc32 = crc32_of(meta, d.crc32);
  d.bytes += meta.size();
  return d;
}

std::vector<EpisodeDigest> store_checksum(const StoreHandle& handle) {
  std::vector<EpisodeDigest> out;
  out.reserve(handle.episode_count());
  for (std::size_t i = 0; i < handle.episode_count(); ++i) out.push_back(episode_digest(handle.read_episode(i)));
  return out;
}

}  // namespace ttyrl
