#include <fstream>
#include <set>

#include "doctest.h"
#include "synthetic.hpp"
#include "ttyrl/errors.hpp"
#include "ttyrl/store.hpp"

using namespace ttyrl;
using ttyrl::testing::synthetic_episodes;
using ttyrl::testing::TempDir;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidArgument;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("round trip for every codec") {
  TempDir dir("store");
  const auto episodes = synthetic_episodes(11, 3, 5, 40);
  for (const auto codec : {Compression::None, Compression::Deflate, Compression::Xz}) {
    CAPTURE(to_string(codec));
    const auto path = dir / ("rt." + std::string(to_string(codec)) + ".ktb");
    const auto summary = write_store(path, episodes, {codec});
    CHECK(summary.episode_count == 3);
    if (codec == Compression::None) CHECK(summary.compressed_bytes == summary.raw_bytes);
    if (codec == Compression::Deflate) CHECK(summary.raw_bytes > 2 * summary.compressed_bytes);

    const auto handle = open_store(path);
    CHECK(handle->header().task_id == "mon-hum-neu");
    CHECK(handle->header().compression == codec);
    REQUIRE(handle->episode_count() == 3);
    for (std::size_t i = 0; i < episodes.size(); ++i) CHECK(read_episode(*handle, i) == episodes[i]);
    CHECK(kind_of([&] { handle->read_episode(3); }) == ErrorKind::IndexOutOfRange);

    const auto digests = store_checksum(*handle);
    for (std::size_t i = 0; i < episodes.size(); ++i) CHECK(digests[i] == episode_digest(episodes[i]));
  }
}

TEST_CASE("writing is deterministic") {
  TempDir dir("store");
  const auto episodes = synthetic_episodes(5, 4, 2, 20);
  write_store(dir / "a.ktb", episodes, {Compression::Deflate});
  write_store(dir / "b.ktb", episodes, {Compression::Deflate});
  CHECK(slurp(dir / "a.ktb") == slurp(dir / "b.ktb"));
}

TEST_CASE("write rejects empty lists, invalid episodes, and mixed tasks") {
  TempDir dir("store");
  CHECK(kind_of([&] { write_store(dir / "e.ktb", {}); }) == ErrorKind::ValidationFailed);
  CHECK(!std::filesystem::exists(dir / "e.ktb"));

  auto episodes = synthetic_episodes(3, 2, 3, 5);
  episodes[1].dones.back() = 0;
  CHECK(kind_of([&] { write_store(dir / "v.ktb", episodes); }) == ErrorKind::ValidationFailed);
  CHECK(!std::filesystem::exists(dir / "v.ktb"));
  CHECK(!std::filesystem::exists(dir / "v.ktb.tmp"));

  episodes = synthetic_episodes(3, 2, 3, 5);
  episodes[1].metadata.character = parse_task_id("arc-hum-neu");
  CHECK(kind_of([&] { write_store(dir / "m.ktb", episodes); }) == ErrorKind::ValidationFailed);
}

TEST_CASE("open detects bad magic, version, and truncation") {
  TempDir dir("store");
  const auto path = dir / "s.ktb";
  write_store(path, synthetic_episodes(8, 2, 3, 9), {Compression::Deflate});
  const auto bytes = slurp(path);

  auto magic = bytes;
  magic[0] = 'X';
  spit(dir / "magic.ktb", magic);
  CHECK(kind_of([&] { open_store(dir / "magic.ktb"); }) == ErrorKind::BadMagic);

  auto version = bytes;
  version[4] = 7;
  spit(dir / "version.ktb", version);
  CHECK(kind_of([&] { open_store(dir / "version.ktb"); }) == ErrorKind::VersionMismatch);

  const auto index_offset = open_store(path)->header().index_offset;
  auto truncated = bytes;
  truncated.resize(index_offset);
  spit(dir / "trunc.ktb", truncated);
  CHECK(kind_of([&] { open_store(dir / "trunc.ktb"); }) == ErrorKind::CorruptIndex);

  auto index_flip = bytes;
  index_flip[index_offset + 3] ^= 0x10;
  spit(dir / "index.ktb", index_flip);
  CHECK(kind_of([&] { open_store(dir / "index.ktb"); }) == ErrorKind::CorruptIndex);

  CHECK(kind_of([&] { open_store(dir / "missing.ktb"); }) == ErrorKind::IoError);
}

TEST_CASE("payload bit flips surface as DecompressFailed") {
  TempDir dir("store");
  const auto path = dir / "s.ktb";
  write_store(path, synthetic_episodes(9, 2, 4, 6), {Compression::Xz});
  const auto handle = open_store(path);
  const auto block = handle->index()[1].fields[static_cast<std::size_t>(Field::Rewards)];
  auto bytes = slurp(path);
  bytes[block.offset + block.stored_length / 2] ^= 0x01;
  spit(dir / "flip.ktb", bytes);
  const auto flipped = open_store(dir / "flip.ktb");
  CHECK_NOTHROW(flipped->read_episode(0));
  CHECK(kind_of([&] { flipped->read_episode(1); }) == ErrorKind::DecompressFailed);
}

TEST_CASE("reading one episode touches only its own blocks") {
  TempDir dir("store");
  const auto path = dir / "s.ktb";
  write_store(path, synthetic_episodes(4, 5, 3, 12), {Compression::None});
  const auto handle = open_store(path);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> reads;
  handle->set_read_observer([&](std::uint64_t off, std::uint64_t len) { reads.emplace_back(off, len); });
  for (std::size_t i = 0; i < handle->episode_count(); ++i) {
    reads.clear();
    handle->read_episode(i);
    const auto& entry = handle->index()[i];
    const std::uint64_t lo = entry.fields.front().offset;
    const std::uint64_t hi = entry.metadata.offset + entry.metadata.stored_length;
    CHECK(reads.size() == kFieldCount + 1);
    for (const auto& [off, len] : reads) {
      CHECK(off >= lo);
      CHECK(off + len <= hi);
    }
  }
}

TEST_CASE("index offsets are strictly increasing and lengths match the schema") {
  TempDir dir("store");
  const auto path = dir / "s.ktb";
  write_store(path, synthetic_episodes(2, 4, 1, 10), {Compression::Deflate});
  const auto handle = open_store(path);
  std::uint64_t last = 0;
  for (const auto& e : handle->index()) {
    for (std::size_t f = 0; f < kFieldCount; ++f) {
      CHECK(e.fields[f].offset > last);
      last = e.fields[f].offset;
      CHECK(e.fields[f].raw_length == e.step_count * field_step_bytes(static_cast<Field>(f)));
    }
  }
}
