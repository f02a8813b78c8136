#include "ttyrl/repack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "bytes.hpp"
#include "ttyrl/random.hpp"

namespace ttyrl {

using detail::ByteReader;
using detail::ByteWriter;

std::vector<std::int32_t> shape_rewards(std::span<const std::int32_t> scores, std::int32_t final_delta) {
  if (scores.empty()) throw Error(ErrorKind::EmptyStream, "no scores to shape");
  std::vector<std::int32_t> out(scores.size());
  for (std::size_t t = 0; t + 1 < scores.size(); ++t) out[t] = scores[t + 1] - scores[t];
  out.back() = final_delta;
  return out;
}

EpisodeRecord align_episode(const RawEpisode& raw) {
  const auto& steps = raw.steps;
  if (steps.empty()) throw Error(ErrorKind::EmptyStream, "raw episode has no steps");
  for (std::size_t t = 0; t + 1 < steps.size(); ++t) {
    if (steps[t].terminal) {
      throw Error(ErrorKind::NonMonotoneTermination,
                  "terminal flag at step " + std::to_string(t) + " of " + std::to_string(steps.size()));
    }
  }
  if (!steps.back().terminal) throw Error(ErrorKind::NonMonotoneTermination, "stream does not terminate");

  std::vector<std::int32_t> scores(steps.size());
  std::transform(steps.begin(), steps.end(), scores.begin(), [](const RawStepTuple& s) { return s.score; });
  const std::int32_t final_delta = raw.final_delta.value_or(0);
  const auto rewards = shape_rewards(scores, final_delta);

  EpisodeRecord out;
  const std::size_t n = steps.size();
  out.tty_chars.reserve(n * kScreenCells);
  out.tty_colors.reserve(n * kScreenCells);
  out.tty_cursor.reserve(2 * n);
  out.actions.reserve(n);
  out.rewards.reserve(n);
  out.dones.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto& s = steps[t];
    out.push_step(s.tty_chars.data(), s.tty_colors.data(), s.cursor_row, s.cursor_col, s.action, rewards[t],
                  t + 1 == n ? 1 : 0);
  }
  out.metadata.character = raw.character;
  out.metadata.episode_id = raw.episode_id;
  out.metadata.death_level = raw.death_level;
  out.metadata.turns = raw.turns > 0 ? raw.turns : static_cast<std::int64_t>(n);
  out.metadata.final_score = static_cast<std::int64_t>(scores.back()) + final_delta;
  return out;
}

std::vector<double> strata_boundaries(std::span<const double> scores, std::size_t n_strata) {
  if (scores.empty() || n_strata == 0) throw Error(ErrorKind::InvalidArgument, "need scores and strata");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> edges(n_strata + 1);
  const double last = static_cast<double>(sorted.size() - 1);
  for (std::size_t k = 0; k <= n_strata; ++k) {
    const double h = last * static_cast<double>(k) / static_cast<double>(n_strata);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    edges[k] = sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  }
  return edges;
}

std::vector<std::size_t> assign_strata(std::span<const double> scores, std::span<const double> boundaries) {
  const std::size_t n_strata = boundaries.size() - 1;
  std::vector<std::size_t> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    // First edge strictly greater than the score closes the stratum.
    const auto it = std::upper_bound(boundaries.begin() + 1, boundaries.end() - 1, scores[i]);
    out[i] = std::min<std::size_t>(static_cast<std::size_t>(it - (boundaries.begin() + 1)), n_strata - 1);
  }
  return out;
}

std::vector<std::size_t> subsample_stratified(std::span<const EpisodeMetadata> episodes, StrataPlan& plan) {
  const std::size_t population = episodes.size();
  if (plan.n_strata == 0) throw Error(ErrorKind::InvalidArgument, "n_strata must be positive");
  if (plan.target_episodes > population) {
    throw Error(ErrorKind::TargetExceedsPopulation, "target " + std::to_string(plan.target_episodes) +
                                                        " exceeds population " + std::to_string(population));
  }
  if (population == 0) return {};

  std::vector<double> scores(population);
  for (std::size_t i = 0; i < population; ++i) scores[i] = static_cast<double>(episodes[i].final_score);
  plan.boundaries = strata_boundaries(scores, plan.n_strata);
  const auto strata = assign_strata(scores, plan.boundaries);

  std::vector<std::vector<std::size_t>> members(plan.n_strata);
  for (std::size_t i = 0; i < population; ++i) members[strata[i]].push_back(i);

  // Largest-remainder apportionment of target * mass.
  std::vector<std::size_t> quota(plan.n_strata);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < plan.n_strata; ++k) {
    const double exact = static_cast<double>(plan.target_episodes) * static_cast<double>(members[k].size()) /
                         static_cast<double>(population);
    quota[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < plan.target_episodes; ++r) {
    const std::size_t k = remainders[r % remainders.size()].second;
    if (quota[k] < members[k].size()) {
      ++quota[k];
      ++assigned;
    }
  }

  Rng rng(plan.seed);
  std::vector<std::size_t> selected;
  selected.reserve(plan.target_episodes);
  for (std::size_t k = 0; k < plan.n_strata; ++k) {
    auto& pool = members[k];
    for (std::size_t j = 0; j < quota[k]; ++j) {
      const auto pick = j + uniform_below(rng, pool.size() - j);
      std::swap(pool[j], pool[pick]);
      selected.push_back(pool[j]);
    }
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

// ---------------------------------------------------------------- KTR1

void write_raw_episode(const std::filesystem::path& path, const RawEpisode& episode) {
  ByteWriter w;
  w.put_raw(std::string_view(kRawMagic.data(), kRawMagic.size()));
  w.put(kRawFormatVersion);
  w.put_string16(canonical_string(episode.character));
  w.put(episode.episode_id);
  w.put(episode.death_level);
  w.put(episode.turns);
  w.put(static_cast<std::uint8_t>(episode.final_delta.has_value()));
  w.put(episode.final_delta.value_or(0));
  w.put(static_cast<std::uint32_t>(episode.steps.size()));
  for (const auto& s : episode.steps) {
    w.put(kRawStepRecordBytes);
    w.put_bytes(std::as_bytes(std::span(s.tty_chars)));
    w.put_bytes(std::as_bytes(std::span(s.tty_colors)));
    w.put(s.cursor_row);
    w.put(s.cursor_col);
    w.put(s.action);
    w.put(s.prev_reward);
    w.put(s.score);
    w.put(s.terminal);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.size()));
  if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path.string() + "'");
}

RawEpisode read_raw_episode(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(std::as_bytes(std::span(buf)), ErrorKind::IoError);
  if (r.get_raw(4) != std::string(kRawMagic.data(), 4)) throw Error(ErrorKind::BadMagic, path.string());
  if (const auto v = r.get<std::uint32_t>(); v != kRawFormatVersion) {
    throw Error(ErrorKind::VersionMismatch, "raw stream version " + std::to_string(v));
  }
  RawEpisode e;
  e.character = parse_task_id(r.get_string16());
  e.episode_id = r.get<std::uint64_t>();
  e.death_level = r.get<std::int32_t>();
  e.turns = r.get<std::int64_t>();
  const bool has_final = r.get<std::uint8_t>() != 0;
  const auto final_delta = r.get<std::int32_t>();
  if (has_final) e.final_delta = final_delta;
  const auto count = r.get<std::uint32_t>();
  e.steps.resize(count);
  for (auto& s : e.steps) {
    if (r.get<std::uint32_t>() != kRawStepRecordBytes) {
      throw Error(ErrorKind::IoError, "unexpected step record length in '" + path.string() + "'");
    }
    std::memcpy(s.tty_chars.data(), r.get_bytes(kScreenCells).data(), kScreenCells);
    std::memcpy(s.tty_colors.data(), r.get_bytes(kScreenCells).data(), kScreenCells);
    s.cursor_row = r.get<std::int16_t>();
    s.cursor_col = r.get<std::int16_t>();
    s.action = r.get<std::uint8_t>();
    s.prev_reward = r.get<std::int32_t>();
    s.score = r.get<std::int32_t>();
    s.terminal = r.get<std::uint8_t>();
  }
  if (r.remaining() != 0) throw Error(ErrorKind::IoError, "trailing bytes in '" + path.string() + "'");
  return e;
}

std::vector<std::filesystem::path> list_raw_episodes(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ktr") out.push_back(entry.path());
  }
  if (ec) throw Error(ErrorKind::IoError, "cannot list '" + dir.string() + "': " + ec.message());
  std::sort(out.begin(), out.end());
  return out;
}

ImportSummary import_source(const std::filesystem::path& input_dir, const CharacterSpec& task, StrataPlan plan,
                            const std::filesystem::path& output, WriteOptions options) {
  ImportSummary summary;
  const auto files = list_raw_episodes(input_dir);
  summary.scanned = files.size();

  // First pass keeps only metadata so the population never sits in memory.
  std::vector<std::filesystem::path> matching;
  std::vector<EpisodeMetadata> metadata;
  for (const auto& file : files) {
    const auto raw = read_raw_episode(file);
    if (raw.character != task) continue;
    metadata.push_back(align_episode(raw).metadata);
    matching.push_back(file);
  }
  summary.matching_task = matching.size();

  const auto selected = subsample_stratified(metadata, plan);
  summary.boundaries = plan.boundaries;
  if (selected.empty()) throw Error(ErrorKind::ValidationFailed, "no episodes selected");

  StoreWriter writer(output, canonical_string(task), options);
  for (const auto i : selected) writer.add(align_episode(read_raw_episode(matching[i])));
  summary.store = writer.finish();
  return summary;
}

}  // namespace ttyrl
