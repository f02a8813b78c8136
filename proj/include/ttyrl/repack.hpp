#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttyrl/episode.hpp"
#include "ttyrl/store.hpp"

namespace ttyrl {

// One step in the source convention: the reward attached to a step is the
// score delta received *before* it was taken.
struct RawStepTuple {
  std::array<std::uint8_t, kScreenCells> tty_chars{};
  std::array<std::int8_t, kScreenCells> tty_colors{};
  std::int16_t cursor_row = 0;
  std::int16_t cursor_col = 0;
  std::uint8_t action = 0;
  std::int32_t prev_reward = 0;
  std::int32_t score = 0;
  std::uint8_t terminal = 0;
};

struct RawEpisode {
  CharacterSpec character;
  std::uint64_t episode_id = 0;
  std::int32_t death_level = 1;
  // Game turns; 0 means "use the step count".
  std::int64_t turns = 0;
  // Score delta of the terminal event (e.g. death bonus), when the source has one.
  std::optional<std::int32_t> final_delta;
  std::vector<RawStepTuple> steps;
};

// Rewards from a potential equal to the cumulative score:
// out[t] = scores[t+1] - scores[t], out[T-1] = final_delta.
std::vector<std::int32_t> shape_rewards(std::span<const std::int32_t> scores, std::int32_t final_delta);

// Rewrites (s_t, a_t, r_{t-1}) into (s_t, a_t, r_t) without dropping steps.
// Throws EmptyStream / NonMonotoneTermination.
EpisodeRecord align_episode(const RawEpisode& raw);

struct StrataPlan {
  std::size_t n_strata = 10;
  std::size_t target_episodes = 680;
  std::uint64_t seed = 0;
  // Filled by subsample_stratified: n_strata + 1 score quantile edges.
  std::vector<double> boundaries;
};

// Score quantile edges (linear interpolation between order statistics).
std::vector<double> strata_boundaries(std::span<const double> scores, std::size_t n_strata);

// Stratum of every score given the edges; the last stratum is closed.
std::vector<std::size_t> assign_strata(std::span<const double> scores, std::span<const double> boundaries);

// Returns ascending positions into `episodes`. Quotas follow the stratum
// mass with largest-remainder rounding so they sum to the target exactly.
std::vector<std::size_t> subsample_stratified(std::span<const EpisodeMetadata> episodes, StrataPlan& plan);

// ---- raw-stream exchange format (KTR1, one episode per file) ----

inline constexpr std::array<char, 4> kRawMagic = {'K', 'T', 'R', '1'};
inline constexpr std::uint32_t kRawFormatVersion = 1;
inline constexpr std::uint32_t kRawStepRecordBytes = 2 * kScreenCells + 2 + 2 + 1 + 4 + 4 + 1;

void write_raw_episode(const std::filesystem::path& path, const RawEpisode& episode);
RawEpisode read_raw_episode(const std::filesystem::path& path);

// Sorted *.ktr files of a directory.
std::vector<std::filesystem::path> list_raw_episodes(const std::filesystem::path& dir);

struct ImportSummary {
  std::size_t scanned = 0;
  std::size_t matching_task = 0;
  std::vector<double> boundaries;
  WriteSummary store;
};

// Aligns every raw episode of `task` found in `input_dir`, subsamples them by
// final score and writes the selection (in input order) to a KTB1 store.
ImportSummary import_source(const std::filesystem::path& input_dir, const CharacterSpec& task, StrataPlan plan,
                            const std::filesystem::path& output, WriteOptions options = {});

}  // namespace ttyrl
