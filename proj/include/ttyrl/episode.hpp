#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttyrl/catalog.hpp"

namespace ttyrl {

struct EpisodeMetadata {
  CharacterSpec character;
  std::int64_t final_score = 0;
  std::int32_t death_level = 1;
  std::int64_t turns = 1;
  std::uint64_t episode_id = 0;

  friend bool operator==(const EpisodeMetadata&, const EpisodeMetadata&) = default;
};

// One trajectory. Screens are row-major [T, 24, 80]; the cursor is [T, 2]
// holding (row, col).
struct EpisodeRecord {
  std::vector<std::uint8_t> tty_chars;
  std::vector<std::int8_t> tty_colors;
  std::vector<std::int16_t> tty_cursor;
  std::vector<std::uint8_t> actions;
  std::vector<std::int32_t> rewards;
  std::vector<std::uint8_t> dones;
  EpisodeMetadata metadata;

  std::size_t steps() const noexcept { return actions.size(); }

  // Appends one step; the caller fixes up dones afterwards if needed.
  void push_step(const std::uint8_t* chars, const std::int8_t* colors, std::int16_t cursor_row,
                 std::int16_t cursor_col, std::uint8_t action, std::int32_t reward, std::uint8_t done);

  friend bool operator==(const EpisodeRecord&, const EpisodeRecord&) = default;
};

struct Violation {
  std::string message;
  // Offending step, or -1 for record-level problems.
  std::int64_t index = -1;
};

using ValidationReport = std::vector<Violation>;

ValidationReport validate_episode(const EpisodeRecord& record);

std::string describe(const ValidationReport& report);

}  // namespace ttyrl
