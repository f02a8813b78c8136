#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace ttyrl {

enum class Role : std::uint8_t { Arc, Bar, Cav, Hea, Kni, Mon, Pri, Ran, Rog, Sam, Tou, Val, Wiz };
enum class Race : std::uint8_t { Hum, Elf, Dwa, Gno, Orc };
enum class Alignment : std::uint8_t { Neu, Law, Cha };

enum class TaskCategory : std::uint8_t { Base, Extended, Complete };

std::string_view to_string(Role role);
std::string_view to_string(Race race);
std::string_view to_string(Alignment alignment);
std::string_view to_string(TaskCategory category);

// Accepts "base"/"extended"/"complete" in any case; throws InvalidArgument otherwise.
TaskCategory parse_category(std::string_view text);

struct CharacterSpec {
  Role role{};
  Race race{};
  Alignment alignment{};

  friend bool operator==(const CharacterSpec&, const CharacterSpec&) = default;
  friend auto operator<=>(const CharacterSpec&, const CharacterSpec&) = default;
};

// "role-race-alignment" with lowercase three-letter codes.
std::string canonical_string(const CharacterSpec& spec);

struct TaskStats {
  std::uint64_t transitions = 0;
  double median_turns = 0.0;
  double median_score = 0.0;
  double median_deathlvl = 0.0;
  double size_gb = 0.0;
  double compressed_size_gb = 0.0;
};

struct NormalizationScores {
  double min_score = 0.0;
  double max_score = 0.0;
  double mean_score = 0.0;
};

struct CatalogEntry {
  CharacterSpec character;
  TaskCategory category;
  TaskStats stats;
  NormalizationScores normalization;
};

inline constexpr std::size_t kTaskCount = 38;
inline constexpr int kScreenRows = 24;
inline constexpr int kScreenCols = 80;
inline constexpr int kScreenCells = kScreenRows * kScreenCols;

// Size of the enumerated action vocabulary of the challenge environment.
inline constexpr int kDefaultActionCount = 121;

// Catalog rows in benchmark order (Base, then Extended, then Complete).
std::span<const CatalogEntry> catalog();

// Throws MalformedId when the text is not three known lowercase codes joined
// by '-', UnknownTask when the combination is not a benchmark task.
CharacterSpec parse_task_id(std::string_view text);

bool is_catalog_task(const CharacterSpec& spec);

const CatalogEntry& catalog_entry(const CharacterSpec& spec);
const TaskStats& catalog_stats(const CharacterSpec& spec);
TaskCategory catalog_category(const CharacterSpec& spec);
const NormalizationScores& normalization_scores(const CharacterSpec& spec);

}  // namespace ttyrl
