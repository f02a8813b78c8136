#include "ttyrl/catalog.hpp"

#include <algorithm>
#include <cctype>

#include "ttyrl/errors.hpp"

namespace ttyrl {

namespace {

constexpr std::array<std::string_view, 13> kRoleCodes = {"arc", "bar", "cav", "hea", "kni", "mon", "pri",
                                                         "ran", "rog", "sam", "tou", "val", "wiz"};
constexpr std::array<std::string_view, 5> kRaceCodes = {"hum", "elf", "dwa", "gno", "orc"};
constexpr std::array<std::string_view, 3> kAlignmentCodes = {"neu", "law", "cha"};

using R = Role;
using Ra = Race;
using Al = Alignment;
using C = TaskCategory;

// clang-format off
// transitions, median turns, median score, median death level, size GB, compressed GB | min, max, mean score
constexpr std::array<CatalogEntry, kTaskCount> kCatalog = {{
    // Base
    {{R::Arc, Ra::Hum, Al::Neu}, C::Base, {24527163, 32858.0, 4802.5, 2.0, 94.5, 1.3}, {0.0, 138103.0, 6636.44}},
    {{R::Bar, Ra::Hum, Al::Neu}, C::Base, {26266771, 35716.0, 11964.0, 4.0, 101.1, 1.7}, {0.0, 292342.0, 17836.68}},
    {{R::Cav, Ra::Hum, Al::Neu}, C::Base, {21674680, 30361.0, 8152.0, 4.0, 83.5, 1.3}, {0.0, 258978.0, 12113.87}},
    {{R::Hea, Ra::Hum, Al::Neu}, C::Base, {14473997, 18051.0, 2043.0, 1.0, 55.7, 0.8}, {0.0, 64337.0, 4068.27}},
    {{R::Kni, Ra::Hum, Al::Law}, C::Base, {22287283, 28246.0, 6305.0, 3.0, 85.8, 1.5}, {0.0, 419154.0, 14137.06}},
    {{R::Mon, Ra::Hum, Al::Neu}, C::Base, {33741542, 42400.0, 11356.0, 4.0, 129.9, 2.1}, {0.0, 171224.0, 17456.05}},
    {{R::Pri, Ra::Hum, Al::Neu}, C::Base, {18376473, 26796.5, 5366.5, 2.0, 70.8, 1.1}, {0.0, 114269.0, 7732.69}},
    {{R::Ran, Ra::Hum, Al::Neu}, C::Base, {17625493, 25354.0, 6168.0, 2.0, 67.9, 1.0}, {0.0, 54874.0, 8067.99}},
    {{R::Rog, Ra::Hum, Al::Cha}, C::Base, {14284927, 19334.0, 3005.5, 1.0, 55.0, 0.8}, {0.0, 68628.0, 4818.20}},
    {{R::Sam, Ra::Hum, Al::Law}, C::Base, {22422537, 32951.0, 7850.0, 4.0, 86.3, 1.3}, {0.0, 155163.0, 11009.36}},
    {{R::Tou, Ra::Hum, Al::Neu}, C::Base, {13376498, 17955.5, 2554.5, 1.0, 51.5, 0.8}, {0.0, 59484.0, 4211.47}},
    {{R::Val, Ra::Hum, Al::Neu}, C::Base, {27784788, 35250.0, 11402.5, 4.0, 107.0, 1.8}, {16.0, 313858.0, 18624.77}},
    {{R::Wiz, Ra::Hum, Al::Neu}, C::Base, {14343449, 19808.5, 3132.5, 1.0, 55.2, 0.8}, {0.0, 71709.0, 5323.48}},
    // Extended
    {{R::Pri, Ra::Elf, Al::Cha}, C::Extended, {18796560, 26909.5, 4718.5, 2.0, 72.4, 1.1}, {0.0, 83744.0, 7109.35}},
    {{R::Ran, Ra::Elf, Al::Cha}, C::Extended, {18238686, 26607.0, 7583.0, 4.0, 70.2, 1.1}, {0.0, 66690.0, 9014.18}},
    {{R::Wiz, Ra::Elf, Al::Cha}, C::Extended, {15277820, 19512.0, 2988.5, 1.0, 58.8, 0.9}, {0.0, 71664.0, 5005.16}},
    {{R::Arc, Ra::Dwa, Al::Law}, C::Extended, {25100788, 34669.0, 4026.0, 1.0, 96.7, 1.5}, {0.0, 83496.0, 5445.69}},
    {{R::Cav, Ra::Dwa, Al::Law}, C::Extended, {22871890, 32261.0, 7158.0, 3.0, 88.1, 1.5}, {0.0, 161682.0, 11893.48}},
    {{R::Val, Ra::Dwa, Al::Law}, C::Extended, {32787658, 33973.0, 8652.5, 3.0, 126.6, 2.5}, {0.0, 1136591.0, 23473.61}},
    {{R::Arc, Ra::Gno, Al::Neu}, C::Extended, {24144048, 34432.0, 4077.5, 1.0, 93.0, 1.4}, {0.0, 110054.0, 5316.57}},
    {{R::Cav, Ra::Gno, Al::Neu}, C::Extended, {21624779, 29860.0, 6446.0, 3.0, 83.3, 1.4}, {0.0, 142460.0, 10083.06}},
    {{R::Hea, Ra::Gno, Al::Neu}, C::Extended, {14884704, 18518.0, 1980.5, 1.0, 57.3, 0.9}, {0.0, 69566.0, 3783.93}},
    {{R::Ran, Ra::Gno, Al::Neu}, C::Extended, {17571659, 25970.0, 5326.0, 2.0, 67.7, 1.1}, {0.0, 58137.0, 6965.04}},
    {{R::Wiz, Ra::Gno, Al::Neu}, C::Extended, {14193637, 19206.0, 2736.0, 1.0, 54.7, 0.9}, {0.0, 37376.0, 4317.51}},
    {{R::Bar, Ra::Orc, Al::Cha}, C::Extended, {27826356, 39291.0, 10499.0, 4.0, 107.2, 1.8}, {0.0, 164296.0, 17594.38}},
    {{R::Ran, Ra::Orc, Al::Cha}, C::Extended, {18127448, 26707.0, 5460.0, 2.0, 69.8, 1.1}, {3.0, 69244.0, 7608.48}},
    {{R::Rog, Ra::Orc, Al::Cha}, C::Extended, {16674806, 22351.0, 3103.0, 1.0, 64.2, 1.0}, {0.0, 54892.0, 4897.69}},
    {{R::Wiz, Ra::Orc, Al::Cha}, C::Extended, {15994150, 22570.5, 3241.5, 1.0, 61.6, 1.0}, {0.0, 40871.0, 5016.74}},
    // Complete
    {{R::Arc, Ra::Hum, Al::Law}, C::Complete, {23422383, 31446.0, 4188.0, 1.0, 90.2, 1.3}, {2.0, 84823.0, 5826.35}},
    {{R::Cav, Ra::Hum, Al::Law}, C::Complete, {22328494, 31039.0, 8174.0, 4.0, 86.0, 1.3}, {0.0, 156966.0, 12462.82}},
    {{R::Mon, Ra::Hum, Al::Law}, C::Complete, {30782317, 39647.0, 10855.0, 4.0, 118.5, 1.9}, {7.0, 190783.0, 16091.57}},
    {{R::Pri, Ra::Hum, Al::Law}, C::Complete, {18298816, 27192.0, 4833.0, 1.0, 70.5, 1.1}, {0.0, 99250.0, 6847.99}},
    {{R::Val, Ra::Hum, Al::Law}, C::Complete, {30171035, 34570.5, 9707.0, 4.0, 116.2, 2.1}, {0.0, 428274.0, 26103.03}},
    {{R::Bar, Ra::Hum, Al::Cha}, C::Complete, {25362111, 35925.0, 12574.0, 5.0, 97.7, 1.6}, {0.0, 164446.0, 18228.11}},
    {{R::Mon, Ra::Hum, Al::Cha}, C::Complete, {33662420, 41730.5, 11418.0, 4.0, 129.6, 2.1}, {0.0, 223997.0, 18353.30}},
    {{R::Pri, Ra::Hum, Al::Cha}, C::Complete, {18667816, 28204.5, 5847.0, 2.0, 71.9, 1.1}, {0.0, 58367.0, 8262.56}},
    {{R::Ran, Ra::Hum, Al::Cha}, C::Complete, {16999630, 24698.5, 6236.0, 2.0, 65.6, 1.0}, {3.0, 62599.0, 8378.50}},
    {{R::Wiz, Ra::Hum, Al::Cha}, C::Complete, {14635591, 20257.0, 3294.0, 1.0, 56.4, 0.9}, {0.0, 55185.0, 5316.82}},
}};
// clang-format on

template <typename Enum, std::size_t N>
bool parse_code(std::string_view code, const std::array<std::string_view, N>& codes, Enum& out) {
  for (std::size_t i = 0; i < N; ++i) {
    if (codes[i] == code) {
      out = static_cast<Enum>(i);
      return true;
    }
  }
  return false;
}

const CatalogEntry* find_entry(const CharacterSpec& spec) {
  auto it = std::find_if(kCatalog.begin(), kCatalog.end(),
                         [&](const CatalogEntry& e) { return e.character == spec; });
  return it == kCatalog.end() ? nullptr : &*it;
}

}  // namespace

std::string_view to_string(Role role) { return kRoleCodes[static_cast<std::size_t>(role)]; }
std::string_view to_string(Race race) { return kRaceCodes[static_cast<std::size_t>(race)]; }
std::string_view to_string(Alignment alignment) {
  return kAlignmentCodes[static_cast<std::size_t>(alignment)];
}

std::string_view to_string(TaskCategory category) {
  switch (category) {
    case TaskCategory::Base: return "Base";
    case TaskCategory::Extended: return "Extended";
    case TaskCategory::Complete: return "Complete";
  }
  return "?";
}

TaskCategory parse_category(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "base") return TaskCategory::Base;
  if (lower == "extended") return TaskCategory::Extended;
  if (lower == "complete") return TaskCategory::Complete;
  throw Error(ErrorKind::InvalidArgument, "unknown category '" + std::string(text) + "'");
}

std::string canonical_string(const CharacterSpec& spec) {
  std::string out;
  out.reserve(11);
  out += to_string(spec.role);
  out += '-';
  out += to_string(spec.race);
  out += '-';
  out += to_string(spec.alignment);
  return out;
}

std::span<const CatalogEntry> catalog() { return kCatalog; }

CharacterSpec parse_task_id(std::string_view text) {
  if (text.size() != 11 || text[3] != '-' || text[7] != '-') {
    throw Error(ErrorKind::MalformedId, "expected role-race-alignment, got '" + std::string(text) + "'");
  }
  CharacterSpec spec;
  if (!parse_code(text.substr(0, 3), kRoleCodes, spec.role) ||
      !parse_code(text.substr(4, 3), kRaceCodes, spec.race) ||
      !parse_code(text.substr(8, 3), kAlignmentCodes, spec.alignment)) {
    throw Error(ErrorKind::MalformedId, "unknown code in '" + std::string(text) + "'");
  }
  if (!find_entry(spec)) {
    throw Error(ErrorKind::UnknownTask, "'" + std::string(text) + "' is not a benchmark task");
  }
  return spec;
}

bool is_catalog_task(const CharacterSpec& spec) { return find_entry(spec) != nullptr; }

const CatalogEntry& catalog_entry(const CharacterSpec& spec) {
  const CatalogEntry* entry = find_entry(spec);
  if (!entry) throw Error(ErrorKind::UnknownTask, canonical_string(spec) + " is not a benchmark task");
  return *entry;
}

const TaskStats& catalog_stats(const CharacterSpec& spec) { return catalog_entry(spec).stats; }
TaskCategory catalog_category(const CharacterSpec& spec) { return catalog_entry(spec).category; }
const NormalizationScores& normalization_scores(const CharacterSpec& spec) {
  return catalog_entry(spec).normalization;
}

}  // namespace ttyrl
