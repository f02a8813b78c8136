#include "ttyrl/episode.hpp"

#include <sstream>

namespace ttyrl {

void EpisodeRecord::push_step(const std::uint8_t* chars, const std::int8_t* colors, std::int16_t cursor_row,
                              std::int16_t cursor_col, std::uint8_t action, std::int32_t reward,
                              std::uint8_t done) {
  tty_chars.insert(tty_chars.end(), chars, chars + kScreenCells);
  tty_colors.insert(tty_colors.end(), colors, colors + kScreenCells);
  tty_cursor.push_back(cursor_row);
  tty_cursor.push_back(cursor_col);
  actions.push_back(action);
  rewards.push_back(reward);
  dones.push_back(done);
}

ValidationReport validate_episode(const EpisodeRecord& record) {
  ValidationReport report;
  const std::size_t steps = record.actions.size();
  if (steps == 0) {
    report.push_back({"empty episode", -1});
    return report;
  }

  bool lengths_ok = true;
  auto check_length = [&](const char* name, std::size_t actual, std::size_t expected) {
    if (actual != expected) {
      report.push_back({std::string("length mismatch: ") + name + " has " + std::to_string(actual) +
                            " elements, expected " + std::to_string(expected),
                        -1});
      lengths_ok = false;
    }
  };
  check_length("tty_chars", record.tty_chars.size(), steps * kScreenCells);
  check_length("tty_colors", record.tty_colors.size(), steps * kScreenCells);
  check_length("tty_cursor", record.tty_cursor.size(), steps * 2);
  check_length("rewards", record.rewards.size(), steps);
  check_length("dones", record.dones.size(), steps);

  if (record.dones.size() == steps) {
    for (std::size_t t = 0; t < steps; ++t) {
      const auto d = record.dones[t];
      if (d > 1) {
        report.push_back({"done flag not in {0,1}", static_cast<std::int64_t>(t)});
      } else if (t + 1 < steps && d != 0) {
        report.push_back({"done flag before final step", static_cast<std::int64_t>(t)});
      }
    }
    if (record.dones[steps - 1] != 1) {
      report.push_back({"terminal flag missing", static_cast<std::int64_t>(steps - 1)});
    }
  }

  if (lengths_ok) {
    for (std::size_t t = 0; t < steps; ++t) {
      const auto row = record.tty_cursor[2 * t];
      const auto col = record.tty_cursor[2 * t + 1];
      if (row < 0 || row >= kScreenRows || col < 0 || col >= kScreenCols) {
        report.push_back({"cursor out of screen", static_cast<std::int64_t>(t)});
      }
    }
  }

  const auto& meta = record.metadata;
  if (!is_catalog_task(meta.character)) report.push_back({"character is not a benchmark task", -1});
  if (meta.final_score < 0) report.push_back({"negative final score", -1});
  if (meta.death_level < 1) report.push_back({"death level below 1", -1});
  if (meta.turns < 1) report.push_back({"turns below 1", -1});
  return report;
}

std::string describe(const ValidationReport& report) {
  std::ostringstream out;
  for (const auto& v : report) {
    out << v.message;
    if (v.index >= 0) out << " (step " << v.index << ")";
    out << "; ";
  }
  return out.str();
}

}  // namespace ttyrl
