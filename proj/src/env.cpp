#include "ttyrl/env.hpp"

#include <cstdio>

#include "ttyrl/errors.hpp"

namespace ttyrl {

namespace {

constexpr int kMapFirstRow = 1;
constexpr int kMapLastRow = 21;
constexpr std::int8_t kGray = 7;
constexpr std::int8_t kYellow = 11;
constexpr std::int8_t kWhite = 15;

struct Delta {
  int dr, dc;
};

// Indexed by action id 1..8.
constexpr Delta kMoves[9] = {{0, 0}, {-1, 0}, {0, 1}, {1, 0}, {0, -1}, {-1, 1}, {1, 1}, {1, -1}, {-1, -1}};

void put_text(EnvObservation& obs, int row, const std::string& text) {
  for (std::size_t i = 0; i < text.size() && i < static_cast<std::size_t>(kScreenCols); ++i) {
    obs.tty_chars[row * kScreenCols + i] = static_cast<std::uint8_t>(text[i]);
    obs.tty_colors[row * kScreenCols + i] = kGray;
  }
}

}  // namespace

GridHack::GridHack(GridHackConfig cfg) : cfg_(cfg) {
  if (cfg_.horizon < 1 || cfg_.room_rows < 2 || cfg_.room_cols < 2 || cfg_.gold_per_level < 1) {
    throw Error(ErrorKind::InvalidArgument, "GridHack needs a positive horizon and a room of at least 2x2");
  }
  if (cfg_.room_rows + 2 > kMapLastRow - kMapFirstRow + 1 || cfg_.room_cols + 2 > kScreenCols) {
    throw Error(ErrorKind::InvalidArgument, "GridHack room does not fit on the screen");
  }
}

void GridHack::new_room() {
  const int outer_h = cfg_.room_rows + 2;
  const int outer_w = cfg_.room_cols + 2;
  top_ = kMapFirstRow + static_cast<int>(uniform_below(rng_, kMapLastRow - kMapFirstRow + 2 - outer_h));
  left_ = static_cast<int>(uniform_below(rng_, kScreenCols + 1 - outer_w));
  row_ = top_ + 1 + static_cast<int>(uniform_below(rng_, cfg_.room_rows));
  col_ = left_ + 1 + static_cast<int>(uniform_below(rng_, cfg_.room_cols));
  place_gold();
}

void GridHack::place_gold() {
  do {
    gold_row_ = top_ + 1 + static_cast<int>(uniform_below(rng_, cfg_.room_rows));
    gold_col_ = left_ + 1 + static_cast<int>(uniform_below(rng_, cfg_.room_cols));
  } while (gold_row_ == row_ && gold_col_ == col_);
}

EnvStep GridHack::reset(std::uint64_t seed) {
  rng_.seed(derive_seed(seed, 0x67726964));
  turn_ = 0;
  depth_ = 1;
  max_depth_ = 1;
  collected_ = 0;
  score_ = 0;
  done_ = false;
  started_ = true;
  message_ = "Hello Agent, welcome to GridHack!";
  new_room();
  return snapshot(0);
}

EnvStep GridHack::step(int action) {
  if (!started_ || done_) throw Error(ErrorKind::SteppedAfterDone, "step() called on a finished episode");
  message_.clear();
  std::int32_t reward = 0;
  if (action >= 1 && action <= 8) {
    const int r = row_ + kMoves[action].dr;
    const int c = col_ + kMoves[action].dc;
    const bool inside = r > top_ && r <= top_ + cfg_.room_rows && c > left_ && c <= left_ + cfg_.room_cols;
    if (inside) {
      row_ = r;
      col_ = c;
    }
  }
  if (row_ == gold_row_ && col_ == gold_col_) {
    reward = cfg_.gold_value * depth_;
    score_ += reward;
    ++collected_;
    message_ = std::to_string(reward) + " gold pieces.";
    if (collected_ % cfg_.gold_per_level == 0) {
      ++depth_;
      max_depth_ = std::max(max_depth_, depth_);
      message_ += " You descend to level " + std::to_string(depth_) + ".";
      new_room();
    } else {
      place_gold();
    }
  }
  ++turn_;
  done_ = turn_ >= cfg_.horizon;
  auto out = snapshot(reward);
  out.done = done_;
  return out;
}

EnvStep GridHack::snapshot(std::int32_t reward) const {
  EnvStep s;
  auto& obs = s.observation;
  obs.tty_chars.fill(' ');
  obs.tty_colors.fill(0);
  put_text(obs, 0, message_);
  for (int r = top_; r <= top_ + cfg_.room_rows + 1; ++r) {
    for (int c = left_; c <= left_ + cfg_.room_cols + 1; ++c) {
      const bool edge_r = r == top_ || r == top_ + cfg_.room_rows + 1;
      const bool edge_c = c == left_ || c == left_ + cfg_.room_cols + 1;
      obs.tty_chars[r * kScreenCols + c] = edge_r ? '-' : edge_c ? '|' : '.';
      obs.tty_colors[r * kScreenCols + c] = kGray;
    }
  }
  obs.tty_chars[gold_row_ * kScreenCols + gold_col_] = '$';
  obs.tty_colors[gold_row_ * kScreenCols + gold_col_] = kYellow;
  obs.tty_chars[row_ * kScreenCols + col_] = '@';
  obs.tty_colors[row_ * kScreenCols + col_] = kWhite;
  put_text(obs, 22, "Agent the Candidate          St:16 Dx:14 Co:15 In:9 Wi:12 Ch:8 Neutral");
  put_text(obs, 23, "Dlvl:" + std::to_string(depth_) + " $:" + std::to_string(score_) + " T:" + std::to_string(turn_ + 1));
  obs.cursor_row = static_cast<std::int16_t>(row_);
  obs.cursor_col = static_cast<std::int16_t>(col_);
  s.reward = reward;
  s.done = done_;
  s.score = score_;
  s.depth = depth_;
  return s;
}

int scripted_policy(const EnvObservation& obs) {
  for (int r = kMapFirstRow; r <= kMapLastRow; ++r) {
    for (int c = 0; c < kScreenCols; ++c) {
      if (obs.tty_chars[r * kScreenCols + c] != '$') continue;
      if (c != obs.cursor_col) return c > obs.cursor_col ? actions::kEast : actions::kWest;
      return r < obs.cursor_row ? actions::kNorth : actions::kSouth;
    }
  }
  return actions::kWait;
}

RawEpisode record_rollout(EnvAdapter& env, std::uint64_t seed, const Policy& policy, std::uint64_t episode_id) {
  RawEpisode ep;
  ep.character = env.task();
  ep.episode_id = episode_id;
  EnvStep cur = env.reset(seed);
  std::int32_t prev_reward = 0;
  std::int32_t depth = cur.depth;
  while (true) {
    RawStepTuple tup;
    tup.tty_chars = cur.observation.tty_chars;
    tup.tty_colors = cur.observation.tty_colors;
    tup.cursor_row = cur.observation.cursor_row;
    tup.cursor_col = cur.observation.cursor_col;
    const int action = policy(cur.observation);
    if (action < 0 || action > 255) throw Error(ErrorKind::AdapterFailure, "policy returned an invalid action");
    tup.action = static_cast<std::uint8_t>(action);
    tup.prev_reward = prev_reward;
    tup.score = static_cast<std::int32_t>(cur.score);
    const EnvStep next = env.step(action);
    depth = std::max(depth, next.depth);
    if (next.done) {
      tup.terminal = 1;
      ep.steps.push_back(tup);
      // The last action's reward has no later score reading to difference.
      ep.final_delta = static_cast<std::int32_t>(next.score - cur.score);
      break;
    }
    ep.steps.push_back(tup);
    prev_reward = next.reward;
    cur = next;
  }
  ep.death_level = depth;
  ep.turns = static_cast<std::int64_t>(ep.steps.size());
  return ep;
}

std::vector<std::filesystem::path> generate_gridhack(const std::filesystem::path& dir, std::size_t count,
                                                     std::uint64_t seed, const GridHackConfig& cfg) {
  std::filesystem::create_directories(dir);
  GridHack env(cfg);
  std::vector<std::filesystem::path> out;
  for (std::size_t i = 0; i < count; ++i) {
    char name[48];
    std::snprintf(name, sizeof(name), "episode_%06zu.ktr", i);
    const auto path = dir / name;
    write_raw_episode(path, record_rollout(env, derive_seed(seed, i), scripted_policy, i));
    out.push_back(path);
  }
  return out;
}

}  // namespace ttyrl
