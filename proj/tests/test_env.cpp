#include "doctest.h"
#include "synthetic.hpp"
#include "ttyrl/env.hpp"
#include "ttyrl/errors.hpp"

using namespace ttyrl;

TEST_CASE("reset is deterministic per seed") {
  GridHack a, b;
  CHECK(a.reset(7).observation == b.reset(7).observation);
  CHECK(a.reset(7).observation != a.reset(8).observation);
}

TEST_CASE("initial step carries no reward") {
  GridHack env;
  const auto s = env.reset(3);
  CHECK(s.reward == 0);
  CHECK_FALSE(s.done);
  CHECK(s.observation.tty_chars[s.observation.cursor_row * kScreenCols + s.observation.cursor_col] == '@');
}

TEST_CASE("stepping after done throws") {
  GridHackConfig cfg;
  cfg.horizon = 3;
  GridHack env(cfg);
  CHECK_THROWS_AS(env.step(1), Error);
  env.reset(1);
  env.step(18);
  env.step(18);
  CHECK(env.step(18).done);
  try {
    env.step(1);
    FAIL("expected SteppedAfterDone");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SteppedAfterDone);
  }
}

TEST_CASE("walls block movement and unknown actions are no-ops") {
  GridHack env;
  auto s = env.reset(11);
  for (int i = 0; i < 20; ++i) s = env.step(actions::kNorth);
  const int row = s.observation.cursor_row;
  s = env.step(actions::kNorth);
  CHECK(s.observation.cursor_row == row);
  const auto col = s.observation.cursor_col;
  s = env.step(77);
  CHECK(s.observation.cursor_row == row);
  CHECK(s.observation.cursor_col == col);
}

TEST_CASE("scripted policy scores and episodes respect the horizon") {
  GridHack env;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ep = record_rollout(env, seed, scripted_policy, seed);
    CHECK(ep.steps.size() == 200);
    const auto rec = align_episode(ep);
    CHECK(rec.metadata.final_score > 0);
    CHECK(validate_episode(rec).empty());
    CHECK(rec.metadata.death_level >= 2);
  }
}

TEST_CASE("scripted rollouts are deterministic") {
  GridHack a, b;
  const auto x = record_rollout(a, 5, scripted_policy, 0);
  const auto y = record_rollout(b, 5, scripted_policy, 0);
  REQUIRE(x.steps.size() == y.steps.size());
  for (std::size_t t = 0; t < x.steps.size(); ++t) {
    CHECK(x.steps[t].tty_chars == y.steps[t].tty_chars);
    CHECK(x.steps[t].action == y.steps[t].action);
  }
}

TEST_CASE("aligned rewards equal environment rewards") {
  GridHack env;
  GridHack replay;
  const auto raw = record_rollout(env, 9, scripted_policy, 0);
  const auto rec = align_episode(raw);
  replay.reset(9);
  for (std::size_t t = 0; t < rec.steps(); ++t) {
    const auto s = replay.step(rec.actions[t]);
    CHECK(rec.rewards[t] == s.reward);
  }
}

TEST_CASE("scripted policy heads for the gold") {
  EnvObservation obs;
  obs.tty_chars.fill(' ');
  obs.cursor_row = 10;
  obs.cursor_col = 10;
  obs.tty_chars[10 * kScreenCols + 10] = '@';
  obs.tty_chars[5 * kScreenCols + 14] = '$';
  CHECK(scripted_policy(obs) == actions::kEast);
  obs.tty_chars[5 * kScreenCols + 14] = ' ';
  obs.tty_chars[5 * kScreenCols + 10] = '$';
  CHECK(scripted_policy(obs) == actions::kNorth);
  obs.tty_chars[5 * kScreenCols + 10] = ' ';
  CHECK(scripted_policy(obs) == actions::kWait);
}

TEST_CASE("generated episodes repack into a store") {
  ttyrl::testing::TempDir dir("env");
  generate_gridhack(dir / "raw", 12, 4);
  StrataPlan plan;
  plan.target_episodes = 10;
  const auto summary = import_source(dir / "raw", {Role::Mon, Race::Hum, Alignment::Neu}, plan, dir / "g.ktb", {});
  CHECK(summary.matching_task == 12);
  CHECK(summary.store.episode_count == 10);
}
