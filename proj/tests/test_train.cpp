#include <fstream>
#include <sstream>

#include "doctest.h"
#include "synthetic.hpp"
#include "toy_model.hpp"
#include "ttyrl/errors.hpp"
#include "ttyrl/train.hpp"

using namespace ttyrl;
using ttyrl::testing::TempDir;
using ttyrl::testing::toy_config;

namespace {

const CharacterSpec kTask{Role::Mon, Race::Hum, Alignment::Neu};

std::filesystem::path gridhack_store(const TempDir& dir, std::size_t episodes) {
  generate_gridhack(dir / "raw", episodes, 21);
  StrataPlan plan;
  plan.target_episodes = episodes;
  import_source(dir / "raw", kTask, plan, dir / "g.ktb", {});
  return dir / "g.ktb";
}

TrainConfig small_train(std::uint64_t iterations) {
  TrainConfig cfg;
  cfg.iterations = iterations;
  cfg.batch_size = 4;
  cfg.seq_len = 5;
  cfg.rem_heads = 3;
  cfg.log_every = 2;
  cfg.seed = 17;
  return cfg;
}

}  // namespace

TEST_CASE("json lines sink format") {
  std::ostringstream out;
  JsonLinesSink sink(out);
  sink(3, "loss/td", 0.5);
  sink(4, "loss", std::numeric_limits<double>::infinity());
  CHECK(out.str() == "{\"step\": 3, \"name\": \"loss/td\", \"value\": 0.5}\n"
                     "{\"step\": 4, \"name\": \"loss\", \"value\": null}\n");
}

TEST_CASE("action rule names and defaults") {
  CHECK(default_action_rule(Algorithm::BC) == ActionRule::SamplePolicy);
  CHECK(default_action_rule(Algorithm::IQL) == ActionRule::SamplePolicy);
  CHECK(default_action_rule(Algorithm::AWAC) == ActionRule::SamplePolicy);
  CHECK(default_action_rule(Algorithm::CQL) == ActionRule::GreedyQ);
  CHECK(default_action_rule(Algorithm::REM) == ActionRule::GreedyQ);
  CHECK(parse_action_rule("greedy_policy") == ActionRule::GreedyPolicy);
  CHECK_THROWS_AS(parse_action_rule("argmax"), Error);
}

TEST_CASE("training is deterministic and logs metrics") {
  TempDir dir("train");
  const auto store = gridhack_store(dir, 6);
  auto data = load(store, LoaderMode::InMemory);
  for (const auto algo : {Algorithm::BC, Algorithm::CQL, Algorithm::IQL, Algorithm::AWAC, Algorithm::REM}) {
    CAPTURE(to_string(algo));
    std::vector<std::string> names;
    const auto a = train(algo, *data, toy_config(algo, 19), small_train(4),
                         [&](std::uint64_t, std::string_view n, double v) {
                           CHECK(std::isfinite(v));
                           names.emplace_back(n);
                         });
    const auto b = train(algo, *data, toy_config(algo, 19), small_train(4));
    CHECK(a.parameters == b.parameters);
    CHECK(a.step == 4);
    CHECK(std::find(names.begin(), names.end(), "loss") != names.end());
    CHECK(std::find(names.begin(), names.end(), "grad_norm") != names.end());
    auto other = small_train(4);
    other.seed = 18;
    CHECK(train(algo, *data, toy_config(algo, 19), other).parameters != a.parameters);
  }
}

TEST_CASE("checkpoints round trip and reject corruption") {
  TempDir dir("ckpt");
  const auto store = gridhack_store(dir, 4);
  auto data = load(store, LoaderMode::InMemory);
  auto cfg = small_train(6);
  cfg.checkpoint_every = 2;
  std::vector<std::uint64_t> steps;
  const auto ckpt = train(Algorithm::IQL, *data, toy_config(Algorithm::IQL, 19), cfg, {},
                          [&](const Checkpoint& c) { steps.push_back(c.step); });
  CHECK(steps == std::vector<std::uint64_t>{2, 4, 6});

  save_checkpoint(dir / "m.ktc", ckpt);
  const auto back = load_checkpoint(dir / "m.ktc");
  CHECK(back.algorithm == Algorithm::IQL);
  CHECK(back.step == 6);
  CHECK(back.parameters == ckpt.parameters);
  CHECK(back.model.to_text() == ckpt.model.to_text());
  CHECK(back.train.to_text() == ckpt.train.to_text());
  CHECK(back.config_digest() == ckpt.config_digest());
  CHECK(instantiate(back)->parameters() == ckpt.parameters);

  std::fstream f(dir / "m.ktc", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(40);
  f.put('\x7f');
  f.close();
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ktc"), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ktc"), Error);
}

TEST_CASE("diverging training raises NonFiniteLoss") {
  TempDir dir("nan");
  const auto store = gridhack_store(dir, 4);
  auto data = load(store, LoaderMode::InMemory);
  auto cfg = small_train(50);
  cfg.learning_rate = 1e37;
  try {
    train(Algorithm::CQL, *data, toy_config(Algorithm::CQL, 19), cfg);
    FAIL("expected NonFiniteLoss");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFiniteLoss);
    CHECK(std::string(e.what()).find("episodes=[") != std::string::npos);
  }
}

TEST_CASE("evaluation is reproducible and resets between episodes") {
  RecurrentModel<float> model(toy_config(Algorithm::AWAC, 19), 3);
  GridHackConfig gcfg;
  gcfg.horizon = 30;
  GridHack env(gcfg);
  EvalOptions opts;
  opts.episodes = 3;
  opts.seed = 5;
  opts.run_id = 9;
  for (const auto rule : {ActionRule::SamplePolicy, ActionRule::GreedyPolicy, ActionRule::GreedyQ}) {
    opts.rule = rule;
    opts.reference = scripted_policy;
    const auto a = evaluate(model, env, opts);
    const auto b = evaluate(model, env, opts);
    REQUIRE(a.rows.size() == 3);
    CHECK(a.decisions == 90);
    CHECK(a.agreements == b.agreements);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(a.rows[i].score == b.rows[i].score);
      CHECK(a.rows[i].seed == 9);
      CHECK(a.rows[i].episode == i);
      CHECK(a.rows[i].task == kTask);
    }
  }
  const auto bc = RecurrentModel<float>(toy_config(Algorithm::BC, 19), 3);
  opts.rule = ActionRule::GreedyQ;
  CHECK_THROWS_AS(evaluate(bc, env, opts), Error);
}

TEST_CASE("scripted evaluation agrees with itself") {
  GridHack env;
  EvalOptions opts;
  opts.episodes = 4;
  opts.reference = scripted_policy;
  const auto r = evaluate_policy(scripted_policy, env, opts);
  CHECK(r.agreement() == 1.0);
  CHECK(r.mean_score() > 0);
  for (const auto& row : r.rows) CHECK(row.death_level >= 2);
}

namespace {
class BrokenEnv final : public EnvAdapter {
 public:
  EnvStep reset(std::uint64_t seed) override { return inner_.reset(seed); }
  EnvStep step(int) override { throw std::runtime_error("socket closed"); }
  CharacterSpec task() const override { return inner_.task(); }
  std::unique_ptr<EnvAdapter> clone() const override { return std::make_unique<BrokenEnv>(); }

 private:
  GridHack inner_;
};
}  // namespace

TEST_CASE("adapter exceptions surface as AdapterFailure") {
  BrokenEnv env;
  EvalOptions opts;
  opts.episodes = 1;
  try {
    evaluate_policy(scripted_policy, env, opts);
    FAIL("expected AdapterFailure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::AdapterFailure);
  }
}

TEST_CASE("shipped algorithm tables parse to the documented values") {
  const std::filesystem::path dir = std::filesystem::path(TTYRL_SOURCE_DIR) / "configs";
  for (const auto* name : {"bc", "cql", "iql", "awac", "rem"}) {
    CAPTURE(name);
    const auto kv = read_key_values(dir / (std::string(name) + ".cfg"));
    CHECK(kv.at("optimizer") == "AdamW");
    CHECK(kv.at("state_encoder") == "Chaotic-Dwarven-GPT-5");
    const auto t = train_config_from(kv);
    CHECK(t.iterations == 500000);
    CHECK(t.batch_size == 64);
    CHECK(t.seq_len == 16);
    CHECK(t.learning_rate == 3e-4);
    CHECK(t.weight_decay == 0.0);
    const auto m = model_config_from(kv);
    CHECK(m.hidden == 2048);
    CHECK(m.layers == 2);
    CHECK(m.dropout == 0.0);
    CHECK(m.condition_on_prev_action);
    if (std::string(name) != "bc") {
      CHECK(t.tau == 5e-3);
      CHECK(t.gamma == 0.999);
      CHECK(t.reward_clip_low == -10.0);
      CHECK(t.reward_clip_high == 10.0);
    } else {
      CHECK_FALSE(kv.count("gamma"));
    }
  }
  CHECK(train_config_from(read_key_values(dir / "cql.cfg")).cql_alpha == 1e-4);
  const auto iql = train_config_from(read_key_values(dir / "iql.cfg"));
  CHECK(iql.iql_expectile == 0.8);
  CHECK(iql.temperature == 1.0);
  CHECK(iql.advantage_clip == 100.0);
  CHECK(read_key_values(dir / "awac.cfg").count("expectile") == 0);
  CHECK(train_config_from(read_key_values(dir / "rem.cfg")).rem_heads == 200);
  KeyValues bad{{"optimizer", "SGD"}};
  CHECK_THROWS_AS(train_config_from(bad), Error);
}
