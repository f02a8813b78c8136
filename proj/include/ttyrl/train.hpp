#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string_view>

#include "ttyrl/env.hpp"
#include "ttyrl/losses.hpp"

namespace ttyrl {

using MetricSink = std::function<void(std::uint64_t step, std::string_view name, double value)>;

// {"step": 10, "name": "loss", "value": 1.25} per line.
class JsonLinesSink {
 public:
  explicit JsonLinesSink(std::ostream& out) : out_(&out) {}
  void operator()(std::uint64_t step, std::string_view name, double value) const;

 private:
  std::ostream* out_;
};

struct Checkpoint {
  Algorithm algorithm = Algorithm::BC;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t step = 0;
  Vector<float> parameters;

  std::uint64_t config_digest() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::unique_ptr<ModelContract<float>> instantiate(const Checkpoint& ckpt);

using CheckpointSink = std::function<void(const Checkpoint&)>;

// sample -> loss -> AdamW step -> soft target update, single-threaded and
// deterministic given cfg.seed. Throws NonFiniteLoss.
Checkpoint train(Algorithm algo, const DatasetHandle& data, const ModelConfig& model, const TrainConfig& cfg,
                 const MetricSink& metrics = {}, const CheckpointSink& checkpoints = {});

enum class ActionRule : std::uint8_t { SamplePolicy, GreedyPolicy, GreedyQ };

std::string_view to_string(ActionRule rule);
ActionRule parse_action_rule(std::string_view text);
// Sampling for policy-head algorithms, greedy mean-Q for CQL and REM.
ActionRule default_action_rule(Algorithm algo);

struct EvalEntry {
  CharacterSpec task;
  std::uint64_t seed = 0;
  std::uint64_t episode = 0;
  std::int64_t score = 0;
  std::int32_t death_level = 1;
};

struct EvalOptions {
  std::size_t episodes = 50;
  // Episode i is reset with derive_seed(seed, i).
  std::uint64_t seed = 0;
  // Training-seed id written into the rows.
  std::uint64_t run_id = 0;
  ActionRule rule = ActionRule::SamplePolicy;
  // When set, every decision is compared against this policy.
  Policy reference;
  std::size_t max_steps = 1'000'000;
};

struct EvalResult {
  std::vector<EvalEntry> rows;
  std::uint64_t decisions = 0;
  std::uint64_t agreements = 0;

  double agreement() const noexcept {
    return decisions ? static_cast<double>(agreements) / static_cast<double>(decisions) : 0.0;
  }
  double mean_score() const noexcept;
};

// Recurrent state persists within an episode and resets between episodes.
// Adapter exceptions surface as AdapterFailure.
EvalResult evaluate(const ModelContract<float>& model, EnvAdapter& env, const EvalOptions& opts);
// The same protocol for a plain observation -> action policy.
EvalResult evaluate_policy(const Policy& policy, EnvAdapter& env, const EvalOptions& opts);

}  // namespace ttyrl
