#pragma once

#include <map>
#include <string>
#include <type_traits>

#include "ttyrl/config.hpp"
#include "ttyrl/model.hpp"

namespace ttyrl {

struct TrainConfig {
  std::uint64_t iterations = 500000;
  std::size_t batch_size = 64;
  std::size_t seq_len = 16;
  double learning_rate = 3e-4;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double gamma = 0.999;
  double tau = 5e-3;
  double reward_clip_low = -10.0;
  double reward_clip_high = 10.0;
  double cql_alpha = 1e-4;
  double iql_expectile = 0.8;
  double temperature = 1.0;
  double advantage_clip = 100.0;
  int rem_heads = 200;
  double huber_delta = 1.0;
  // Leading window positions that only warm up the recurrent state.
  std::size_t burn_in = 0;
  PadPolicy pad_policy = PadPolicy::RejectShort;
  std::uint64_t seed = 0;
  std::uint64_t log_every = 100;
  std::uint64_t checkpoint_every = 0;

  void validate() const;
  std::string to_text() const;
};

// Reads the algorithm table keys (see configs/*.cfg) over `base`.
TrainConfig train_config_from(const KeyValues& kv, TrainConfig base = {});
// Model keys of the same tables: lstm_hidden_dim, lstm_layers, lstm_dropout,
// use_previous_action, plus the encoder.* and render.* extensions.
ModelConfig model_config_from(const KeyValues& kv, ModelConfig base = {});

enum class BootstrapRule : std::uint8_t { MaxQ, StateValue, ExpectedQ };

template <typename Scalar>
struct LossReport {
  double total = 0.0;
  // Same value at the accumulation precision.
  long double total_wide = 0.0L;
  std::map<std::string, double> components;
  double grad_norm = 0.0;
  double mean_q = 0.0;
  double entropy = 0.0;
  Vector<Scalar> gradient;
};

// Transition arrays of a batch, time-major (column t * B + b), length B*L.
template <typename Scalar>
struct Transitions {
  Eigen::Index batch = 0;
  Eigen::Index steps = 0;
  std::vector<int> actions;
  Vector<Scalar> rewards;  // clipped
  Vector<Scalar> not_done;
  Vector<Scalar> mask;
  Scalar mask_sum = 0;
};

template <typename Scalar>
Transitions<Scalar> transitions(const SequenceBatch& batch, const TrainConfig& cfg);

// Quantities treated as constants by the gradient (targets, advantage
// weights, REM mixture), one entry per transition.
template <typename Scalar>
struct LossTargets {
  Vector<Scalar> td;
  Vector<Scalar> weights;
  Vector<Scalar> aux;
  Vector<Scalar> mix;
};

// y[b, t] = clip(r) + gamma * (1 - done) * bootstrap(t + 1), read from the
// (L+1)-step outputs `next`. ExpectedQ takes the policy from `policy`
// (defaults to `next`); a non-empty `mix` weights the Q ensemble.
template <typename Scalar>
Matrix<Scalar> td_targets(const SequenceBatch& batch, const HeadOutputs<Scalar>& next, const TrainConfig& cfg,
                          BootstrapRule rule, const Vector<Scalar>& mix = {},
                          const HeadOutputs<Scalar>* policy = nullptr);

template <typename Scalar>
LossTargets<Scalar> prepare_targets(Algorithm algo, const Transitions<Scalar>& tr, const HeadOutputs<Scalar>& online,
                                    std::type_identity_t<const HeadOutputs<Scalar>>* target, const TrainConfig& cfg,
                                    Rng* rng);

// Loss value and, when `grad` is set, its gradient w.r.t. the online head
// outputs. A non-empty `component` keeps only that term.
template <typename Scalar>
LossReport<Scalar> evaluate_heads(Algorithm algo, const Transitions<Scalar>& tr, const HeadOutputs<Scalar>& online,
                                  const LossTargets<Scalar>& targets, const TrainConfig& cfg,
                                  std::type_identity_t<HeadOutputs<Scalar>>* grad, const std::string& component = {});

// Full pass: forward online (and target), loss, parameter gradient.
template <typename Scalar>
LossReport<Scalar> compute_loss(Algorithm algo, const SequenceBatch& batch, const ModelContract<Scalar>& model,
                                const ModelContract<Scalar>* target, const TrainConfig& cfg, Rng* rng,
                                Rng* dropout_rng = nullptr, const std::string& component = {});

template <typename Scalar>
LossReport<Scalar> bc_loss(const SequenceBatch& batch, const ModelContract<Scalar>& model,
                           const TrainConfig& cfg = {});
template <typename Scalar>
LossReport<Scalar> cql_loss(const SequenceBatch& batch, const ModelContract<Scalar>& model,
                            const ModelContract<Scalar>& target, const TrainConfig& cfg);
template <typename Scalar>
LossReport<Scalar> iql_losses(const SequenceBatch& batch, const ModelContract<Scalar>& model,
                              const ModelContract<Scalar>& target, const TrainConfig& cfg);
template <typename Scalar>
LossReport<Scalar> awac_losses(const SequenceBatch& batch, const ModelContract<Scalar>& model,
                               const ModelContract<Scalar>& target, const TrainConfig& cfg);
template <typename Scalar>
LossReport<Scalar> rem_loss(const SequenceBatch& batch, const ModelContract<Scalar>& model,
                            const ModelContract<Scalar>& target, const TrainConfig& cfg, Rng& rng);

// K non-negative weights summing to one.
template <typename Scalar>
Vector<Scalar> rem_mixture(int heads, Rng& rng);

template <typename Scalar>
Scalar huber(Scalar x, Scalar delta = Scalar(1));

template <typename Scalar>
Scalar logsumexp(const Eigen::Ref<const Vector<Scalar>>& v);

// theta_target <- (1 - tau) theta_target + tau theta_online
template <typename Scalar>
void soft_update(Vector<Scalar>& target, const Vector<Scalar>& online, double tau);

template <typename Scalar>
class AdamW {
 public:
  AdamW(Eigen::Index size, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);
  void step(Vector<Scalar>& params, const Vector<Scalar>& grad);
  std::uint64_t steps() const noexcept { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  Vector<Scalar> m_, v_;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  Eigen::Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  Eigen::Index checked = 0;
};

// Central differences over every parameter, with frozen targets taken at
// the unperturbed point. Relative error is |a - n| / max(|a|, |n|, floor).
// With extended_oracle the perturbed losses are evaluated in long double so
// roundoff in the differences stays far below the tolerance; the analytic
// side is always double.
GradCheckResult grad_check(Algorithm algo, const SequenceBatch& batch, ModelContract<double>& model,
                           const ModelContract<double>* target, const TrainConfig& cfg, std::uint64_t rng_seed,
                           double eps = 1e-5, const std::string& component = {}, double floor = 1e-6,
                           bool extended_oracle = true);

}  // namespace ttyrl
