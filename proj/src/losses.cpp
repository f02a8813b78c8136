#include "ttyrl/losses.hpp"

#include <cmath>
#include <sstream>

#include "ttyrl/errors.hpp"

namespace ttyrl {

using Eigen::Index;

// ------------------------------------------------------------------ config

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidArgument, what); };
  if (batch_size == 0 || seq_len == 0) fail("batch size and sequence length must be positive");
  if (!(learning_rate > 0)) fail("learning rate must be positive");
  if (weight_decay < 0) fail("weight decay must be >= 0");
  if (!(gamma > 0 && gamma <= 1)) fail("gamma must be in (0, 1]");
  if (!(tau >= 0 && tau <= 1)) fail("tau must be in [0, 1]");
  if (!(reward_clip_low < reward_clip_high)) fail("reward clip low must be below high");
  if (cql_alpha < 0) fail("cql alpha must be >= 0");
  if (!(iql_expectile > 0 && iql_expectile < 1)) fail("expectile must be in (0, 1)");
  if (!(temperature > 0)) fail("temperature must be positive");
  if (!(advantage_clip > 0)) fail("advantage clip must be positive");
  if (rem_heads < 1) fail("rem heads must be >= 1");
  if (!(huber_delta > 0)) fail("huber delta must be positive");
  if (burn_in >= seq_len) fail("burn-in must be shorter than the sequence");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "training_iterations = " << iterations << "\n"
     << "batch_size = " << batch_size << "\n"
     << "sequence_length = " << seq_len << "\n"
     << "learning_rate = " << learning_rate << "\n"
     << "weight_decay = " << weight_decay << "\n"
     << "gamma = " << gamma << "\n"
     << "tau = " << tau << "\n"
     << "reward_clip_range = [" << reward_clip_low << ", " << reward_clip_high << "]\n"
     << "alpha = " << cql_alpha << "\n"
     << "expectile = " << iql_expectile << "\n"
     << "temperature = " << temperature << "\n"
     << "advantage_clip_max = " << advantage_clip << "\n"
     << "ensemble_heads = " << rem_heads << "\n"
     << "huber_delta = " << huber_delta << "\n"
     << "burn_in = " << burn_in << "\n"
     << "pad_policy = " << (pad_policy == PadPolicy::LeftClamp ? "left_clamp" : "reject_short") << "\n"
     << "seed = " << seed << "\n";
  return os.str();
}

TrainConfig train_config_from(const KeyValues& kv, TrainConfig base) {
  TrainConfig c = base;
  if (kv.count("optimizer") && kv.at("optimizer") != "AdamW") {
    throw Error(ErrorKind::InvalidArgument, "only the AdamW optimizer is available");
  }
  c.iterations = static_cast<std::uint64_t>(kv_int(kv, "training_iterations", static_cast<long long>(c.iterations)));
  c.batch_size = static_cast<std::size_t>(kv_int(kv, "batch_size", static_cast<long long>(c.batch_size)));
  c.seq_len = static_cast<std::size_t>(kv_int(kv, "sequence_length", static_cast<long long>(c.seq_len)));
  c.learning_rate = kv_double(kv, "learning_rate", c.learning_rate);
  c.weight_decay = kv_double(kv, "weight_decay", c.weight_decay);
  c.gamma = kv_double(kv, "gamma", c.gamma);
  c.tau = kv_double(kv, "tau", c.tau);
  if (const auto it = kv.find("reward_clip_range"); it != kv.end()) {
    std::string s = it->second;
    for (char& ch : s) {
      if (ch == '[' || ch == ']' || ch == ',') ch = ' ';
    }
    std::istringstream is(s);
    if (!(is >> c.reward_clip_low >> c.reward_clip_high)) {
      throw Error(ErrorKind::InvalidArgument, "reward_clip_range must look like [low, high]");
    }
  }
  c.cql_alpha = kv_double(kv, "alpha", c.cql_alpha);
  c.iql_expectile = kv_double(kv, "expectile", c.iql_expectile);
  c.temperature = kv_double(kv, "temperature", c.temperature);
  c.advantage_clip = kv_double(kv, "advantage_clip_max", c.advantage_clip);
  c.rem_heads = static_cast<int>(kv_int(kv, "ensemble_heads", c.rem_heads));
  c.huber_delta = kv_double(kv, "huber_delta", c.huber_delta);
  c.burn_in = static_cast<std::size_t>(kv_int(kv, "burn_in", static_cast<long long>(c.burn_in)));
  if (const auto it = kv.find("pad_policy"); it != kv.end()) {
    if (it->second == "left_clamp") {
      c.pad_policy = PadPolicy::LeftClamp;
    } else if (it->second == "reject_short") {
      c.pad_policy = PadPolicy::RejectShort;
    } else {
      throw Error(ErrorKind::InvalidArgument, "pad_policy must be reject_short or left_clamp");
    }
  }
  c.seed = static_cast<std::uint64_t>(kv_int(kv, "seed", static_cast<long long>(c.seed)));
  c.log_every = static_cast<std::uint64_t>(kv_int(kv, "log_every", static_cast<long long>(c.log_every)));
  c.checkpoint_every =
      static_cast<std::uint64_t>(kv_int(kv, "checkpoint_every", static_cast<long long>(c.checkpoint_every)));
  return c;
}

ModelConfig model_config_from(const KeyValues& kv, ModelConfig base) {
  ModelConfig m = base;
  m.hidden = static_cast<int>(kv_int(kv, "lstm_hidden_dim", m.hidden));
  m.layers = static_cast<int>(kv_int(kv, "lstm_layers", m.layers));
  m.dropout = kv_double(kv, "lstm_dropout", m.dropout);
  m.condition_on_prev_action = kv_bool(kv, "use_previous_action", m.condition_on_prev_action);
  m.encoder_dim = static_cast<int>(kv_int(kv, "encoder.dim", m.encoder_dim));
  if (kv.count("encoder.conv")) m.conv = parse_conv_stack(kv.at("encoder.conv"));
  m.actions = static_cast<int>(kv_int(kv, "actions", m.actions));
  m.render.glyph_width = static_cast<int>(kv_int(kv, "render.glyph_width", m.render.glyph_width));
  m.render.glyph_height = static_cast<int>(kv_int(kv, "render.glyph_height", m.render.glyph_height));
  m.render.crop_rows = static_cast<int>(kv_int(kv, "render.crop_rows", m.render.crop_rows));
  m.render.crop_cols = static_cast<int>(kv_int(kv, "render.crop_cols", m.render.crop_cols));
  m.render.cursor_highlight = kv_bool(kv, "render.cursor_highlight", m.render.cursor_highlight);
  return m;
}

// ------------------------------------------------------------------ helpers

template <typename Scalar>
Scalar huber(Scalar x, Scalar delta) {
  const Scalar a = std::abs(x);
  return a <= delta ? Scalar(0.5) * x * x : delta * (a - Scalar(0.5) * delta);
}

template <typename Scalar>
Scalar logsumexp(const Eigen::Ref<const Vector<Scalar>>& v) {
  const Scalar m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

namespace {

template <typename Scalar>
Scalar huber_grad(Scalar x, Scalar delta) {
  return std::clamp(x, -delta, delta);
}

template <typename Scalar>
Vector<Scalar> softmax(const Eigen::Ref<const Vector<Scalar>>& v) {
  Vector<Scalar> e = (v.array() - v.maxCoeff()).exp();
  return e / e.sum();
}

// Ensemble-weighted Q column: sum_k mix_k Q_k.
template <typename Scalar>
Vector<Scalar> mixed_q(const Matrix<Scalar>& q, Index col, const Vector<Scalar>& mix, Index actions) {
  const Index heads = q.rows() / actions;
  if (mix.size() == 0) {
    if (heads == 1) return q.col(col);
    Vector<Scalar> out = Vector<Scalar>::Zero(actions);
    for (Index k = 0; k < heads; ++k) out += q.block(k * actions, col, actions, 1);
    return out / static_cast<Scalar>(heads);
  }
  Vector<Scalar> out = Vector<Scalar>::Zero(actions);
  for (Index k = 0; k < heads; ++k) out += mix[k] * q.block(k * actions, col, actions, 1);
  return out;
}

template <typename Scalar>
Scalar bootstrap(const HeadOutputs<Scalar>& next, Index col, BootstrapRule rule, const Vector<Scalar>& mix,
                 const HeadOutputs<Scalar>& policy, Index actions) {
  switch (rule) {
    case BootstrapRule::MaxQ:
      return mixed_q(next.q, col, mix, actions).maxCoeff();
    case BootstrapRule::StateValue:
      return next.value(0, col);
    case BootstrapRule::ExpectedQ: {
      const Vector<Scalar> pi = softmax<Scalar>(policy.policy.col(col));
      return pi.dot(mixed_q(next.q, col, mix, actions));
    }
  }
  return Scalar(0);
}

template <typename Scalar>
Index actions_of(const HeadOutputs<Scalar>& o, const Vector<Scalar>& mix) {
  if (o.policy.size()) return o.policy.rows();
  if (mix.size()) return o.q.rows() / mix.size();
  return o.q.rows();
}

}  // namespace

template <typename Scalar>
Transitions<Scalar> transitions(const SequenceBatch& batch, const TrainConfig& cfg) {
  Transitions<Scalar> tr;
  const auto bsz = static_cast<Index>(batch.batch_size);
  const auto len = static_cast<Index>(batch.seq_len);
  tr.batch = bsz;
  tr.steps = len;
  tr.actions.resize(static_cast<std::size_t>(bsz * len));
  tr.rewards.resize(bsz * len);
  tr.not_done.resize(bsz * len);
  tr.mask.resize(bsz * len);
  for (Index b = 0; b < bsz; ++b) {
    for (Index t = 0; t < len; ++t) {
      const auto src = static_cast<std::size_t>(b * len + t);
      const Index j = t * bsz + b;
      tr.actions[static_cast<std::size_t>(j)] = batch.actions[src];
      tr.rewards[j] = static_cast<Scalar>(
          std::clamp(static_cast<double>(batch.rewards[src]), cfg.reward_clip_low, cfg.reward_clip_high));
      tr.not_done[j] = batch.dones[src] ? Scalar(0) : Scalar(1);
      tr.mask[j] = batch.mask[src] && static_cast<std::size_t>(t) >= cfg.burn_in ? Scalar(1) : Scalar(0);
    }
  }
  tr.mask_sum = tr.mask.sum();
  return tr;
}

template <typename Scalar>
Matrix<Scalar> td_targets(const SequenceBatch& batch, const HeadOutputs<Scalar>& next, const TrainConfig& cfg,
                          BootstrapRule rule, const Vector<Scalar>& mix, const HeadOutputs<Scalar>* policy) {
  const auto bsz = static_cast<Index>(batch.batch_size);
  const auto len = static_cast<Index>(batch.seq_len);
  const HeadOutputs<Scalar>& pol = policy ? *policy : next;
  const Index actions = rule == BootstrapRule::StateValue ? 0 : actions_of(pol, mix);
  Matrix<Scalar> y(bsz, len);
  for (Index b = 0; b < bsz; ++b) {
    for (Index t = 0; t < len; ++t) {
      const auto src = static_cast<std::size_t>(b * len + t);
      const Scalar r = static_cast<Scalar>(
          std::clamp(static_cast<double>(batch.rewards[src]), cfg.reward_clip_low, cfg.reward_clip_high));
      if (batch.dones[src]) {
        y(b, t) = r;
      } else {
        y(b, t) = r + static_cast<Scalar>(cfg.gamma) * bootstrap(next, (t + 1) * bsz + b, rule, mix, pol, actions);
      }
    }
  }
  return y;
}

template <typename Scalar>
Vector<Scalar> rem_mixture(int heads, Rng& rng) {
  Vector<Scalar> mix(heads);
  // 1 - U lies in (0, 1], so the sum is positive.
  for (int k = 0; k < heads; ++k) mix[k] = static_cast<Scalar>(1.0 - uniform01(rng));
  return mix / mix.sum();
}

template <typename Scalar>
LossTargets<Scalar> prepare_targets(Algorithm algo, const Transitions<Scalar>& tr, const HeadOutputs<Scalar>& online,
                                    std::type_identity_t<const HeadOutputs<Scalar>>* target, const TrainConfig& cfg,
                                    Rng* rng) {
  LossTargets<Scalar> out;
  if (algo == Algorithm::BC) return out;
  if (!target) throw Error(ErrorKind::InvalidArgument, "algorithm needs a target network");
  const Index bsz = tr.batch;
  const Index n = tr.batch * tr.steps;
  const auto gamma = static_cast<Scalar>(cfg.gamma);
  const auto temp = static_cast<Scalar>(cfg.temperature);
  const auto clip = static_cast<Scalar>(cfg.advantage_clip);
  out.td.resize(n);

  switch (algo) {
    case Algorithm::CQL: {
      const Index a = online.q.rows();
      for (Index j = 0; j < n; ++j) {
        out.td[j] = tr.rewards[j] +
                    gamma * tr.not_done[j] * bootstrap(*target, j + bsz, BootstrapRule::MaxQ, out.mix, *target, a);
      }
      break;
    }
    case Algorithm::REM: {
      const Index actions = online.q.rows() / cfg.rem_heads;
      if (actions * cfg.rem_heads != online.q.rows()) {
        throw Error(ErrorKind::InvalidArgument, "Q head size is not a multiple of rem_heads");
      }
      if (!rng) throw Error(ErrorKind::InvalidArgument, "REM needs a random stream");
      out.mix = rem_mixture<Scalar>(cfg.rem_heads, *rng);
      for (Index j = 0; j < n; ++j) {
        out.td[j] = tr.rewards[j] + gamma * tr.not_done[j] *
                                        bootstrap(*target, j + bsz, BootstrapRule::MaxQ, out.mix, *target, actions);
      }
      break;
    }
    case Algorithm::IQL: {
      out.weights.resize(n);
      out.aux.resize(n);
      for (Index j = 0; j < n; ++j) {
        const int a = tr.actions[static_cast<std::size_t>(j)];
        out.td[j] = tr.rewards[j] + gamma * tr.not_done[j] * target->value(0, j + bsz);
        out.aux[j] = target->q(a, j);
        const Scalar adv = out.aux[j] - online.value(0, j);
        out.weights[j] = std::min(std::exp(adv / temp), clip);
      }
      break;
    }
    case Algorithm::AWAC: {
      out.weights.resize(n);
      const Index a_count = online.q.rows();
      for (Index j = 0; j < n; ++j) {
        const int a = tr.actions[static_cast<std::size_t>(j)];
        out.td[j] = tr.rewards[j] +
                    gamma * tr.not_done[j] *
                        bootstrap(*target, j + bsz, BootstrapRule::ExpectedQ, out.mix, online, a_count);
        const Vector<Scalar> pi = softmax<Scalar>(online.policy.col(j));
        const Scalar adv = online.q(a, j) - pi.dot(online.q.col(j));
        out.weights[j] = std::min(std::exp(adv / temp), clip);
      }
      break;
    }
    case Algorithm::BC:
      break;
  }
  return out;
}

template <typename Scalar>
LossReport<Scalar> evaluate_heads(Algorithm algo, const Transitions<Scalar>& tr, const HeadOutputs<Scalar>& online,
                                  const LossTargets<Scalar>& targets, const TrainConfig& cfg,
                                  std::type_identity_t<HeadOutputs<Scalar>>* grad, const std::string& component) {
  const Index n = tr.batch * tr.steps;
  if (tr.mask_sum <= Scalar(0)) throw Error(ErrorKind::InvalidArgument, "batch has no unmasked transitions");
  const Scalar inv = Scalar(1) / tr.mask_sum;
  const auto delta = static_cast<Scalar>(cfg.huber_delta);
  auto keep = [&](const char* name) { return component.empty() || component == name; };

  if (grad) {
    grad->policy = Matrix<Scalar>::Zero(online.policy.rows(), online.policy.cols());
    grad->q = Matrix<Scalar>::Zero(online.q.rows(), online.q.cols());
    grad->value = Matrix<Scalar>::Zero(online.value.rows(), online.value.cols());
  }

  using Acc = std::conditional_t<(sizeof(Scalar) > sizeof(double)), long double, double>;
  LossReport<Scalar> rep;
  Acc total = 0;
  double entropy = 0, mean_q = 0;

  // -w log pi(a|s), w = 1 for BC.
  auto policy_term = [&](const Vector<Scalar>* weights, bool active) {
    Acc sum = 0;
    for (Index j = 0; j < n; ++j) {
      const Scalar m = tr.mask[j];
      const Vector<Scalar> pi = softmax<Scalar>(online.policy.col(j));
      if (m != Scalar(0)) entropy -= static_cast<double>((pi.array() * (pi.array() + Scalar(1e-30)).log()).sum());
      if (m == Scalar(0)) continue;
      const int a = tr.actions[static_cast<std::size_t>(j)];
      const Scalar w = weights ? (*weights)[j] : Scalar(1);
      const Scalar nll = logsumexp<Scalar>(online.policy.col(j)) - online.policy(a, j);
      sum += static_cast<Acc>(w * nll);
      if (grad && active) {
        auto g = grad->policy.col(j);
        g += (m * w * inv) * pi;
        g[a] -= m * w * inv;
      }
    }
    return sum * static_cast<Acc>(inv);
  };

  // Huber(Q(s, a) - y) with Q optionally an ensemble mixture.
  auto td_term = [&](const Vector<Scalar>& mix, bool active, Scalar scale) {
    const Index actions = mix.size() ? online.q.rows() / mix.size() : online.q.rows();
    Acc sum = 0;
    for (Index j = 0; j < n; ++j) {
      const Scalar m = tr.mask[j];
      if (m == Scalar(0)) continue;
      const int a = tr.actions[static_cast<std::size_t>(j)];
      Scalar q = 0;
      if (mix.size()) {
        for (Index k = 0; k < mix.size(); ++k) q += mix[k] * online.q(k * actions + a, j);
      } else {
        q = online.q(a, j);
      }
      mean_q += static_cast<double>(q);
      const Scalar d = q - targets.td[j];
      sum += static_cast<Acc>(huber(d, delta));
      if (grad && active) {
        const Scalar g = scale * m * inv * huber_grad(d, delta);
        if (mix.size()) {
          for (Index k = 0; k < mix.size(); ++k) grad->q(k * actions + a, j) += mix[k] * g;
        } else {
          grad->q(a, j) += g;
        }
      }
    }
    return sum * static_cast<Acc>(inv);
  };

  const Acc count = static_cast<Acc>(tr.mask_sum);
  switch (algo) {
    case Algorithm::BC: {
      const Acc nll = policy_term(nullptr, keep("policy"));
      rep.components["policy"] = static_cast<double>(nll);
      total = keep("policy") ? nll : Acc(0);
      rep.entropy = entropy / static_cast<double>(count);
      break;
    }
    case Algorithm::CQL: {
      const Acc td = td_term(Vector<Scalar>{}, keep("td"), static_cast<Scalar>(cfg.cql_alpha));
      Acc penalty = 0;
      for (Index j = 0; j < n; ++j) {
        const Scalar m = tr.mask[j];
        if (m == Scalar(0)) continue;
        const int a = tr.actions[static_cast<std::size_t>(j)];
        penalty += static_cast<Acc>(logsumexp<Scalar>(online.q.col(j)) - online.q(a, j));
        if (grad && keep("penalty")) {
          auto g = grad->q.col(j);
          g += (m * inv) * softmax<Scalar>(online.q.col(j));
          g[a] -= m * inv;
        }
      }
      penalty /= count;
      rep.components["td"] = static_cast<double>(td);
      rep.components["penalty"] = static_cast<double>(penalty);
      total = (keep("td") ? static_cast<Acc>(cfg.cql_alpha) * td : Acc(0)) + (keep("penalty") ? penalty : Acc(0));
      rep.mean_q = mean_q / static_cast<double>(count);
      break;
    }
    case Algorithm::IQL: {
      const auto tau = static_cast<Scalar>(cfg.iql_expectile);
      Acc value = 0;
      for (Index j = 0; j < n; ++j) {
        const Scalar m = tr.mask[j];
        if (m == Scalar(0)) continue;
        const Scalar u = targets.aux[j] - online.value(0, j);
        const Scalar w = u < Scalar(0) ? Scalar(1) - tau : tau;
        value += static_cast<Acc>(w * u * u);
        if (grad && keep("value")) grad->value(0, j) += -Scalar(2) * w * u * m * inv;
      }
      value /= count;
      const Acc q = td_term(Vector<Scalar>{}, keep("q"), Scalar(1));
      const Acc policy = policy_term(&targets.weights, keep("policy"));
      rep.components["value"] = static_cast<double>(value);
      rep.components["q"] = static_cast<double>(q);
      rep.components["policy"] = static_cast<double>(policy);
      total = (keep("value") ? value : Acc(0)) + (keep("q") ? q : Acc(0)) + (keep("policy") ? policy : Acc(0));
      rep.mean_q = mean_q / static_cast<double>(count);
      rep.entropy = entropy / static_cast<double>(count);
      break;
    }
    case Algorithm::AWAC: {
      const Acc q = td_term(Vector<Scalar>{}, keep("q"), Scalar(1));
      const Acc policy = policy_term(&targets.weights, keep("policy"));
      rep.components["q"] = static_cast<double>(q);
      rep.components["policy"] = static_cast<double>(policy);
      total = (keep("q") ? q : Acc(0)) + (keep("policy") ? policy : Acc(0));
      rep.mean_q = mean_q / static_cast<double>(count);
      rep.entropy = entropy / static_cast<double>(count);
      break;
    }
    case Algorithm::REM: {
      const Acc td = td_term(targets.mix, keep("td"), Scalar(1));
      rep.components["td"] = static_cast<double>(td);
      total = keep("td") ? td : Acc(0);
      rep.mean_q = mean_q / static_cast<double>(count);
      break;
    }
  }
  rep.total = static_cast<double>(total);
  rep.total_wide = total;
  return rep;
}

template <typename Scalar>
LossReport<Scalar> compute_loss(Algorithm algo, const SequenceBatch& batch, const ModelContract<Scalar>& model,
                                const ModelContract<Scalar>* target, const TrainConfig& cfg, Rng* rng,
                                Rng* dropout_rng, const std::string& component) {
  const auto input = make_input<Scalar>(batch, model.config());
  const auto tr = transitions<Scalar>(batch, cfg);
  std::unique_ptr<Tape<Scalar>> tape;
  const auto online = model.forward(input, model.initial_state(input.batch), nullptr, &tape, dropout_rng);
  HeadOutputs<Scalar> target_out;
  if (algo != Algorithm::BC) {
    if (!target) throw Error(ErrorKind::InvalidArgument, "algorithm needs a target network");
    target_out = target->forward(input, target->initial_state(input.batch), nullptr, nullptr);
  }
  const auto targets = prepare_targets(algo, tr, online, algo == Algorithm::BC ? nullptr : &target_out, cfg, rng);
  HeadOutputs<Scalar> grads;
  auto rep = evaluate_heads(algo, tr, online, targets, cfg, &grads, component);
  rep.gradient = model.backward(*tape, grads);
  rep.grad_norm = static_cast<double>(rep.gradient.norm());
  return rep;
}

template <typename Scalar>
LossReport<Scalar> bc_loss(const SequenceBatch& batch, const ModelContract<Scalar>& model, const TrainConfig& cfg) {
  return compute_loss<Scalar>(Algorithm::BC, batch, model, nullptr, cfg, nullptr);
}
template <typename Scalar>
LossReport<Scalar> cql_loss(const SequenceBatch& batch, const ModelContract<Scalar>& model,
                            const ModelContract<Scalar>& target, const TrainConfig& cfg) {
  return compute_loss<Scalar>(Algorithm::CQL, batch, model, &target, cfg, nullptr);
}
template <typename Scalar>
LossReport<Scalar> iql_losses(const SequenceBatch& batch, const ModelContract<Scalar>& model,
                              const ModelContract<Scalar>& target, const TrainConfig& cfg) {
  return compute_loss<Scalar>(Algorithm::IQL, batch, model, &target, cfg, nullptr);
}
template <typename Scalar>
LossReport<Scalar> awac_losses(const SequenceBatch& batch, const ModelContract<Scalar>& model,
                               const ModelContract<Scalar>& target, const TrainConfig& cfg) {
  return compute_loss<Scalar>(Algorithm::AWAC, batch, model, &target, cfg, nullptr);
}
template <typename Scalar>
LossReport<Scalar> rem_loss(const SequenceBatch& batch, const ModelContract<Scalar>& model,
                            const ModelContract<Scalar>& target, const TrainConfig& cfg, Rng& rng) {
  return compute_loss<Scalar>(Algorithm::REM, batch, model, &target, cfg, &rng);
}

template <typename Scalar>
void soft_update(Vector<Scalar>& target, const Vector<Scalar>& online, double tau) {
  if (target.size() != online.size()) throw Error(ErrorKind::InvalidArgument, "parameter vectors differ in size");
  if (tau == 0.0) return;
  if (tau == 1.0) {
    target = online;
    return;
  }
  // t + tau (o - t) leaves t untouched when t == o.
  target.array() += static_cast<Scalar>(tau) * (online.array() - target.array());
}

template <typename Scalar>
AdamW<Scalar>::AdamW(Index size, double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps), m_(Vector<Scalar>::Zero(size)),
      v_(Vector<Scalar>::Zero(size)) {}

template <typename Scalar>
void AdamW<Scalar>::step(Vector<Scalar>& params, const Vector<Scalar>& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw Error(ErrorKind::InvalidArgument, "optimizer state size mismatch");
  }
  ++t_;
  const auto b1 = static_cast<Scalar>(b1_);
  const auto b2 = static_cast<Scalar>(b2_);
  m_ = b1 * m_ + (Scalar(1) - b1) * grad;
  v_ = b2 * v_ + (Scalar(1) - b2) * grad.cwiseAbs2();
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(b1_, static_cast<double>(t_)));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(b2_, static_cast<double>(t_)));
  const auto lr = static_cast<Scalar>(lr_);
  if (wd_ != 0.0) params *= Scalar(1) - lr * static_cast<Scalar>(wd_);
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + static_cast<Scalar>(eps_));
}

namespace {

template <typename To, typename From>
Vector<To> cast_vec(const Vector<From>& v) {
  return v.template cast<To>();
}

template <typename To, typename From>
LossTargets<To> cast_targets(const LossTargets<From>& t) {
  return {cast_vec<To>(t.td), cast_vec<To>(t.weights), cast_vec<To>(t.aux), cast_vec<To>(t.mix)};
}

}  // namespace

GradCheckResult grad_check(Algorithm algo, const SequenceBatch& batch, ModelContract<double>& model,
                           const ModelContract<double>* target, const TrainConfig& cfg, std::uint64_t rng_seed,
                           double eps, const std::string& component, double floor, bool extended_oracle) {
  const auto input = make_input<double>(batch, model.config());
  const auto tr = transitions<double>(batch, cfg);
  std::unique_ptr<Tape<double>> tape;
  const auto online = model.forward(input, model.initial_state(input.batch), nullptr, &tape);
  HeadOutputs<double> target_out;
  if (target) target_out = target->forward(input, target->initial_state(input.batch), nullptr, nullptr);
  Rng rng(rng_seed);
  const auto targets = prepare_targets(algo, tr, online, target ? &target_out : nullptr, cfg, &rng);
  HeadOutputs<double> head_grads;
  evaluate_heads(algo, tr, online, targets, cfg, &head_grads, component);
  const Vector<double> analytic = model.backward(*tape, head_grads);

  using Wide = long double;
  RecurrentModel<Wide> wide(model.config(), 0);
  const auto wide_input = make_input<Wide>(batch, model.config());
  const auto wide_tr = transitions<Wide>(batch, cfg);
  const auto wide_targets = cast_targets<Wide>(targets);

  auto& theta = model.parameters();
  auto value_at = [&](Eigen::Index i, double step) -> Wide {
    if (extended_oracle) {
      wide.parameters() = theta.cast<Wide>();
      wide.parameters()[i] = static_cast<Wide>(theta[i]) + static_cast<Wide>(step);
      const auto out = wide.forward(wide_input, wide.initial_state(wide_input.batch), nullptr, nullptr);
      return static_cast<Wide>(evaluate_heads(algo, wide_tr, out, wide_targets, cfg, nullptr, component).total_wide);
    }
    const double saved = theta[i];
    theta[i] = saved + step;
    const auto out = model.forward(input, model.initial_state(input.batch), nullptr, nullptr);
    theta[i] = saved;
    return static_cast<Wide>(evaluate_heads(algo, tr, out, targets, cfg, nullptr, component).total);
  };

  GradCheckResult res;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double numeric = static_cast<double>((value_at(i, eps) - value_at(i, -eps)) / (2 * static_cast<Wide>(eps)));
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    ++res.checked;
    if (rel > res.max_rel_error || res.worst_index < 0) {
      res.max_rel_error = rel;
      res.worst_index = i;
      res.analytic = a;
      res.numeric = numeric;
    }
  }
  return res;
}

#define TTYRL_LOSSES(S)                                                                                              \
  template S huber<S>(S, S);                                                                                         \
  template S logsumexp<S>(const Eigen::Ref<const Vector<S>>&);                                                       \
  template Transitions<S> transitions<S>(const SequenceBatch&, const TrainConfig&);                                  \
  template Matrix<S> td_targets<S>(const SequenceBatch&, const HeadOutputs<S>&, const TrainConfig&, BootstrapRule,   \
                                   const Vector<S>&, const HeadOutputs<S>*);                                         \
  template Vector<S> rem_mixture<S>(int, Rng&);                                                                      \
  template LossTargets<S> prepare_targets<S>(Algorithm, const Transitions<S>&, const HeadOutputs<S>&,                \
                                             const HeadOutputs<S>*, const TrainConfig&, Rng*);                       \
  template LossReport<S> evaluate_heads<S>(Algorithm, const Transitions<S>&, const HeadOutputs<S>&,                  \
                                           const LossTargets<S>&, const TrainConfig&, HeadOutputs<S>*,               \
                                           const std::string&);                                                      \
  template LossReport<S> compute_loss<S>(Algorithm, const SequenceBatch&, const ModelContract<S>&,                   \
                                         const ModelContract<S>*, const TrainConfig&, Rng*, Rng*,                    \
                                         const std::string&);                                                        \
  template LossReport<S> bc_loss<S>(const SequenceBatch&, const ModelContract<S>&, const TrainConfig&);              \
  template LossReport<S> cql_loss<S>(const SequenceBatch&, const ModelContract<S>&, const ModelContract<S>&,         \
                                     const TrainConfig&);                                                            \
  template LossReport<S> iql_losses<S>(const SequenceBatch&, const ModelContract<S>&, const ModelContract<S>&,       \
                                       const TrainConfig&);                                                          \
  template LossReport<S> awac_losses<S>(const SequenceBatch&, const ModelContract<S>&, const ModelContract<S>&,      \
                                        const TrainConfig&);                                                         \
  template LossReport<S> rem_loss<S>(const SequenceBatch&, const ModelContract<S>&, const ModelContract<S>&,         \
                                     const TrainConfig&, Rng&);                                                      \
  template void soft_update<S>(Vector<S>&, const Vector<S>&, double);                                                \
  template class AdamW<S>;

TTYRL_LOSSES(float)
TTYRL_LOSSES(double)
TTYRL_LOSSES(long double)

}  // namespace ttyrl
