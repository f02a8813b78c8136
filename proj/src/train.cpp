#include "ttyrl/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "bytes.hpp"
#include "ttyrl/errors.hpp"

namespace ttyrl {

using detail::ByteReader;
using detail::ByteWriter;
using detail::crc32_of;

namespace {

constexpr char kCheckpointMagic[4] = {'K', 'T', 'C', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_text32(ByteWriter& w, const std::string& s) {
  w.put(static_cast<std::uint32_t>(s.size()));
  w.put_raw(s);
}

std::string json_escape(std::string_view s) {
  std::string out;
  for (const char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

}  // namespace

void JsonLinesSink::operator()(std::uint64_t step, std::string_view name, double value) const {
  std::ostringstream line;
  line << std::setprecision(10) << "{\"step\": " << step << ", \"name\": \"" << json_escape(name) << "\", \"value\": ";
  if (std::isfinite(value)) {
    line << value;
  } else {
    line << "null";
  }
  line << "}\n";
  *out_ << line.str() << std::flush;
}

std::uint64_t Checkpoint::config_digest() const {
  return fnv1a64(std::string(to_string(algorithm)) + "\n" + model.to_text() + train.to_text());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  ByteWriter w;
  w.put_raw(std::string_view(kCheckpointMagic, 4));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint8_t>(ckpt.algorithm));
  for (int i = 0; i < 3; ++i) w.put(std::uint8_t{0});
  w.put(ckpt.step);
  put_text32(w, ckpt.model.to_text());
  put_text32(w, ckpt.train.to_text());
  w.put(ckpt.config_digest());
  w.put(static_cast<std::uint64_t>(ckpt.parameters.size()));
  for (Eigen::Index i = 0; i < ckpt.parameters.size(); ++i) w.put(ckpt.parameters[i]);
  w.put(crc32_of(w.bytes()));

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.size()));
    if (!out) throw Error(ErrorKind::IoError, "cannot write checkpoint '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open checkpoint '" + path.string() + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto bytes = std::as_bytes(std::span(buf));
  if (bytes.size() < 8) throw Error(ErrorKind::CorruptIndex, "checkpoint is truncated");
  ByteReader crc_reader(bytes.subspan(bytes.size() - 4), ErrorKind::CorruptIndex);
  if (crc_reader.get<std::uint32_t>() != crc32_of(bytes.first(bytes.size() - 4))) {
    throw Error(ErrorKind::CorruptIndex, "checkpoint checksum mismatch");
  }
  ByteReader r(bytes.first(bytes.size() - 4), ErrorKind::CorruptIndex);
  if (r.get_raw(4) != std::string(kCheckpointMagic, 4)) throw Error(ErrorKind::BadMagic, path.string());
  if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion) {
    throw Error(ErrorKind::VersionMismatch, "checkpoint version " + std::to_string(v));
  }
  Checkpoint c;
  const auto algo = r.get<std::uint8_t>();
  if (algo > static_cast<std::uint8_t>(Algorithm::REM)) throw Error(ErrorKind::CorruptIndex, "unknown algorithm id");
  c.algorithm = static_cast<Algorithm>(algo);
  r.get_raw(3);
  c.step = r.get<std::uint64_t>();
  c.model = ModelConfig::from_text(r.get_raw(r.get<std::uint32_t>()));
  c.train = train_config_from(parse_key_values(r.get_raw(r.get<std::uint32_t>())));
  const auto digest = r.get<std::uint64_t>();
  if (digest != c.config_digest()) throw Error(ErrorKind::CorruptIndex, "checkpoint config digest mismatch");
  const auto count = r.get<std::uint64_t>();
  if (count != r.remaining() / 4 || r.remaining() % 4) throw Error(ErrorKind::CorruptIndex, "parameter count mismatch");
  c.parameters.resize(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < c.parameters.size(); ++i) c.parameters[i] = r.get<float>();
  return c;
}

std::unique_ptr<ModelContract<float>> instantiate(const Checkpoint& ckpt) {
  auto model = std::make_unique<RecurrentModel<float>>(ckpt.model, 0);
  if (model->parameters().size() != ckpt.parameters.size()) {
    throw Error(ErrorKind::CorruptIndex, "checkpoint parameters do not fit its model config");
  }
  model->parameters() = ckpt.parameters;
  return model;
}

Checkpoint train(Algorithm algo, const DatasetHandle& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
                 const MetricSink& metrics, const CheckpointSink& checkpoints) {
  cfg.validate();
  Checkpoint ckpt;
  ckpt.algorithm = algo;
  ckpt.model = with_heads(model_cfg, algo, cfg.rem_heads);
  ckpt.train = cfg;

  RecurrentModel<float> model(ckpt.model, derive_seed(cfg.seed, 1));
  std::unique_ptr<ModelContract<float>> target;
  if (algo != Algorithm::BC) target = model.clone();
  AdamW<float> opt(model.parameters().size(), cfg.learning_rate, cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2,
                   cfg.adam_eps);
  const SamplerConfig sampler{cfg.batch_size, cfg.seq_len, derive_seed(cfg.seed, 2), cfg.pad_policy};
  SequenceBatch batch;

  for (std::uint64_t it = 0; it < cfg.iterations; ++it) {
    data.sample_into(sampler, it, batch);
    Rng loss_rng(derive_seed(derive_seed(cfg.seed, 3), it));
    Rng dropout_rng(derive_seed(derive_seed(cfg.seed, 4), it));
    const auto rep = compute_loss<float>(algo, batch, model, target.get(), cfg, &loss_rng, &dropout_rng);
    if (!std::isfinite(rep.total) || !rep.gradient.allFinite()) {
      std::ostringstream snap;
      snap << "non-finite loss at iteration " << it << ": total=" << rep.total;
      for (const auto& [name, v] : rep.components) snap << " " << name << "=" << v;
      snap << " grad_norm=" << rep.grad_norm << " episodes=[";
      for (std::size_t b = 0; b < batch.batch_size; ++b) {
        snap << (b ? "," : "") << batch.episode_index[b] << "@" << batch.start_step[b];
      }
      snap << "]";
      throw Error(ErrorKind::NonFiniteLoss, snap.str());
    }
    opt.step(model.parameters(), rep.gradient);
    if (target) soft_update(target->parameters(), model.parameters(), cfg.tau);

    const std::uint64_t step = it + 1;
    if (metrics && cfg.log_every && (step % cfg.log_every == 0 || step == cfg.iterations)) {
      metrics(step, "loss", rep.total);
      for (const auto& [name, v] : rep.components) metrics(step, "loss/" + name, v);
      metrics(step, "grad_norm", rep.grad_norm);
      if (algo != Algorithm::BC) metrics(step, "mean_q", rep.mean_q);
      if (ckpt.model.policy_head) metrics(step, "entropy", rep.entropy);
    }
    if (checkpoints && cfg.checkpoint_every && step % cfg.checkpoint_every == 0 && step != cfg.iterations) {
      ckpt.step = step;
      ckpt.parameters = model.parameters();
      checkpoints(ckpt);
    }
  }
  ckpt.step = cfg.iterations;
  ckpt.parameters = model.parameters();
  if (checkpoints) checkpoints(ckpt);
  return ckpt;
}

// ------------------------------------------------------------------ evaluation

std::string_view to_string(ActionRule rule) {
  switch (rule) {
    case ActionRule::SamplePolicy: return "sample_policy";
    case ActionRule::GreedyPolicy: return "greedy_policy";
    case ActionRule::GreedyQ: return "greedy_q";
  }
  return "?";
}

ActionRule parse_action_rule(std::string_view text) {
  for (const auto r : {ActionRule::SamplePolicy, ActionRule::GreedyPolicy, ActionRule::GreedyQ}) {
    if (to_string(r) == text) return r;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown action rule '" + std::string(text) + "'");
}

ActionRule default_action_rule(Algorithm algo) {
  return algo == Algorithm::CQL || algo == Algorithm::REM ? ActionRule::GreedyQ : ActionRule::SamplePolicy;
}

double EvalResult::mean_score() const noexcept {
  if (rows.empty()) return 0.0;
  double sum = 0;
  for (const auto& r : rows) sum += static_cast<double>(r.score);
  return sum / static_cast<double>(rows.size());
}

namespace {

template <typename Fn>
auto adapter_call(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::AdapterFailure) throw;
    throw Error(ErrorKind::AdapterFailure, std::string("environment failed: ") + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorKind::AdapterFailure, std::string("environment failed: ") + e.what());
  }
}

// Shared episode loop; `act` maps (observation, previous action) to an action.
template <typename Act>
EvalResult run_episodes(EnvAdapter& env, const EvalOptions& opts, Act&& act) {
  EvalResult res;
  for (std::size_t i = 0; i < opts.episodes; ++i) {
    const auto seed = derive_seed(opts.seed, i);
    EnvStep cur = adapter_call([&] { return env.reset(seed); });
    act.begin_episode(i);
    std::int32_t depth = cur.depth;
    int prev = 0;
    for (std::size_t t = 0; t < opts.max_steps && !cur.done; ++t) {
      const int a = act(cur.observation, prev);
      if (opts.reference) {
        ++res.decisions;
        if (opts.reference(cur.observation) == a) ++res.agreements;
      }
      cur = adapter_call([&] { return env.step(a); });
      depth = std::max(depth, cur.depth);
      prev = a;
    }
    res.rows.push_back({env.task(), opts.run_id, i, cur.score, depth});
  }
  return res;
}

struct ModelActor {
  const ModelContract<float>& model;
  ActionRule rule;
  std::uint64_t seed;
  RecurrentState<float> state;
  Rng rng;

  void begin_episode(std::size_t i) {
    state = model.initial_state(1);
    rng.seed(derive_seed(derive_seed(seed, 0x65766131), i));
  }

  int operator()(const EnvObservation& obs, int prev) {
    const auto& cfg = model.config();
    const int prev_in = cfg.condition_on_prev_action ? std::clamp(prev, 0, cfg.actions - 1) : 0;
    const auto in = make_step_input<float>(obs.tty_chars.data(), obs.tty_colors.data(), obs.cursor_row,
                                           obs.cursor_col, prev_in, cfg);
    RecurrentState<float> next;
    const auto out = model.forward(in, state, &next, nullptr);
    state = std::move(next);
    switch (rule) {
      case ActionRule::GreedyPolicy: {
        if (out.policy.size() == 0) throw Error(ErrorKind::InvalidArgument, "model has no policy head");
        Eigen::Index a;
        out.policy.col(0).maxCoeff(&a);
        return static_cast<int>(a);
      }
      case ActionRule::SamplePolicy: {
        if (out.policy.size() == 0) throw Error(ErrorKind::InvalidArgument, "model has no policy head");
        const Vector<double> logits = out.policy.col(0).cast<double>();
        const Vector<double> p = (logits.array() - logits.maxCoeff()).exp();
        const double u = uniform01(rng) * p.sum();
        double acc = 0;
        for (Eigen::Index a = 0; a < p.size(); ++a) {
          acc += p[a];
          if (u < acc) return static_cast<int>(a);
        }
        return static_cast<int>(p.size() - 1);
      }
      case ActionRule::GreedyQ: {
        if (out.q.size() == 0) throw Error(ErrorKind::InvalidArgument, "model has no Q head");
        const Eigen::Index actions = cfg.actions;
        Vector<float> mean = Vector<float>::Zero(actions);
        for (int k = 0; k < cfg.q_heads; ++k) mean += out.q.block(k * actions, 0, actions, 1);
        Eigen::Index a;
        mean.maxCoeff(&a);
        return static_cast<int>(a);
      }
    }
    return 0;
  }
};

struct PolicyActor {
  const Policy& policy;
  void begin_episode(std::size_t) {}
  int operator()(const EnvObservation& obs, int) { return policy(obs); }
};

}  // namespace

EvalResult evaluate(const ModelContract<float>& model, EnvAdapter& env, const EvalOptions& opts) {
  ModelActor actor{model, opts.rule, opts.seed, {}, Rng{}};
  return run_episodes(env, opts, actor);
}

EvalResult evaluate_policy(const Policy& policy, EnvAdapter& env, const EvalOptions& opts) {
  PolicyActor actor{policy};
  return run_episodes(env, opts, actor);
}

}  // namespace ttyrl
