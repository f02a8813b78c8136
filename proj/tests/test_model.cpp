#include <cmath>

#include "doctest.h"
#include "synthetic.hpp"
#include "toy_model.hpp"
#include "ttyrl/errors.hpp"
#include "ttyrl/losses.hpp"

using namespace ttyrl;
using ttyrl::testing::toy_batch;
using ttyrl::testing::toy_config;

TEST_CASE("config text round trip") {
  auto cfg = toy_config(Algorithm::IQL);
  cfg.dropout = 0.25;
  const auto back = ModelConfig::from_text(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());
  CHECK(back.conv == cfg.conv);
  CHECK(back.value_head);
  CHECK(back.q_heads == 1);
}

TEST_CASE("head layout per algorithm") {
  const ModelConfig base;
  CHECK(with_heads(base, Algorithm::BC, 200).q_heads == 0);
  CHECK(with_heads(base, Algorithm::REM, 200).q_heads == 200);
  CHECK_FALSE(with_heads(base, Algorithm::REM, 200).policy_head);
  CHECK(with_heads(base, Algorithm::IQL, 200).value_head);
  CHECK(with_heads(base, Algorithm::AWAC, 200).policy_head);
}

TEST_CASE("invalid model configs are rejected") {
  auto cfg = toy_config(Algorithm::BC);
  cfg.hidden = 0;
  CHECK_THROWS_AS(RecurrentModel<double>(cfg, 0), Error);
  cfg = toy_config(Algorithm::BC);
  cfg.conv = {{4, 9, 9, 1, 1}};
  CHECK_THROWS_AS(RecurrentModel<double>(cfg, 0), Error);
}

TEST_CASE("forward shapes and determinism") {
  RecurrentModel<double> model(toy_config(Algorithm::IQL), 1);
  const auto batch = toy_batch(2, 3, 4, 5);
  const auto in = make_input<double>(batch, model.config());
  CHECK(in.pixels.cols() == 15);
  const auto a = model.forward(in, model.initial_state(3), nullptr, nullptr);
  const auto b = model.forward(in, model.initial_state(3), nullptr, nullptr);
  CHECK(a.policy.rows() == 5);
  CHECK(a.policy.cols() == 15);
  CHECK(a.q.rows() == 5);
  CHECK(a.value.rows() == 1);
  CHECK(a.policy == b.policy);
  CHECK(a.q == b.q);
  CHECK(a.value == b.value);
}

TEST_CASE("recurrent state threads through chained windows") {
  auto cfg = toy_config(Algorithm::AWAC);
  RecurrentModel<double> model(cfg, 3);
  const auto batch = toy_batch(4, 2, 1, 5);  // 2 observations per row
  const auto in = make_input<double>(batch, cfg);
  const auto whole = model.forward(in, model.initial_state(2), nullptr, nullptr);

  auto slice = [&](Eigen::Index t) {
    ModelInput<double> s;
    s.batch = 2;
    s.steps = 1;
    s.pixels = in.pixels.middleCols(t * 2, 2);
    s.prev_actions = {in.prev_actions[t * 2], in.prev_actions[t * 2 + 1]};
    return s;
  };
  RecurrentState<double> mid;
  const auto first = model.forward(slice(0), model.initial_state(2), &mid, nullptr);
  const auto second = model.forward(slice(1), mid, nullptr, nullptr);
  CHECK((first.policy - whole.policy.leftCols(2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((second.policy - whole.policy.rightCols(2)).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((second.q - whole.q.rightCols(2)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("float and double models agree") {
  const auto cfg = toy_config(Algorithm::BC);
  RecurrentModel<double> d(cfg, 5);
  RecurrentModel<float> f(cfg, 5);
  const auto batch = toy_batch(6, 2, 3, 5);
  const auto od = d.forward(make_input<double>(batch, cfg), d.initial_state(2), nullptr, nullptr);
  const auto of = f.forward(make_input<float>(batch, cfg), f.initial_state(2), nullptr, nullptr);
  CHECK((od.policy - of.policy.cast<double>()).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("dropout is inactive without a stream and random with one") {
  auto cfg = toy_config(Algorithm::BC);
  cfg.dropout = 0.5;
  RecurrentModel<double> model(cfg, 7);
  const auto batch = toy_batch(8, 2, 3, 5);
  const auto in = make_input<double>(batch, cfg);
  const auto plain = model.forward(in, model.initial_state(2), nullptr, nullptr);
  Rng rng(1);
  const auto dropped = model.forward(in, model.initial_state(2), nullptr, nullptr, &rng);
  CHECK(plain.policy != dropped.policy);
}

// ---------------------------------------------------------------- losses

namespace {

HeadOutputs<double> heads(int actions, Eigen::Index n, int q_heads = 1) {
  HeadOutputs<double> h;
  h.policy = Matrix<double>::Zero(actions, n);
  h.q = Matrix<double>::Zero(actions * q_heads, n);
  h.value = Matrix<double>::Zero(1, n);
  return h;
}

Transitions<double> one_step(int action, std::int32_t reward, bool done) {
  SequenceBatch b;
  b.resize(1, 1);
  b.actions[0] = static_cast<std::uint8_t>(action);
  b.rewards[0] = reward;
  b.dones[0] = done;
  b.mask[0] = 1;
  return transitions<double>(b, TrainConfig{});
}

}  // namespace

TEST_CASE("bc loss of uniform logits is ln|A|") {
  const auto tr = one_step(2, 0, true);
  const auto out = heads(4, 2);
  const auto rep = evaluate_heads(Algorithm::BC, tr, out, LossTargets<double>{}, TrainConfig{}, nullptr);
  CHECK(std::abs(rep.total - std::log(4.0)) < 1e-12);
}

TEST_CASE("bc loss vanishes with a large correct margin") {
  const auto tr = one_step(2, 0, true);
  auto out = heads(4, 2);
  out.policy(2, 0) = 50;
  const auto rep = evaluate_heads(Algorithm::BC, tr, out, LossTargets<double>{}, TrainConfig{}, nullptr);
  CHECK(rep.total < 1e-20);
}

TEST_CASE("cql penalty") {
  const auto tr = one_step(1, 0, true);
  TrainConfig cfg;
  LossTargets<double> tg;
  tg.td = Vector<double>::Zero(1);
  auto out = heads(4, 2);
  auto rep = evaluate_heads(Algorithm::CQL, tr, out, tg, cfg, nullptr);
  CHECK(std::abs(rep.components["penalty"] - std::log(4.0)) < 1e-12);

  out.q(1, 0) = 10;
  rep = evaluate_heads(Algorithm::CQL, tr, out, tg, cfg, nullptr);
  CHECK(std::abs(rep.components["penalty"] - std::log1p(3 * std::exp(-10.0))) < 1e-12);
  CHECK(rep.components["penalty"] > 0);

  cfg.cql_alpha = 0;
  rep = evaluate_heads(Algorithm::CQL, tr, out, tg, cfg, nullptr);
  CHECK(rep.total == rep.components["penalty"]);

  cfg.cql_alpha = 0.5;
  rep = evaluate_heads(Algorithm::CQL, tr, out, tg, cfg, nullptr);
  CHECK(rep.total == doctest::Approx(0.5 * huber(10.0) + rep.components["penalty"]));
}

TEST_CASE("td targets") {
  SequenceBatch b;
  b.resize(1, 1);
  b.mask[0] = 1;
  auto next = heads(3, 2);
  next.q(1, 1) = 2;
  TrainConfig cfg;

  b.rewards[0] = 1;
  b.dones[0] = 1;
  CHECK(td_targets(b, next, cfg, BootstrapRule::MaxQ)(0, 0) == 1.0);

  b.rewards[0] = 0;
  b.dones[0] = 0;
  CHECK(td_targets(b, next, cfg, BootstrapRule::MaxQ)(0, 0) == doctest::Approx(1.998).epsilon(1e-12));

  b.rewards[0] = 100;
  b.dones[0] = 1;
  CHECK(td_targets(b, next, cfg, BootstrapRule::MaxQ)(0, 0) == 10.0);
  b.rewards[0] = -100;
  CHECK(td_targets(b, next, cfg, BootstrapRule::MaxQ)(0, 0) == -10.0);

  b.rewards[0] = 0;
  b.dones[0] = 0;
  next.value(0, 1) = 4;
  CHECK(td_targets(b, next, cfg, BootstrapRule::StateValue)(0, 0) == doctest::Approx(0.999 * 4));
  // Uniform policy over Q = (0, 2, 0).
  CHECK(td_targets(b, next, cfg, BootstrapRule::ExpectedQ)(0, 0) == doctest::Approx(0.999 * 2.0 / 3.0));
}

TEST_CASE("iql expectile value loss") {
  TrainConfig cfg;
  LossTargets<double> tg;
  tg.td = Vector<double>::Zero(1);
  tg.weights = Vector<double>::Ones(1);
  tg.aux = Vector<double>::Constant(1, 1.0);
  const auto tr = one_step(0, 0, true);
  auto out = heads(3, 2);
  auto rep = evaluate_heads(Algorithm::IQL, tr, out, tg, cfg, nullptr);
  CHECK(rep.components["value"] == doctest::Approx(0.8).epsilon(1e-12));
  tg.aux[0] = -1;
  rep = evaluate_heads(Algorithm::IQL, tr, out, tg, cfg, nullptr);
  CHECK(rep.components["value"] == doctest::Approx(0.2).epsilon(1e-12));

  // tau = 0.5 gives half the mean squared error.
  cfg.iql_expectile = 0.5;
  SequenceBatch b;
  b.resize(3, 1);
  for (int i = 0; i < 3; ++i) b.mask[i] = 1;
  const auto tr3 = transitions<double>(b, cfg);
  auto out3 = heads(3, 6);
  out3.value << 0.5, -1.0, 2.0, 0, 0, 0;
  tg.aux = Vector<double>(3);
  tg.aux << 1.5, 0.25, -3.0;
  tg.td = Vector<double>::Zero(3);
  tg.weights = Vector<double>::Ones(3);
  rep = evaluate_heads(Algorithm::IQL, tr3, out3, tg, cfg, nullptr);
  const double mse = (1.0 + 1.5625 + 25.0) / 3.0;
  CHECK(std::abs(rep.components["value"] - 0.5 * mse) < 1e-9);
}

TEST_CASE("advantage weights clamp at the clip value") {
  RecurrentModel<double> model(toy_config(Algorithm::IQL), 1);
  auto target = model;
  target.block("q.b").setConstant(1000.0);
  const auto batch = toy_batch(3, 2, 2, 5);
  const auto in = make_input<double>(batch, model.config());
  const auto online = model.forward(in, model.initial_state(2), nullptr, nullptr);
  const auto t_out = target.forward(in, target.initial_state(2), nullptr, nullptr);
  const auto tg = prepare_targets(Algorithm::IQL, transitions<double>(batch, {}), online, &t_out, TrainConfig{}, nullptr);
  CHECK(tg.weights.maxCoeff() == 100.0);
  CHECK(tg.weights.minCoeff() == 100.0);
}

TEST_CASE("awac: uniform policy with symmetric Q gives the bc loss") {
  const auto tr = one_step(1, 0, true);
  auto online = heads(3, 2);
  online.q.col(0).setConstant(2.0);
  auto target = heads(3, 2);
  TrainConfig cfg;
  const auto tg = prepare_targets(Algorithm::AWAC, tr, online, &target, cfg, nullptr);
  CHECK(tg.weights[0] == 1.0);
  const auto awac = evaluate_heads(Algorithm::AWAC, tr, online, tg, cfg, nullptr);
  const auto bc = evaluate_heads(Algorithm::BC, tr, online, LossTargets<double>{}, cfg, nullptr);
  CHECK(awac.components.at("policy") == doctest::Approx(bc.total).epsilon(1e-12));
}

TEST_CASE("awac: advantage of the greedy action is non-positive for a greedy policy") {
  const auto tr = one_step(0, 0, true);
  auto online = heads(3, 2);
  online.q.col(0) << 1.0, 3.0, 2.0;
  online.policy.col(0) << 0.0, 40.0, 0.0;
  auto target = heads(3, 2);
  const auto tg = prepare_targets(Algorithm::AWAC, tr, online, &target, TrainConfig{}, nullptr);
  CHECK(tg.weights[0] <= 1.0);
  CHECK(std::log(tg.weights[0]) == doctest::Approx(1.0 - 3.0).epsilon(1e-9));
}

TEST_CASE("awac with done everywhere regresses onto clipped rewards") {
  SequenceBatch b;
  b.resize(2, 2);
  b.rewards = {3, 50, -2, -70};
  b.dones = {1, 1, 1, 1};
  b.mask = {1, 1, 1, 1};
  const auto tr = transitions<double>(b, {});
  auto online = heads(3, 6);
  auto target = heads(3, 6);
  target.q.setConstant(5.0);
  const auto tg = prepare_targets(Algorithm::AWAC, tr, online, &target, TrainConfig{}, nullptr);
  // Time-major: (b0,t0), (b1,t0), (b0,t1), (b1,t1).
  CHECK(tg.td[0] == 3.0);
  CHECK(tg.td[1] == -2.0);
  CHECK(tg.td[2] == 10.0);
  CHECK(tg.td[3] == -10.0);
}

TEST_CASE("rem mixture lies on the simplex") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto mix = rem_mixture<double>(1 + trial % 7, rng);
    CHECK(mix.minCoeff() >= 0.0);
    CHECK(std::abs(mix.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("rem with one head is the plain td loss") {
  const auto cfg1 = [] {
    TrainConfig c;
    c.rem_heads = 1;
    return c;
  }();
  RecurrentModel<double> model(toy_config(Algorithm::REM, 5, 1), 2);
  auto target = model;
  target.parameters().array() += 0.05;
  const auto batch = toy_batch(9, 3, 3, 5);
  Rng rng(1);
  const auto rem = rem_loss<double>(batch, model, target, cfg1, rng);

  // CQL with alpha = 1 minus its penalty is the same TD loss.
  auto cfg = cfg1;
  cfg.cql_alpha = 1.0;
  RecurrentModel<double> cql_model(toy_config(Algorithm::CQL, 5), 2);
  cql_model.parameters() = model.parameters();
  auto cql_target = cql_model;
  cql_target.parameters() = target.parameters();
  const auto cql = compute_loss<double>(Algorithm::CQL, batch, cql_model, &cql_target, cfg, nullptr, nullptr, "td");
  CHECK(rem.total == doctest::Approx(cql.total).epsilon(1e-12));
  CHECK((rem.gradient - cql.gradient).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rem loss with identical heads does not depend on the mixture") {
  TrainConfig cfg;
  cfg.rem_heads = 4;
  RecurrentModel<double> model(toy_config(Algorithm::REM, 5, 4), 4);
  for (int k = 1; k < 4; ++k) {
    model.block("q.w").middleRows(k * 5, 5) = model.block("q.w").topRows(5).eval();
    model.block("q.b").middleRows(k * 5, 5) = model.block("q.b").topRows(5).eval();
  }
  auto target = model;
  const auto batch = toy_batch(10, 2, 3, 5);
  Rng a(1), b(2);
  const auto la = rem_loss<double>(batch, model, target, cfg, a);
  const auto lb = rem_loss<double>(batch, model, target, cfg, b);
  CHECK(la.total == doctest::Approx(lb.total).epsilon(1e-12));
}

TEST_CASE("soft update") {
  Vector<double> t = Vector<double>::Zero(3);
  const Vector<double> o = Vector<double>::Ones(3);
  auto x = t;
  soft_update(x, o, 0.0);
  CHECK(x == t);
  soft_update(x, o, 1.0);
  CHECK(x == o);
  x = t;
  soft_update(x, o, 0.005);
  CHECK(x[0] == doctest::Approx(0.005).epsilon(1e-15));

  Rng rng(3);
  Vector<double> same(50);
  for (auto& v : same) v = uniform01(rng) * 1e3 - 500;
  auto copy = same;
  soft_update(copy, same, 0.37);
  CHECK(copy == same);
}

TEST_CASE("adamw moves against the gradient and decays weights") {
  AdamW<double> opt(2, 0.1, 0.0);
  Vector<double> p(2);
  p << 1.0, -1.0;
  Vector<double> g(2);
  g << 2.0, -3.0;
  opt.step(p, g);
  CHECK(p[0] == doctest::Approx(0.9));
  CHECK(p[1] == doctest::Approx(-0.9));

  AdamW<double> decay(1, 0.1, 0.5);
  Vector<double> q = Vector<double>::Constant(1, 2.0);
  decay.step(q, Vector<double>::Zero(1));
  CHECK(q[0] == doctest::Approx(2.0 * (1 - 0.05)));
}

// ---------------------------------------------------------------- gradients

namespace {

double check(Algorithm algo, const std::string& component = {}, int rem_heads = 3) {
  TrainConfig cfg;
  cfg.rem_heads = rem_heads;
  cfg.cql_alpha = 0.5;  // keep both CQL terms visible in the gradient
  RecurrentModel<double> model(toy_config(algo, 5, rem_heads), 21);
  auto target = model;
  Rng jitter(5);
  for (auto& v : target.parameters()) v += 0.1 * (uniform01(jitter) - 0.5);
  const auto batch = toy_batch(22, 2, 2, 5);
  const auto res = grad_check(algo, batch, model, algo == Algorithm::BC ? nullptr : &target, cfg, 99, 1e-5, component);
  MESSAGE(to_string(algo), " ", component, " max rel err ", res.max_rel_error, " over ", res.checked, " at ",
          res.worst_index, " a=", res.analytic, " n=", res.numeric);
  return res.max_rel_error;
}

}  // namespace

TEST_CASE("finite-difference gradients") {
  CHECK(check(Algorithm::BC) < 1e-4);
  CHECK(check(Algorithm::CQL) < 1e-4);
  CHECK(check(Algorithm::CQL, "td") < 1e-4);
  CHECK(check(Algorithm::CQL, "penalty") < 1e-4);
  CHECK(check(Algorithm::IQL) < 1e-4);
  CHECK(check(Algorithm::IQL, "value") < 1e-4);
  CHECK(check(Algorithm::IQL, "q") < 1e-4);
  CHECK(check(Algorithm::IQL, "policy") < 1e-4);
  CHECK(check(Algorithm::AWAC) < 1e-4);
  CHECK(check(Algorithm::REM) < 1e-4);
}

TEST_CASE("analytic gradient matches finite differences without a conv stack") {
  auto cfg = toy_config(Algorithm::BC);
  cfg.conv.clear();
  cfg.condition_on_prev_action = false;
  cfg.layers = 1;
  RecurrentModel<double> model(cfg, 8);
  const auto batch = toy_batch(12, 2, 2, 5);
  const auto res = grad_check(Algorithm::BC, batch, model, nullptr, TrainConfig{}, 0);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("losses are finite and non-negative where defined") {
  for (const auto algo : {Algorithm::BC, Algorithm::CQL, Algorithm::IQL, Algorithm::AWAC, Algorithm::REM}) {
    TrainConfig cfg;
    cfg.rem_heads = 3;
    RecurrentModel<float> model(toy_config(algo), 1);
    auto target = model;
    Rng rng(2);
    for (std::uint64_t s = 0; s < 10; ++s) {
      const auto batch = toy_batch(s, 4, 4, 5);
      const auto rep = compute_loss<float>(algo, batch, model, &target, cfg, &rng);
      CHECK(std::isfinite(rep.total));
      CHECK(rep.total >= 0.0);
      CHECK(rep.gradient.allFinite());
    }
  }
}

TEST_CASE("masked positions contribute nothing") {
  auto batch = toy_batch(30, 2, 3, 5);
  RecurrentModel<double> model(toy_config(Algorithm::BC), 3);
  const auto base = bc_loss<double>(batch, model);
  batch.mask[2] = 0;
  batch.actions[2] = (batch.actions[2] + 1) % 5;
  const auto masked = bc_loss<double>(batch, model);
  batch.actions[2] = (batch.actions[2] + 1) % 5;
  const auto masked2 = bc_loss<double>(batch, model);
  CHECK(masked.total == masked2.total);
  CHECK(masked.total != base.total);
}
