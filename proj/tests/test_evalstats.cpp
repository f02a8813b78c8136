#include <cmath>
#include <json.hpp>
#include <sstream>

#include "doctest.h"
#include "ttyrl/errors.hpp"
#include "ttyrl/evalstats.hpp"
#include "ttyrl/random.hpp"

using namespace ttyrl;

namespace {

CharacterSpec task(const char* id) { return parse_task_id(id); }

TaskValues random_values(Rng& rng, std::size_t tasks, std::size_t max_n, bool ties) {
  TaskValues out;
  for (std::size_t t = 0; t < tasks; ++t) {
    auto& v = out[catalog()[t].character];
    const auto n = 1 + uniform_below(rng, max_n);
    for (std::size_t i = 0; i < n; ++i) {
      v.push_back(ties ? static_cast<double>(uniform_below(rng, 4)) : 100.0 * uniform01(rng));
    }
  }
  return out;
}

BootstrapConfig quick(std::uint64_t seed = 1) { return {200, 0.95, seed}; }

}  // namespace

TEST_CASE("normalizers at the catalog anchors") {
  CHECK(normalize_minmax(138103, task("arc-hum-neu")) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(normalize_minmax(16, task("val-hum-neu")) == 0.0);
  CHECK(normalize_minmax(0, task("arc-hum-neu")) == 0.0);
  CHECK(normalize_mean(6636.44, task("arc-hum-neu")) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(normalize_mean(17456.05, task("mon-hum-neu")) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(normalize_mean(0, task("wiz-elf-cha")) == 0.0);
  for (const auto& e : catalog()) {
    CHECK(std::abs(normalize_mean(e.normalization.mean_score, e.character) - 100.0) <= 1e-6);
    CHECK(std::abs(normalize_minmax(e.normalization.max_score, e.character) - 100.0) <= 1e-6);
    CHECK(normalize_minmax(e.normalization.min_score - 1.0, e.character) == 0.0);
  }
}

TEST_CASE("normalizers are increasing in score") {
  for (const auto& e : catalog()) {
    const auto& n = e.normalization;
    double prev_mm = normalize_minmax(n.min_score, e.character);
    double prev_mean = normalize_mean(n.min_score, e.character);
    for (int i = 1; i <= 10; ++i) {
      const double s = n.min_score + (n.max_score - n.min_score) * i / 10.0;
      CHECK(normalize_minmax(s, e.character) > prev_mm);
      CHECK(normalize_mean(s, e.character) > prev_mean);
      prev_mm = normalize_minmax(s, e.character);
      prev_mean = normalize_mean(s, e.character);
    }
  }
}

TEST_CASE("aggregate point estimates") {
  const std::vector<double> a{1, 2, 3, 4};
  CHECK(aggregate(a, Statistic::IQM) == 2.5);
  CHECK(aggregate(a, Statistic::Median) == 2.5);
  CHECK(aggregate(a, Statistic::Mean) == 2.5);
  const std::vector<double> c{5, 5, 5};
  for (const auto s : {Statistic::Mean, Statistic::Median, Statistic::IQM}) CHECK(aggregate(c, s) == 5.0);
  CHECK(aggregate(c, Statistic::OptimalityGap, 5.0) == 0.0);
  const std::vector<double> g{0, 10};
  CHECK(aggregate(g, Statistic::OptimalityGap, 1.0) == 0.5);
  const std::vector<double> eight{9, 1, 8, 2, 7, 3, 6, 100};
  CHECK(aggregate(eight, Statistic::IQM) == doctest::Approx((3 + 6 + 7 + 8) / 4.0));
  CHECK_THROWS_AS(aggregate(std::vector<double>{}, Statistic::Mean), Error);
}

TEST_CASE("IQM is bounded and equals the median on symmetric samples") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + uniform_below(rng, 30));
    for (auto& x : v) x = uniform01(rng) * 50;
    const double iqm = aggregate(v, Statistic::IQM);
    CHECK(iqm >= *std::min_element(v.begin(), v.end()));
    CHECK(iqm <= *std::max_element(v.begin(), v.end()));
    std::vector<double> sym;
    for (const double x : v) {
      sym.push_back(10 + x);
      sym.push_back(10 - x);
    }
    CHECK(aggregate(sym, Statistic::IQM) == doctest::Approx(aggregate(sym, Statistic::Median)).epsilon(1e-12));
  }
}

TEST_CASE("bootstrap on a constant matrix collapses") {
  TaskValues v{{task("mon-hum-neu"), {7, 7, 7}}, {task("arc-hum-neu"), {7, 7}}};
  for (const auto s : {Statistic::Mean, Statistic::Median, Statistic::IQM}) {
    const auto ci = stratified_bootstrap_ci(v, s, quick());
    CHECK(ci.point == 7.0);
    CHECK(ci.low == 7.0);
    CHECK(ci.high == 7.0);
  }
}

TEST_CASE("bootstrap interval stays inside the sample hull and is seeded") {
  TaskValues v{{task("mon-hum-neu"), {2, 9}}};
  BootstrapConfig cfg{5000, 0.95, 11};
  const auto ci = stratified_bootstrap_ci(v, Statistic::Mean, cfg);
  CHECK(ci.low >= 2.0);
  CHECK(ci.high <= 9.0);
  CHECK(ci.low <= ci.point);
  CHECK(ci.point <= ci.high);
  const auto again = stratified_bootstrap_ci(v, Statistic::Mean, cfg);
  CHECK(again.low == ci.low);
  CHECK(again.high == ci.high);
  CHECK(again.replicate_mean == ci.replicate_mean);
}

TEST_CASE("stratified bootstrap matches exhaustive resampling") {
  // All 4^4 x 4^4 stratified resamples, IQM of the pooled 8 values, averaged:
  // 2.191650390625. The original sample's IQM is 2.25.
  TaskValues v{{task("mon-hum-neu"), {1, 2, 3, 4}}, {task("arc-hum-neu"), {0, 1.5, 2.5, 3}}};
  const auto ci = stratified_bootstrap_ci(v, Statistic::IQM, {10000, 0.95, 5});
  CHECK(std::abs(ci.replicate_mean - 2.191650390625) < 0.05);
  CHECK(ci.point == 2.25);
}

TEST_CASE("replicates preserve per-task sample sizes") {
  Rng rng(8);
  const auto v = random_values(rng, 5, 9, false);
  const std::vector<TaskValues> groups{v};
  bool checked = false;
  stratified_bootstrap(
      groups,
      [&](std::span<const TaskValues> g) {
        REQUIRE(g[0].size() == v.size());
        for (auto a = g[0].begin(), b = v.begin(); a != g[0].end(); ++a, ++b) {
          CHECK(a->first == b->first);
          CHECK(a->second.size() == b->second.size());
          for (const double x : a->second) {
            CHECK(std::find(b->second.begin(), b->second.end(), x) != b->second.end());
          }
        }
        checked = true;
        return std::vector<double>{0.0};
      },
      quick());
  CHECK(checked);
  BootstrapConfig bad{50, 0.95, 0};
  CHECK_THROWS_AS(stratified_bootstrap_ci(v, Statistic::Mean, bad), Error);
  bad = {200, 1.0, 0};
  CHECK_THROWS_AS(stratified_bootstrap_ci(v, Statistic::Mean, bad), Error);
}

TEST_CASE("performance profile values") {
  TaskValues one{{task("mon-hum-neu"), {0.5, 1.5}}};
  CHECK(profile_fraction(one, 1.0) == 0.5);
  CHECK(profile_fraction(one, 0.0) == 1.0);
  CHECK(profile_fraction(one, 1.5) == 0.0);

  // Steps sit exactly at the sorted unique values 1, 2, 3, 5.
  TaskValues five{{task("mon-hum-neu"), {3, 1, 5, 2, 2}}};
  const double expected_between[] = {1.0, 0.8, 0.4, 0.2, 0.0};
  const double edges[] = {1, 2, 3, 5};
  CHECK(profile_fraction(five, 0.999) == expected_between[0]);
  for (int i = 0; i < 4; ++i) {
    CHECK(profile_fraction(five, edges[i]) == expected_between[i + 1]);
    CHECK(profile_fraction(five, edges[i] + 0.5) == expected_between[i + 1]);
    CHECK(profile_fraction(five, edges[i] - 1e-9) == expected_between[i]);
  }
}

TEST_CASE("performance profiles are non-increasing on random matrices") {
  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto v = random_values(rng, 1 + uniform_below(rng, 6), 12, trial % 2 == 0);
    const auto taus = profile_grid(v, 25);
    double prev = 2.0;
    for (const double t : taus) {
      const double f = profile_fraction(v, t);
      CHECK(f >= 0.0);
      CHECK(f <= 1.0);
      CHECK(f <= prev);
      prev = f;
    }
    CHECK(profile_fraction(v, -1.0) == 1.0);
    CHECK(profile_fraction(v, 1e9) == 0.0);
  }
}

TEST_CASE("profile confidence band brackets a monotone curve") {
  Rng rng(4);
  const auto v = random_values(rng, 4, 10, false);
  const auto taus = profile_grid(v, 30);
  const auto curve = performance_profile(v, taus, quick());
  REQUIRE(curve.size() == 30);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    CHECK(curve[i].low <= curve[i].high);
    if (i) {
      CHECK(curve[i].fraction <= curve[i - 1].fraction);
      CHECK(curve[i].low <= curve[i - 1].low);
      CHECK(curve[i].high <= curve[i - 1].high);
    }
  }
}

TEST_CASE("probability of improvement") {
  const auto m = task("mon-hum-neu");
  CHECK(probability_of_improvement({{m, {1, 2}}}, {{m, {0, 3}}}) == 0.5);
  CHECK(probability_of_improvement({{m, {4, 4, 1}}}, {{m, {4, 4, 1}}}) == 0.5);
  CHECK(probability_of_improvement({{m, {5, 6}}}, {{m, {1, 2, 3}}}) == 1.0);
  CHECK(probability_of_improvement({{m, {1, 2, 3}}}, {{m, {5, 6}}}) == 0.0);
  CHECK_THROWS_AS(probability_of_improvement({{m, {1}}}, {{task("arc-hum-neu"), {1}}}), Error);
  try {
    probability_of_improvement({{m, {1}}}, {{m, {1}}, {task("arc-hum-neu"), {1}}});
    FAIL("expected MismatchedTasks");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MismatchedTasks);
  }
}

TEST_CASE("probability of improvement is exactly antisymmetric") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto tasks = 1 + uniform_below(rng, 7);
    const bool ties = trial % 2 == 0;
    const auto x = random_values(rng, tasks, 9, ties);
    const auto y = random_values(rng, tasks, 9, ties);
    CHECK(probability_of_improvement(x, y) + probability_of_improvement(y, x) == 1.0);
  }
  const auto m = task("mon-hum-neu");
  const auto ci = probability_of_improvement_ci({{m, {5, 6, 7}}}, {{m, {1, 2, 3}}}, quick());
  CHECK(ci.point == 1.0);
  CHECK(ci.low == 1.0);
}

namespace {

EvalRunMatrix matrix_for(const std::vector<std::string>& tasks, double base, std::uint64_t seeds = 2,
                         std::uint64_t episodes = 3) {
  EvalRunMatrix m;
  for (const auto& t : tasks) {
    for (std::uint64_t s = 0; s < seeds; ++s) {
      for (std::uint64_t e = 0; e < episodes; ++e) {
        m.push_back({task(t.c_str()), s, e, base + 100.0 * static_cast<double>(s + e), static_cast<int>(1 + e)});
      }
    }
  }
  return m;
}

}  // namespace

TEST_CASE("evaluation records round trip through json lines") {
  const auto m = matrix_for({"mon-hum-neu", "val-dwa-law"}, 10);
  std::stringstream ss;
  write_eval_records(ss, m, "bc");
  ss << "\n";
  write_eval_records(ss, m);
  const auto back = read_eval_records(ss, "cql");
  REQUIRE(back.size() == 2);
  CHECK(back.at("bc") == m);
  CHECK(back.at("cql") == m);
  std::stringstream bad("{\"task\": \"mon-hum-neu\"}\n");
  CHECK_THROWS_AS(read_eval_records(bad, "x"), Error);
}

TEST_CASE("matrix validation") {
  auto m = matrix_for({"mon-hum-neu"}, 10);
  CHECK_NOTHROW(validate(m));
  m.pop_back();
  CHECK_THROWS_AS(validate(m), Error);
  m = matrix_for({"mon-hum-neu"}, 10);
  m[0].death_level = 0;
  CHECK_THROWS_AS(validate(m), Error);
  m[0].death_level = 1;
  m[0].score = -1;
  CHECK_THROWS_AS(validate(m), Error);
}

TEST_CASE("report bundle sections and category filter") {
  std::map<std::string, EvalRunMatrix> runs{{"bc", matrix_for({"mon-hum-neu", "val-dwa-law"}, 5000)},
                                            {"cql", matrix_for({"mon-hum-neu", "val-dwa-law"}, 10)}};
  ReportOptions opts;
  opts.bootstrap = quick();
  opts.baseline = "bc";
  opts.profile_points = 11;
  const auto bundle = report(runs, opts);
  const auto j = nlohmann::json::parse(bundle.json);
  CHECK(j["metric"] == "normalized_score");
  CHECK(j["normalizer"] == "minmax");
  CHECK(j["tasks"].size() == 2);
  for (const char* s : {"mean", "median", "iqm", "optimality_gap"}) {
    CHECK(j["algorithms"]["bc"]["aggregates"].contains(s));
  }
  CHECK(j["algorithms"]["cql"]["profile"].size() == 11);
  REQUIRE(j["probability_of_improvement"].size() == 1);
  CHECK(j["probability_of_improvement"][0]["x"] == "bc");
  CHECK(j["probability_of_improvement"][0]["probability"] == 1.0);
  CHECK(bundle.aggregates_csv.rfind("algorithm,statistic,point,low,high,entries\n", 0) == 0);
  CHECK(std::count(bundle.aggregates_csv.begin(), bundle.aggregates_csv.end(), '\n') == 9);
  CHECK(std::count(bundle.profiles_csv.begin(), bundle.profiles_csv.end(), '\n') == 23);

  opts.category = TaskCategory::Base;
  opts.metric = Metric::DeathLevel;
  const auto base = nlohmann::json::parse(report(runs, opts).json);
  CHECK(base["category"] == "base");
  CHECK(base["normalizer"] == "none");
  CHECK(base["tasks"].size() == 1);
  CHECK(base["tasks"][0] == "mon-hum-neu");

  opts.category.reset();
  runs["rem"] = matrix_for({"mon-hum-neu"}, 10);
  try {
    report(runs, opts);
    FAIL("expected MismatchedTasks");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MismatchedTasks);
  }
}

TEST_CASE("mean normalizer is labelled") {
  std::map<std::string, EvalRunMatrix> runs{{"bc", matrix_for({"mon-hum-neu"}, 17456.05, 1, 1)}};
  ReportOptions opts;
  opts.bootstrap = quick();
  opts.normalizer = Normalizer::Mean;
  const auto j = nlohmann::json::parse(report(runs, opts).json);
  CHECK(j["normalizer"] == "mean");
  CHECK(j["algorithms"]["bc"]["aggregates"]["mean"]["point"].get<double>() == doctest::Approx(100.0));
}
