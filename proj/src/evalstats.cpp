#include "ttyrl/evalstats.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "ttyrl/errors.hpp"
#include "ttyrl/random.hpp"

namespace ttyrl {

using nlohmann::json;

void validate(const EvalRunMatrix& matrix) {
  std::map<std::pair<CharacterSpec, std::uint64_t>, std::size_t> cells;
  for (const auto& r : matrix) {
    if (!(r.score >= 0.0)) throw Error(ErrorKind::ValidationFailed, "negative or NaN score");
    if (r.death_level < 1) throw Error(ErrorKind::ValidationFailed, "death level below 1");
    ++cells[{r.task, r.seed}];
  }
  for (const auto& [key, n] : cells) {
    if (n != cells.begin()->second) {
      throw Error(ErrorKind::ValidationFailed, "unequal episode counts at task " + canonical_string(key.first) +
                                                   " seed " + std::to_string(key.second));
    }
  }
}

std::map<std::string, EvalRunMatrix> read_eval_records(std::istream& in, const std::string& default_algorithm) {
  std::map<std::string, EvalRunMatrix> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      EvalRecord r;
      r.task = parse_task_id(j.at("task").get<std::string>());
      r.seed = j.value("seed", std::uint64_t{0});
      r.episode = j.value("episode", std::uint64_t{0});
      r.score = j.at("score").get<double>();
      r.death_level = j.value("death_level", 1);
      out[j.value("algorithm", default_algorithm)].push_back(r);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidArgument, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, EvalRunMatrix> read_eval_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  return read_eval_records(in, path.stem().string());
}

void write_eval_records(std::ostream& out, const EvalRunMatrix& matrix, const std::string& algorithm) {
  for (const auto& r : matrix) {
    json j;
    if (!algorithm.empty()) j["algorithm"] = algorithm;
    j["task"] = canonical_string(r.task);
    j["seed"] = r.seed;
    j["episode"] = r.episode;
    j["score"] = r.score;
    j["death_level"] = r.death_level;
    out << j.dump() << '\n';
  }
}

double normalize_minmax(double score, const CharacterSpec& task) {
  const auto& n = normalization_scores(task);
  return std::max(0.0, 100.0 * (score - n.min_score) / (n.max_score - n.min_score));
}

double normalize_mean(double score, const CharacterSpec& task) {
  return 100.0 * score / normalization_scores(task).mean_score;
}

std::string_view to_string(Normalizer n) { return n == Normalizer::MinMax ? "minmax" : "mean"; }

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::NormalizedScore: return "normalized_score";
    case Metric::DeathLevel: return "death_level";
    case Metric::RawScore: return "raw_score";
  }
  return "?";
}

std::string_view to_string(Statistic s) {
  switch (s) {
    case Statistic::Mean: return "mean";
    case Statistic::Median: return "median";
    case Statistic::IQM: return "iqm";
    case Statistic::OptimalityGap: return "optimality_gap";
  }
  return "?";
}

Normalizer parse_normalizer(std::string_view text) {
  if (text == "minmax") return Normalizer::MinMax;
  if (text == "mean") return Normalizer::Mean;
  throw Error(ErrorKind::InvalidArgument, "unknown normalizer '" + std::string(text) + "'");
}

Metric parse_metric(std::string_view text) {
  for (const auto m : {Metric::NormalizedScore, Metric::DeathLevel, Metric::RawScore}) {
    if (to_string(m) == text) return m;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown metric '" + std::string(text) + "'");
}

double aggregate(std::span<const double> values, Statistic stat, double gamma0) {
  if (values.empty()) throw Error(ErrorKind::InvalidArgument, "aggregate of an empty sample");
  const auto n = values.size();
  switch (stat) {
    case Statistic::Mean:
      return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
    case Statistic::OptimalityGap: {
      double sum = 0;
      for (const double v : values) sum += std::max(0.0, gamma0 - v);
      return sum / static_cast<double>(n);
    }
    case Statistic::Median:
    case Statistic::IQM: {
      std::vector<double> s(values.begin(), values.end());
      std::sort(s.begin(), s.end());
      if (stat == Statistic::Median) return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
      const auto trim = n / 4;
      const double sum = std::accumulate(s.begin() + static_cast<std::ptrdiff_t>(trim),
                                         s.end() - static_cast<std::ptrdiff_t>(trim), 0.0);
      return sum / static_cast<double>(n - 2 * trim);
    }
  }
  return 0.0;
}

TaskValues metric_values(const EvalRunMatrix& matrix, Metric metric, Normalizer normalizer) {
  TaskValues out;
  for (const auto& r : matrix) {
    double v = 0;
    switch (metric) {
      case Metric::NormalizedScore:
        v = normalizer == Normalizer::MinMax ? normalize_minmax(r.score, r.task) : normalize_mean(r.score, r.task);
        break;
      case Metric::DeathLevel: v = r.death_level; break;
      case Metric::RawScore: v = r.score; break;
    }
    out[r.task].push_back(v);
  }
  return out;
}

void BootstrapConfig::validate() const {
  if (replicates < 100) throw Error(ErrorKind::InvalidArgument, "bootstrap needs at least 100 replicates");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidArgument, "confidence level must be in (0, 1)");
}

namespace {

// Linear interpolation between order statistics of a sorted sample.
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<double> pooled(const TaskValues& values) {
  std::vector<double> all;
  for (const auto& [task, v] : values) all.insert(all.end(), v.begin(), v.end());
  return all;
}

}  // namespace

std::vector<Interval> stratified_bootstrap(std::span<const TaskValues> groups, const GroupStatistic& stat,
                                           const BootstrapConfig& cfg) {
  cfg.validate();
  for (const auto& g : groups) {
    for (const auto& [task, v] : g) {
      if (v.empty()) throw Error(ErrorKind::InvalidArgument, "task without entries: " + canonical_string(task));
    }
  }
  const auto point = stat(groups);
  std::vector<std::vector<double>> reps(point.size(), std::vector<double>(cfg.replicates));
  std::vector<TaskValues> sample(groups.begin(), groups.end());
  for (std::size_t r = 0; r < cfg.replicates; ++r) {
    Rng rng(derive_seed(cfg.seed, r));
    for (std::size_t g = 0; g < groups.size(); ++g) {
      auto dst = sample[g].begin();
      for (const auto& [task, v] : groups[g]) {
        for (auto& x : dst->second) x = v[uniform_below(rng, v.size())];
        ++dst;
      }
    }
    const auto out = stat(sample);
    for (std::size_t k = 0; k < out.size(); ++k) reps[k][r] = out[k];
  }
  std::vector<Interval> res(point.size());
  const double tail = (1.0 - cfg.level) / 2.0;
  for (std::size_t k = 0; k < point.size(); ++k) {
    auto& v = reps[k];
    res[k].point = point[k];
    res[k].replicate_mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    std::sort(v.begin(), v.end());
    res[k].low = quantile(v, tail);
    res[k].high = quantile(v, 1.0 - tail);
  }
  return res;
}

Interval stratified_bootstrap_ci(const TaskValues& values, Statistic stat, const BootstrapConfig& cfg, double gamma0) {
  return stratified_bootstrap(
      std::span(&values, 1),
      [&](std::span<const TaskValues> g) { return std::vector<double>{aggregate(pooled(g[0]), stat, gamma0)}; },
      cfg)[0];
}

double profile_fraction(const TaskValues& values, double tau) {
  if (values.empty()) throw Error(ErrorKind::InvalidArgument, "profile of an empty matrix");
  double sum = 0;
  for (const auto& [task, v] : values) {
    const auto above = std::count_if(v.begin(), v.end(), [&](double x) { return x > tau; });
    sum += static_cast<double>(above) / static_cast<double>(v.size());
  }
  return sum / static_cast<double>(values.size());
}

std::vector<ProfilePoint> performance_profile(const TaskValues& values, std::span<const double> taus,
                                              const BootstrapConfig& cfg) {
  const auto ci = stratified_bootstrap(
      std::span(&values, 1),
      [&](std::span<const TaskValues> g) {
        std::vector<double> out;
        out.reserve(taus.size());
        for (const double t : taus) out.push_back(profile_fraction(g[0], t));
        return out;
      },
      cfg);
  std::vector<ProfilePoint> curve;
  for (std::size_t i = 0; i < taus.size(); ++i) curve.push_back({taus[i], ci[i].point, ci[i].low, ci[i].high});
  return curve;
}

std::vector<double> profile_grid(const TaskValues& values, std::size_t count) {
  const auto all = pooled(values);
  if (all.empty() || count < 2) throw Error(ErrorKind::InvalidArgument, "profile grid needs values and 2 points");
  const double lo = std::min(0.0, *std::min_element(all.begin(), all.end()));
  const double hi = *std::max_element(all.begin(), all.end());
  std::vector<double> taus(count);
  for (std::size_t i = 0; i < count; ++i) {
    taus[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  return taus;
}

namespace {

void require_same_tasks(const TaskValues& x, const TaskValues& y) {
  const bool same = x.size() == y.size() && std::equal(x.begin(), x.end(), y.begin(), [](const auto& a, const auto& b) {
                      return a.first == b.first;
                    });
  if (!same) throw Error(ErrorKind::MismatchedTasks, "algorithms were evaluated on different task sets");
}

// Win rate in the argument order the caller gave, assuming x is canonical.
double improvement_canonical(const TaskValues& x, const TaskValues& y) {
  long double sum = 0;
  for (auto xi = x.begin(), yi = y.begin(); xi != x.end(); ++xi, ++yi) {
    std::uint64_t twice_wins = 0;  // 2 per win, 1 per tie
    for (const double a : xi->second) {
      for (const double b : yi->second) twice_wins += a > b ? 2 : (a == b ? 1 : 0);
    }
    sum += static_cast<long double>(twice_wins) /
           (2.0L * static_cast<long double>(xi->second.size()) * static_cast<long double>(yi->second.size()));
  }
  return static_cast<double>(sum / static_cast<long double>(x.size()));
}

}  // namespace

double probability_of_improvement(const TaskValues& x, const TaskValues& y) {
  require_same_tasks(x, y);
  if (x.empty()) throw Error(ErrorKind::InvalidArgument, "no tasks to compare");
  // Evaluate in one fixed orientation so that P(x>y) + P(y>x) == 1 exactly.
  if (y < x) return 1.0 - improvement_canonical(y, x);
  return improvement_canonical(x, y);
}

Interval probability_of_improvement_ci(const TaskValues& x, const TaskValues& y, const BootstrapConfig& cfg) {
  require_same_tasks(x, y);
  const std::vector<TaskValues> groups{x, y};
  return stratified_bootstrap(
      groups, [](std::span<const TaskValues> g) { return std::vector<double>{probability_of_improvement(g[0], g[1])}; },
      cfg)[0];
}

// ---------------------------------------------------------------- reports

namespace {

constexpr Statistic kStatistics[] = {Statistic::Mean, Statistic::Median, Statistic::IQM, Statistic::OptimalityGap};

json interval_json(const Interval& i) {
  return {{"point", i.point}, {"low", i.low}, {"high", i.high}, {"replicate_mean", i.replicate_mean}};
}

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

}  // namespace

ReportBundle report(const std::map<std::string, EvalRunMatrix>& runs, const ReportOptions& opts) {
  opts.bootstrap.validate();
  if (runs.empty()) throw Error(ErrorKind::InvalidArgument, "report needs at least one algorithm");
  if (opts.baseline && !runs.count(*opts.baseline)) {
    throw Error(ErrorKind::InvalidArgument, "baseline '" + *opts.baseline + "' has no evaluation records");
  }

  std::map<std::string, TaskValues> values;
  for (const auto& [algo, matrix] : runs) {
    validate(matrix);
    EvalRunMatrix kept;
    for (const auto& r : matrix) {
      if (!opts.category || catalog_category(r.task) == *opts.category) kept.push_back(r);
    }
    if (kept.empty()) throw Error(ErrorKind::MismatchedTasks, "no records for '" + algo + "' in the selected tasks");
    values[algo] = metric_values(kept, opts.metric, opts.normalizer);
  }
  const auto& first = values.begin()->second;
  for (const auto& [algo, v] : values) require_same_tasks(first, v);

  json j;
  j["metric"] = to_string(opts.metric);
  j["normalizer"] = opts.metric == Metric::NormalizedScore ? json(to_string(opts.normalizer)) : json("none");
  std::string category = opts.category ? std::string(to_string(*opts.category)) : "all";
  std::transform(category.begin(), category.end(), category.begin(), [](unsigned char c) { return std::tolower(c); });
  j["category"] = category;
  j["bootstrap"] = {{"replicates", opts.bootstrap.replicates},
                    {"level", opts.bootstrap.level},
                    {"seed", opts.bootstrap.seed},
                    {"stratified_by", "task"}};
  j["optimality_gap_threshold"] = opts.gamma0;
  j["tasks"] = json::array();
  for (const auto& [task, v] : first) j["tasks"].push_back(canonical_string(task));

  std::ostringstream agg_csv, prof_csv, poi_csv;
  agg_csv << "algorithm,statistic,point,low,high,entries\n";
  prof_csv << "algorithm,tau,fraction,low,high\n";
  poi_csv << "x,y,probability,low,high\n";

  // One threshold grid shared by every curve.
  TaskValues all;
  for (const auto& [algo, v] : values) {
    for (const auto& [task, xs] : v) all[task].insert(all[task].end(), xs.begin(), xs.end());
  }
  const auto taus = profile_grid(all, opts.profile_points);

  j["algorithms"] = json::object();
  for (const auto& [algo, v] : values) {
    json a;
    std::size_t entries = 0;
    for (const auto& [task, xs] : v) entries += xs.size();
    a["entries"] = entries;
    for (const auto stat : kStatistics) {
      const auto ci = stratified_bootstrap_ci(v, stat, opts.bootstrap, opts.gamma0);
      a["aggregates"][std::string(to_string(stat))] = interval_json(ci);
      agg_csv << algo << ',' << to_string(stat) << ',' << num(ci.point) << ',' << num(ci.low) << ',' << num(ci.high)
              << ',' << entries << '\n';
    }
    a["profile"] = json::array();
    for (const auto& p : performance_profile(v, taus, opts.bootstrap)) {
      a["profile"].push_back({{"tau", p.tau}, {"fraction", p.fraction}, {"low", p.low}, {"high", p.high}});
      prof_csv << algo << ',' << num(p.tau) << ',' << num(p.fraction) << ',' << num(p.low) << ',' << num(p.high)
               << '\n';
    }
    j["algorithms"][algo] = a;
  }

  j["probability_of_improvement"] = json::array();
  for (const auto& [x, vx] : values) {
    if (opts.baseline && x != *opts.baseline) continue;
    for (const auto& [y, vy] : values) {
      if (x == y) continue;
      const auto ci = probability_of_improvement_ci(vx, vy, opts.bootstrap);
      j["probability_of_improvement"].push_back(
          {{"x", x}, {"y", y}, {"probability", ci.point}, {"low", ci.low}, {"high", ci.high}});
      poi_csv << x << ',' << y << ',' << num(ci.point) << ',' << num(ci.low) << ',' << num(ci.high) << '\n';
    }
  }
  return {j.dump(2) + "\n", agg_csv.str(), prof_csv.str(), poi_csv.str()};
}

void write_report(const std::filesystem::path& dir, const ReportBundle& bundle) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const std::string*> files[] = {{"report.json", &bundle.json},
                                                              {"aggregates.csv", &bundle.aggregates_csv},
                                                              {"profiles.csv", &bundle.profiles_csv},
                                                              {"improvement.csv", &bundle.improvement_csv}};
  for (const auto& [name, text] : files) {
    std::ofstream out(dir / name, std::ios::trunc);
    out << *text;
    if (!out) throw Error(ErrorKind::IoError, "cannot write '" + (dir / name).string() + "'");
  }
}

}  // namespace ttyrl
