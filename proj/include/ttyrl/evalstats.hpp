#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttyrl/catalog.hpp"

namespace ttyrl {

struct EvalRecord {
  CharacterSpec task;
  std::uint64_t seed = 0;
  std::uint64_t episode = 0;
  double score = 0.0;
  std::int32_t death_level = 1;

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

// Evaluation entries of one algorithm.
using EvalRunMatrix = std::vector<EvalRecord>;

// Scores >= 0, death levels >= 1, equal episode counts per (task, seed).
void validate(const EvalRunMatrix& matrix);

// JSON lines: {"task": "mon-hum-neu", "seed": 0, "episode": 3, "score": 120,
// "death_level": 2}; an optional "algorithm" member is returned separately.
std::map<std::string, EvalRunMatrix> read_eval_records(std::istream& in, const std::string& default_algorithm);
std::map<std::string, EvalRunMatrix> read_eval_records(const std::filesystem::path& path);
void write_eval_records(std::ostream& out, const EvalRunMatrix& matrix, const std::string& algorithm = {});

// Percent of the task's [min, max] span, clamped below at 0.
double normalize_minmax(double score, const CharacterSpec& task);
// Percent of the task's mean score.
double normalize_mean(double score, const CharacterSpec& task);

enum class Normalizer : std::uint8_t { MinMax, Mean };
enum class Metric : std::uint8_t { NormalizedScore, DeathLevel, RawScore };
enum class Statistic : std::uint8_t { Mean, Median, IQM, OptimalityGap };

std::string_view to_string(Normalizer n);
std::string_view to_string(Metric m);
std::string_view to_string(Statistic s);
Normalizer parse_normalizer(std::string_view text);
Metric parse_metric(std::string_view text);

inline constexpr double kDefaultGapThreshold = 100.0;

// IQM trims floor(n/4) values from each end of the sorted sample;
// the optimality gap is mean(max(0, gamma0 - x)).
double aggregate(std::span<const double> values, Statistic stat, double gamma0 = kDefaultGapThreshold);

// Metric values grouped by task.
using TaskValues = std::map<CharacterSpec, std::vector<double>>;
TaskValues metric_values(const EvalRunMatrix& matrix, Metric metric, Normalizer normalizer = Normalizer::MinMax);

struct BootstrapConfig {
  std::size_t replicates = 2000;
  double level = 0.95;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Interval {
  // Statistic of the original sample.
  double point = 0.0;
  double low = 0.0;
  double high = 0.0;
  // Mean over bootstrap replicates.
  double replicate_mean = 0.0;
};

// Resamples every task of every group with replacement, independently, and
// evaluates `stat` on each replicate. One interval per statistic output.
using GroupStatistic = std::function<std::vector<double>(std::span<const TaskValues>)>;
std::vector<Interval> stratified_bootstrap(std::span<const TaskValues> groups, const GroupStatistic& stat,
                                           const BootstrapConfig& cfg);

// Statistic of the values pooled across tasks.
Interval stratified_bootstrap_ci(const TaskValues& values, Statistic stat, const BootstrapConfig& cfg,
                                 double gamma0 = kDefaultGapThreshold);

struct ProfilePoint {
  double tau = 0.0;
  double fraction = 0.0;
  double low = 0.0;
  double high = 0.0;
};

// Task-averaged fraction of entries strictly above tau.
double profile_fraction(const TaskValues& values, double tau);
std::vector<ProfilePoint> performance_profile(const TaskValues& values, std::span<const double> taus,
                                              const BootstrapConfig& cfg);
// `count` evenly spaced thresholds from min(0, lowest) to the highest value.
std::vector<double> profile_grid(const TaskValues& values, std::size_t count = 101);

// Pairwise win rate with ties counted half, averaged over tasks. Throws
// MismatchedTasks when the task sets differ.
double probability_of_improvement(const TaskValues& x, const TaskValues& y);
Interval probability_of_improvement_ci(const TaskValues& x, const TaskValues& y, const BootstrapConfig& cfg);

struct ReportOptions {
  Metric metric = Metric::NormalizedScore;
  Normalizer normalizer = Normalizer::MinMax;
  std::optional<TaskCategory> category;
  // Compared against every other algorithm; all ordered pairs when unset.
  std::optional<std::string> baseline;
  BootstrapConfig bootstrap;
  double gamma0 = kDefaultGapThreshold;
  std::size_t profile_points = 101;
};

struct ReportBundle {
  std::string json;
  // Point estimates with intervals, one row per (algorithm, statistic).
  std::string aggregates_csv;
  std::string profiles_csv;
  std::string improvement_csv;
};

ReportBundle report(const std::map<std::string, EvalRunMatrix>& runs, const ReportOptions& opts);
void write_report(const std::filesystem::path& dir, const ReportBundle& bundle);

}  // namespace ttyrl
