#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include "ttyrl/catalog.hpp"
#include "ttyrl/random.hpp"
#include "ttyrl/repack.hpp"

namespace ttyrl {

struct EnvObservation {
  std::array<std::uint8_t, kScreenCells> tty_chars{};
  std::array<std::int8_t, kScreenCells> tty_colors{};
  std::int16_t cursor_row = 0;
  std::int16_t cursor_col = 0;

  friend bool operator==(const EnvObservation&, const EnvObservation&) = default;
};

struct EnvStep {
  EnvObservation observation;
  std::int32_t reward = 0;
  bool done = false;
  std::int64_t score = 0;
  std::int32_t depth = 1;
};

// Evaluation-side environment contract. After done, reset() must come
// before the next step().
class EnvAdapter {
 public:
  virtual ~EnvAdapter() = default;
  virtual EnvStep reset(std::uint64_t seed) = 0;
  virtual EnvStep step(int action) = 0;
  virtual CharacterSpec task() const = 0;
  virtual std::unique_ptr<EnvAdapter> clone() const = 0;
};

// Action ids understood by the stub; everything else is a no-op.
namespace actions {
inline constexpr int kNorth = 1;
inline constexpr int kEast = 2;
inline constexpr int kSouth = 3;
inline constexpr int kWest = 4;
inline constexpr int kNorthEast = 5;
inline constexpr int kSouthEast = 6;
inline constexpr int kSouthWest = 7;
inline constexpr int kNorthWest = 8;
inline constexpr int kWait = 18;
}  // namespace actions

struct GridHackConfig {
  int horizon = 200;
  int room_rows = 7;
  int room_cols = 7;
  int gold_per_level = 5;
  int gold_value = 10;
  CharacterSpec task{Role::Mon, Race::Hum, Alignment::Neu};
};

// A room with the avatar '@' and one heap of gold '$'. Picking up gold pays
// gold_value * depth and drops a new heap; every gold_per_level pickups the
// avatar descends to a fresh room. Episodes end at the horizon.
class GridHack final : public EnvAdapter {
 public:
  explicit GridHack(GridHackConfig cfg = {});

  EnvStep reset(std::uint64_t seed) override;
  EnvStep step(int action) override;
  CharacterSpec task() const override { return cfg_.task; }
  std::unique_ptr<EnvAdapter> clone() const override { return std::make_unique<GridHack>(*this); }

  const GridHackConfig& config() const noexcept { return cfg_; }
  int max_depth() const noexcept { return max_depth_; }

 private:
  void new_room();
  void place_gold();
  EnvStep snapshot(std::int32_t reward) const;

  GridHackConfig cfg_;
  Rng rng_;
  int top_ = 0, left_ = 0;
  int row_ = 0, col_ = 0;
  int gold_row_ = 0, gold_col_ = 0;
  int turn_ = 0;
  int depth_ = 1;
  int max_depth_ = 1;
  int collected_ = 0;
  std::int64_t score_ = 0;
  bool done_ = true;
  bool started_ = false;
  std::string message_;
};

// Deterministic expert: close the column gap first, then the row gap.
int scripted_policy(const EnvObservation& obs);

using Policy = std::function<int(const EnvObservation&)>;

// Runs one episode and returns it in the raw (s_t, a_t, r_{t-1}) layout.
RawEpisode record_rollout(EnvAdapter& env, std::uint64_t seed, const Policy& policy, std::uint64_t episode_id);

// Writes `count` scripted GridHack episodes as .ktr files named
// episode_<i>.ktr; returns their paths.
std::vector<std::filesystem::path> generate_gridhack(const std::filesystem::path& dir, std::size_t count,
                                                     std::uint64_t seed, const GridHackConfig& cfg = {});

}  // namespace ttyrl
