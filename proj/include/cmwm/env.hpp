#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "cmwm/common.hpp"

namespace cmwm {

// Toy 2-D driving world. The map is a 64x64 cell grid (1 cell = 1 world
// unit); positions are continuous. Observations are egocentric 48x48 RGB
// crops rotated so the heading points up.

constexpr int kWorldSize = 64;
constexpr int kObsSize = 48;
constexpr int kMaxEpisodeSteps = 300;
constexpr int kNumActions = 9;

constexpr double kTurnRate = 0.15;     // rad per steer unit per step
constexpr double kAccel = 0.5;         // speed units per throttle unit per step
constexpr double kMaxSpeed = 3.0;
constexpr double kGoalRadius = 1.0;    // d_t below this ends the episode
constexpr double kEgoHalf = 0.4;       // ego footprint half extent
constexpr double kObstacleHalf = 1.0;  // obstacle footprint half extent

// Reward weights (distance, speed, collision, sidewalk, opposite lane).
constexpr double kRewardWDist = 1.0;
constexpr double kRewardWSpeed = 0.05;
constexpr double kRewardWCollision = 2.0;
constexpr double kRewardWSidewalk = 2.0;
constexpr double kRewardWOpposite = 2.0;

enum class Cell : uint8_t {
  Offroad = 0,
  RoadRight = 1,
  RoadOpp = 2,
  Divider = 3,
  Sidewalk = 4,
  Goal = 5,
};

enum class Split { Train, Test };

struct TrackSpec {
  int route_id = 0;
  Split split = Split::Train;
  uint64_t generation_seed = 0;
  std::array<uint8_t, kWorldSize * kWorldSize> grid{};
  double start_x = 0, start_y = 0, start_heading = 0;
  double goal_x = 0, goal_y = 0;
  // Divider-line cells from start to goal, used for lane-relative placement.
  std::vector<std::pair<int, int>> path;
  // Distance-to-goal field (world units along drivable cells), per cell center.
  std::vector<float> dist_field;
  double initial_distance = 0;

  Cell cell(int ix, int iy) const {
    if (ix < 0 || iy < 0 || ix >= kWorldSize || iy >= kWorldSize) return Cell::Offroad;
    return Cell(grid[size_t(iy) * kWorldSize + size_t(ix)]);
  }

  bool operator==(const TrackSpec& o) const {
    return route_id == o.route_id && split == o.split && generation_seed == o.generation_seed &&
           grid == o.grid && start_x == o.start_x && start_y == o.start_y &&
           start_heading == o.start_heading && goal_x == o.goal_x && goal_y == o.goal_y;
  }
};

struct ObstacleScenario {
  double distance = 10.0;   // world units ahead along the ego lane
  int lifetime_steps = 50;  // steps before the obstacle is removed
};

struct Obstacle {
  double x = 0, y = 0;
  int expires_step = 0;  // active while step_index < expires_step
};

struct EnvState {
  double x = 0, y = 0;
  double heading = 0;
  double speed = 0;
  int step_index = 0;
  double cum_collision = 0;  // c_t: collision event count
  double cum_sidewalk = 0;   // s_t: accumulated per-step sidewalk overlap
  double cum_opposite = 0;   // o_t: accumulated per-step opposite-lane overlap
  double dist_to_goal = 0;   // d_t
  bool done = false;
  std::vector<Obstacle> obstacles;
};

struct Observation {
  static constexpr int H = kObsSize, W = kObsSize, C = 3;
  std::vector<uint8_t> pixels;  // H*W*C, row-major RGB

  Observation() : pixels(size_t(H) * W * C, 0) {}
  uint8_t* at(int row, int col) { return pixels.data() + (size_t(row) * W + size_t(col)) * C; }
  const uint8_t* at(int row, int col) const {
    return pixels.data() + (size_t(row) * W + size_t(col)) * C;
  }
};

struct Action {
  int index = 0;  // in [0, 9): index = (throttle+1)*3 + (steer+1)

  int steer() const { return index % 3 - 1; }
  int throttle() const { return index / 3 - 1; }

  static Action from_parts(int steer, int throttle) {
    return Action{(throttle + 1) * 3 + (steer + 1)};
  }
};

/// Optional start-pose perturbation applied at reset (driven by the reset
/// seed); zero by default so reset is exactly the track's start pose.
struct StartJitter {
  double pos = 0.0;      // max lateral/longitudinal offset, world units
  double heading = 0.0;  // max heading offset, radians
};

struct StepResult {
  EnvState state;
  Observation obs;
  double reward = 0;
  bool done = false;
};

/// Deterministic track for a route; train and test splits use disjoint seeds.
TrackSpec make_track(int route_id, Split split);

std::pair<EnvState, Observation> env_reset(const TrackSpec& track, uint64_t seed,
                                           const std::optional<ObstacleScenario>& scenario = {},
                                           const StartJitter& jitter = {});

StepResult env_step(const TrackSpec& track, const EnvState& state, Action action);

double compute_reward(const EnvState& prev, const EnvState& cur);

Observation render(const TrackSpec& track, const EnvState& state);

/// Distance-to-goal at a continuous position (bilinear over cell centers).
double distance_at(const TrackSpec& track, double x, double y);

/// Anchor pixel of the ego vehicle in every observation.
constexpr int kEgoAnchorRow = 36;
constexpr int kEgoAnchorCol = 24;
constexpr double kPixelsPerUnit = 2.0;

struct Rgb {
  uint8_t r, g, b;
};
Rgb cell_color(Cell c);
constexpr Rgb kObstacleColor{200, 30, 30};
constexpr Rgb kEgoColor{15, 15, 20};

}  // namespace cmwm
