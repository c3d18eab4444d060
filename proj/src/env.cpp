#include "cmwm/env.hpp"

#include <cmath>
#include <queue>

namespace cmwm {

namespace {

bool drivable(Cell c) {
  return c == Cell::RoadRight || c == Cell::RoadOpp || c == Cell::Divider || c == Cell::Goal;
}

void set_cell(TrackSpec& t, int ix, int iy, Cell c) {
  if (ix < 0 || iy < 0 || ix >= kWorldSize || iy >= kWorldSize) return;
  uint8_t& g = t.grid[size_t(iy) * kWorldSize + size_t(ix)];
  if (c == Cell::Sidewalk && drivable(Cell(g))) return;  // road wins over sidewalk
  g = uint8_t(c);
}

// Stamp one road cross-section at path cell (px,py) for travel direction
// (dx,dy). The right-hand side of travel carries the ego lane.
void stamp_section(TrackSpec& t, int px, int py, int dx, int dy) {
  int rx = dy, ry = -dx;  // right of travel
  set_cell(t, px, py, Cell::Divider);
  for (int j = 1; j <= 2; ++j) {
    set_cell(t, px + rx * j, py + ry * j, Cell::RoadRight);
    set_cell(t, px - rx * j, py - ry * j, Cell::RoadOpp);
  }
  set_cell(t, px + rx * 3, py + ry * 3, Cell::Sidewalk);
  set_cell(t, px - rx * 3, py - ry * 3, Cell::Sidewalk);
}

struct Waypoint {
  int x, y;
};

// Axis-aligned walk appending cells from a to b.
void walk(std::vector<std::pair<int, int>>& cells, Waypoint a, Waypoint b, bool skip_first) {
  int dx = (b.x > a.x) - (b.x < a.x);
  int dy = (b.y > a.y) - (b.y < a.y);
  int x = a.x, y = a.y;
  if (!skip_first) cells.emplace_back(x, y);
  while (x != b.x || y != b.y) {
    x += dx;
    y += dy;
    cells.emplace_back(x, y);
  }
}

bool bfs_connected(const TrackSpec& t, int sx, int sy, int gx, int gy) {
  std::vector<uint8_t> seen(kWorldSize * kWorldSize, 0);
  std::queue<std::pair<int, int>> q;
  if (!drivable(t.cell(sx, sy))) return false;
  q.emplace(sx, sy);
  seen[size_t(sy) * kWorldSize + size_t(sx)] = 1;
  const int nx[4] = {1, -1, 0, 0}, ny[4] = {0, 0, 1, -1};
  while (!q.empty()) {
    auto [x, y] = q.front();
    q.pop();
    if (x == gx && y == gy) return true;
    for (int k = 0; k < 4; ++k) {
      int x2 = x + nx[k], y2 = y + ny[k];
      if (x2 < 0 || y2 < 0 || x2 >= kWorldSize || y2 >= kWorldSize) continue;
      if (seen[size_t(y2) * kWorldSize + size_t(x2)] || !drivable(t.cell(x2, y2))) continue;
      seen[size_t(y2) * kWorldSize + size_t(x2)] = 1;
      q.emplace(x2, y2);
    }
  }
  return false;
}

// Distance-to-goal over all cells: Dijkstra from the goal strip where
// entering a non-drivable cell costs 3x, so off-road shortcuts never pay
// while the field still guides stray vehicles back to the road.
void build_dist_field(TrackSpec& t) {
  constexpr double kOffroadMult = 3.0;
  const int n = kWorldSize * kWorldSize;
  std::vector<double> dist(size_t(n), std::numeric_limits<double>::infinity());
  using QE = std::pair<double, int>;
  std::priority_queue<QE, std::vector<QE>, std::greater<>> pq;
  for (int iy = 0; iy < kWorldSize; ++iy)
    for (int ix = 0; ix < kWorldSize; ++ix)
      if (t.cell(ix, iy) == Cell::Goal) {
        dist[size_t(iy) * kWorldSize + size_t(ix)] = 0.0;
        pq.emplace(0.0, iy * kWorldSize + ix);
      }
  const int nx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  const int ny[8] = {0, 0, 1, -1, 1, -1, 1, -1};
  while (!pq.empty()) {
    auto [d, idx] = pq.top();
    pq.pop();
    if (d > dist[size_t(idx)]) continue;
    int x = idx % kWorldSize, y = idx / kWorldSize;
    for (int k = 0; k < 8; ++k) {
      int x2 = x + nx[k], y2 = y + ny[k];
      if (x2 < 0 || y2 < 0 || x2 >= kWorldSize || y2 >= kWorldSize) continue;
      double step = (k < 4) ? 1.0 : std::sqrt(2.0);
      if (!drivable(t.cell(x2, y2))) step *= kOffroadMult;
      double d2 = d + step;
      double& cur = dist[size_t(y2) * kWorldSize + size_t(x2)];
      if (d2 < cur) {
        cur = d2;
        pq.emplace(d2, y2 * kWorldSize + x2);
      }
    }
  }
  t.dist_field.resize(size_t(n));
  for (int i = 0; i < n; ++i) t.dist_field[size_t(i)] = float(dist[size_t(i)]);
}

double overlap_fraction(const TrackSpec& t, double x, double y, Cell cls) {
  int hits = 0;
  const double off[3] = {-kEgoHalf, 0.0, kEgoHalf};
  for (double oy : off)
    for (double ox : off)
      if (t.cell(int(std::floor(x + ox)), int(std::floor(y + oy))) == cls) ++hits;
  return double(hits) / 9.0;
}

bool obstacle_overlap(const EnvState& s, double x, double y) {
  for (const auto& ob : s.obstacles) {
    if (s.step_index >= ob.expires_step) continue;
    if (std::abs(x - ob.x) <= kObstacleHalf + kEgoHalf &&
        std::abs(y - ob.y) <= kObstacleHalf + kEgoHalf)
      return true;
  }
  return false;
}

}  // namespace

Rgb cell_color(Cell c) {
  switch (c) {
    case Cell::RoadRight:
    case Cell::RoadOpp:
      return {96, 96, 96};
    case Cell::Divider:
      return {220, 200, 0};
    case Cell::Sidewalk:
      return {200, 200, 200};
    case Cell::Goal:
      return {30, 60, 220};
    case Cell::Offroad:
    default:
      return {40, 140, 40};
  }
}

TrackSpec make_track(int route_id, Split split) {
  if (route_id < 0 || route_id >= 5)
    throw InvalidArgument("make_track: route_id must be in [0,5), got " +
                          std::to_string(route_id));
  uint64_t base =
      mix_seed(0x524f554445ull, uint64_t(route_id) * 2 + (split == Split::Test ? 1 : 0));
  for (int attempt = 0; attempt < 10; ++attempt) {
    uint64_t seed = mix_seed(base, uint64_t(attempt));
    Rng rng(seed);
    TrackSpec t;
    t.route_id = route_id;
    t.split = split;
    t.generation_seed = seed;

    int mode = rng.uniform_int(4);  // 0/1: horizontal travel, 2/3: vertical
    int a0 = 8 + rng.uniform_int(5);
    int a1 = 51 + rng.uniform_int(5);
    int c0 = 14 + rng.uniform_int(36);
    int c1 = 14 + rng.uniform_int(36);
    int amid = 22 + rng.uniform_int(20);
    auto wp = [&](int main, int cross) {
      return (mode < 2) ? Waypoint{main, cross} : Waypoint{cross, main};
    };
    std::vector<Waypoint> wps;
    if (mode % 2 == 0)
      wps = {wp(a0, c0), wp(amid, c0), wp(amid, c1), wp(a1, c1)};
    else
      wps = {wp(a1, c0), wp(amid, c0), wp(amid, c1), wp(a0, c1)};

    t.path.clear();
    for (size_t i = 0; i + 1 < wps.size(); ++i)
      walk(t.path, wps[i], wps[i + 1], /*skip_first=*/i > 0);

    auto dir_at = [&](size_t i) {
      size_t j = std::min(i + 1, t.path.size() - 1);
      size_t k = j > 0 ? j - 1 : 0;
      int dx = t.path[j].first - t.path[k].first;
      int dy = t.path[j].second - t.path[k].second;
      if (dx == 0 && dy == 0) dx = 1;
      return std::pair<int, int>(dx, dy);
    };

    for (size_t i = 0; i < t.path.size(); ++i) {
      auto [dx, dy] = dir_at(i);
      stamp_section(t, t.path[i].first, t.path[i].second, dx, dy);
    }

    // start pose: right-lane center a couple of cells down the path
    {
      size_t i0 = 2;
      auto [dx, dy] = dir_at(i0);
      int rx = dy, ry = -dx;
      t.start_x = t.path[i0].first + 0.5 + 1.5 * rx;
      t.start_y = t.path[i0].second + 0.5 + 1.5 * ry;
      t.start_heading = std::atan2(double(dy), double(dx));
    }
    // goal point on the right lane near the path end; finish strip just beyond
    {
      size_t ig = t.path.size() - 3;
      auto [dx, dy] = dir_at(ig);
      int rx = dy, ry = -dx;
      t.goal_x = t.path[ig].first + 0.5 + 1.5 * rx;
      t.goal_y = t.path[ig].second + 0.5 + 1.5 * ry;
      auto strip = t.path[t.path.size() - 2];
      for (int j = -2; j <= 2; ++j)
        set_cell(t, strip.first + rx * j, strip.second + ry * j, Cell::Goal);
    }

    int sx = int(t.start_x), sy = int(t.start_y);
    int gx = int(t.goal_x), gy = int(t.goal_y);
    if (t.cell(sx, sy) != Cell::RoadRight || t.cell(gx, gy) != Cell::RoadRight) continue;
    if (!bfs_connected(t, sx, sy, gx, gy)) continue;

    build_dist_field(t);
    t.initial_distance = distance_at(t, t.start_x, t.start_y);
    if (t.initial_distance < 20.0) continue;  // degenerate layout, retry
    return t;
  }
  throw TrainingError("make_track: failed to generate a connected track");
}

double distance_at(const TrackSpec& track, double x, double y) {
  // bilinear over cell centers (cx+0.5, cy+0.5)
  double fx = x - 0.5, fy = y - 0.5;
  int ix = int(std::floor(fx)), iy = int(std::floor(fy));
  double tx = fx - ix, ty = fy - iy;
  auto sample = [&](int cx, int cy) -> double {
    cx = std::clamp(cx, 0, kWorldSize - 1);
    cy = std::clamp(cy, 0, kWorldSize - 1);
    return double(track.dist_field[size_t(cy) * kWorldSize + size_t(cx)]);
  };
  double v00 = sample(ix, iy), v10 = sample(ix + 1, iy);
  double v01 = sample(ix, iy + 1), v11 = sample(ix + 1, iy + 1);
  double v0 = v00 * (1 - tx) + v10 * tx;
  double v1 = v01 * (1 - tx) + v11 * tx;
  return v0 * (1 - ty) + v1 * ty;
}

std::pair<EnvState, Observation> env_reset(const TrackSpec& track, uint64_t seed,
                                           const std::optional<ObstacleScenario>& scenario,
                                           const StartJitter& jitter) {
  EnvState s;
  s.x = track.start_x;
  s.y = track.start_y;
  s.heading = track.start_heading;
  if (jitter.pos > 0 || jitter.heading > 0) {
    Rng rng(mix_seed(seed, 0x4a495454ull));
    s.x += rng.uniform(-jitter.pos, jitter.pos);
    s.y += rng.uniform(-jitter.pos, jitter.pos);
    s.heading += rng.uniform(-jitter.heading, jitter.heading);
  }
  s.speed = 0;
  s.step_index = 0;
  s.dist_to_goal = distance_at(track, s.x, s.y);

  if (scenario) {
    // walk `distance` world units along the path from the start cell
    size_t i = 2;
    double remaining = scenario->distance;
    while (i + 1 < track.path.size() && remaining > 0) {
      double dx = track.path[i + 1].first - track.path[i].first;
      double dy = track.path[i + 1].second - track.path[i].second;
      remaining -= std::hypot(dx, dy);
      ++i;
    }
    if (remaining > 0)
      throw InvalidArgument("invalid-scenario: obstacle distance beyond route length");
    size_t j = std::min(i + 1, track.path.size() - 1);
    int dx = track.path[j].first - track.path[j - 1].first;
    int dy = track.path[j].second - track.path[j - 1].second;
    int rx = dy, ry = -dx;
    Obstacle ob;
    ob.x = track.path[i].first + 0.5 + 1.5 * rx;
    ob.y = track.path[i].second + 0.5 + 1.5 * ry;
    ob.expires_step = scenario->lifetime_steps;
    if (!drivable(track.cell(int(std::floor(ob.x)), int(std::floor(ob.y)))))
      throw InvalidArgument("invalid-scenario: obstacle position off road");
    s.obstacles.push_back(ob);
  }
  return {s, render(track, s)};
}

double compute_reward(const EnvState& prev, const EnvState& cur) {
  return kRewardWDist * (prev.dist_to_goal - cur.dist_to_goal) +
         kRewardWSpeed * (cur.speed - prev.speed) -
         kRewardWCollision * (cur.cum_collision - prev.cum_collision) -
         kRewardWSidewalk * (cur.cum_sidewalk - prev.cum_sidewalk) -
         kRewardWOpposite * (cur.cum_opposite - prev.cum_opposite);
}

StepResult env_step(const TrackSpec& track, const EnvState& state, Action action) {
  if (state.done) throw ContractViolation("env_step: step after done");
  if (action.index < 0 || action.index >= kNumActions)
    throw InvalidArgument("env_step: action index out of range");

  EnvState s = state;
  s.heading += kTurnRate * action.steer();
  if (s.heading > M_PI) s.heading -= 2 * M_PI;
  if (s.heading < -M_PI) s.heading += 2 * M_PI;
  s.speed = std::clamp(s.speed + kAccel * action.throttle(), 0.0, kMaxSpeed);

  double nx = s.x + s.speed * std::cos(s.heading);
  double ny = s.y + s.speed * std::sin(s.heading);
  nx = std::clamp(nx, 0.5, kWorldSize - 0.5);
  ny = std::clamp(ny, 0.5, kWorldSize - 0.5);

  if (obstacle_overlap(s, nx, ny)) {
    // blocked: one collision event, vehicle stops in place
    s.cum_collision += 1.0;
    s.speed = 0.0;
  } else {
    s.x = nx;
    s.y = ny;
  }

  s.cum_sidewalk += overlap_fraction(track, s.x, s.y, Cell::Sidewalk);
  s.cum_opposite += overlap_fraction(track, s.x, s.y, Cell::RoadOpp);
  s.step_index += 1;
  s.dist_to_goal = distance_at(track, s.x, s.y);
  s.done = (s.dist_to_goal < kGoalRadius) || (s.step_index >= kMaxEpisodeSteps);

  StepResult res;
  res.reward = compute_reward(state, s);
  res.done = s.done;
  res.obs = render(track, s);
  res.state = std::move(s);
  return res;
}

Observation render(const TrackSpec& track, const EnvState& state) {
  Observation obs;
  const double ch = std::cos(state.heading), sh = std::sin(state.heading);
  for (int row = 0; row < kObsSize; ++row) {
    for (int col = 0; col < kObsSize; ++col) {
      double fwd = double(kEgoAnchorRow - row) / kPixelsPerUnit;
      double lat = double(col - kEgoAnchorCol) / kPixelsPerUnit;
      // ego frame: forward along heading, lateral to the right of heading
      double wx = state.x + ch * fwd + sh * lat;
      double wy = state.y + sh * fwd - ch * lat;
      Rgb c = cell_color(track.cell(int(std::floor(wx)), int(std::floor(wy))));
      for (const auto& ob : state.obstacles) {
        if (state.step_index >= ob.expires_step) continue;
        if (std::abs(wx - ob.x) <= kObstacleHalf && std::abs(wy - ob.y) <= kObstacleHalf) {
          c = kObstacleColor;
          break;
        }
      }
      uint8_t* px = obs.at(row, col);
      px[0] = c.r;
      px[1] = c.g;
      px[2] = c.b;
    }
  }
  // ego sprite, fixed pixels around the anchor
  for (int row = kEgoAnchorRow - 1; row <= kEgoAnchorRow + 1; ++row)
    for (int col = kEgoAnchorCol - 1; col <= kEgoAnchorCol + 1; ++col) {
      uint8_t* px = obs.at(row, col);
      px[0] = kEgoColor.r;
      px[1] = kEgoColor.g;
      px[2] = kEgoColor.b;
    }
  uint8_t* tip = obs.at(kEgoAnchorRow - 2, kEgoAnchorCol);
  tip[0] = kEgoColor.r;
  tip[1] = kEgoColor.g;
  tip[2] = kEgoColor.b;
  return obs;
}

}  // namespace cmwm
