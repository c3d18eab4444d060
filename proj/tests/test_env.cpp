#include <doctest.h>

#include <queue>
#include <set>

#include "cmwm/env.hpp"

using namespace cmwm;

TEST_SUITE_BEGIN("env");

namespace {

// independent BFS oracle over drivable cells (4-connectivity)
bool oracle_connected(const TrackSpec& t) {
  auto road = [&](int x, int y) {
    Cell c = t.cell(x, y);
    return c == Cell::RoadRight || c == Cell::RoadOpp || c == Cell::Divider || c == Cell::Goal;
  };
  int sx = int(t.start_x), sy = int(t.start_y);
  int gx = int(t.goal_x), gy = int(t.goal_y);
  std::set<std::pair<int, int>> seen;
  std::queue<std::pair<int, int>> q;
  q.emplace(sx, sy);
  seen.emplace(sx, sy);
  while (!q.empty()) {
    auto [x, y] = q.front();
    q.pop();
    if (x == gx && y == gy) return true;
    const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      int x2 = x + dx[k], y2 = y + dy[k];
      if (x2 < 0 || y2 < 0 || x2 >= kWorldSize || y2 >= kWorldSize) continue;
      if (!road(x2, y2) || seen.count({x2, y2})) continue;
      seen.emplace(x2, y2);
      q.emplace(x2, y2);
    }
  }
  return false;
}

Action coast() { return Action::from_parts(0, 0); }
Action full_throttle() { return Action::from_parts(0, 1); }

bool has_obstacle_pixels(const Observation& obs) {
  for (int r = 0; r < Observation::H; ++r)
    for (int c = 0; c < Observation::W; ++c) {
      const uint8_t* p = obs.at(r, c);
      if (p[0] == kObstacleColor.r && p[1] == kObstacleColor.g && p[2] == kObstacleColor.b)
        return true;
    }
  return false;
}

}  // namespace

TEST_CASE("make_track is deterministic and splits differ") {
  TrackSpec a = make_track(0, Split::Train);
  TrackSpec b = make_track(0, Split::Train);
  CHECK(a == b);
  TrackSpec c = make_track(0, Split::Test);
  CHECK_FALSE(a.grid == c.grid);
}

TEST_CASE("route_id out of range rejected") {
  CHECK_THROWS_AS(make_track(5, Split::Train), InvalidArgument);
  CHECK_THROWS_AS(make_track(-1, Split::Test), InvalidArgument);
}

TEST_CASE("all tracks connect start to goal (BFS oracle)") {
  for (int r = 0; r < 5; ++r) {
    CHECK(oracle_connected(make_track(r, Split::Train)));
    CHECK(oracle_connected(make_track(r, Split::Test)));
  }
}

TEST_CASE("start and goal lie on right-lane cells") {
  for (int r = 0; r < 5; ++r) {
    TrackSpec t = make_track(r, Split::Train);
    CHECK(t.cell(int(t.start_x), int(t.start_y)) == Cell::RoadRight);
    CHECK(t.cell(int(t.goal_x), int(t.goal_y)) == Cell::RoadRight);
  }
}

TEST_CASE("reset renders ego color at the anchor pixel") {
  TrackSpec t = make_track(1, Split::Train);
  auto [s, obs] = env_reset(t, 7);
  const uint8_t* p = obs.at(kEgoAnchorRow, kEgoAnchorCol);
  CHECK(p[0] == kEgoColor.r);
  CHECK(p[1] == kEgoColor.g);
  CHECK(p[2] == kEgoColor.b);
  CHECK(s.speed == 0.0);
  CHECK(s.step_index == 0);
}

TEST_CASE("scenario places obstacle 10 units ahead along the lane") {
  TrackSpec t = make_track(0, Split::Train);
  ObstacleScenario sc{10.0, 50};
  auto [s, obs] = env_reset(t, 3, sc);
  REQUIRE(s.obstacles.size() == 1);
  // reconstruct along-path distance from the start cell to the obstacle cell
  double best = 1e9;
  double walked = 0;
  for (size_t i = 2; i + 1 < t.path.size(); ++i) {
    double ox = t.path[i].first + 0.5, oy = t.path[i].second + 0.5;
    double lateral = std::hypot(s.obstacles[0].x - ox, s.obstacles[0].y - oy);
    if (lateral < 1.6) best = std::min(best, std::abs(walked - 10.0));
    walked += 1.0;
  }
  CHECK(best < 1.0);
  CHECK(has_obstacle_pixels(obs));
}

TEST_CASE("scenario beyond route length is invalid") {
  TrackSpec t = make_track(0, Split::Train);
  CHECK_THROWS_AS(env_reset(t, 3, ObstacleScenario{1e6, 50}), InvalidArgument);
}

TEST_CASE("obstacle disappears after its lifetime") {
  TrackSpec t = make_track(0, Split::Train);
  auto [s, obs0] = env_reset(t, 3, ObstacleScenario{10.0, 50});
  CHECK(has_obstacle_pixels(obs0));
  EnvState s2 = s;
  Observation last;
  for (int i = 0; i < 51; ++i) {
    auto res = env_step(t, s2, coast());
    s2 = res.state;
    last = res.obs;
  }
  CHECK(s2.step_index == 51);
  CHECK_FALSE(has_obstacle_pixels(last));
}

TEST_CASE("coast at zero speed leaves position and reward unchanged") {
  TrackSpec t = make_track(2, Split::Train);
  auto [s, obs] = env_reset(t, 1);
  auto res = env_step(t, s, coast());
  CHECK(res.state.x == s.x);
  CHECK(res.state.y == s.y);
  CHECK(res.reward == doctest::Approx(0.0));
}

TEST_CASE("episode ends at 300 steps without reaching the goal") {
  TrackSpec t = make_track(0, Split::Train);
  auto [s, obs] = env_reset(t, 1);
  EnvState cur = s;
  int steps = 0;
  while (!cur.done) {
    auto res = env_step(t, cur, coast());
    cur = res.state;
    ++steps;
    REQUIRE(steps <= kMaxEpisodeSteps);
  }
  CHECK(steps == kMaxEpisodeSteps);
  CHECK_THROWS_AS(env_step(t, cur, coast()), ContractViolation);
}

TEST_CASE("colliding step increments c_t by one and applies the penalty once") {
  TrackSpec t = make_track(0, Split::Train);
  auto [s, obs] = env_reset(t, 1, ObstacleScenario{10.0, 200});
  EnvState cur = s;
  bool collided = false;
  for (int i = 0; i < 30 && !collided; ++i) {
    EnvState prev = cur;
    auto res = env_step(t, cur, full_throttle());
    cur = res.state;
    if (cur.cum_collision > prev.cum_collision) {
      collided = true;
      CHECK(cur.cum_collision - prev.cum_collision == doctest::Approx(1.0));
      double expected = kRewardWDist * (prev.dist_to_goal - cur.dist_to_goal) +
                        kRewardWSpeed * (cur.speed - prev.speed) - kRewardWCollision;
      CHECK(res.reward == doctest::Approx(expected));
      CHECK(cur.speed == 0.0);  // blocked
    }
  }
  CHECK(collided);
}

TEST_CASE("compute_reward unit cases") {
  EnvState a;
  a.dist_to_goal = 30.0;
  EnvState b = a;
  SUBCASE("no change gives zero") { CHECK(compute_reward(a, b) == doctest::Approx(0.0)); }
  SUBCASE("one unit of progress gives +1") {
    b.dist_to_goal = 29.0;
    CHECK(compute_reward(a, b) == doctest::Approx(1.0));
  }
  SUBCASE("sidewalk accumulator 0 to 1 gives -2") {
    b.cum_sidewalk = 1.0;
    CHECK(compute_reward(a, b) == doctest::Approx(-2.0));
  }
}

TEST_CASE("cumulative reward telescopes over counters") {
  TrackSpec t = make_track(3, Split::Train);
  auto [s0, obs] = env_reset(t, 9);
  Rng rng(17);
  EnvState cur = s0;
  double total = 0;
  for (int i = 0; i < 120 && !cur.done; ++i) {
    auto res = env_step(t, cur, Action{rng.uniform_int(kNumActions)});
    total += res.reward;
    cur = res.state;
  }
  double closed = kRewardWDist * (s0.dist_to_goal - cur.dist_to_goal) +
                  kRewardWSpeed * (cur.speed - s0.speed) - kRewardWCollision * cur.cum_collision -
                  kRewardWSidewalk * cur.cum_sidewalk - kRewardWOpposite * cur.cum_opposite;
  CHECK(total == doctest::Approx(closed).epsilon(1e-9));
}

TEST_CASE("no-event accelerate-brake run earns exactly the distance delta") {
  TrackSpec t = make_track(0, Split::Train);
  auto [s0, obs] = env_reset(t, 1);
  EnvState cur = s0;
  double total = 0;
  for (int i = 0; i < 3; ++i) {
    auto res = env_step(t, cur, Action::from_parts(0, 1));
    total += res.reward;
    cur = res.state;
  }
  for (int i = 0; i < 3; ++i) {
    auto res = env_step(t, cur, Action::from_parts(0, -1));
    total += res.reward;
    cur = res.state;
  }
  REQUIRE(cur.speed == 0.0);
  REQUIRE(cur.cum_collision == 0.0);
  REQUIRE(cur.cum_sidewalk == 0.0);
  REQUIRE(cur.cum_opposite == 0.0);
  CHECK(total == doctest::Approx(kRewardWDist * (s0.dist_to_goal - cur.dist_to_goal)));
  CHECK(cur.dist_to_goal < s0.dist_to_goal);  // actually moved forward
}

TEST_CASE("identical seeds and actions give bitwise-identical streams") {
  TrackSpec t = make_track(4, Split::Train);
  auto run = [&](std::vector<Observation>& frames, std::vector<double>& rewards) {
    auto [s, obs] = env_reset(t, 5);
    frames.push_back(obs);
    Rng rng(99);
    EnvState cur = s;
    for (int i = 0; i < 60 && !cur.done; ++i) {
      auto res = env_step(t, cur, Action{rng.uniform_int(kNumActions)});
      frames.push_back(res.obs);
      rewards.push_back(res.reward);
      cur = res.state;
    }
  };
  std::vector<Observation> fa, fb;
  std::vector<double> ra, rb;
  run(fa, ra);
  run(fb, rb);
  REQUIRE(fa.size() == fb.size());
  for (size_t i = 0; i < fa.size(); ++i) CHECK(fa[i].pixels == fb[i].pixels);
  CHECK(ra == rb);
}

TEST_CASE("render is a pure function of state") {
  TrackSpec t = make_track(1, Split::Train);
  auto [s, obs] = env_reset(t, 2);
  Observation a = render(t, s);
  Observation b = render(t, s);
  CHECK(a.pixels == b.pixels);
}

TEST_CASE("action decode covers the 3x3 grid uniquely") {
  std::set<std::pair<int, int>> seen;
  for (int i = 0; i < kNumActions; ++i) {
    Action a{i};
    CHECK(a.steer() >= -1);
    CHECK(a.steer() <= 1);
    CHECK(a.throttle() >= -1);
    CHECK(a.throttle() <= 1);
    seen.insert({a.steer(), a.throttle()});
    CHECK(Action::from_parts(a.steer(), a.throttle()).index == i);
  }
  CHECK(seen.size() == size_t(kNumActions));
}

TEST_CASE("speed and distance invariants hold over a random rollout") {
  TrackSpec t = make_track(2, Split::Train);
  auto [s, obs] = env_reset(t, 4);
  Rng rng(5);
  EnvState cur = s;
  double prev_c = 0, prev_sw = 0, prev_o = 0;
  for (int i = 0; i < 150 && !cur.done; ++i) {
    auto res = env_step(t, cur, Action{rng.uniform_int(kNumActions)});
    cur = res.state;
    CHECK(cur.speed >= 0.0);
    CHECK(cur.speed <= kMaxSpeed);
    CHECK(cur.dist_to_goal >= 0.0);
    CHECK(cur.cum_collision >= prev_c);
    CHECK(cur.cum_sidewalk >= prev_sw);
    CHECK(cur.cum_opposite >= prev_o);
    prev_c = cur.cum_collision;
    prev_sw = cur.cum_sidewalk;
    prev_o = cur.cum_opposite;
  }
}

TEST_SUITE_END();
