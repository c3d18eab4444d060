#include <doctest.h>

#include "cmwm/episodes.hpp"

using namespace cmwm;

TEST_SUITE_BEGIN("episodes");

namespace {

Dataset tiny_dataset(int n_episodes, int budget_per_ep) {
  RandomPolicy pol(77);
  CollectConfig cfg;
  cfg.budget_steps = int64_t(n_episodes) * budget_per_ep;
  Dataset ds = collect(pol, cfg, 11);
  return ds;
}

std::filesystem::path tmpdir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("cmwm_eptest_" + tag);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("coast policy with budget 300 yields exactly one 300-step episode") {
  CoastPolicy pol;
  CollectConfig cfg;
  cfg.budget_steps = 300;
  Dataset ds = collect(pol, cfg, 1);
  REQUIRE(ds.episodes.size() == 1);
  CHECK(ds.episodes[0].length() == 300);
  CHECK(ds.total_transitions() == 300);
  // truncation is stored as d = false
  CHECK(ds.episodes[0].dones.back() == 0);
}

TEST_CASE("collect reaches the requested budget and cycles routes") {
  Dataset ds = tiny_dataset(4, 300);
  CHECK(ds.total_transitions() >= 1200);
  REQUIRE(ds.episodes.size() >= 4);
  for (size_t i = 0; i < ds.episodes.size(); ++i)
    CHECK(ds.episodes[i].route_id == int(i % 5));
}

TEST_CASE("collect is deterministic") {
  RandomPolicy p1(5), p2(5);
  CollectConfig cfg;
  cfg.budget_steps = 600;
  Dataset a = collect(p1, cfg, 9);
  Dataset b = collect(p2, cfg, 9);
  CHECK(a == b);
}

TEST_CASE("save/load round trip is exact") {
  Dataset ds = tiny_dataset(2, 300);
  auto dir = tmpdir("roundtrip");
  save_dataset(ds, dir);
  Dataset back = load_dataset(dir);
  CHECK(back == ds);
  CHECK(back.env_meta.jitter_pos == ds.env_meta.jitter_pos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("empty dataset round trips") {
  Dataset ds;
  auto dir = tmpdir("empty");
  save_dataset(ds, dir);
  Dataset back = load_dataset(dir);
  CHECK(back.episodes.empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupting any header byte fails the load with a format error") {
  Dataset ds;
  ds.episodes.push_back(Episode{});
  Episode& ep = ds.episodes.back();
  ep.frames.emplace_back();
  ep.actions.push_back(3);
  ep.rewards.push_back(0.5f);
  ep.dones.push_back(1);
  auto dir = tmpdir("fuzz");
  save_dataset(ds, dir);
  auto file = dir / "ep_000000.bin";
  auto pristine = read_file(file);
  for (size_t i = 0; i < 15; ++i) {  // full header: magic..channels
    auto bad = pristine;
    bad[i] ^= 0x5a;
    write_file(file, bad.data(), bad.size());
    CHECK_THROWS_AS(static_cast<void>(load_dataset(dir)), FormatError);
  }
  write_file(file, pristine.data(), pristine.size());
  CHECK_NOTHROW(static_cast<void>(load_dataset(dir)));
  std::filesystem::remove_all(dir);
}

TEST_CASE("truncated episode file is rejected") {
  Dataset ds = tiny_dataset(1, 300);
  auto dir = tmpdir("trunc");
  save_dataset(ds, dir);
  auto file = dir / "ep_000000.bin";
  auto bytes = read_file(file);
  bytes.resize(bytes.size() - 10);
  write_file(file, bytes.data(), bytes.size());
  CHECK_THROWS_WITH_AS(static_cast<void>(load_dataset(dir)), doctest::Contains("truncated"),
                       FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("split_train_test partitions at an episode boundary") {
  Dataset ds = tiny_dataset(5, 300);
  int64_t total = ds.total_transitions();
  auto [train, test] = split_train_test(ds, total / 3);
  CHECK(test.total_transitions() >= total / 3);
  CHECK(train.total_transitions() + test.total_transitions() == total);
  CHECK(train.episodes.size() + test.episodes.size() == ds.episodes.size());
  // chronological: train episodes come first
  for (size_t i = 0; i < train.episodes.size(); ++i) CHECK(train.episodes[i] == ds.episodes[i]);
  for (size_t i = 0; i < test.episodes.size(); ++i)
    CHECK(test.episodes[i] == ds.episodes[train.episodes.size() + i]);
}

TEST_CASE("split with zero tail leaves the test set empty") {
  Dataset ds = tiny_dataset(2, 300);
  auto [train, test] = split_train_test(ds, 0);
  CHECK(test.episodes.empty());
  CHECK(train.total_transitions() == ds.total_transitions());
}

TEST_CASE("split with tail >= total is invalid") {
  Dataset ds = tiny_dataset(1, 300);
  CHECK_THROWS_AS(split_train_test(ds, ds.total_transitions()), InvalidArgument);
}

TEST_CASE("stored rewards replay exactly through the environment") {
  RandomPolicy pol(123);
  CollectConfig cfg;
  cfg.budget_steps = 600;
  cfg.obstacle_rate = 0.5;
  cfg.jitter.pos = 0.3;
  cfg.jitter.heading = 0.05;
  Dataset ds = collect(pol, cfg, 21);
  for (const Episode& ep : ds.episodes) {
    TrackSpec track = make_track(ep.route_id, ds.env_meta.split);
    StartJitter jit{ds.env_meta.jitter_pos, ds.env_meta.jitter_heading};
    auto [state, obs] = env_reset(track, ep.seed, ep.scenario, jit);
    EnvState cur = state;
    for (int t = 0; t < ep.length(); ++t) {
      REQUIRE(obs.pixels == ep.frames[size_t(t)].pixels);
      StepResult res = env_step(track, cur, Action{int(ep.actions[size_t(t)])});
      CHECK(float(res.reward) == ep.rewards[size_t(t)]);
      cur = res.state;
      obs = res.obs;
    }
  }
}

TEST_SUITE_END();
