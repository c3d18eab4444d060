#include "cmwm/episodes.hpp"

#include <json.hpp>

#include <cstring>

namespace cmwm {

using nlohmann::json;

bool Episode::operator==(const Episode& o) const {
  if (route_id != o.route_id || seed != o.seed || length() != o.length()) return false;
  if (scenario.has_value() != o.scenario.has_value()) return false;
  if (scenario && (scenario->distance != o.scenario->distance ||
                   scenario->lifetime_steps != o.scenario->lifetime_steps))
    return false;
  for (int i = 0; i < length(); ++i)
    if (frames[size_t(i)].pixels != o.frames[size_t(i)].pixels) return false;
  return actions == o.actions && rewards == o.rewards && dones == o.dones;
}

namespace {

template <typename T>
void put(std::vector<uint8_t>& buf, T v) {
  size_t off = buf.size();
  buf.resize(off + sizeof(T));
  std::memcpy(buf.data() + off, &v, sizeof(T));
}

template <typename T>
T take(const std::vector<uint8_t>& buf, size_t& off, const char* what) {
  if (off + sizeof(T) > buf.size())
    throw FormatError(std::string("episode file truncated while reading ") + what);
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

std::string episode_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ep_%06d.bin", index);
  return buf;
}

void save_episode(const Episode& ep, const std::filesystem::path& path) {
  const uint32_t t = uint32_t(ep.length());
  std::vector<uint8_t> buf;
  buf.reserve(15 + size_t(t) * (Observation::H * Observation::W * Observation::C + 6));
  buf.insert(buf.end(), epfmt::kMagic, epfmt::kMagic + 4);
  put<uint16_t>(buf, epfmt::kVersion);
  put<uint32_t>(buf, t);
  put<uint16_t>(buf, uint16_t(Observation::H));
  put<uint16_t>(buf, uint16_t(Observation::W));
  put<uint8_t>(buf, uint8_t(Observation::C));
  for (const auto& f : ep.frames) buf.insert(buf.end(), f.pixels.begin(), f.pixels.end());
  buf.insert(buf.end(), ep.actions.begin(), ep.actions.end());
  for (float r : ep.rewards) put<float>(buf, r);
  buf.insert(buf.end(), ep.dones.begin(), ep.dones.end());
  write_file(path, buf.data(), buf.size());
}

Episode load_episode(const std::filesystem::path& path) {
  std::vector<uint8_t> buf = read_file(path);
  if (buf.size() < 4 || std::memcmp(buf.data(), epfmt::kMagic, 4) != 0)
    throw FormatError("episode file has bad magic: " + path.string());
  size_t off = 4;
  uint16_t version = take<uint16_t>(buf, off, "version");
  if (version != epfmt::kVersion)
    throw FormatError("episode file version mismatch (got " + std::to_string(version) + ")");
  uint32_t t = take<uint32_t>(buf, off, "length");
  uint16_t h = take<uint16_t>(buf, off, "height");
  uint16_t w = take<uint16_t>(buf, off, "width");
  uint8_t c = take<uint8_t>(buf, off, "channels");
  if (h != Observation::H || w != Observation::W || c != Observation::C)
    throw FormatError("episode file has unexpected frame geometry");
  size_t frame_bytes = size_t(h) * w * c;
  size_t expect = off + size_t(t) * (frame_bytes + 1 + 4 + 1);
  if (buf.size() < expect) throw FormatError("episode file truncated: " + path.string());
  if (buf.size() > expect) throw FormatError("episode file has trailing bytes: " + path.string());
  Episode ep;
  ep.frames.resize(t);
  for (uint32_t i = 0; i < t; ++i) {
    std::memcpy(ep.frames[i].pixels.data(), buf.data() + off, frame_bytes);
    off += frame_bytes;
  }
  ep.actions.assign(buf.begin() + long(off), buf.begin() + long(off + t));
  off += t;
  ep.rewards.resize(t);
  std::memcpy(ep.rewards.data(), buf.data() + off, size_t(t) * 4);
  off += size_t(t) * 4;
  ep.dones.assign(buf.begin() + long(off), buf.begin() + long(off + t));
  return ep;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format_version"] = epfmt::kVersion;
  manifest["total_transitions"] = ds.total_transitions();
  manifest["env"] = {{"jitter_pos", ds.env_meta.jitter_pos},
                     {"jitter_heading", ds.env_meta.jitter_heading},
                     {"split", ds.env_meta.split == Split::Train ? "train" : "test"}};
  json eps = json::array();
  for (size_t i = 0; i < ds.episodes.size(); ++i) {
    const Episode& ep = ds.episodes[i];
    json e;
    e["file"] = episode_filename(int(i));
    e["route_id"] = ep.route_id;
    e["seed"] = ep.seed;
    e["length"] = ep.length();
    if (ep.scenario)
      e["scenario"] = {{"distance", ep.scenario->distance},
                       {"lifetime_steps", ep.scenario->lifetime_steps}};
    else
      e["scenario"] = nullptr;
    eps.push_back(e);
    save_episode(ep, dir / episode_filename(int(i)));
  }
  manifest["episodes"] = eps;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  auto mpath = dir / "manifest.json";
  if (!std::filesystem::exists(mpath))
    throw FormatError("dataset manifest missing: " + mpath.string());
  json manifest;
  try {
    auto bytes = read_file(mpath);
    manifest = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw FormatError("dataset manifest is not valid JSON: " + std::string(e.what()));
  }
  if (manifest.value("format_version", -1) != epfmt::kVersion)
    throw FormatError("dataset manifest version mismatch");
  Dataset ds;
  if (manifest.contains("env")) {
    ds.env_meta.jitter_pos = manifest["env"].value("jitter_pos", 0.0);
    ds.env_meta.jitter_heading = manifest["env"].value("jitter_heading", 0.0);
    ds.env_meta.split = manifest["env"].value("split", "train") == std::string("test")
                            ? Split::Test
                            : Split::Train;
  }
  for (const auto& e : manifest["episodes"]) {
    Episode ep = load_episode(dir / e["file"].get<std::string>());
    ep.route_id = e["route_id"].get<int>();
    ep.seed = e["seed"].get<uint64_t>();
    if (!e["scenario"].is_null())
      ep.scenario = ObstacleScenario{e["scenario"]["distance"].get<double>(),
                                     e["scenario"]["lifetime_steps"].get<int>()};
    if (ep.length() != e["length"].get<int>())
      throw FormatError("dataset manifest length mismatch for " + e["file"].get<std::string>());
    ds.episodes.push_back(std::move(ep));
  }
  if (ds.total_transitions() != manifest["total_transitions"].get<int64_t>())
    throw FormatError("dataset manifest transition count mismatch");
  return ds;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, int64_t test_tail) {
  int64_t total = ds.total_transitions();
  if (test_tail >= total)
    throw InvalidArgument("split_train_test: test_tail >= total transitions");
  Dataset train, test;
  train.env_meta = test.env_meta = ds.env_meta;
  int64_t tail = 0;
  size_t cut = ds.episodes.size();
  while (cut > 0 && tail < test_tail) {
    --cut;
    tail += ds.episodes[cut].length();
  }
  for (size_t i = 0; i < ds.episodes.size(); ++i)
    (i < cut ? train : test).episodes.push_back(ds.episodes[i]);
  return {train, test};
}

Dataset collect(CollectPolicy& policy, const CollectConfig& cfg, uint64_t rng_seed) {
  if (cfg.budget_steps <= 0) throw InvalidArgument("collect: budget_steps must be positive");
  std::vector<TrackSpec> tracks;
  for (int r = 0; r < 5; ++r) tracks.push_back(make_track(r, cfg.split));

  Dataset ds;
  ds.env_meta.jitter_pos = cfg.jitter.pos;
  ds.env_meta.jitter_heading = cfg.jitter.heading;
  ds.env_meta.split = cfg.split;

  int64_t total = 0;
  int ep_index = 0;
  while (total < cfg.budget_steps) {
    int route = ep_index % 5;
    uint64_t ep_seed = mix_seed(rng_seed, uint64_t(ep_index));
    Rng ep_rng(mix_seed(ep_seed, 0x5343454eull));

    Episode ep;
    ep.route_id = route;
    ep.seed = ep_seed;
    std::optional<ObstacleScenario> scenario;
    if (cfg.obstacle_rate > 0 && ep_rng.uniform() < cfg.obstacle_rate) {
      scenario = ObstacleScenario{ep_rng.uniform(cfg.obstacle_min_dist, cfg.obstacle_max_dist),
                                  cfg.obstacle_lifetime};
      ep.scenario = scenario;
    }

    auto [state, obs] = env_reset(tracks[size_t(route)], ep_seed, scenario, cfg.jitter);
    EnvState cur = state;
    Observation frame = obs;
    while (!cur.done) {
      Action a = policy.act(frame);
      StepResult res = env_step(tracks[size_t(route)], cur, a);
      bool true_done = res.done && res.state.dist_to_goal < kGoalRadius;
      policy.observe(res.reward, res.done);
      ep.frames.push_back(frame);
      ep.actions.push_back(uint8_t(a.index));
      ep.rewards.push_back(float(res.reward));
      // timeout truncation is not task termination; the stored done flag
      // marks goal-reached endings only
      ep.dones.push_back(uint8_t(true_done ? 1 : 0));
      cur = res.state;
      frame = res.obs;
    }
    total += ep.length();
    ds.episodes.push_back(std::move(ep));
    ++ep_index;
  }
  return ds;
}

}  // namespace cmwm
