#pragma once

#include <filesystem>
#include <optional>

#include "cmwm/env.hpp"

namespace cmwm {

// Rollout storage. An episode keeps the [s, a, r, d] stream of one run;
// a dataset is a directory of episode files plus a JSON manifest.

struct Episode {
  int route_id = 0;
  uint64_t seed = 0;
  std::optional<ObstacleScenario> scenario;
  std::vector<Observation> frames;
  std::vector<uint8_t> actions;
  std::vector<float> rewards;
  std::vector<uint8_t> dones;

  int length() const { return int(frames.size()); }

  bool operator==(const Episode& o) const;
};

struct DatasetEnvMeta {
  double jitter_pos = 0.0;
  double jitter_heading = 0.0;
  Split split = Split::Train;
};

struct Dataset {
  std::vector<Episode> episodes;
  DatasetEnvMeta env_meta;

  int64_t total_transitions() const {
    int64_t n = 0;
    for (const auto& e : episodes) n += e.length();
    return n;
  }

  bool operator==(const Dataset& o) const { return episodes == o.episodes; }
};

// Episode file layout (little-endian): magic "CMWM", version u16 = 1,
// T u32, H u16, W u16, C u8 = 3, then T*H*W*C u8 pixels, T u8 actions,
// T f32 rewards, T u8 done flags.
namespace epfmt {
constexpr char kMagic[4] = {'C', 'M', 'W', 'M'};
constexpr uint16_t kVersion = 1;
}  // namespace epfmt

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Chronological split: the test set is the last episodes totaling at least
/// `test_tail` transitions; no episode straddles the boundary.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, int64_t test_tail);

/// Behavior used to gather rollouts. Learning policies may update themselves
/// from the observe() feedback.
class CollectPolicy {
 public:
  virtual ~CollectPolicy() = default;
  virtual Action act(const Observation& obs) = 0;
  virtual void observe(double /*reward*/, bool /*done*/) {}
  virtual std::string name() const = 0;
};

class RandomPolicy : public CollectPolicy {
 public:
  explicit RandomPolicy(uint64_t seed) : rng_(seed) {}
  Action act(const Observation&) override { return Action{rng_.uniform_int(kNumActions)}; }
  std::string name() const override { return "random"; }

 private:
  Rng rng_;
};

class CoastPolicy : public CollectPolicy {
 public:
  Action act(const Observation&) override { return Action::from_parts(0, 0); }
  std::string name() const override { return "coast"; }
};

struct CollectConfig {
  int64_t budget_steps = 30000;
  double obstacle_rate = 0.0;  // fraction of episodes that get a random obstacle
  double obstacle_min_dist = 15.0;
  double obstacle_max_dist = 40.0;
  int obstacle_lifetime = 50;
  StartJitter jitter;
  Split split = Split::Train;
};

/// Cycles over the 5 routes of the split until at least budget_steps
/// transitions are stored. Deterministic given (policy state, config, seed).
Dataset collect(CollectPolicy& policy, const CollectConfig& cfg, uint64_t rng_seed);

}  // namespace cmwm
