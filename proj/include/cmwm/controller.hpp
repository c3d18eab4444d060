#pragma once

#include "cmwm/vae.hpp"

namespace cmwm {

// PPO actor-critic over latent vectors: one shared hidden layer (tanh) that
// splits into a 9-way actor head and a scalar critic head.

struct ControllerConfig {
  int input_dim = 64;
  int hidden = 512;
  int actions = kNumActions;
};

ParamSet init_controller_params(const ControllerConfig& cfg, Rng& rng);

struct PolicyOutput {
  std::vector<float> logits;
  float value = 0;
};

PolicyOutput policy_forward(const ParamSet& params, const ControllerConfig& cfg,
                            const std::vector<float>& z);

std::vector<float> softmax(const std::vector<float>& logits);

struct ActResult {
  int action = 0;
  double logprob = 0;
  float value = 0;
};

/// Greedy picks the argmax logit (ties to the lowest index); stochastic
/// samples the categorical.
ActResult act(const ParamSet& params, const ControllerConfig& cfg, const std::vector<float>& z,
              Rng& rng, bool greedy);

struct PpoConfig {
  float clip_epsilon = 0.1f;  // online default; offline runs use 0.01
  float gamma = 0.99f;
  float gae_lambda = 0.95f;
  int epochs_per_batch = 4;
  int minibatch = 256;
  float value_coef = 0.5f;
  float entropy_coef = 0.01f;
  int rollout_horizon = 512;
  float lr = 3e-4f;
};

struct TrajectoryBatch {
  std::vector<std::vector<float>> z;
  std::vector<int> actions;
  std::vector<float> logprob_old;
  std::vector<float> rewards;
  std::vector<uint8_t> dones;
  std::vector<float> values_old;
  std::vector<float> advantages;  // raw GAE until ppo_update normalizes its copy
  std::vector<float> returns;

  int size() const { return int(z.size()); }
  void clear() {
    z.clear();
    actions.clear();
    logprob_old.clear();
    rewards.clear();
    dones.clear();
    values_old.clear();
    advantages.clear();
    returns.clear();
  }
};

/// Standard GAE(lambda) with bootstrapping cut at done flags. bootstrap_value
/// is V of the state following the last stored transition (ignored when that
/// transition is terminal).
void compute_gae(TrajectoryBatch& batch, float gamma, float lambda, float bootstrap_value);

struct PpoStats {
  double policy_loss = 0, value_loss = 0, entropy = 0;
  double mean_ratio = 0, clip_fraction = 0;
};

PpoStats ppo_update(ParamSet& params, AdamState& opt, const ControllerConfig& cfg,
                    const TrajectoryBatch& batch, const PpoConfig& ppo, Rng& rng);

/// Shared clipped-surrogate loss graph. Returns the scalar loss plus the
/// ratio var so callers can read clip statistics. adv must already be
/// normalized.
struct PpoLossVars {
  Graph::Var loss, ratio, policy_loss, value_loss, entropy;
};
PpoLossVars ppo_loss_graph(Graph& g, Graph::Var logits, Graph::Var values,
                           const std::vector<int>& actions, const Tensor& logprob_old,
                           const Tensor& advantages, const Tensor& returns,
                           const PpoConfig& ppo);

// ------------------------------------------------------------ online training

struct OnlineTrainConfig {
  ControllerConfig ctrl;
  PpoConfig ppo;
  int64_t budget_steps = 30000;
  StartJitter jitter;
  double obstacle_rate = 0.0;
  double obstacle_min_dist = 15.0;
  double obstacle_max_dist = 40.0;
  int obstacle_lifetime = 50;
  Split split = Split::Train;
  bool record_rollouts = true;
  uint64_t seed = 0;
};

struct CurvePoint {
  int64_t step;
  double episode_return;
  double norm_d;
};

struct OnlineResult {
  ParamSet params;
  std::vector<CurvePoint> curve;
  Dataset rollouts;  // logged interactions, used later as dream seed data
};

/// Live PPO training in the environment through the frozen VAE encoder.
/// Consumes exactly budget_steps environment steps.
OnlineResult train_online(ParamSet start_params, const ParamSet& vae, const VaeConfig& vae_cfg,
                          const OnlineTrainConfig& cfg);

std::string curve_csv(const std::vector<CurvePoint>& curve);

}  // namespace cmwm
