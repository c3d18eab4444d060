#pragma once

#include "cmwm/vae.hpp"

namespace cmwm {

// Mixture-density recurrent world model: an LSTM over (z_t, one-hot action,
// optional concept vector) followed by a dense head that emits, per latent
// dimension, K mixture components (logit, mean, log sigma) plus a predicted
// reward and a done logit. The concept-modulated (CM) variant differs from
// the model-based (MB) one only in the extra concept input columns.

struct MdnConfig {
  int latent_dim = 64;
  int action_dim = kNumActions;
  int concept_dim = 0;  // 0 for MB, 10 for CM
  int lstm_hidden = 256;
  int k = 5;

  int input_dim() const { return latent_dim + action_dim + concept_dim; }
  int head_dim() const { return latent_dim * k * 3 + 2; }
  void validate() const {
    if (k < 1) throw InvalidArgument("MdnConfig: k must be >= 1");
    if (concept_dim != 0 && concept_dim != 10)
      throw InvalidArgument("MdnConfig: concept_dim must be 0 or 10");
  }
};

constexpr float kLogSigmaMin = -9.2103403719761836f;  // ln 1e-4
constexpr float kLogSigmaMax = 9.2103403719761836f;   // ln 1e+4

struct MixtureOutput {
  int latent_dim = 0;
  int k = 0;
  std::vector<float> pi;     // [latent_dim][k], each row a simplex
  std::vector<float> mu;     // [latent_dim][k]
  std::vector<float> sigma;  // [latent_dim][k], positive
  float reward_pred = 0;
  float done_logit = 0;
};

struct RecurrentState {
  std::vector<float> h, c;

  static RecurrentState zero(int hidden) {
    RecurrentState s;
    s.h.assign(size_t(hidden), 0.f);
    s.c.assign(size_t(hidden), 0.f);
    return s;
  }
  bool is_zero() const {
    for (float v : h)
      if (v != 0) return false;
    for (float v : c)
      if (v != 0) return false;
    return true;
  }
};

ParamSet init_mdn_params(const MdnConfig& cfg, Rng& rng);

/// Raw head vector -> normalized mixture (per-dimension softmax, clamped
/// exponential sigma).
MixtureOutput mixture_from_head(const float* head, const MdnConfig& cfg);

std::pair<MixtureOutput, RecurrentState> mdn_forward(const ParamSet& params,
                                                     const MdnConfig& cfg,
                                                     const std::vector<float>& z, int action,
                                                     const std::vector<float>* concept_vec,
                                                     const RecurrentState& state);

/// Negative log likelihood of z_next under the mixture (log-sum-exp path),
/// summed over latent dimensions.
double gmm_nll(const MixtureOutput& mix, const std::vector<float>& z_next);

struct SampledNext {
  std::vector<float> z;
  float reward = 0;
  bool done = false;
  double done_prob = 0;
};
SampledNext sample_next(const MixtureOutput& mix, Rng& rng);

// ------------------------------------------------------------ training

struct MdnTrainConfig {
  MdnConfig model;
  int batch_episodes = 20;
  int max_epochs = 500;
  int patience = 10;
  double min_delta = 1e-4;
  float lr = 1e-4f;
  int bptt_chunk = 100;
  uint64_t seed = 0;
};

struct MdnLossValue {
  double total = 0, gmm = 0, mse = 0, bce = 0;
};

struct TrainedMdn {
  ParamSet params;
  std::vector<EpochLog> log;
  int best_epoch = -1;
};

/// Teacher-forced loss over a batch of latent episodes (no parameter update).
/// total = gmm + mse + bce exactly, each a mean over valid steps.
MdnLossValue mdn_loss_eval(const ParamSet& params, const MdnConfig& cfg,
                           const std::vector<const LatentEpisode*>& batch);

TrainedMdn train_mdn(const std::vector<LatentEpisode>& train,
                     const std::vector<LatentEpisode>& test, const MdnTrainConfig& cfg);

}  // namespace cmwm
