#pragma once

#include "cmwm/episodes.hpp"
#include "cmwm/nn.hpp"

namespace cmwm {

// Convolutional VAE. Encoder: three stride-2 convs then a dense head emitting
// mu and logvar; decoder mirrors with transposed convs and a sigmoid output.
// Pixels are scaled to [0,1]; downstream consumers use the encoder mean.

enum class Activation { Relu, Tanh };

struct VaeConfig {
  int img_size = kObsSize;
  int in_channels = 3;
  std::array<int, 3> channels = {32, 64, 128};
  int latent_dim = 64;
  Activation activation = Activation::Relu;

  int feat_spatial() const {
    if (img_size % 8 != 0) throw InvalidArgument("VaeConfig: img_size must be divisible by 8");
    return img_size / 8;
  }
  int flat_dim() const { return channels[2] * feat_spatial() * feat_spatial(); }
  int64_t pixel_count() const { return int64_t(in_channels) * img_size * img_size; }
};

ParamSet init_vae_params(const VaeConfig& cfg, Rng& rng);

/// HWC uint8 frames -> NCHW float in [0,1].
template <typename T>
TensorT<T> frames_to_input(const std::vector<const Observation*>& frames, const VaeConfig& cfg) {
  const int hw = cfg.img_size * cfg.img_size;
  TensorT<T> x({int(frames.size()), cfg.in_channels, cfg.img_size, cfg.img_size});
  for (size_t b = 0; b < frames.size(); ++b) {
    const uint8_t* px = frames[b]->pixels.data();
    T* dst = x.ptr() + int64_t(b) * cfg.in_channels * hw;
    for (int i = 0; i < hw; ++i)
      for (int c = 0; c < cfg.in_channels; ++c)
        dst[int64_t(c) * hw + i] = T(px[i * cfg.in_channels + c]) / T(255);
  }
  return x;
}

template <typename T>
typename GraphT<T>::Var activate(GraphT<T>& g, typename GraphT<T>::Var x, Activation act) {
  return act == Activation::Relu ? g.relu_(x) : g.tanh_(x);
}

/// Encoder graph: x [B,C,H,W] -> (mu [B,L], logvar [B,L]).
template <typename T>
std::pair<typename GraphT<T>::Var, typename GraphT<T>::Var> vae_encode_graph(
    GraphT<T>& g, const BoundParams<T>& p, typename GraphT<T>::Var x, const VaeConfig& cfg) {
  auto h1 = activate(g, g.conv2d(x, p["enc.conv1.w"], p["enc.conv1.b"], 2, 1), cfg.activation);
  auto h2 = activate(g, g.conv2d(h1, p["enc.conv2.w"], p["enc.conv2.b"], 2, 1), cfg.activation);
  auto h3 = activate(g, g.conv2d(h2, p["enc.conv3.w"], p["enc.conv3.b"], 2, 1), cfg.activation);
  int b = g.val(x).dim(0);
  auto flat = g.reshape(h3, {b, cfg.flat_dim()});
  auto head = g.affine(flat, p["enc.head.w"], p["enc.head.b"]);
  auto mu = g.slice_cols(head, 0, cfg.latent_dim);
  auto logvar = g.slice_cols(head, cfg.latent_dim, 2 * cfg.latent_dim);
  return {mu, logvar};
}

/// Decoder graph: z [B,L] -> reconstruction [B, C*H*W] in (0,1).
template <typename T>
typename GraphT<T>::Var vae_decode_graph(GraphT<T>& g, const BoundParams<T>& p,
                                         typename GraphT<T>::Var z, const VaeConfig& cfg) {
  int b = g.val(z).dim(0);
  int fs = cfg.feat_spatial();
  auto h = activate(g, g.affine(z, p["dec.head.w"], p["dec.head.b"]), cfg.activation);
  auto vol = g.reshape(h, {b, cfg.channels[2], fs, fs});
  auto d1 = activate(g, g.deconv2d(vol, p["dec.deconv1.w"], p["dec.deconv1.b"], 2, 1),
                     cfg.activation);
  auto d2 = activate(g, g.deconv2d(d1, p["dec.deconv2.w"], p["dec.deconv2.b"], 2, 1),
                     cfg.activation);
  auto d3 = g.deconv2d(d2, p["dec.deconv3.w"], p["dec.deconv3.b"], 2, 1);
  return g.reshape(g.sigmoid_(d3), {b, int(cfg.pixel_count())});
}

/// Full loss graph for one batch; eps is the reparameterization noise
/// (constant, shaped like mu). Reconstruction is the per-image sum of squared
/// pixel errors; KL is the closed form against the unit Gaussian prior; both
/// are batch means and total = recon + kl.
template <typename T>
struct VaeLossGraph {
  typename GraphT<T>::Var total, recon, kl;
};

template <typename T>
VaeLossGraph<T> vae_loss_graph(GraphT<T>& g, const BoundParams<T>& p,
                               typename GraphT<T>::Var x_img, typename GraphT<T>::Var x_flat,
                               const TensorT<T>& eps, const VaeConfig& cfg) {
  auto [mu, logvar] = vae_encode_graph(g, p, x_img, cfg);
  auto z = g.add(mu, g.mul(g.exp_(g.scale(logvar, T(0.5))), g.constant(eps)));
  auto xr = vae_decode_graph(g, p, z, cfg);
  auto diff = g.sub(xr, x_flat);
  int b = g.val(x_img).dim(0);
  auto recon = g.scale(g.sum_all(g.square(diff)), T(1) / T(b));
  // kl = 0.5 * sum_j(exp(lv) + mu^2 - 1 - lv), batch mean
  auto kl_terms = g.sub(g.add(g.exp_(logvar), g.square(mu)),
                        g.add_const(logvar, T(1)));
  auto kl = g.scale(g.sum_all(kl_terms), T(0.5) / T(b));
  auto total = g.add(recon, kl);
  return {total, recon, kl};
}

// ------------------------------------------------------------ eager paths

/// Batched encoder means (and logvars) without gradient tracking.
std::pair<Tensor, Tensor> vae_encode_batch(const ParamSet& params, const VaeConfig& cfg,
                                           const std::vector<const Observation*>& frames);

/// z = mu + exp(logvar/2) * eps, eps ~ N(0, I).
std::vector<float> sample_z(const std::vector<float>& mu, const std::vector<float>& logvar,
                            Rng& rng);

/// Decoder output for one latent vector (values in (0,1), CHW layout).
Tensor vae_decode_one(const ParamSet& params, const VaeConfig& cfg, const std::vector<float>& z);

struct VaeLossValue {
  double total, recon, kl;
};
VaeLossValue vae_loss(const ParamSet& params, const VaeConfig& cfg, const Observation& obs,
                      Rng& rng);

// ------------------------------------------------------------ training

struct VaeTrainConfig {
  VaeConfig model;
  int batch_size = 32;
  int max_epochs = 500;
  int patience = 30;
  double min_delta = 1e-4;
  float lr = 1e-4f;
  int frames_per_epoch = 0;  // 0 = full training set each epoch
  int test_frames = 0;       // 0 = full test set
  uint64_t seed = 0;
};

struct EpochLog {
  int epoch;
  double train_loss, test_loss, recon, kl;
};

struct TrainedVae {
  ParamSet params;
  std::vector<EpochLog> log;
  int best_epoch = -1;
};

TrainedVae train_vae(const Dataset& train, const Dataset& test, const VaeTrainConfig& cfg);

std::string training_log_csv(const std::vector<EpochLog>& log);

/// Latent view of an episode: per-frame encoder means plus the stored stream.
/// `concepts` is filled per frame when a concept model is in play.
struct LatentEpisode {
  std::vector<std::vector<float>> z;  // [T][latent]
  std::vector<uint8_t> actions;
  std::vector<float> rewards;
  std::vector<uint8_t> dones;
  std::vector<std::vector<float>> concepts;  // empty, or [T][concept_dim]
  int length() const { return int(z.size()); }
};

std::vector<LatentEpisode> encode_dataset(const ParamSet& vae, const VaeConfig& cfg,
                                          const Dataset& ds, int encode_batch = 64);

}  // namespace cmwm
