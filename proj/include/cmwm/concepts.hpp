#pragma once

#include <functional>

#include "cmwm/controller.hpp"
#include "cmwm/image.hpp"

namespace cmwm {

// Visual concept extraction: perturbation saliency against the policy's
// action distribution, z-score thresholding, connected components, masked
// patches on a mean-pixel background, k-means over patch encodings, and
// per-frame similarity vectors.

struct SaliencyMap {
  int h = kObsSize, w = kObsSize;
  std::vector<float> values;  // nonnegative, aligned to observation pixels
};

struct SalientComponent {
  int h = kObsSize, w = kObsSize;
  std::vector<uint8_t> mask;  // binary, H*W
  int pixel_count = 0;
  int min_row = 0, min_col = 0, max_row = 0, max_col = 0;
};

struct ConceptModel {
  int n_clusters = 0;
  int latent_dim = 0;
  std::vector<float> centers;  // [n_clusters][latent_dim]

  const float* center(int k) const { return centers.data() + size_t(k) * latent_dim; }
};

using ConceptVector = std::vector<float>;

struct SaliencyConfig {
  int stride = 4;
  double sigma_mask = 3.0;
  double sigma_blur = 3.0;
};

/// Batch probe: images -> per-image action probability vectors. The
/// production probe is softmax(policy(encoder_mean(image))).
using PolicyProbe =
    std::function<std::vector<std::vector<float>>(const std::vector<Observation>&)>;

PolicyProbe make_policy_probe(const ParamSet& vae, const VaeConfig& vae_cfg,
                              const ParamSet& ctrl, const ControllerConfig& ctrl_cfg);

/// Perturbation saliency: blur-mask probes on a stride grid, scored by
/// 0.5*||p - p0||^2 over action probabilities, bilinearly upsampled.
SaliencyMap saliency_map_probe(const PolicyProbe& probe, const Observation& obs,
                               const SaliencyConfig& cfg = {});

SaliencyMap saliency_map(const ParamSet& ctrl, const ControllerConfig& ctrl_cfg,
                         const ParamSet& vae, const VaeConfig& vae_cfg, const Observation& obs,
                         const SaliencyConfig& cfg = {});

/// Keep pixels at least 2 standard deviations above the frame mean; a
/// zero-variance frame yields an empty mask.
std::vector<uint8_t> threshold_mask(const SaliencyMap& sal);

/// 8-connected components of at least ceil(0.01*h*w) pixels.
std::vector<SalientComponent> connected_components(const std::vector<uint8_t>& mask, int h,
                                                   int w);

/// I' = H*I + (1-H)*mean(I), channel-wise means of the original frame.
Observation masked_patch(const Observation& obs, const SalientComponent& comp);

struct PatchProvenance {
  int episode = 0;
  int t = 0;
  int component = 0;
};

struct PatchDataset {
  Dataset data;  // one episode holding every patch as a frame
  std::vector<PatchProvenance> prov;

  int count() const { return data.episodes.empty() ? 0 : data.episodes[0].length(); }
};

/// Saliency -> threshold -> components -> masked patches over every frame
/// given (subsample frames upstream to bound cost).
PatchDataset build_patch_dataset(const Dataset& ds, const PolicyProbe& probe,
                                 const SaliencyConfig& cfg = {}, int frame_stride = 1);

void save_patch_dataset(const PatchDataset& pd, const std::filesystem::path& dir);
PatchDataset load_patch_dataset(const std::filesystem::path& dir);

// ------------------------------------------------------------ clustering

/// Lloyd k-means with k-means++ seeding; best of `restarts` by within-cluster
/// sum of squares. Iterates to center shift < 1e-6 or 300 rounds. The
/// objective is asserted nonincreasing across iterations.
ConceptModel kmeans_fit(const std::vector<std::vector<float>>& points, int n_clusters, Rng& rng,
                        int restarts = 5);

double kmeans_wcss(const ConceptModel& model, const std::vector<std::vector<float>>& points);

/// Encode patches with the VAE mean and cluster them.
ConceptModel fit_concepts(const PatchDataset& patches, const ParamSet& vae,
                          const VaeConfig& vae_cfg, int n_clusters, Rng& rng);

/// c_k = 1 - (d_k - min d)/(max d - min d); all ones when the distances are
/// equal (every cluster is closest).
ConceptVector concept_vector(const std::vector<float>& z, const ConceptModel& model);

void save_concept_model(const ConceptModel& model, const std::filesystem::path& path);
ConceptModel load_concept_model(const std::filesystem::path& path);

/// Contact sheet: up to `samples` patches per cluster, one cluster per row.
void concept_contact_sheet(const PatchDataset& patches, const ConceptModel& model,
                           const ParamSet& vae, const VaeConfig& vae_cfg,
                           const std::filesystem::path& png_path, int samples = 5);

}  // namespace cmwm
