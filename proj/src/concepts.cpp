#include "cmwm/concepts.hpp"

#include <json.hpp>

#include <queue>

namespace cmwm {

PolicyProbe make_policy_probe(const ParamSet& vae, const VaeConfig& vae_cfg,
                              const ParamSet& ctrl, const ControllerConfig& ctrl_cfg) {
  return [&vae, vae_cfg, &ctrl, ctrl_cfg](const std::vector<Observation>& images) {
    std::vector<const Observation*> ptrs;
    ptrs.reserve(images.size());
    for (const auto& im : images) ptrs.push_back(&im);
    auto [mu, logvar] = vae_encode_batch(vae, vae_cfg, ptrs);
    std::vector<std::vector<float>> out;
    out.reserve(images.size());
    for (size_t i = 0; i < images.size(); ++i) {
      std::vector<float> z(mu.ptr() + int64_t(i) * vae_cfg.latent_dim,
                           mu.ptr() + int64_t(i + 1) * vae_cfg.latent_dim);
      out.push_back(softmax(policy_forward(ctrl, ctrl_cfg, z).logits));
    }
    return out;
  };
}

SaliencyMap saliency_map_probe(const PolicyProbe& probe, const Observation& obs,
                               const SaliencyConfig& cfg) {
  const int h = Observation::H, w = Observation::W, c = Observation::C;
  const int gh = (h + cfg.stride - 1) / cfg.stride;
  const int gw = (w + cfg.stride - 1) / cfg.stride;
  const double off = (cfg.stride - 1) / 2.0;

  std::vector<float> base_img = obs_to_float(obs);
  std::vector<float> blurred = gaussian_blur(base_img, h, w, c, cfg.sigma_blur);

  std::vector<Observation> batch;
  batch.reserve(size_t(gh) * gw + 1);
  batch.push_back(obs);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      double cy = gy * cfg.stride + off;
      double cx = gx * cfg.stride + off;
      std::vector<float> pert(base_img.size());
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
          double d2 = (r - cy) * (r - cy) + (col - cx) * (col - cx);
          float m = float(std::exp(-0.5 * d2 / (cfg.sigma_mask * cfg.sigma_mask)));
          for (int ch = 0; ch < c; ++ch) {
            size_t idx = (size_t(r) * w + size_t(col)) * c + size_t(ch);
            pert[idx] = base_img[idx] * (1.f - m) + blurred[idx] * m;
          }
        }
      batch.push_back(float_to_obs(pert));
    }

  auto probs = probe(batch);
  if (probs.size() != batch.size()) throw InvalidArgument("saliency: probe output size mismatch");
  const auto& p0 = probs[0];
  std::vector<float> grid(size_t(gh) * gw);
  for (int i = 0; i < gh * gw; ++i) {
    const auto& p = probs[size_t(i + 1)];
    double score = 0;
    for (size_t j = 0; j < p0.size(); ++j) {
      double d = double(p[j]) - double(p0[j]);
      score += d * d;
    }
    grid[size_t(i)] = float(0.5 * score);
  }

  SaliencyMap sal;
  sal.values = bilinear_upsample_grid(grid, gh, gw, cfg.stride, h, w);
  return sal;
}

SaliencyMap saliency_map(const ParamSet& ctrl, const ControllerConfig& ctrl_cfg,
                         const ParamSet& vae, const VaeConfig& vae_cfg, const Observation& obs,
                         const SaliencyConfig& cfg) {
  return saliency_map_probe(make_policy_probe(vae, vae_cfg, ctrl, ctrl_cfg), obs, cfg);
}

std::vector<uint8_t> threshold_mask(const SaliencyMap& sal) {
  const size_t n = sal.values.size();
  double mean = 0;
  for (float v : sal.values) mean += double(v);
  mean /= double(n);
  double var = 0;
  for (float v : sal.values) var += (double(v) - mean) * (double(v) - mean);
  double stdev = std::sqrt(var / double(n));
  std::vector<uint8_t> mask(n, 0);
  if (stdev == 0.0) return mask;
  for (size_t i = 0; i < n; ++i)
    if ((double(sal.values[i]) - mean) / stdev >= 2.0) mask[i] = 1;
  return mask;
}

std::vector<SalientComponent> connected_components(const std::vector<uint8_t>& mask, int h,
                                                   int w) {
  if (int(mask.size()) != h * w) throw InvalidArgument("connected_components: size mismatch");
  const int min_pixels = int(std::ceil(0.01 * h * w));
  std::vector<int> label(mask.size(), -1);
  std::vector<SalientComponent> out;
  for (int start = 0; start < h * w; ++start) {
    if (!mask[size_t(start)] || label[size_t(start)] >= 0) continue;
    SalientComponent comp;
    comp.h = h;
    comp.w = w;
    comp.mask.assign(size_t(h) * w, 0);
    comp.min_row = comp.min_col = std::max(h, w);
    comp.max_row = comp.max_col = 0;
    std::queue<int> q;
    q.push(start);
    label[size_t(start)] = int(out.size());
    while (!q.empty()) {
      int idx = q.front();
      q.pop();
      int r = idx / w, col = idx % w;
      comp.mask[size_t(idx)] = 1;
      ++comp.pixel_count;
      comp.min_row = std::min(comp.min_row, r);
      comp.max_row = std::max(comp.max_row, r);
      comp.min_col = std::min(comp.min_col, col);
      comp.max_col = std::max(comp.max_col, col);
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          int r2 = r + dr, c2 = col + dc;
          if (r2 < 0 || c2 < 0 || r2 >= h || c2 >= w) continue;
          int idx2 = r2 * w + c2;
          if (!mask[size_t(idx2)] || label[size_t(idx2)] >= 0) continue;
          label[size_t(idx2)] = int(out.size());
          q.push(idx2);
        }
    }
    out.push_back(std::move(comp));
  }
  std::vector<SalientComponent> kept;
  for (auto& c : out)
    if (c.pixel_count >= min_pixels) kept.push_back(std::move(c));
  return kept;
}

Observation masked_patch(const Observation& obs, const SalientComponent& comp) {
  if (comp.h != Observation::H || comp.w != Observation::W)
    throw InvalidArgument("masked_patch: component geometry mismatch");
  double mean[3] = {0, 0, 0};
  const size_t n = size_t(comp.h) * comp.w;
  for (size_t i = 0; i < n; ++i)
    for (int ch = 0; ch < 3; ++ch) mean[ch] += double(obs.pixels[i * 3 + size_t(ch)]);
  uint8_t fill[3];
  for (int ch = 0; ch < 3; ++ch)
    fill[ch] = uint8_t(std::lround(mean[ch] / double(n)));
  Observation out;
  for (size_t i = 0; i < n; ++i)
    for (int ch = 0; ch < 3; ++ch)
      out.pixels[i * 3 + size_t(ch)] =
          comp.mask[i] ? obs.pixels[i * 3 + size_t(ch)] : fill[ch];
  return out;
}

PatchDataset build_patch_dataset(const Dataset& ds, const PolicyProbe& probe,
                                 const SaliencyConfig& cfg, int frame_stride) {
  if (frame_stride < 1) throw InvalidArgument("build_patch_dataset: bad frame stride");
  PatchDataset pd;
  Episode patches;
  for (size_t e = 0; e < ds.episodes.size(); ++e) {
    const Episode& ep = ds.episodes[e];
    for (int t = 0; t < ep.length(); t += frame_stride) {
      SaliencyMap sal = saliency_map_probe(probe, ep.frames[size_t(t)], cfg);
      auto mask = threshold_mask(sal);
      auto comps = connected_components(mask, sal.h, sal.w);
      for (size_t ci = 0; ci < comps.size(); ++ci) {
        patches.frames.push_back(masked_patch(ep.frames[size_t(t)], comps[ci]));
        patches.actions.push_back(0);
        patches.rewards.push_back(0.f);
        patches.dones.push_back(0);
        pd.prov.push_back({int(e), t, int(ci)});
      }
    }
  }
  if (patches.length() > 0) pd.data.episodes.push_back(std::move(patches));
  return pd;
}

void save_patch_dataset(const PatchDataset& pd, const std::filesystem::path& dir) {
  save_dataset(pd.data, dir);
  nlohmann::json prov = nlohmann::json::array();
  for (const auto& p : pd.prov)
    prov.push_back({{"episode", p.episode}, {"t", p.t}, {"component", p.component}});
  write_text(dir / "provenance.json", prov.dump(2) + "\n");
}

PatchDataset load_patch_dataset(const std::filesystem::path& dir) {
  PatchDataset pd;
  pd.data = load_dataset(dir);
  auto bytes = read_file(dir / "provenance.json");
  auto prov = nlohmann::json::parse(bytes.begin(), bytes.end());
  for (const auto& p : prov)
    pd.prov.push_back({p["episode"].get<int>(), p["t"].get<int>(), p["component"].get<int>()});
  return pd;
}

// ------------------------------------------------------------ clustering

namespace {

double sqdist(const float* a, const float* b, int d) {
  double acc = 0;
  for (int i = 0; i < d; ++i) {
    double diff = double(a[i]) - double(b[i]);
    acc += diff * diff;
  }
  return acc;
}

struct KmeansRun {
  std::vector<float> centers;
  double wcss = 0;
};

KmeansRun lloyd_once(const std::vector<std::vector<float>>& pts, int k, int dim, Rng& rng) {
  const int n = int(pts.size());
  std::vector<float> centers(size_t(k) * dim);

  // k-means++ seeding
  int first = rng.uniform_int(n);
  std::copy(pts[size_t(first)].begin(), pts[size_t(first)].end(), centers.begin());
  std::vector<double> d2(static_cast<size_t>(n), 0.0);
  for (int kk = 1; kk < k; ++kk) {
    double total = 0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (int j = 0; j < kk; ++j)
        best = std::min(best, sqdist(pts[size_t(i)].data(), centers.data() + size_t(j) * dim, dim));
      d2[size_t(i)] = best;
      total += best;
    }
    double pick = rng.uniform() * total;
    int chosen = n - 1;
    double acc = 0;
    for (int i = 0; i < n; ++i) {
      acc += d2[size_t(i)];
      if (pick < acc) {
        chosen = i;
        break;
      }
    }
    std::copy(pts[size_t(chosen)].begin(), pts[size_t(chosen)].end(),
              centers.begin() + size_t(kk) * dim);
  }

  std::vector<int> assign(static_cast<size_t>(n), 0);
  double prev_obj = std::numeric_limits<double>::max();
  for (int iter = 0; iter < 300; ++iter) {
    double obj = 0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      int arg = 0;
      for (int j = 0; j < k; ++j) {
        double d = sqdist(pts[size_t(i)].data(), centers.data() + size_t(j) * dim, dim);
        if (d < best) {
          best = d;
          arg = j;
        }
      }
      assign[size_t(i)] = arg;
      obj += best;
    }
    if (obj > prev_obj + 1e-9)
      throw TrainingError("kmeans: objective increased across an iteration");
    prev_obj = obj;

    std::vector<double> sums(size_t(k) * dim, 0.0);
    std::vector<int> counts(size_t(k), 0);
    for (int i = 0; i < n; ++i) {
      ++counts[size_t(assign[size_t(i)])];
      for (int d = 0; d < dim; ++d)
        sums[size_t(assign[size_t(i)]) * dim + size_t(d)] += double(pts[size_t(i)][size_t(d)]);
    }
    double shift = 0;
    for (int j = 0; j < k; ++j) {
      if (counts[size_t(j)] == 0) {
        // re-seed an empty cluster at the point farthest from its center
        double worst = -1;
        int worst_i = 0;
        for (int i = 0; i < n; ++i) {
          double d = sqdist(pts[size_t(i)].data(),
                            centers.data() + size_t(assign[size_t(i)]) * dim, dim);
          if (d > worst) {
            worst = d;
            worst_i = i;
          }
        }
        for (int d = 0; d < dim; ++d) {
          float nv = pts[size_t(worst_i)][size_t(d)];
          double delta = double(nv) - double(centers[size_t(j) * dim + size_t(d)]);
          shift += delta * delta;
          centers[size_t(j) * dim + size_t(d)] = nv;
        }
        continue;
      }
      for (int d = 0; d < dim; ++d) {
        float nv = float(sums[size_t(j) * dim + size_t(d)] / counts[size_t(j)]);
        double delta = double(nv) - double(centers[size_t(j) * dim + size_t(d)]);
        shift += delta * delta;
        centers[size_t(j) * dim + size_t(d)] = nv;
      }
    }
    if (std::sqrt(shift) < 1e-6) break;
  }

  double wcss = 0;
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::max();
    for (int j = 0; j < k; ++j)
      best = std::min(best, sqdist(pts[size_t(i)].data(), centers.data() + size_t(j) * dim, dim));
    wcss += best;
  }
  return {std::move(centers), wcss};
}

}  // namespace

ConceptModel kmeans_fit(const std::vector<std::vector<float>>& points, int n_clusters, Rng& rng,
                        int restarts) {
  if (n_clusters < 1) throw InvalidArgument("kmeans_fit: need at least one cluster");
  if (int(points.size()) < n_clusters)
    throw InvalidArgument("kmeans_fit: fewer points (" + std::to_string(points.size()) +
                          ") than clusters (" + std::to_string(n_clusters) + ")");
  const int dim = int(points[0].size());
  KmeansRun best;
  best.wcss = std::numeric_limits<double>::max();
  for (int r = 0; r < restarts; ++r) {
    Rng run_rng = rng.fork(uint64_t(r));
    KmeansRun run = lloyd_once(points, n_clusters, dim, run_rng);
    if (run.wcss < best.wcss) best = std::move(run);
  }
  ConceptModel model;
  model.n_clusters = n_clusters;
  model.latent_dim = dim;
  model.centers = std::move(best.centers);
  return model;
}

double kmeans_wcss(const ConceptModel& model, const std::vector<std::vector<float>>& points) {
  double wcss = 0;
  for (const auto& p : points) {
    double best = std::numeric_limits<double>::max();
    for (int j = 0; j < model.n_clusters; ++j)
      best = std::min(best, sqdist(p.data(), model.center(j), model.latent_dim));
    wcss += best;
  }
  return wcss;
}

ConceptModel fit_concepts(const PatchDataset& patches, const ParamSet& vae,
                          const VaeConfig& vae_cfg, int n_clusters, Rng& rng) {
  if (patches.count() < n_clusters)
    throw InvalidArgument("fit_concepts: fewer patches than clusters");
  const Episode& ep = patches.data.episodes[0];
  std::vector<std::vector<float>> zs;
  zs.reserve(size_t(ep.length()));
  const int bsz = 64;
  for (int off = 0; off < ep.length(); off += bsz) {
    int end = std::min(ep.length(), off + bsz);
    std::vector<const Observation*> frames;
    for (int i = off; i < end; ++i) frames.push_back(&ep.frames[size_t(i)]);
    auto [mu, logvar] = vae_encode_batch(vae, vae_cfg, frames);
    for (int b = 0; b < end - off; ++b)
      zs.emplace_back(mu.ptr() + int64_t(b) * vae_cfg.latent_dim,
                      mu.ptr() + int64_t(b + 1) * vae_cfg.latent_dim);
  }
  return kmeans_fit(zs, n_clusters, rng);
}

ConceptVector concept_vector(const std::vector<float>& z, const ConceptModel& model) {
  if (int(z.size()) != model.latent_dim) throw InvalidArgument("concept_vector: bad latent size");
  std::vector<double> d(size_t(model.n_clusters));
  double dmin = std::numeric_limits<double>::max(), dmax = 0;
  for (int k = 0; k < model.n_clusters; ++k) {
    d[size_t(k)] = std::sqrt(sqdist(z.data(), model.center(k), model.latent_dim));
    dmin = std::min(dmin, d[size_t(k)]);
    dmax = std::max(dmax, d[size_t(k)]);
  }
  ConceptVector c(size_t(model.n_clusters));
  if (dmax == dmin) {
    std::fill(c.begin(), c.end(), 1.f);
    return c;
  }
  for (int k = 0; k < model.n_clusters; ++k)
    c[size_t(k)] = float(1.0 - (d[size_t(k)] - dmin) / (dmax - dmin));
  return c;
}

void save_concept_model(const ConceptModel& model, const std::filesystem::path& path) {
  ParamSet ps;
  Tensor& t = ps.add("centers", {model.n_clusters, model.latent_dim});
  t.data = model.centers;
  save_checkpoint(ps, path);
}

ConceptModel load_concept_model(const std::filesystem::path& path) {
  ParamSet ps = load_checkpoint(path);
  const Tensor& t = ps.at("centers");
  ConceptModel model;
  model.n_clusters = t.dim(0);
  model.latent_dim = t.dim(1);
  model.centers = t.data;
  return model;
}

void concept_contact_sheet(const PatchDataset& patches, const ConceptModel& model,
                           const ParamSet& vae, const VaeConfig& vae_cfg,
                           const std::filesystem::path& png_path, int samples) {
  if (patches.count() == 0) throw InvalidArgument("concept_contact_sheet: no patches");
  const Episode& ep = patches.data.episodes[0];
  // assign each patch to its closest cluster
  std::vector<std::vector<int>> members(size_t(model.n_clusters));
  for (int i = 0; i < ep.length(); ++i) {
    std::vector<const Observation*> one{&ep.frames[size_t(i)]};
    auto [mu, logvar] = vae_encode_batch(vae, vae_cfg, one);
    std::vector<float> z(mu.data.begin(), mu.data.begin() + vae_cfg.latent_dim);
    int best = 0;
    double bd = std::numeric_limits<double>::max();
    for (int k = 0; k < model.n_clusters; ++k) {
      double d = sqdist(z.data(), model.center(k), model.latent_dim);
      if (d < bd) {
        bd = d;
        best = k;
      }
    }
    if (int(members[size_t(best)].size()) < samples) members[size_t(best)].push_back(i);
  }
  const int cell = kObsSize;
  const int sheet_h = model.n_clusters * cell;
  const int sheet_w = samples * cell;
  std::vector<uint8_t> sheet(size_t(sheet_h) * sheet_w * 3, 30);
  for (int k = 0; k < model.n_clusters; ++k)
    for (size_t s = 0; s < members[size_t(k)].size(); ++s) {
      const Observation& src = ep.frames[size_t(members[size_t(k)][s])];
      for (int r = 0; r < cell; ++r)
        for (int col = 0; col < cell; ++col)
          for (int ch = 0; ch < 3; ++ch)
            sheet[((size_t(k) * cell + size_t(r)) * size_t(sheet_w) + s * cell + size_t(col)) *
                      3 +
                  size_t(ch)] = src.at(r, col)[ch];
    }
  write_png(png_path, sheet.data(), sheet_h, sheet_w);
}

}  // namespace cmwm
