#include "cmwm/worldmodel.hpp"

namespace cmwm {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5*ln(2*pi)
}

ParamSet init_mdn_params(const MdnConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamSet ps;
  add_lstm_params(ps, "lstm", cfg.input_dim(), cfg.lstm_hidden, rng);
  init_he_uniform(ps.add("head.w", {cfg.lstm_hidden, cfg.head_dim()}), cfg.lstm_hidden, rng);
  ps.add("head.b", {cfg.head_dim()});
  return ps;
}

MixtureOutput mixture_from_head(const float* head, const MdnConfig& cfg) {
  const int l = cfg.latent_dim, k = cfg.k;
  MixtureOutput m;
  m.latent_dim = l;
  m.k = k;
  m.pi.resize(size_t(l) * k);
  m.mu.assign(head + l * k, head + 2 * l * k);
  m.sigma.resize(size_t(l) * k);
  for (int d = 0; d < l; ++d) {
    const float* logits = head + d * k;
    float mx = logits[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, logits[j]);
    double denom = 0;
    for (int j = 0; j < k; ++j) denom += std::exp(double(logits[j]) - mx);
    for (int j = 0; j < k; ++j)
      m.pi[size_t(d) * k + j] = float(std::exp(double(logits[j]) - mx) / denom);
  }
  const float* logsig = head + 2 * l * k;
  for (int i = 0; i < l * k; ++i)
    m.sigma[size_t(i)] = std::exp(std::clamp(logsig[i], kLogSigmaMin, kLogSigmaMax));
  m.reward_pred = head[3 * l * k];
  m.done_logit = head[3 * l * k + 1];
  return m;
}

std::pair<MixtureOutput, RecurrentState> mdn_forward(const ParamSet& params,
                                                     const MdnConfig& cfg,
                                                     const std::vector<float>& z, int action,
                                                     const std::vector<float>* concept_vec,
                                                     const RecurrentState& state) {
  cfg.validate();
  if (int(z.size()) != cfg.latent_dim) throw InvalidArgument("mdn_forward: bad latent size");
  if (action < 0 || action >= cfg.action_dim)
    throw InvalidArgument("mdn_forward: action out of range");
  if ((cfg.concept_dim > 0) != (concept_vec != nullptr))
    throw InvalidArgument("mdn_forward: concept input must be present iff concept_dim > 0");
  if (concept_vec && int(concept_vec->size()) != cfg.concept_dim)
    throw InvalidArgument("mdn_forward: bad concept size");
  const int in = cfg.input_dim(), hid = cfg.lstm_hidden;
  if (int(state.h.size()) != hid || int(state.c.size()) != hid)
    throw InvalidArgument("mdn_forward: bad recurrent state size");

  std::vector<float> xh(size_t(in) + hid, 0.f);
  std::copy(z.begin(), z.end(), xh.begin());
  xh[size_t(cfg.latent_dim + action)] = 1.f;
  if (concept_vec) std::copy(concept_vec->begin(), concept_vec->end(), xh.begin() + cfg.latent_dim + cfg.action_dim);
  std::copy(state.h.begin(), state.h.end(), xh.begin() + in);

  const Tensor& w = params.at("lstm.w");
  const Tensor& b = params.at("lstm.b");
  std::vector<float> gates(b.data);
  gemm(xh.data(), w.ptr(), gates.data(), 1, in + hid, 4 * hid, /*accumulate=*/true);

  RecurrentState next = RecurrentState::zero(hid);
  auto sig = [](float x) { return Graph::sigmoid_scalar(x); };
  for (int j = 0; j < hid; ++j) {
    float i_g = sig(gates[size_t(j)]);
    float f_g = sig(gates[size_t(hid + j)]);
    float g_g = std::tanh(gates[size_t(2 * hid + j)]);
    float o_g = sig(gates[size_t(3 * hid + j)]);
    next.c[size_t(j)] = f_g * state.c[size_t(j)] + i_g * g_g;
    next.h[size_t(j)] = o_g * std::tanh(next.c[size_t(j)]);
  }

  const Tensor& hw = params.at("head.w");
  const Tensor& hb = params.at("head.b");
  std::vector<float> head(hb.data);
  gemm(next.h.data(), hw.ptr(), head.data(), 1, hid, cfg.head_dim(), /*accumulate=*/true);
  return {mixture_from_head(head.data(), cfg), std::move(next)};
}

double gmm_nll(const MixtureOutput& mix, const std::vector<float>& z_next) {
  if (int(z_next.size()) != mix.latent_dim) throw InvalidArgument("gmm_nll: bad target size");
  const int k = mix.k;
  double nll = 0;
  for (int d = 0; d < mix.latent_dim; ++d) {
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(static_cast<size_t>(k), 0.0);
    for (int j = 0; j < k; ++j) {
      double pi = double(mix.pi[size_t(d) * k + j]);
      double mu = double(mix.mu[size_t(d) * k + j]);
      double sg = double(mix.sigma[size_t(d) * k + j]);
      double u = (double(z_next[size_t(d)]) - mu) / sg;
      double t = std::log(pi) - 0.5 * u * u - std::log(sg) - kHalfLog2Pi;
      terms[size_t(j)] = t;
      mx = std::max(mx, t);
    }
    double acc = 0;
    for (double t : terms) acc += std::exp(t - mx);
    nll -= mx + std::log(acc);
  }
  return nll;
}

SampledNext sample_next(const MixtureOutput& mix, Rng& rng) {
  SampledNext out;
  out.z.resize(size_t(mix.latent_dim));
  const int k = mix.k;
  for (int d = 0; d < mix.latent_dim; ++d) {
    double u = rng.uniform();
    int comp = k - 1;
    double acc = 0;
    for (int j = 0; j < k; ++j) {
      acc += double(mix.pi[size_t(d) * k + j]);
      if (u < acc) {
        comp = j;
        break;
      }
    }
    double mu = double(mix.mu[size_t(d) * k + comp]);
    double sg = double(mix.sigma[size_t(d) * k + comp]);
    out.z[size_t(d)] = float(mu + sg * rng.normal());
  }
  out.reward = mix.reward_pred;
  out.done_prob = 1.0 / (1.0 + std::exp(-double(mix.done_logit)));
  out.done = out.done_prob > 0.5;
  return out;
}

// ------------------------------------------------------------ training

namespace {

struct PaddedBatch {
  int b = 0, t_max = 0;
  // time-major constants, one entry per step
  std::vector<Tensor> z, z_next, onehot, concept_vec, rewards, dones, any_mask, gmm_mask;
  int64_t n_any = 0, n_gmm = 0;
};

PaddedBatch pad_batch(const std::vector<const LatentEpisode*>& eps, const MdnConfig& cfg) {
  PaddedBatch pb;
  pb.b = int(eps.size());
  for (const auto* e : eps) pb.t_max = std::max(pb.t_max, e->length());
  for (int t = 0; t < pb.t_max; ++t) {
    Tensor z({pb.b, cfg.latent_dim}), zn({pb.b, cfg.latent_dim});
    Tensor oh({pb.b, cfg.action_dim});
    Tensor cv({pb.b, std::max(1, cfg.concept_dim)});
    Tensor rw({pb.b, 1}), dn({pb.b, 1}), am({pb.b, 1}), gm({pb.b, 1});
    for (int i = 0; i < pb.b; ++i) {
      const LatentEpisode& e = *eps[size_t(i)];
      if (t >= e.length()) continue;
      std::copy(e.z[size_t(t)].begin(), e.z[size_t(t)].end(),
                z.ptr() + int64_t(i) * cfg.latent_dim);
      oh.at2(i, e.actions[size_t(t)]) = 1.f;
      if (cfg.concept_dim > 0) {
        if (int(e.concepts.size()) != e.length())
          throw InvalidArgument("mdn: concept vectors missing from latent episode");
        std::copy(e.concepts[size_t(t)].begin(), e.concepts[size_t(t)].end(),
                  cv.ptr() + int64_t(i) * cfg.concept_dim);
      }
      rw.at2(i, 0) = e.rewards[size_t(t)];
      dn.at2(i, 0) = float(e.dones[size_t(t)]);
      am.at2(i, 0) = 1.f;
      ++pb.n_any;
      if (t + 1 < e.length()) {
        std::copy(e.z[size_t(t + 1)].begin(), e.z[size_t(t + 1)].end(),
                  zn.ptr() + int64_t(i) * cfg.latent_dim);
        gm.at2(i, 0) = 1.f;
        ++pb.n_gmm;
      }
    }
    pb.z.push_back(std::move(z));
    pb.z_next.push_back(std::move(zn));
    pb.onehot.push_back(std::move(oh));
    pb.concept_vec.push_back(std::move(cv));
    pb.rewards.push_back(std::move(rw));
    pb.dones.push_back(std::move(dn));
    pb.any_mask.push_back(std::move(am));
    pb.gmm_mask.push_back(std::move(gm));
  }
  return pb;
}

struct ChunkSums {
  double gmm = 0, mse = 0, bce = 0;
  int64_t n_any = 0, n_gmm = 0;
};

// Build the teacher-forced graph for steps [t0, t1) and return summed losses.
// When `train` the combined per-step-mean loss is backpropagated and applied.
ChunkSums run_chunk(ParamSet& params, const MdnConfig& cfg, const PaddedBatch& pb, int t0,
                    int t1, std::vector<float>& carry_h, std::vector<float>& carry_c,
                    bool train, AdamState* opt, float lr) {
  Graph g;
  std::vector<Graph::Var> pvars;
  if (train) {
    pvars = bind_params(g, params);
  } else {
    for (int i = 0; i < params.count(); ++i) pvars.push_back(g.constant(params.tensor(i)));
  }
  BoundView p{params, pvars};
  const int hid = cfg.lstm_hidden;

  LstmState<float> st{g.constant(Tensor({pb.b, hid}, std::vector<float>(carry_h))),
                      g.constant(Tensor({pb.b, hid}, std::vector<float>(carry_c)))};

  Graph::Var gmm_sum = g.constant_scalar(0.f);
  Graph::Var mse_sum = g.constant_scalar(0.f);
  Graph::Var bce_sum = g.constant_scalar(0.f);
  ChunkSums sums;

  for (int t = t0; t < t1; ++t) {
    std::vector<Graph::Var> parts{g.constant(pb.z[size_t(t)]), g.constant(pb.onehot[size_t(t)])};
    if (cfg.concept_dim > 0) parts.push_back(g.constant(pb.concept_vec[size_t(t)]));
    auto x = g.concat_cols(parts);
    st = lstm_step(g, x, st, p("lstm.w"), p("lstm.b"), hid);
    auto head = g.affine(st.h, p("head.w"), p("head.b"));

    const int lk = cfg.latent_dim * cfg.k;
    auto pi_raw = g.reshape(g.slice_cols(head, 0, lk), {pb.b * cfg.latent_dim, cfg.k});
    auto mu = g.reshape(g.slice_cols(head, lk, 2 * lk), {pb.b * cfg.latent_dim, cfg.k});
    auto logsig = g.clampc(g.reshape(g.slice_cols(head, 2 * lk, 3 * lk),
                                     {pb.b * cfg.latent_dim, cfg.k}),
                           kLogSigmaMin, kLogSigmaMax);
    auto logpi = g.log_softmax_rows(pi_raw);
    auto ztgt = g.col_broadcast(
        g.reshape(g.constant(pb.z_next[size_t(t)]), {pb.b * cfg.latent_dim, 1}), cfg.k);
    auto u = g.mul(g.sub(ztgt, mu), g.exp_(g.scale(logsig, -1.f)));
    auto comp = g.add_const(
        g.sub(g.add(logpi, g.scale(g.square(u), -0.5f)), logsig), float(-kHalfLog2Pi));
    auto nll = g.scale(g.row_sum(g.reshape(g.row_logsumexp(comp), {pb.b, cfg.latent_dim})),
                       -1.f);
    gmm_sum = g.add(gmm_sum, g.sum_all(g.mul(nll, g.constant(pb.gmm_mask[size_t(t)]))));

    auto reward_col = g.slice_cols(head, 3 * lk, 3 * lk + 1);
    auto rdiff = g.square(g.sub(reward_col, g.constant(pb.rewards[size_t(t)])));
    mse_sum = g.add(mse_sum, g.sum_all(g.mul(rdiff, g.constant(pb.any_mask[size_t(t)]))));

    auto done_col = g.slice_cols(head, 3 * lk + 1, 3 * lk + 2);
    auto bce = g.bce_with_logits(done_col, pb.dones[size_t(t)]);
    bce_sum = g.add(bce_sum, g.sum_all(g.mul(bce, g.constant(pb.any_mask[size_t(t)]))));

    for (int i = 0; i < pb.b; ++i) {
      if (pb.any_mask[size_t(t)].at2(i, 0) > 0) ++sums.n_any;
      if (pb.gmm_mask[size_t(t)].at2(i, 0) > 0) ++sums.n_gmm;
    }
  }

  sums.gmm = double(g.val(gmm_sum)[0]);
  sums.mse = double(g.val(mse_sum)[0]);
  sums.bce = double(g.val(bce_sum)[0]);
  if (!std::isfinite(sums.gmm) || !std::isfinite(sums.mse) || !std::isfinite(sums.bce))
    throw TrainingError("mdn loss is non-finite at chunk starting step " + std::to_string(t0));

  if (train) {
    Graph::Var total = g.constant_scalar(0.f);
    if (sums.n_gmm > 0) total = g.add(total, g.scale(gmm_sum, 1.f / float(sums.n_gmm)));
    if (sums.n_any > 0) {
      total = g.add(total, g.scale(mse_sum, 1.f / float(sums.n_any)));
      total = g.add(total, g.scale(bce_sum, 1.f / float(sums.n_any)));
    }
    g.backward(total);
    auto grads = extract_grads(g, pvars);
    adam_step(params, grads, *opt, lr);
  }

  carry_h = g.val(st.h).data;
  carry_c = g.val(st.c).data;
  return sums;
}

MdnLossValue accumulate_batches(ParamSet& params, const MdnConfig& cfg,
                                const std::vector<const LatentEpisode*>& eps, int batch_sz,
                                int chunk, bool train, AdamState* opt, float lr) {
  MdnLossValue agg;
  int64_t n_any = 0, n_gmm = 0;
  double gmm = 0, mse = 0, bce = 0;
  for (size_t off = 0; off < eps.size(); off += size_t(batch_sz)) {
    size_t end = std::min(eps.size(), off + size_t(batch_sz));
    std::vector<const LatentEpisode*> batch(eps.begin() + long(off), eps.begin() + long(end));
    PaddedBatch pb = pad_batch(batch, cfg);
    std::vector<float> carry_h(size_t(pb.b) * cfg.lstm_hidden, 0.f);
    std::vector<float> carry_c(size_t(pb.b) * cfg.lstm_hidden, 0.f);
    for (int t0 = 0; t0 < pb.t_max; t0 += chunk) {
      int t1 = std::min(pb.t_max, t0 + chunk);
      ChunkSums s = run_chunk(params, cfg, pb, t0, t1, carry_h, carry_c, train, opt, lr);
      gmm += s.gmm;
      mse += s.mse;
      bce += s.bce;
      n_any += s.n_any;
      n_gmm += s.n_gmm;
    }
  }
  agg.gmm = n_gmm > 0 ? gmm / double(n_gmm) : 0.0;
  agg.mse = n_any > 0 ? mse / double(n_any) : 0.0;
  agg.bce = n_any > 0 ? bce / double(n_any) : 0.0;
  agg.total = agg.gmm + agg.mse + agg.bce;
  return agg;
}

}  // namespace

MdnLossValue mdn_loss_eval(const ParamSet& params, const MdnConfig& cfg,
                           const std::vector<const LatentEpisode*>& batch) {
  ParamSet& p = const_cast<ParamSet&>(params);  // not modified on the eval path
  return accumulate_batches(p, cfg, batch, int(batch.size()), 1 << 20, false, nullptr, 0.f);
}

TrainedMdn train_mdn(const std::vector<LatentEpisode>& train,
                     const std::vector<LatentEpisode>& test, const MdnTrainConfig& cfg) {
  cfg.model.validate();
  if (train.empty() || test.empty()) throw InvalidArgument("train_mdn: empty episode set");
  Rng root(cfg.seed);
  Rng init_rng = root.fork("init");
  Rng shuffle_rng = root.fork("shuffle");
  ParamSet params = init_mdn_params(cfg.model, init_rng);
  AdamState opt(params);

  std::vector<const LatentEpisode*> test_ptrs;
  for (const auto& e : test) test_ptrs.push_back(&e);

  TrainedMdn out;
  EarlyStopper stopper(cfg.min_delta, cfg.patience);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    std::vector<const LatentEpisode*> train_ptrs;
    for (int i : order) train_ptrs.push_back(&train[size_t(i)]);
    MdnLossValue tr = accumulate_batches(params, cfg.model, train_ptrs, cfg.batch_episodes,
                                         cfg.bptt_chunk, true, &opt, cfg.lr);
    MdnLossValue te = accumulate_batches(params, cfg.model, test_ptrs, cfg.batch_episodes,
                                         cfg.bptt_chunk, false, nullptr, 0.f);
    out.log.push_back({epoch, tr.total, te.total, te.gmm, te.bce});
    if (te.total < best) {
      best = te.total;
      out.params = params;
      out.best_epoch = epoch;
    }
    if (stopper.observe(te.total)) break;
  }
  if (out.best_epoch < 0) {
    out.params = params;
    out.best_epoch = int(out.log.size());
  }
  return out;
}

}  // namespace cmwm
