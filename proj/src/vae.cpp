#include "cmwm/vae.hpp"

#include <sstream>

namespace cmwm {

ParamSet init_vae_params(const VaeConfig& cfg, Rng& rng) {
  ParamSet ps;
  const auto& ch = cfg.channels;
  auto conv = [&](const std::string& name, int in, int out) {
    init_he_uniform(ps.add(name + ".w", {out, in, 4, 4}), in * 16, rng);
    ps.add(name + ".b", {out});
  };
  conv("enc.conv1", cfg.in_channels, ch[0]);
  conv("enc.conv2", ch[0], ch[1]);
  conv("enc.conv3", ch[1], ch[2]);
  init_he_uniform(ps.add("enc.head.w", {cfg.flat_dim(), 2 * cfg.latent_dim}), cfg.flat_dim(), rng);
  ps.add("enc.head.b", {2 * cfg.latent_dim});

  init_he_uniform(ps.add("dec.head.w", {cfg.latent_dim, cfg.flat_dim()}), cfg.latent_dim, rng);
  ps.add("dec.head.b", {cfg.flat_dim()});
  auto deconv = [&](const std::string& name, int in, int out) {
    init_he_uniform(ps.add(name + ".w", {in, out, 4, 4}), in * 16, rng);
    ps.add(name + ".b", {out});
  };
  deconv("dec.deconv1", ch[2], ch[1]);
  deconv("dec.deconv2", ch[1], ch[0]);
  deconv("dec.deconv3", ch[0], cfg.in_channels);
  return ps;
}

std::pair<Tensor, Tensor> vae_encode_batch(const ParamSet& params, const VaeConfig& cfg,
                                           const std::vector<const Observation*>& frames) {
  if (frames.empty()) return {Tensor({0, cfg.latent_dim}), Tensor({0, cfg.latent_dim})};
  Graph g;
  // constants only: no gradient bookkeeping on the inference path
  std::vector<Graph::Var> vars;
  for (int i = 0; i < params.count(); ++i) vars.push_back(g.constant(params.tensor(i)));
  BoundView p{params, vars};
  auto x = g.constant(frames_to_input<float>(frames, cfg));
  auto h1 = activate(g, g.conv2d(x, p("enc.conv1.w"), p("enc.conv1.b"), 2, 1), cfg.activation);
  auto h2 = activate(g, g.conv2d(h1, p("enc.conv2.w"), p("enc.conv2.b"), 2, 1), cfg.activation);
  auto h3 = activate(g, g.conv2d(h2, p("enc.conv3.w"), p("enc.conv3.b"), 2, 1), cfg.activation);
  auto flat = g.reshape(h3, {int(frames.size()), cfg.flat_dim()});
  auto head = g.affine(flat, p("enc.head.w"), p("enc.head.b"));
  auto mu = g.slice_cols(head, 0, cfg.latent_dim);
  auto logvar = g.slice_cols(head, cfg.latent_dim, 2 * cfg.latent_dim);
  return {g.val(mu), g.val(logvar)};
}

std::vector<float> sample_z(const std::vector<float>& mu, const std::vector<float>& logvar,
                            Rng& rng) {
  if (mu.size() != logvar.size()) throw InvalidArgument("sample_z: size mismatch");
  std::vector<float> z(mu.size());
  for (size_t i = 0; i < mu.size(); ++i)
    z[i] = mu[i] + std::exp(0.5f * logvar[i]) * float(rng.normal());
  return z;
}

Tensor vae_decode_one(const ParamSet& params, const VaeConfig& cfg, const std::vector<float>& z) {
  if (int(z.size()) != cfg.latent_dim) throw InvalidArgument("vae_decode_one: bad latent size");
  Graph g;
  std::vector<Graph::Var> vars;
  for (int i = 0; i < params.count(); ++i) vars.push_back(g.constant(params.tensor(i)));
  BoundView p{params, vars};
  auto zv = g.constant(Tensor({1, cfg.latent_dim}, z));
  int fs = cfg.feat_spatial();
  auto h = activate(g, g.affine(zv, p("dec.head.w"), p("dec.head.b")), cfg.activation);
  auto vol = g.reshape(h, {1, cfg.channels[2], fs, fs});
  auto d1 = activate(g, g.deconv2d(vol, p("dec.deconv1.w"), p("dec.deconv1.b"), 2, 1),
                     cfg.activation);
  auto d2 = activate(g, g.deconv2d(d1, p("dec.deconv2.w"), p("dec.deconv2.b"), 2, 1),
                     cfg.activation);
  auto d3 = g.sigmoid_(g.deconv2d(d2, p("dec.deconv3.w"), p("dec.deconv3.b"), 2, 1));
  Tensor out = g.val(d3);
  out.shape = {cfg.in_channels, cfg.img_size, cfg.img_size};
  return out;
}

VaeLossValue vae_loss(const ParamSet& params, const VaeConfig& cfg, const Observation& obs,
                      Rng& rng) {
  Graph g;
  BoundParams<float> p(g, params);
  std::vector<const Observation*> one{&obs};
  auto xin = frames_to_input<float>(one, cfg);
  auto x_img = g.constant(xin);
  Tensor flat = xin;
  flat.shape = {1, int(cfg.pixel_count())};
  auto x_flat = g.constant(flat);
  Tensor eps({1, cfg.latent_dim});
  for (auto& v : eps.data) v = float(rng.normal());
  auto lg = vae_loss_graph(g, p, x_img, x_flat, eps, cfg);
  return {double(g.val(lg.total)[0]), double(g.val(lg.recon)[0]), double(g.val(lg.kl)[0])};
}

namespace {

std::vector<const Observation*> frame_pool(const Dataset& ds) {
  std::vector<const Observation*> pool;
  for (const auto& ep : ds.episodes)
    for (const auto& f : ep.frames) pool.push_back(&f);
  return pool;
}

struct BatchEval {
  double total = 0, recon = 0, kl = 0;
};

BatchEval eval_vae_batch(const ParamSet& params, const VaeConfig& cfg,
                         const std::vector<const Observation*>& frames, Rng& eps_rng,
                         bool backward, std::vector<Tensor>* grads) {
  Graph g;
  BoundParams<float> p(g, params);
  auto xin = frames_to_input<float>(frames, cfg);
  auto x_img = g.constant(xin);
  Tensor flat = xin;
  flat.shape = {int(frames.size()), int(cfg.pixel_count())};
  auto x_flat = g.constant(flat);
  Tensor eps({int(frames.size()), cfg.latent_dim});
  for (auto& v : eps.data) v = float(eps_rng.normal());
  auto lg = vae_loss_graph(g, p, x_img, x_flat, eps, cfg);
  BatchEval ev{double(g.val(lg.total)[0]), double(g.val(lg.recon)[0]), double(g.val(lg.kl)[0])};
  if (!std::isfinite(ev.total))
    throw TrainingError("vae training loss is non-finite (recon=" + fmt_g(ev.recon) +
                        " kl=" + fmt_g(ev.kl) + ")");
  if (backward) {
    g.backward(lg.total);
    *grads = extract_grads(g, p.vars());
  }
  return ev;
}

}  // namespace

TrainedVae train_vae(const Dataset& train, const Dataset& test, const VaeTrainConfig& cfg) {
  auto train_pool = frame_pool(train);
  auto test_pool = frame_pool(test);
  if (train_pool.empty()) throw InvalidArgument("train_vae: empty training set");
  if (test_pool.empty()) throw InvalidArgument("train_vae: empty test set");

  Rng root(cfg.seed);
  Rng init_rng = root.fork("init");
  Rng shuffle_rng = root.fork("shuffle");
  Rng noise_rng = root.fork("noise");

  ParamSet params = init_vae_params(cfg.model, init_rng);
  AdamState opt(params);

  // fixed deterministic test subsample + fixed eval noise seed
  std::vector<const Observation*> test_frames = test_pool;
  if (cfg.test_frames > 0 && int(test_pool.size()) > cfg.test_frames) {
    Rng pick = root.fork("testpick");
    std::vector<int> idx(test_pool.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
    pick.shuffle(idx);
    test_frames.clear();
    for (int i = 0; i < cfg.test_frames; ++i) test_frames.push_back(test_pool[size_t(idx[size_t(i)])]);
  }
  const uint64_t eval_noise_seed = root.fork("evalnoise").seed();

  TrainedVae out;
  EarlyStopper stopper(cfg.min_delta, cfg.patience);
  double best_loss = std::numeric_limits<double>::infinity();

  std::vector<int> order(train_pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    int use = int(order.size());
    if (cfg.frames_per_epoch > 0) use = std::min(use, cfg.frames_per_epoch);

    double train_total = 0;
    int64_t train_batches = 0;
    for (int off = 0; off + cfg.batch_size <= use; off += cfg.batch_size) {
      std::vector<const Observation*> batch;
      batch.reserve(size_t(cfg.batch_size));
      for (int i = 0; i < cfg.batch_size; ++i)
        batch.push_back(train_pool[size_t(order[size_t(off + i)])]);
      std::vector<Tensor> grads;
      BatchEval ev = eval_vae_batch(params, cfg.model, batch, noise_rng, true, &grads);
      adam_step(params, grads, opt, cfg.lr);
      train_total += ev.total;
      ++train_batches;
    }
    if (train_batches == 0) throw InvalidArgument("train_vae: batch size exceeds epoch frames");

    // deterministic test evaluation (fixed noise each epoch)
    Rng eval_rng(eval_noise_seed);
    double test_total = 0, test_recon = 0, test_kl = 0;
    int64_t test_batches = 0;
    for (size_t off = 0; off + 1 <= test_frames.size(); off += size_t(cfg.batch_size)) {
      size_t end = std::min(test_frames.size(), off + size_t(cfg.batch_size));
      std::vector<const Observation*> batch(test_frames.begin() + long(off),
                                            test_frames.begin() + long(end));
      BatchEval ev = eval_vae_batch(params, cfg.model, batch, eval_rng, false, nullptr);
      test_total += ev.total;
      test_recon += ev.recon;
      test_kl += ev.kl;
      ++test_batches;
    }
    test_total /= double(test_batches);
    test_recon /= double(test_batches);
    test_kl /= double(test_batches);

    out.log.push_back(
        {epoch, train_total / double(train_batches), test_total, test_recon, test_kl});

    if (test_total < best_loss) {
      best_loss = test_total;
      out.params = params;
      out.best_epoch = epoch;
    }
    if (stopper.observe(test_total)) break;
  }
  if (out.best_epoch < 0) {
    out.params = params;
    out.best_epoch = int(out.log.size());
  }
  return out;
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,train_loss,test_loss,recon,kl\n";
  for (const auto& e : log)
    os << e.epoch << "," << fmt_g(e.train_loss) << "," << fmt_g(e.test_loss) << ","
       << fmt_g(e.recon) << "," << fmt_g(e.kl) << "\n";
  return os.str();
}

std::vector<LatentEpisode> encode_dataset(const ParamSet& vae, const VaeConfig& cfg,
                                          const Dataset& ds, int encode_batch) {
  std::vector<LatentEpisode> out;
  out.reserve(ds.episodes.size());
  for (const auto& ep : ds.episodes) {
    LatentEpisode le;
    le.actions = ep.actions;
    le.rewards = ep.rewards;
    le.dones = ep.dones;
    le.z.reserve(size_t(ep.length()));
    for (int off = 0; off < ep.length(); off += encode_batch) {
      int end = std::min(ep.length(), off + encode_batch);
      std::vector<const Observation*> frames;
      for (int i = off; i < end; ++i) frames.push_back(&ep.frames[size_t(i)]);
      auto [mu, logvar] = vae_encode_batch(vae, cfg, frames);
      for (int b = 0; b < end - off; ++b)
        le.z.emplace_back(mu.ptr() + int64_t(b) * cfg.latent_dim,
                          mu.ptr() + int64_t(b + 1) * cfg.latent_dim);
    }
    out.push_back(std::move(le));
  }
  return out;
}

}  // namespace cmwm
