#include <doctest.h>

#include "cmwm/vae.hpp"

using namespace cmwm;

TEST_SUITE_BEGIN("vae");

namespace {

VaeConfig tiny_cfg() {
  VaeConfig cfg;
  cfg.img_size = 48;
  cfg.channels = {8, 12, 16};
  cfg.latent_dim = 8;
  return cfg;
}

Observation checkerboard(int phase) {
  Observation obs;
  for (int r = 0; r < 48; ++r)
    for (int c = 0; c < 48; ++c) {
      uint8_t v = ((r / 6 + c / 6 + phase) % 2) ? 220 : 30;
      uint8_t* p = obs.at(r, c);
      p[0] = v;
      p[1] = uint8_t(255 - v);
      p[2] = uint8_t((r * 5) % 256);
    }
  return obs;
}

}  // namespace

TEST_CASE("encode is pure and emits the configured latent width") {
  VaeConfig cfg;  // full-size: latent 64
  Rng rng(1);
  ParamSet params = init_vae_params(cfg, rng);
  Observation obs = checkerboard(0);
  auto [mu1, lv1] = vae_encode_batch(params, cfg, {&obs});
  auto [mu2, lv2] = vae_encode_batch(params, cfg, {&obs});
  CHECK(mu1.cols() == 64);
  CHECK(lv1.cols() == 64);
  CHECK(mu1.data == mu2.data);
  CHECK(lv1.data == lv2.data);
}

TEST_CASE("all-zero image encodes to finite values") {
  VaeConfig cfg = tiny_cfg();
  Rng rng(2);
  ParamSet params = init_vae_params(cfg, rng);
  Observation obs;  // all zeros
  auto [mu, lv] = vae_encode_batch(params, cfg, {&obs});
  CHECK(mu.all_finite());
  CHECK(lv.all_finite());
}

TEST_CASE("sample_z collapses to the mean at tiny variance") {
  Rng rng(3);
  std::vector<float> mu(8, 0.37f), logvar(8, -30.0f);
  auto z = sample_z(mu, logvar, rng);
  for (float v : z) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
}

TEST_CASE("sample_z matches N(0,1) moments over 10k draws") {
  Rng rng(4);
  std::vector<float> mu(4, 0.0f), logvar(4, 0.0f);
  std::vector<double> sum(4, 0), sum2(4, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto z = sample_z(mu, logvar, rng);
    for (int j = 0; j < 4; ++j) {
      sum[size_t(j)] += z[size_t(j)];
      sum2[size_t(j)] += double(z[size_t(j)]) * z[size_t(j)];
    }
  }
  for (int j = 0; j < 4; ++j) {
    double mean = sum[size_t(j)] / n;
    double var = sum2[size_t(j)] / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(var > 0.9);
    CHECK(var < 1.1);
  }
}

TEST_CASE("sample_z is reproducible for a fixed seed") {
  std::vector<float> mu(6, 0.1f), logvar(6, -1.0f);
  Rng a(9), b(9);
  CHECK(sample_z(mu, logvar, a) == sample_z(mu, logvar, b));
}

TEST_CASE("decode produces the observation shape with values in (0,1)") {
  VaeConfig cfg = tiny_cfg();
  Rng rng(5);
  ParamSet params = init_vae_params(cfg, rng);
  std::vector<float> z(size_t(cfg.latent_dim), 0.3f);
  Tensor img = vae_decode_one(params, cfg, z);
  CHECK(img.shape == Shape{3, 48, 48});
  for (float v : img.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("kl closed form: zero posterior gives 0, unit mean shift gives 0.5") {
  // direct evaluation of the loss graph with forced mu/logvar via a stub:
  // compute kl by the formula on plain vectors and compare against the graph
  auto kl_formula = [](const std::vector<double>& mu, const std::vector<double>& lv) {
    double acc = 0;
    for (size_t i = 0; i < mu.size(); ++i)
      acc += std::exp(lv[i]) + mu[i] * mu[i] - 1.0 - lv[i];
    return 0.5 * acc;
  };
  std::vector<double> mu(64, 0.0), lv(64, 0.0);
  CHECK(kl_formula(mu, lv) == doctest::Approx(0.0));
  mu[0] = 1.0;
  CHECK(kl_formula(mu, lv) == doctest::Approx(0.5));

  // graph path against a direct-summation oracle on random values
  Rng rng(6);
  GraphD g;
  auto muv = g.leaf(random_uniform<double>(rng, {1, 64}, -2, 2));
  auto lvv = g.leaf(random_uniform<double>(rng, {1, 64}, -2, 2));
  auto kl_terms = g.sub(g.add(g.exp_(lvv), g.square(muv)), g.add_const(lvv, 1.0));
  auto kl = g.scale(g.sum_all(kl_terms), 0.5);
  std::vector<double> mu2(g.val(muv).data), lv2(g.val(lvv).data);
  CHECK(g.val(kl)[0] == doctest::Approx(kl_formula(mu2, lv2)).epsilon(1e-9));
}

TEST_CASE("perfect reconstruction yields zero recon term") {
  GraphD g;
  auto a = g.leaf(TensorT<double>({1, 12}, std::vector<double>(12, 0.4)));
  auto b = g.constant(TensorT<double>({1, 12}, std::vector<double>(12, 0.4)));
  auto recon = g.sum_all(g.square(g.sub(a, b)));
  CHECK(g.val(recon)[0] == doctest::Approx(0.0));
}

TEST_CASE("vae loss gradient check (tiny tanh instance)") {
  VaeConfig cfg;
  cfg.img_size = 8;
  cfg.channels = {2, 3, 4};
  cfg.latent_dim = 3;
  cfg.activation = Activation::Tanh;
  Rng rng(7);
  ParamSet params = init_vae_params(cfg, rng);
  std::vector<TensorT<double>> init;
  for (int i = 0; i < params.count(); ++i) init.push_back(params.tensor(i).cast<double>());
  Observation obs;  // unused; craft an 8x8 input directly
  TensorT<double> x({1, 3, 8, 8});
  for (auto& v : x.data) v = rng.uniform();
  TensorT<double> eps({1, 3});
  for (auto& v : eps.data) v = rng.normal();
  auto builder = [&](GraphD& g, const std::vector<GraphD::Var>& vars) {
    // rebuild BoundParams-equivalent from explicit leaves
    GraphD::Var x_img = g.constant(x);
    TensorT<double> flat = x;
    flat.shape = {1, 192};
    GraphD::Var x_flat = g.constant(flat);
    struct View {
      const ParamSet& ps;
      const std::vector<GraphD::Var>& vs;
      GraphD::Var operator[](const std::string& n) const {
        for (int i = 0; i < ps.count(); ++i)
          if (ps.name(i) == n) return vs[size_t(i)];
        throw InvalidArgument("unknown " + n);
      }
    } view{params, vars};
    auto h1 = g.tanh_(g.conv2d(x_img, view["enc.conv1.w"], view["enc.conv1.b"], 2, 1));
    auto h2 = g.tanh_(g.conv2d(h1, view["enc.conv2.w"], view["enc.conv2.b"], 2, 1));
    auto h3 = g.tanh_(g.conv2d(h2, view["enc.conv3.w"], view["enc.conv3.b"], 2, 1));
    auto flatv = g.reshape(h3, {1, cfg.flat_dim()});
    auto head = g.affine(flatv, view["enc.head.w"], view["enc.head.b"]);
    auto mu = g.slice_cols(head, 0, cfg.latent_dim);
    auto logvar = g.slice_cols(head, cfg.latent_dim, 2 * cfg.latent_dim);
    auto z = g.add(mu, g.mul(g.exp_(g.scale(logvar, 0.5)), g.constant(eps)));
    auto hd = g.tanh_(g.affine(z, view["dec.head.w"], view["dec.head.b"]));
    auto vol = g.reshape(hd, {1, cfg.channels[2], 1, 1});
    auto d1 = g.tanh_(g.deconv2d(vol, view["dec.deconv1.w"], view["dec.deconv1.b"], 2, 1));
    auto d2 = g.tanh_(g.deconv2d(d1, view["dec.deconv2.w"], view["dec.deconv2.b"], 2, 1));
    auto d3 = g.sigmoid_(g.deconv2d(d2, view["dec.deconv3.w"], view["dec.deconv3.b"], 2, 1));
    auto xr = g.reshape(d3, {1, 192});
    auto recon = g.sum_all(g.square(g.sub(xr, x_flat)));
    auto kl_terms = g.sub(g.add(g.exp_(logvar), g.square(mu)), g.add_const(logvar, 1.0));
    auto kl = g.scale(g.sum_all(kl_terms), 0.5);
    return g.add(recon, kl);
  };
  auto res = gradient_check(init, builder);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("overfit one frame: decoded mean reconstruction reaches mse < 0.01") {
  VaeConfig cfg = tiny_cfg();
  VaeTrainConfig tc;
  tc.model = cfg;
  tc.batch_size = 4;
  tc.max_epochs = 400;
  tc.patience = 400;
  tc.lr = 2e-3f;
  tc.seed = 13;
  Dataset train, test;
  Episode ep;
  Observation target = checkerboard(0);
  for (int i = 0; i < 8; ++i) {
    ep.frames.push_back(target);
    ep.actions.push_back(0);
    ep.rewards.push_back(0.f);
    ep.dones.push_back(0);
  }
  train.episodes.push_back(ep);
  test.episodes.push_back(ep);
  TrainedVae tv = train_vae(train, test, tc);

  auto [mu, lv] = vae_encode_batch(tv.params, cfg, {&target});
  std::vector<float> z(mu.data.begin(), mu.data.begin() + cfg.latent_dim);
  Tensor rec = vae_decode_one(tv.params, cfg, z);
  std::vector<const Observation*> one{&target};
  auto xin = frames_to_input<float>(one, cfg);
  double mse = 0;
  for (int64_t i = 0; i < rec.size(); ++i) {
    double d = double(rec[i]) - double(xin[i]);
    mse += d * d;
  }
  mse /= double(rec.size());
  CHECK(mse < 0.01);
}

TEST_CASE("early stopping fires after exactly 30 stagnant epochs on a flat stream") {
  EarlyStopper st(1e-4, 30);
  int epochs = 0;
  bool stopped = false;
  for (int i = 0; i < 100 && !stopped; ++i) {
    ++epochs;
    stopped = st.observe(1.0);
  }
  CHECK(stopped);
  // first observation improves on +inf; the next 30 are stagnant
  CHECK(epochs == 31);
  CHECK(st.stagnant_epochs() == 30);
}

TEST_CASE("epoch cap is honored when no early stop fires") {
  VaeConfig cfg = tiny_cfg();
  VaeTrainConfig tc;
  tc.model = cfg;
  tc.batch_size = 2;
  tc.max_epochs = 3;
  tc.patience = 100;
  tc.seed = 21;
  Dataset train, test;
  Episode ep;
  for (int i = 0; i < 4; ++i) {
    ep.frames.push_back(checkerboard(i));
    ep.actions.push_back(0);
    ep.rewards.push_back(0.f);
    ep.dones.push_back(0);
  }
  train.episodes.push_back(ep);
  test.episodes.push_back(ep);
  TrainedVae tv = train_vae(train, test, tc);
  CHECK(tv.log.size() == 3);
}

TEST_CASE("training loss is finite at every logged epoch") {
  VaeConfig cfg = tiny_cfg();
  VaeTrainConfig tc;
  tc.model = cfg;
  tc.batch_size = 4;
  tc.max_epochs = 5;
  tc.seed = 23;
  Dataset train, test;
  Episode ep;
  for (int i = 0; i < 12; ++i) {
    ep.frames.push_back(checkerboard(i % 3));
    ep.actions.push_back(0);
    ep.rewards.push_back(0.f);
    ep.dones.push_back(0);
  }
  train.episodes.push_back(ep);
  test.episodes.push_back(ep);
  TrainedVae tv = train_vae(train, test, tc);
  for (const auto& e : tv.log) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.test_loss));
  }
}

TEST_SUITE_END();
