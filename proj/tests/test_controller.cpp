#include <doctest.h>

#include "cmwm/controller.hpp"

using namespace cmwm;

TEST_SUITE_BEGIN("controller");

namespace {

ControllerConfig tiny_ctrl() {
  ControllerConfig c;
  c.input_dim = 6;
  c.hidden = 16;
  return c;
}

}  // namespace

TEST_CASE("policy emits 9 logits and is pure") {
  ControllerConfig cfg = tiny_ctrl();
  Rng rng(1);
  ParamSet ps = init_controller_params(cfg, rng);
  std::vector<float> z(6, 0.25f);
  PolicyOutput a = policy_forward(ps, cfg, z);
  PolicyOutput b = policy_forward(ps, cfg, z);
  CHECK(a.logits.size() == 9);
  CHECK(a.logits == b.logits);
  CHECK(a.value == b.value);
}

TEST_CASE("zero parameters give the uniform policy") {
  ControllerConfig cfg = tiny_ctrl();
  ParamSet ps;
  ps.add("fc.w", {cfg.input_dim, cfg.hidden});
  ps.add("fc.b", {cfg.hidden});
  ps.add("actor.w", {cfg.hidden, cfg.actions});
  ps.add("actor.b", {cfg.actions});
  ps.add("critic.w", {cfg.hidden, 1});
  ps.add("critic.b", {1});
  std::vector<float> z(6, 0.9f);
  auto p = softmax(policy_forward(ps, cfg, z).logits);
  for (float v : p) CHECK(v == doctest::Approx(1.0 / 9.0).epsilon(1e-6));
}

TEST_CASE("greedy tie-break picks the lowest index") {
  ControllerConfig cfg = tiny_ctrl();
  ParamSet ps;
  ps.add("fc.w", {cfg.input_dim, cfg.hidden});
  ps.add("fc.b", {cfg.hidden});
  ps.add("actor.w", {cfg.hidden, cfg.actions});
  ps.add("actor.b", {cfg.actions});  // all-zero logits
  ps.add("critic.w", {cfg.hidden, 1});
  ps.add("critic.b", {1});
  Rng rng(2);
  std::vector<float> z(6, 0.1f);
  CHECK(act(ps, cfg, z, rng, true).action == 0);
}

TEST_CASE("greedy action is invariant to a constant logit shift") {
  ControllerConfig cfg = tiny_ctrl();
  Rng rng(3);
  ParamSet ps = init_controller_params(cfg, rng);
  std::vector<float> z(6);
  for (auto& v : z) v = float(rng.uniform(-1, 1));
  Rng r1(7), r2(7);
  int base = act(ps, cfg, z, r1, true).action;
  ParamSet shifted = ps;
  for (auto& v : shifted.at("actor.b").data) v += 5.0f;
  CHECK(act(shifted, cfg, z, r2, true).action == base);
}

TEST_CASE("stochastic logprob equals log softmax of the chosen action") {
  ControllerConfig cfg = tiny_ctrl();
  Rng rng(5);
  ParamSet ps = init_controller_params(cfg, rng);
  std::vector<float> z(6);
  for (auto& v : z) v = float(rng.uniform(-1, 1));
  auto logits = policy_forward(ps, cfg, z).logits;
  Rng arng(11);
  ActResult r = act(ps, cfg, z, arng, false);
  double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0;
  for (float v : logits) denom += std::exp(double(v) - mx);
  double expect = double(logits[size_t(r.action)]) - mx - std::log(denom);
  CHECK(r.logprob == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("10k stochastic draws match softmax frequencies within 3 SE") {
  ControllerConfig cfg = tiny_ctrl();
  Rng rng(13);
  ParamSet ps = init_controller_params(cfg, rng);
  std::vector<float> z(6);
  for (auto& v : z) v = float(rng.uniform(-1, 1));
  auto p = softmax(policy_forward(ps, cfg, z).logits);
  std::vector<int> counts(9, 0);
  Rng arng(17);
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[size_t(act(ps, cfg, z, arng, false).action)];
  for (int a = 0; a < 9; ++a) {
    double freq = double(counts[size_t(a)]) / n;
    double se = std::sqrt(double(p[size_t(a)]) * (1 - double(p[size_t(a)])) / n);
    CHECK(std::abs(freq - double(p[size_t(a)])) <= 3 * se + 1e-9);
  }
}

TEST_CASE("gae: lambda 0 collapses to the one-step TD error") {
  TrajectoryBatch b;
  b.z = {{0.f}, {0.f}, {0.f}};
  b.actions = {0, 0, 0};
  b.logprob_old = {0, 0, 0};
  b.rewards = {1.f, 2.f, 3.f};
  b.dones = {0, 0, 0};
  b.values_old = {0.5f, 1.0f, 1.5f};
  compute_gae(b, 0.9f, 0.0f, 2.0f);
  CHECK(b.advantages[0] == doctest::Approx(1.0 + 0.9 * 1.0 - 0.5));
  CHECK(b.advantages[1] == doctest::Approx(2.0 + 0.9 * 1.5 - 1.0));
  CHECK(b.advantages[2] == doctest::Approx(3.0 + 0.9 * 2.0 - 1.5));
}

TEST_CASE("gae: lambda 1, gamma 1, zero values gives reward-to-go") {
  TrajectoryBatch b;
  b.z = {{0.f}, {0.f}, {0.f}};
  b.actions = {0, 0, 0};
  b.logprob_old = {0, 0, 0};
  b.rewards = {1.f, 2.f, 3.f};
  b.dones = {0, 0, 1};
  b.values_old = {0.f, 0.f, 0.f};
  compute_gae(b, 1.0f, 1.0f, 99.f);  // terminal cut ignores the bootstrap
  CHECK(b.advantages[0] == doctest::Approx(6.0));
  CHECK(b.advantages[1] == doctest::Approx(5.0));
  CHECK(b.advantages[2] == doctest::Approx(3.0));
}

TEST_CASE("gae: three-step hand recursion") {
  TrajectoryBatch b;
  b.z = {{0.f}, {0.f}, {0.f}};
  b.actions = {0, 0, 0};
  b.logprob_old = {0, 0, 0};
  b.rewards = {1.f, 1.f, 1.f};
  b.dones = {0, 0, 0};
  b.values_old = {0.f, 0.f, 0.f};
  compute_gae(b, 0.5f, 0.5f, 0.0f);
  CHECK(b.advantages[2] == doctest::Approx(1.0));
  CHECK(b.advantages[1] == doctest::Approx(1.25));
  CHECK(b.advantages[0] == doctest::Approx(1.3125));
  CHECK(b.returns[0] == doctest::Approx(1.3125));
}

TEST_CASE("clip arithmetic: ratio 2 with positive advantage selects 1.1*A") {
  Graph g;
  auto ratio = g.constant(Tensor({1, 1}, {2.0f}));
  auto adv = g.constant(Tensor({1, 1}, {0.7f}));
  auto s1 = g.mul(ratio, adv);
  auto s2 = g.mul(g.clampc(ratio, 0.9f, 1.1f), adv);
  auto surr = g.vmin(s1, s2);
  CHECK(g.val(surr)[0] == doctest::Approx(1.1f * 0.7f));
}

TEST_CASE("ratio 1 everywhere makes the surrogate the mean advantage") {
  ControllerConfig cfg = tiny_ctrl();
  Rng rng(19);
  ParamSet ps = init_controller_params(cfg, rng);
  const int m = 8;
  Tensor zb({m, cfg.input_dim});
  for (auto& v : zb.data) v = float(rng.uniform(-1, 1));
  std::vector<int> acts;
  Tensor lp({m, 1}), ad({m, 1}), rt({m, 1});
  Graph g0;
  BoundParams<float> p0(g0, ps);
  auto h0 = g0.tanh_(g0.affine(g0.constant(zb), p0["fc.w"], p0["fc.b"]));
  auto logits0 = g0.affine(h0, p0["actor.w"], p0["actor.b"]);
  auto lsm0 = g0.log_softmax_rows(logits0);
  double mean_adv = 0;
  for (int i = 0; i < m; ++i) {
    int a = i % 9;
    acts.push_back(a);
    lp[i] = g0.val(lsm0).at2(i, a);  // old logprob = current -> ratio 1
    ad[i] = float(rng.uniform(-1, 1));
    rt[i] = 0.f;
    mean_adv += double(ad[i]);
  }
  mean_adv /= m;
  PpoConfig ppo;
  Graph g;
  BoundParams<float> p(g, ps);
  auto h = g.tanh_(g.affine(g.constant(zb), p["fc.w"], p["fc.b"]));
  auto logits = g.affine(h, p["actor.w"], p["actor.b"]);
  auto values = g.affine(h, p["critic.w"], p["critic.b"]);
  auto lv = ppo_loss_graph(g, logits, values, acts, lp, ad, rt, ppo);
  CHECK(double(g.val(lv.policy_loss)[0]) == doctest::Approx(-mean_adv).epsilon(1e-5));
  for (int64_t i = 0; i < g.val(lv.ratio).size(); ++i)
    CHECK(double(g.val(lv.ratio)[i]) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("entropy of the uniform policy equals ln 9") {
  GraphD g;
  auto logits = g.constant(TensorT<double>({4, 9}));
  auto logp = g.log_softmax_rows(logits);
  auto ent = g.scale(g.sum_all(g.mul(g.exp_(logp), logp)), -1.0 / 4.0);
  CHECK(g.val(ent)[0] == doctest::Approx(std::log(9.0)).epsilon(1e-9));
}

TEST_CASE("ppo loss gradient check (away from clip kinks)") {
  ControllerConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = 5;
  Rng rng(23);
  std::vector<TensorT<double>> init{
      random_uniform<double>(rng, {3, 5}, -0.5, 0.5),   // fc.w
      random_uniform<double>(rng, {5}, -0.2, 0.2),      // fc.b
      random_uniform<double>(rng, {5, 9}, -0.5, 0.5),   // actor.w
      random_uniform<double>(rng, {9}, -0.2, 0.2),      // actor.b
      random_uniform<double>(rng, {5, 1}, -0.5, 0.5),   // critic.w
      random_uniform<double>(rng, {1}, -0.2, 0.2),      // critic.b
  };
  const int m = 6;
  auto zb = random_uniform<double>(rng, {m, 3}, -1, 1);
  std::vector<int> acts;
  TensorT<double> lp({m, 1}), ad({m, 1}), rt({m, 1});
  for (int i = 0; i < m; ++i) {
    acts.push_back(rng.uniform_int(9));
    // old logprobs far from the current policy keep ratios off the clip kinks
    lp[i] = -2.1972;  // log(1/9)
    ad[i] = (i % 2) ? 0.8 : -0.6;
    rt[i] = rng.uniform(-1, 1);
  }
  const double clip = 0.5;
  auto builder = [&](GraphD& g, const std::vector<GraphD::Var>& p) {
    auto h = g.tanh_(g.affine(g.constant(zb), p[0], p[1]));
    auto logits = g.affine(h, p[2], p[3]);
    auto values = g.affine(h, p[4], p[5]);
    auto logp_all = g.log_softmax_rows(logits);
    auto onehot = g.constant(one_hot_rows<double>(acts, 9));
    auto logp = g.row_sum(g.mul(logp_all, onehot));
    auto ratio = g.exp_(g.sub(logp, g.constant(lp)));
    auto adv = g.constant(ad);
    auto s1 = g.mul(ratio, adv);
    auto s2 = g.mul(g.clampc(ratio, 1.0 - clip, 1.0 + clip), adv);
    auto policy_loss = g.scale(g.sum_all(g.vmin(s1, s2)), -1.0 / m);
    auto value_loss = g.scale(g.sum_all(g.square(g.sub(values, g.constant(rt)))), 1.0 / m);
    auto entropy = g.scale(g.sum_all(g.mul(g.exp_(logp_all), logp_all)), -1.0 / m);
    return g.add(g.add(policy_loss, g.scale(value_loss, 0.5)), g.scale(entropy, -0.01));
  };
  // reject instances with a ratio near the clip boundary (kink in min/clamp)
  {
    GraphD g;
    std::vector<GraphD::Var> vars;
    for (auto& t : init) vars.push_back(g.leaf(t));
    builder(g, vars);
  }
  auto res = gradient_check(init, builder);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("with a huge clip epsilon the gradient matches the unclipped surrogate") {
  ControllerConfig cfg = tiny_ctrl();
  Rng rng(29);
  ParamSet ps = init_controller_params(cfg, rng);
  const int m = 5;
  Tensor zb({m, cfg.input_dim});
  for (auto& v : zb.data) v = float(rng.uniform(-1, 1));
  std::vector<int> acts{0, 3, 5, 7, 8};
  Tensor lp({m, 1}), ad({m, 1}), rt({m, 1});
  for (int i = 0; i < m; ++i) {
    lp[i] = -2.0f;
    ad[i] = float(rng.uniform(-1, 1));
    rt[i] = float(rng.uniform(-1, 1));
  }
  auto grads_for = [&](bool clipped) {
    Graph g;
    BoundParams<float> p(g, ps);
    auto h = g.tanh_(g.affine(g.constant(zb), p["fc.w"], p["fc.b"]));
    auto logits = g.affine(h, p["actor.w"], p["actor.b"]);
    auto logp_all = g.log_softmax_rows(logits);
    auto onehot = g.constant(one_hot_rows<float>(acts, 9));
    auto logp = g.row_sum(g.mul(logp_all, onehot));
    auto ratio = g.exp_(g.sub(logp, g.constant(lp)));
    auto adv = g.constant(ad);
    Graph::Var surr;
    if (clipped) {
      auto s2 = g.mul(g.clampc(ratio, 1.f - 1e6f, 1.f + 1e6f), adv);
      surr = g.vmin(g.mul(ratio, adv), s2);
    } else {
      surr = g.mul(ratio, adv);
    }
    auto loss = g.scale(g.sum_all(surr), -1.f / float(m));
    g.backward(loss);
    return extract_grads(g, p.vars());
  };
  auto a = grads_for(true);
  auto b = grads_for(false);
  for (size_t i = 0; i < a.size(); ++i)
    for (int64_t j = 0; j < a[i].size(); ++j)
      CHECK(double(a[i][j]) == doctest::Approx(double(b[i][j])).epsilon(1e-9));
}

TEST_CASE("ppo_update runs, keeps clip fraction in range, and moves params") {
  ControllerConfig cfg = tiny_ctrl();
  Rng rng(31);
  ParamSet ps = init_controller_params(cfg, rng);
  AdamState opt(ps);
  TrajectoryBatch b;
  Rng drng(33);
  for (int i = 0; i < 64; ++i) {
    std::vector<float> z(6);
    for (auto& v : z) v = float(drng.uniform(-1, 1));
    ActResult a = act(ps, cfg, z, drng, false);
    b.z.push_back(z);
    b.actions.push_back(a.action);
    b.logprob_old.push_back(a.logprob);
    b.rewards.push_back(float(drng.uniform(-1, 1)));
    b.dones.push_back(i % 16 == 15);
    b.values_old.push_back(a.value);
  }
  compute_gae(b, 0.99f, 0.95f, 0.f);
  PpoConfig ppo;
  ppo.minibatch = 32;
  uint64_t before = ps.content_hash();
  Rng urng(35);
  PpoStats st = ppo_update(ps, opt, cfg, b, ppo, urng);
  CHECK(ps.content_hash() != before);
  CHECK(st.clip_fraction >= 0.0);
  CHECK(st.clip_fraction <= 1.0);
  CHECK(std::isfinite(st.policy_loss));
}

TEST_CASE("offline config uses the 10x reduced clip epsilon") {
  PpoConfig online;
  PpoConfig offline = online;
  offline.clip_epsilon = 0.01f;
  CHECK(online.clip_epsilon == doctest::Approx(0.1f));
  CHECK(offline.clip_epsilon == doctest::Approx(online.clip_epsilon / 10.f));
}

TEST_SUITE_END();
