#include "cmwm/controller.hpp"

#include <sstream>

namespace cmwm {

ParamSet init_controller_params(const ControllerConfig& cfg, Rng& rng) {
  ParamSet ps;
  init_he_uniform(ps.add("fc.w", {cfg.input_dim, cfg.hidden}), cfg.input_dim, rng);
  ps.add("fc.b", {cfg.hidden});
  init_he_uniform(ps.add("actor.w", {cfg.hidden, cfg.actions}), cfg.hidden, rng);
  ps.add("actor.b", {cfg.actions});
  init_he_uniform(ps.add("critic.w", {cfg.hidden, 1}), cfg.hidden, rng);
  ps.add("critic.b", {1});
  return ps;
}

PolicyOutput policy_forward(const ParamSet& params, const ControllerConfig& cfg,
                            const std::vector<float>& z) {
  if (int(z.size()) != cfg.input_dim)
    throw InvalidArgument("policy_forward: latent size " + std::to_string(z.size()) +
                          " does not match input_dim " + std::to_string(cfg.input_dim));
  std::vector<float> h(params.at("fc.b").data);
  gemm(z.data(), params.at("fc.w").ptr(), h.data(), 1, cfg.input_dim, cfg.hidden, true);
  for (auto& v : h) v = std::tanh(v);
  PolicyOutput out;
  out.logits = params.at("actor.b").data;
  gemm(h.data(), params.at("actor.w").ptr(), out.logits.data(), 1, cfg.hidden, cfg.actions, true);
  std::vector<float> v(params.at("critic.b").data);
  gemm(h.data(), params.at("critic.w").ptr(), v.data(), 1, cfg.hidden, 1, true);
  out.value = v[0];
  return out;
}

std::vector<float> softmax(const std::vector<float>& logits) {
  float mx = logits[0];
  for (float v : logits) mx = std::max(mx, v);
  double denom = 0;
  std::vector<float> p(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) denom += std::exp(double(logits[i]) - mx);
  for (size_t i = 0; i < logits.size(); ++i)
    p[i] = float(std::exp(double(logits[i]) - mx) / denom);
  return p;
}

ActResult act(const ParamSet& params, const ControllerConfig& cfg, const std::vector<float>& z,
              Rng& rng, bool greedy) {
  PolicyOutput out = policy_forward(params, cfg, z);
  ActResult res;
  res.value = out.value;
  if (greedy) {
    int best = 0;
    for (int i = 1; i < int(out.logits.size()); ++i)
      if (out.logits[size_t(i)] > out.logits[size_t(best)]) best = i;
    res.action = best;
  } else {
    std::vector<float> p = softmax(out.logits);
    double u = rng.uniform();
    double acc = 0;
    res.action = int(p.size()) - 1;
    for (size_t i = 0; i < p.size(); ++i) {
      acc += double(p[i]);
      if (u < acc) {
        res.action = int(i);
        break;
      }
    }
  }
  // exact log softmax at the chosen index
  float mx = out.logits[0];
  for (float v : out.logits) mx = std::max(mx, v);
  double denom = 0;
  for (float v : out.logits) denom += std::exp(double(v) - mx);
  res.logprob = double(out.logits[size_t(res.action)]) - mx - std::log(denom);
  return res;
}

void compute_gae(TrajectoryBatch& batch, float gamma, float lambda, float bootstrap_value) {
  const int n = batch.size();
  if (int(batch.rewards.size()) != n || int(batch.values_old.size()) != n ||
      int(batch.dones.size()) != n)
    throw InvalidArgument("compute_gae: misaligned batch fields");
  batch.advantages.assign(size_t(n), 0.f);
  batch.returns.assign(size_t(n), 0.f);
  double gae = 0;
  for (int t = n - 1; t >= 0; --t) {
    bool done = batch.dones[size_t(t)] != 0;
    double v_next = done ? 0.0
                         : (t + 1 < n ? double(batch.values_old[size_t(t + 1)])
                                      : double(bootstrap_value));
    double delta =
        double(batch.rewards[size_t(t)]) + double(gamma) * v_next - double(batch.values_old[size_t(t)]);
    gae = delta + double(gamma) * double(lambda) * (done ? 0.0 : gae);
    batch.advantages[size_t(t)] = float(gae);
    batch.returns[size_t(t)] = float(gae + double(batch.values_old[size_t(t)]));
  }
}

PpoLossVars ppo_loss_graph(Graph& g, Graph::Var logits, Graph::Var values,
                           const std::vector<int>& actions, const Tensor& logprob_old,
                           const Tensor& advantages, const Tensor& returns,
                           const PpoConfig& ppo) {
  const int m = int(actions.size());
  const int a_dim = g.val(logits).cols();
  auto logp_all = g.log_softmax_rows(logits);
  auto onehot = g.constant(one_hot_rows<float>(actions, a_dim));
  auto logp = g.row_sum(g.mul(logp_all, onehot));
  auto ratio = g.exp_(g.sub(logp, g.constant(logprob_old)));
  auto adv = g.constant(advantages);
  auto s1 = g.mul(ratio, adv);
  auto s2 = g.mul(g.clampc(ratio, 1.f - ppo.clip_epsilon, 1.f + ppo.clip_epsilon), adv);
  auto policy_loss = g.scale(g.sum_all(g.vmin(s1, s2)), -1.f / float(m));
  auto value_loss = g.scale(g.sum_all(g.square(g.sub(values, g.constant(returns)))),
                            1.f / float(m));
  auto entropy = g.scale(g.sum_all(g.mul(g.exp_(logp_all), logp_all)), -1.f / float(m));
  auto loss = g.add(g.add(policy_loss, g.scale(value_loss, ppo.value_coef)),
                    g.scale(entropy, -ppo.entropy_coef));
  return {loss, ratio, policy_loss, value_loss, entropy};
}

PpoStats ppo_update(ParamSet& params, AdamState& opt, const ControllerConfig& cfg,
                    const TrajectoryBatch& batch, const PpoConfig& ppo, Rng& rng) {
  const int n = batch.size();
  if (n == 0) throw InvalidArgument("ppo_update: empty batch");
  if (int(batch.advantages.size()) != n)
    throw ContractViolation("ppo_update: advantages not computed");

  // normalize advantages to mean 0, std 1 over the batch
  std::vector<float> adv = batch.advantages;
  double mean = 0;
  for (float a : adv) mean += a;
  mean /= n;
  double var = 0;
  for (float a : adv) var += (a - mean) * (a - mean);
  double stdev = std::sqrt(var / n) + 1e-8;
  for (auto& a : adv) a = float((a - mean) / stdev);

  std::vector<int> order(static_cast<size_t>(n), 0);
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;

  PpoStats stats;
  int updates = 0;
  for (int epoch = 0; epoch < ppo.epochs_per_batch; ++epoch) {
    rng.shuffle(order);
    for (int off = 0; off < n; off += ppo.minibatch) {
      int end = std::min(n, off + ppo.minibatch);
      int m = end - off;
      if (m < 2) continue;
      Tensor zb({m, cfg.input_dim});
      Tensor lp({m, 1}), ad({m, 1}), rt({m, 1});
      std::vector<int> acts(static_cast<size_t>(m), 0);
      for (int i = 0; i < m; ++i) {
        int src = order[size_t(off + i)];
        std::copy(batch.z[size_t(src)].begin(), batch.z[size_t(src)].end(),
                  zb.ptr() + int64_t(i) * cfg.input_dim);
        acts[size_t(i)] = batch.actions[size_t(src)];
        lp[i] = batch.logprob_old[size_t(src)];
        ad[i] = adv[size_t(src)];
        rt[i] = batch.returns[size_t(src)];
      }
      Graph g;
      BoundParams<float> p(g, params);
      auto h = g.tanh_(g.affine(g.constant(zb), p["fc.w"], p["fc.b"]));
      auto logits = g.affine(h, p["actor.w"], p["actor.b"]);
      auto values = g.affine(h, p["critic.w"], p["critic.b"]);
      auto lv = ppo_loss_graph(g, logits, values, acts, lp, ad, rt, ppo);
      if (!std::isfinite(double(g.val(lv.loss)[0])))
        throw TrainingError("ppo_update: non-finite loss");
      g.backward(lv.loss);
      auto grads = extract_grads(g, p.vars());
      adam_step(params, grads, opt, ppo.lr);

      const auto& ratio = g.val(lv.ratio);
      double rsum = 0, clipped = 0;
      for (int64_t i = 0; i < ratio.size(); ++i) {
        rsum += double(ratio[i]);
        if (std::abs(double(ratio[i]) - 1.0) > double(ppo.clip_epsilon)) clipped += 1;
      }
      stats.mean_ratio += rsum / double(m);
      stats.clip_fraction += clipped / double(m);
      stats.policy_loss += double(g.val(lv.policy_loss)[0]);
      stats.value_loss += double(g.val(lv.value_loss)[0]);
      stats.entropy += double(g.val(lv.entropy)[0]);
      ++updates;
    }
  }
  if (updates > 0) {
    stats.mean_ratio /= updates;
    stats.clip_fraction /= updates;
    stats.policy_loss /= updates;
    stats.value_loss /= updates;
    stats.entropy /= updates;
  }
  return stats;
}

OnlineResult train_online(ParamSet start_params, const ParamSet& vae, const VaeConfig& vae_cfg,
                          const OnlineTrainConfig& cfg) {
  if (cfg.budget_steps <= 0) throw InvalidArgument("train_online: budget must be positive");
  std::vector<TrackSpec> tracks;
  for (int r = 0; r < 5; ++r) tracks.push_back(make_track(r, cfg.split));

  Rng root(cfg.seed);
  Rng act_rng = root.fork("act");
  Rng ppo_rng = root.fork("ppo");
  Rng scen_rng = root.fork("scenario");

  OnlineResult out;
  out.params = std::move(start_params);
  out.rollouts.env_meta.jitter_pos = cfg.jitter.pos;
  out.rollouts.env_meta.jitter_heading = cfg.jitter.heading;
  out.rollouts.env_meta.split = cfg.split;
  AdamState opt(out.params);

  auto encode_one = [&](const Observation& obs) {
    auto [mu, logvar] = vae_encode_batch(vae, vae_cfg, {&obs});
    return std::vector<float>(mu.data.begin(), mu.data.begin() + vae_cfg.latent_dim);
  };

  TrajectoryBatch buf;
  int64_t steps = 0;
  int ep_index = 0;
  while (steps < cfg.budget_steps) {
    int route = ep_index % 5;
    uint64_t ep_seed = mix_seed(cfg.seed, uint64_t(ep_index) * 2 + 1);
    std::optional<ObstacleScenario> scenario;
    if (cfg.obstacle_rate > 0 && scen_rng.uniform() < cfg.obstacle_rate)
      scenario = ObstacleScenario{scen_rng.uniform(cfg.obstacle_min_dist, cfg.obstacle_max_dist),
                                  cfg.obstacle_lifetime};
    auto [state, obs] = env_reset(tracks[size_t(route)], ep_seed, scenario, cfg.jitter);

    Episode log_ep;
    log_ep.route_id = route;
    log_ep.seed = ep_seed;
    log_ep.scenario = scenario;

    EnvState cur = state;
    Observation frame = obs;
    double ep_return = 0;
    double initial_d = cur.dist_to_goal;
    std::vector<float> z = encode_one(frame);
    while (!cur.done && steps < cfg.budget_steps) {
      ActResult a = act(out.params, cfg.ctrl, z, act_rng, /*greedy=*/false);
      StepResult res = env_step(tracks[size_t(route)], cur, Action{a.action});
      ++steps;
      ep_return += res.reward;

      if (cfg.record_rollouts) {
        log_ep.frames.push_back(frame);
        log_ep.actions.push_back(uint8_t(a.action));
        log_ep.rewards.push_back(float(res.reward));
        log_ep.dones.push_back(uint8_t(res.done && res.state.dist_to_goal < kGoalRadius));
      }

      buf.z.push_back(z);
      buf.actions.push_back(a.action);
      buf.logprob_old.push_back(float(a.logprob));
      buf.rewards.push_back(float(res.reward));
      buf.dones.push_back(uint8_t(res.done));
      buf.values_old.push_back(a.value);

      cur = res.state;
      frame = res.obs;
      z = encode_one(frame);

      if (buf.size() >= cfg.ppo.rollout_horizon) {
        float bootstrap = 0.f;
        if (!buf.dones.back())
          bootstrap = policy_forward(out.params, cfg.ctrl, z).value;
        compute_gae(buf, cfg.ppo.gamma, cfg.ppo.gae_lambda, bootstrap);
        ppo_update(out.params, opt, cfg.ctrl, buf, cfg.ppo, ppo_rng);
        buf.clear();
      }
    }
    if (cur.done) {
      out.curve.push_back({steps, ep_return,
                           std::clamp(cur.dist_to_goal / initial_d, 0.0, 1.0)});
      if (cfg.record_rollouts) out.rollouts.episodes.push_back(std::move(log_ep));
    }
    ++ep_index;
  }
  return out;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << "step,episode_return,norm_d\n";
  for (const auto& c : curve)
    os << c.step << "," << fmt_g(c.episode_return) << "," << fmt_g(c.norm_d) << "\n";
  return os.str();
}

}  // namespace cmwm
