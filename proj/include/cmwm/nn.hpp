#pragma once

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "cmwm/graph.hpp"
#include "cmwm/tensor.hpp"

namespace cmwm {

// ---------------------------------------------------------------- parameters

/// Ordered collection of named float32 tensors. Shapes are fixed at
/// construction; order is the canonical parameter order for optimizers.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw InvalidArgument("ParamSet: duplicate name " + name);
    index_[name] = int(names_.size());
    names_.push_back(name);
    tensors_.emplace_back(std::move(shape));
    return tensors_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("ParamSet: unknown name " + name);
    return tensors_[size_t(it->second)];
  }
  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("ParamSet: unknown name " + name);
    return tensors_[size_t(it->second)];
  }

  int count() const { return int(tensors_.size()); }
  const std::string& name(int i) const { return names_[size_t(i)]; }
  Tensor& tensor(int i) { return tensors_[size_t(i)]; }
  const Tensor& tensor(int i) const { return tensors_[size_t(i)]; }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  uint64_t content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (int i = 0; i < count(); ++i) {
      h = fnv1a64(names_[size_t(i)], h);
      h = fnv1a64(tensors_[size_t(i)].data.data(),
                  tensors_[size_t(i)].data.size() * sizeof(float), h);
    }
    return h;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, int> index_;
};

// ---------------------------------------------------------------- initializers

/// Fan-in He-style uniform init for dense/conv weights.
inline void init_he_uniform(Tensor& w, int fan_in, Rng& rng) {
  double limit = std::sqrt(6.0 / double(fan_in));
  for (auto& v : w.data) v = float(rng.uniform(-limit, limit));
}

/// Simple 1/sqrt(fan_in) uniform scaling for recurrent weights.
inline void init_lstm_uniform(Tensor& w, int fan_in, Rng& rng) {
  double limit = 1.0 / std::sqrt(double(fan_in));
  for (auto& v : w.data) v = float(rng.uniform(-limit, limit));
}

// ---------------------------------------------------------------- optimizer

/// Adam first/second moment accumulators, mirroring a ParamSet's shapes.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  int64_t step = 0;

  explicit AdamState(const ParamSet& params) {
    m.reserve(size_t(params.count()));
    v.reserve(size_t(params.count()));
    for (int i = 0; i < params.count(); ++i) {
      m.emplace_back(params.tensor(i).shape);
      v.emplace_back(params.tensor(i).shape);
    }
  }
};

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// One Adam update with bias correction. Throws TrainingError on non-finite
/// gradients. `grads` must align with the ParamSet order.
inline void adam_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& st,
                      float lr, const AdamConfig& cfg = {}) {
  if (int(grads.size()) != params.count())
    throw InvalidArgument("adam_step: gradient count mismatch");
  st.step += 1;
  double b1t = 1.0 - std::pow(double(cfg.beta1), double(st.step));
  double b2t = 1.0 - std::pow(double(cfg.beta2), double(st.step));
  for (int i = 0; i < params.count(); ++i) {
    Tensor& p = params.tensor(i);
    const Tensor& g = grads[size_t(i)];
    if (!p.same_shape(g)) throw InvalidArgument("adam_step: shape mismatch at " + params.name(i));
    Tensor& mi = st.m[size_t(i)];
    Tensor& vi = st.v[size_t(i)];
    for (int64_t j = 0; j < p.size(); ++j) {
      float gj = g[j];
      if (!std::isfinite(gj))
        throw TrainingError("adam_step: non-finite gradient in " + params.name(i));
      mi[j] = cfg.beta1 * mi[j] + (1.0f - cfg.beta1) * gj;
      vi[j] = cfg.beta2 * vi[j] + (1.0f - cfg.beta2) * gj * gj;
      float mhat = float(double(mi[j]) / b1t);
      float vhat = float(double(vi[j]) / b2t);
      p[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------- graph bridge

/// Load every parameter of a ParamSet as gradient-tracked graph leaves
/// (cast to the graph scalar type). Returned vars align with ParamSet order.
template <typename T>
std::vector<typename GraphT<T>::Var> bind_params(GraphT<T>& g, const ParamSet& params) {
  std::vector<typename GraphT<T>::Var> vars;
  vars.reserve(size_t(params.count()));
  for (int i = 0; i < params.count(); ++i) vars.push_back(g.leaf(params.tensor(i).cast<T>()));
  return vars;
}

/// Collect gradients (after backward) back into float tensors in ParamSet
/// order. Parameters the loss never touched get zero gradients.
template <typename T>
std::vector<Tensor> extract_grads(GraphT<T>& g,
                                  const std::vector<typename GraphT<T>::Var>& vars) {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (auto v : vars) out.push_back(g.grad_or_zero(v).template cast<float>());
  return out;
}

/// Named view over an already-built var list (e.g. constants on the
/// inference path).
struct BoundView {
  const ParamSet& params;
  const std::vector<Graph::Var>& vars;

  Graph::Var operator()(const std::string& name) const {
    for (int i = 0; i < params.count(); ++i)
      if (params.name(i) == name) return vars[size_t(i)];
    throw InvalidArgument("BoundView: unknown name " + name);
  }
};

/// Named access into a bound parameter list.
template <typename T>
class BoundParams {
 public:
  BoundParams(GraphT<T>& g, const ParamSet& params)
      : params_(&params), vars_(bind_params(g, params)) {}

  typename GraphT<T>::Var operator[](const std::string& name) const {
    for (int i = 0; i < params_->count(); ++i)
      if (params_->name(i) == name) return vars_[size_t(i)];
    throw InvalidArgument("BoundParams: unknown name " + name);
  }
  const std::vector<typename GraphT<T>::Var>& vars() const { return vars_; }

 private:
  const ParamSet* params_;
  std::vector<typename GraphT<T>::Var> vars_;
};

// ---------------------------------------------------------------- lstm

/// One LSTM cell step composed from graph primitives.
/// x [B,in], h/c [B,hidden]; w [(in+hidden), 4*hidden] with gate order
/// (input, forget, cell, output); b [4*hidden].
template <typename T>
struct LstmState {
  typename GraphT<T>::Var h;
  typename GraphT<T>::Var c;
};

template <typename T>
LstmState<T> lstm_step(GraphT<T>& g, typename GraphT<T>::Var x, LstmState<T> st,
                       typename GraphT<T>::Var w, typename GraphT<T>::Var b, int hidden) {
  auto xh = g.concat_cols({x, st.h});
  auto gates = g.affine(xh, w, b);
  auto i = g.sigmoid_(g.slice_cols(gates, 0, hidden));
  auto f = g.sigmoid_(g.slice_cols(gates, hidden, 2 * hidden));
  auto cand = g.tanh_(g.slice_cols(gates, 2 * hidden, 3 * hidden));
  auto o = g.sigmoid_(g.slice_cols(gates, 3 * hidden, 4 * hidden));
  auto c_next = g.add(g.mul(f, st.c), g.mul(i, cand));
  auto h_next = g.mul(o, g.tanh_(c_next));
  return {h_next, c_next};
}

/// Parameter layout for an LSTM cell; forget-gate bias initialized to 1.
inline void add_lstm_params(ParamSet& ps, const std::string& prefix, int in_dim, int hidden,
                            Rng& rng) {
  Tensor& w = ps.add(prefix + ".w", {in_dim + hidden, 4 * hidden});
  init_lstm_uniform(w, in_dim + hidden, rng);
  Tensor& b = ps.add(prefix + ".b", {4 * hidden});
  for (int j = hidden; j < 2 * hidden; ++j) b[j] = 1.0f;
}

// ---------------------------------------------------------------- checkpoints

// Parameter checkpoint container: magic "CMPW", version u16, count u32, then
// per tensor: name (u16 length + bytes), ndim u8, dims u32[], f32 data.
// All integers little-endian.
namespace ckpt {
constexpr char kMagic[4] = {'C', 'M', 'P', 'W'};
constexpr uint16_t kVersion = 1;
}  // namespace ckpt

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------- gradient check

/// A loss builder for gradient verification: given a graph and the parameter
/// leaves (in ParamSet order), return the scalar loss var.
template <typename T>
using LossBuilder =
    std::function<typename GraphT<T>::Var(GraphT<T>&, const std::vector<typename GraphT<T>::Var>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t checked = 0;
};

/// Compare analytic gradients against central finite differences in double
/// precision. Relative error uses max(1, |analytic|, |numeric|) as scale.
inline GradCheckResult gradient_check(const std::vector<TensorT<double>>& init,
                                      const LossBuilder<double>& builder, double eps = 1e-3) {
  auto eval = [&](const std::vector<TensorT<double>>& p) {
    GraphT<double> g;
    std::vector<GraphD::Var> vars;
    vars.reserve(p.size());
    for (const auto& t : p) vars.push_back(g.leaf(t));
    auto loss = builder(g, vars);
    return g.val(loss)[0];
  };

  // analytic
  GraphT<double> g;
  std::vector<GraphD::Var> vars;
  for (const auto& t : init) vars.push_back(g.leaf(t));
  auto loss = builder(g, vars);
  g.backward(loss);

  GradCheckResult res;
  std::vector<TensorT<double>> work = init;
  for (size_t pi = 0; pi < init.size(); ++pi) {
    const auto& analytic = g.grad(vars[pi]);
    for (int64_t j = 0; j < init[pi].size(); ++j) {
      double keep = work[pi][j];
      work[pi][j] = keep + eps;
      double fp = eval(work);
      work[pi][j] = keep - eps;
      double fm = eval(work);
      work[pi][j] = keep;
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic[j];
      double scale = std::max({1.0, std::abs(a), std::abs(numeric)});
      res.max_rel_err = std::max(res.max_rel_err, std::abs(a - numeric) / scale);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace cmwm
