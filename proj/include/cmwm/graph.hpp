#pragma once

#include <cassert>
#include <functional>

#include "cmwm/kernels.hpp"
#include "cmwm/tensor.hpp"

namespace cmwm {

/// Reverse-mode tape over TensorT. A graph is built once per training step:
/// every op records a closure that scatters output-gradients back to its
/// inputs. backward() walks the tape in reverse creation order, which is a
/// valid topological order by construction.
template <typename T>
class GraphT {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Var constant(TensorT<T> v) { return push(std::move(v), false); }
  Var constant_scalar(T v) { return constant(TensorT<T>::scalar(v)); }

  /// Gradient-tracked input (parameter or differentiable input).
  Var leaf(TensorT<T> v) { return push(std::move(v), true); }

  const TensorT<T>& val(Var x) const { return nodes_[size_t(x.id)].v; }
  const TensorT<T>& grad(Var x) const {
    const Node& n = nodes_[size_t(x.id)];
    if (!n.grad_alloc) throw ContractViolation("grad requested before backward()");
    return n.g;
  }
  bool needs_grad(Var x) const { return nodes_[size_t(x.id)].needs_grad; }

  /// Gradient buffer, allocating zeros for tracked nodes the loss never
  /// reached.
  const TensorT<T>& grad_or_zero(Var x) {
    if (!nodes_[size_t(x.id)].needs_grad)
      throw ContractViolation("grad_or_zero: node does not track gradients");
    return gbuf(x.id);
  }

  size_t num_nodes() const { return nodes_.size(); }

  // ---------------------------------------------------------- elementwise

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    TensorT<T> out = val(a);
    const auto& bv = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return binary(std::move(out), a, b, [](GraphT& g, Var y, Var a2, Var b2) {
      const auto& dy = g.gref(y);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += dy[i];
      });
      g.accum(b2, [&](TensorT<T>& db) {
        for (int64_t i = 0; i < db.size(); ++i) db[i] += dy[i];
      });
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    TensorT<T> out = val(a);
    const auto& bv = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return binary(std::move(out), a, b, [](GraphT& g, Var y, Var a2, Var b2) {
      const auto& dy = g.gref(y);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += dy[i];
      });
      g.accum(b2, [&](TensorT<T>& db) {
        for (int64_t i = 0; i < db.size(); ++i) db[i] -= dy[i];
      });
    });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    TensorT<T> out = val(a);
    const auto& bv = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return binary(std::move(out), a, b, [](GraphT& g, Var y, Var a2, Var b2) {
      const auto& dy = g.gref(y);
      const auto& av = g.val(a2);
      const auto& bv2 = g.val(b2);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv2[i];
      });
      g.accum(b2, [&](TensorT<T>& db) {
        for (int64_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
      });
    });
  }

  /// Elementwise min; ties route the gradient to the first argument.
  Var vmin(Var a, Var b) {
    check_same(a, b, "vmin");
    TensorT<T> out = val(a);
    const auto& bv = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], bv[i]);
    return binary(std::move(out), a, b, [](GraphT& g, Var y, Var a2, Var b2) {
      const auto& dy = g.gref(y);
      const auto& av = g.val(a2);
      const auto& bv2 = g.val(b2);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i)
          if (av[i] <= bv2[i]) da[i] += dy[i];
      });
      g.accum(b2, [&](TensorT<T>& db) {
        for (int64_t i = 0; i < db.size(); ++i)
          if (av[i] > bv2[i]) db[i] += dy[i];
      });
    });
  }

  Var scale(Var a, T c) {
    TensorT<T> out = val(a);
    for (auto& v : out.data) v *= c;
    return unary(std::move(out), a, [c](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += c * dy[i];
      });
    });
  }

  Var add_const(Var a, T c) {
    TensorT<T> out = val(a);
    for (auto& v : out.data) v += c;
    return unary(std::move(out), a, [](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += dy[i];
      });
    });
  }

  /// Clamp to [lo, hi]; zero gradient outside the open interval.
  Var clampc(Var a, T lo, T hi) {
    TensorT<T> out = val(a);
    for (auto& v : out.data) v = std::min(hi, std::max(lo, v));
    return unary(std::move(out), a, [lo, hi](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      const auto& av = g.val(a2);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i)
          if (av[i] > lo && av[i] < hi) da[i] += dy[i];
      });
    });
  }

  Var exp_(Var a) {
    TensorT<T> out = val(a);
    for (auto& v : out.data) v = std::exp(v);
    return unary(std::move(out), a, [](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      const auto& yv = g.val(y);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += dy[i] * yv[i];
      });
    });
  }

  Var log_(Var a) {
    TensorT<T> out = val(a);
    for (auto& v : out.data) v = std::log(v);
    return unary(std::move(out), a, [](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      const auto& av = g.val(a2);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += dy[i] / av[i];
      });
    });
  }

  Var tanh_(Var a) {
    TensorT<T> out = val(a);
    for (auto& v : out.data) v = std::tanh(v);
    return unary(std::move(out), a, [](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      const auto& yv = g.val(y);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += dy[i] * (T(1) - yv[i] * yv[i]);
      });
    });
  }

  Var sigmoid_(Var a) {
    TensorT<T> out = val(a);
    for (auto& v : out.data) v = sigmoid_scalar(v);
    return unary(std::move(out), a, [](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      const auto& yv = g.val(y);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += dy[i] * yv[i] * (T(1) - yv[i]);
      });
    });
  }

  Var relu_(Var a) {
    TensorT<T> out = val(a);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return unary(std::move(out), a, [](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      const auto& av = g.val(a2);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i)
          if (av[i] > T(0)) da[i] += dy[i];
      });
    });
  }

  Var square(Var a) {
    TensorT<T> out = val(a);
    for (auto& v : out.data) v *= v;
    return unary(std::move(out), a, [](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      const auto& av = g.val(a2);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += T(2) * dy[i] * av[i];
      });
    });
  }

  /// Per-element binary cross entropy from logits against constant targets:
  /// bce(x,t) = max(x,0) - x*t + log(1+exp(-|x|)). Gradient is sigmoid(x)-t.
  Var bce_with_logits(Var a, TensorT<T> targets) {
    if (val(a).shape != targets.shape)
      throw InvalidArgument("bce_with_logits: shape mismatch " + shape_str(val(a).shape) +
                            " vs " + shape_str(targets.shape));
    TensorT<T> out(val(a).shape);
    const auto& x = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      T xi = x[i];
      out[i] = std::max(xi, T(0)) - xi * targets[i] + std::log1p(std::exp(-std::abs(xi)));
    }
    auto tg = std::make_shared<TensorT<T>>(std::move(targets));
    return unary(std::move(out), a, [tg](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      const auto& x2 = g.val(a2);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i)
          da[i] += dy[i] * (sigmoid_scalar(x2[i]) - (*tg)[i]);
      });
    });
  }

  // ---------------------------------------------------------- shape ops

  Var reshape(Var a, Shape s) {
    if (shape_numel(s) != val(a).size())
      throw InvalidArgument("reshape: size mismatch " + shape_str(val(a).shape) + " -> " +
                            shape_str(s));
    TensorT<T> out(std::move(s), val(a).data);
    return unary(std::move(out), a, [](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += dy[i];
      });
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_cols: empty");
    int r = val(parts[0]).rows();
    int ctot = 0;
    for (Var p : parts) {
      if (val(p).ndim() != 2 || val(p).rows() != r)
        throw InvalidArgument("concat_cols: rows mismatch");
      ctot += val(p).cols();
    }
    TensorT<T> out({r, ctot});
    int off = 0;
    for (Var p : parts) {
      const auto& pv = val(p);
      for (int i = 0; i < r; ++i)
        std::copy_n(pv.ptr() + int64_t(i) * pv.cols(), pv.cols(),
                    out.ptr() + int64_t(i) * ctot + off);
      off += pv.cols();
    }
    auto ps = std::make_shared<std::vector<Var>>(parts);
    return nary(std::move(out), parts, [ps, r, ctot](GraphT& g, Var y) {
      const auto& dy = g.gref(y);
      int off2 = 0;
      for (Var p : *ps) {
        int c = g.val(p).cols();
        g.accum(p, [&](TensorT<T>& dp) {
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
              dp[int64_t(i) * c + j] += dy[int64_t(i) * ctot + off2 + j];
        });
        off2 += c;
      }
    });
  }

  Var slice_cols(Var a, int c0, int c1) {
    const auto& av = val(a);
    if (av.ndim() != 2 || c0 < 0 || c1 > av.cols() || c0 >= c1)
      throw InvalidArgument("slice_cols: bad range");
    int r = av.rows(), c = c1 - c0, ac = av.cols();
    TensorT<T> out({r, c});
    for (int i = 0; i < r; ++i)
      std::copy_n(av.ptr() + int64_t(i) * ac + c0, c, out.ptr() + int64_t(i) * c);
    return unary(std::move(out), a, [c0, r, c, ac](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) da[int64_t(i) * ac + c0 + j] += dy[int64_t(i) * c + j];
      });
    });
  }

  // ---------------------------------------------------------- reductions

  Var row_sum(Var a) {
    const auto& av = val(a);
    if (av.ndim() != 2) throw InvalidArgument("row_sum: need 2-D");
    int r = av.rows(), c = av.cols();
    TensorT<T> out({r, 1});
    for (int i = 0; i < r; ++i) {
      T acc = T(0);
      for (int j = 0; j < c; ++j) acc += av[int64_t(i) * c + j];
      out[i] = acc;
    }
    return unary(std::move(out), a, [r, c](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) da[int64_t(i) * c + j] += dy[i];
      });
    });
  }

  Var col_broadcast(Var a, int c) {
    const auto& av = val(a);
    if (av.ndim() != 2 || av.cols() != 1) throw InvalidArgument("col_broadcast: need [R,1]");
    int r = av.rows();
    TensorT<T> out({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out[int64_t(i) * c + j] = av[i];
    return unary(std::move(out), a, [r, c](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int i = 0; i < r; ++i) {
          T acc = T(0);
          for (int j = 0; j < c; ++j) acc += dy[int64_t(i) * c + j];
          da[i] += acc;
        }
      });
    });
  }

  Var sum_all(Var a) {
    const auto& av = val(a);
    T acc = T(0);
    for (T v : av.data) acc += v;
    TensorT<T> out = TensorT<T>::scalar(acc);
    return unary(std::move(out), a, [](GraphT& g, Var y, Var a2) {
      T dy = g.gref(y)[0];
      g.accum(a2, [&](TensorT<T>& da) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += dy;
      });
    });
  }

  Var mean_all(Var a) { return scale(sum_all(a), T(1) / T(val(a).size())); }

  /// Row-wise log-sum-exp, stabilized by the (detached) row max.
  Var row_logsumexp(Var a) {
    const auto& av = val(a);
    if (av.ndim() != 2) throw InvalidArgument("row_logsumexp: need 2-D");
    int r = av.rows(), c = av.cols();
    TensorT<T> out({r, 1});
    for (int i = 0; i < r; ++i) {
      const T* row = av.ptr() + int64_t(i) * c;
      T m = row[0];
      for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
      T acc = T(0);
      for (int j = 0; j < c; ++j) acc += std::exp(row[j] - m);
      out[i] = m + std::log(acc);
    }
    return unary(std::move(out), a, [r, c](GraphT& g, Var y, Var a2) {
      const auto& dy = g.gref(y);
      const auto& yv = g.val(y);
      const auto& av2 = g.val(a2);
      g.accum(a2, [&](TensorT<T>& da) {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            da[int64_t(i) * c + j] += dy[i] * std::exp(av2[int64_t(i) * c + j] - yv[i]);
      });
    });
  }

  Var log_softmax_rows(Var a) {
    return sub(a, col_broadcast(row_logsumexp(a), val(a).cols()));
  }

  Var softmax_rows(Var a) { return exp_(log_softmax_rows(a)); }

  // ---------------------------------------------------------- linear algebra

  Var matmul(Var a, Var b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    if (av.ndim() != 2 || bv.ndim() != 2 || av.cols() != bv.rows())
      throw InvalidArgument("matmul: shape mismatch " + shape_str(av.shape) + " x " +
                            shape_str(bv.shape));
    int m = av.rows(), k = av.cols(), n = bv.cols();
    TensorT<T> out({m, n});
    gemm(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
    return binary(std::move(out), a, b, [m, k, n](GraphT& g, Var y, Var a2, Var b2) {
      const auto& dy = g.gref(y);
      g.accum(a2, [&](TensorT<T>& da) {
        gemm_nt(dy.ptr(), g.val(b2).ptr(), da.ptr(), m, n, k, true);
      });
      g.accum(b2, [&](TensorT<T>& db) {
        gemm_tn(g.val(a2).ptr(), dy.ptr(), db.ptr(), k, m, n, true);
      });
    });
  }

  /// Y = X*W + b (bias broadcast over rows). X [M,K], W [K,N], b [N].
  Var affine(Var x, Var w, Var b) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    const auto& bv = val(b);
    if (xv.ndim() != 2 || wv.ndim() != 2 || xv.cols() != wv.rows() || bv.size() != wv.cols())
      throw InvalidArgument("affine: shape mismatch X" + shape_str(xv.shape) + " W" +
                            shape_str(wv.shape) + " b" + shape_str(bv.shape));
    int m = xv.rows(), k = xv.cols(), n = wv.cols();
    TensorT<T> out({m, n});
    gemm(xv.ptr(), wv.ptr(), out.ptr(), m, k, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[int64_t(i) * n + j] += bv[j];
    std::vector<Var> ins{x, w, b};
    return nary(std::move(out), ins, [x, w, b, m, k, n](GraphT& g, Var y) {
      const auto& dy = g.gref(y);
      g.accum(x, [&](TensorT<T>& dx) {
        gemm_nt(dy.ptr(), g.val(w).ptr(), dx.ptr(), m, n, k, true);
      });
      g.accum(w, [&](TensorT<T>& dw) {
        gemm_tn(g.val(x).ptr(), dy.ptr(), dw.ptr(), k, m, n, true);
      });
      g.accum(b, [&](TensorT<T>& db) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) db[j] += dy[int64_t(i) * n + j];
      });
    });
  }

  // ---------------------------------------------------------- convolutions

  /// x [B,C,H,W], w [O,C,k,k], b [O] -> y [B,O,oh,ow]
  Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    if (xv.ndim() != 4 || wv.ndim() != 4 || xv.dim(1) != wv.dim(1) || wv.dim(2) != wv.dim(3))
      throw InvalidArgument("conv2d: shape mismatch x" + shape_str(xv.shape) + " w" +
                            shape_str(wv.shape));
    ConvDims d = conv_dims(xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2),
                           stride, pad);
    if (val(b).size() != d.out_ch) throw InvalidArgument("conv2d: bias size mismatch");
    const int ckk = d.in_ch * d.kernel * d.kernel;
    auto col = std::make_shared<std::vector<T>>(size_t(d.batch) * d.out_h * d.out_w * ckk);
    TensorT<T> out({d.batch, d.out_ch, d.out_h, d.out_w});
    conv_fwd(xv.ptr(), wv.ptr(), val(b).ptr(), d, out.ptr(), col->data());
    std::vector<Var> ins{x, w, b};
    return nary(std::move(out), ins, [x, w, b, d, col](GraphT& g, Var y) {
      const auto& dy = g.gref(y);
      g.accum(x, [&](TensorT<T>& dx) { conv_bwd_data(dy.ptr(), g.val(w).ptr(), d, dx.ptr()); });
      g.accum(w, [&](TensorT<T>& dw) {
        T* db_ptr = nullptr;
        g.accum(b, [&](TensorT<T>& db) { db_ptr = db.ptr(); });
        conv_bwd_weight(col->data(), dy.ptr(), d, dw.ptr(), db_ptr);
      });
    });
  }

  /// Transposed convolution. x [B,Ci,H,W], wt [Ci,Co,k,k], b [Co]
  /// -> y [B,Co,(H-1)*s-2p+k, ...]
  Var deconv2d(Var x, Var wt, Var b, int stride, int pad) {
    const auto& xv = val(x);
    const auto& wv = val(wt);
    if (xv.ndim() != 4 || wv.ndim() != 4 || xv.dim(1) != wv.dim(0) || wv.dim(2) != wv.dim(3))
      throw InvalidArgument("deconv2d: shape mismatch x" + shape_str(xv.shape) + " w" +
                            shape_str(wv.shape));
    int k = wv.dim(2), ci = wv.dim(0), co = wv.dim(1);
    int oh = (xv.dim(2) - 1) * stride - 2 * pad + k;
    int ow = (xv.dim(3) - 1) * stride - 2 * pad + k;
    // d describes the adjoint convolution: input y side, output x side.
    ConvDims d = conv_dims(xv.dim(0), co, oh, ow, ci, k, stride, pad);
    if (d.out_h != xv.dim(2) || d.out_w != xv.dim(3))
      throw InvalidArgument("deconv2d: inconsistent geometry");
    if (val(b).size() != co) throw InvalidArgument("deconv2d: bias size mismatch");
    TensorT<T> out({d.batch, co, oh, ow});
    deconv_fwd(xv.ptr(), wv.ptr(), val(b).ptr(), d, out.ptr());
    std::vector<Var> ins{x, wt, b};
    return nary(std::move(out), ins, [x, wt, b, d, co, oh, ow](GraphT& g, Var y) {
      const auto& dy = g.gref(y);
      const int ckk = d.in_ch * d.kernel * d.kernel;
      const int64_t hw = int64_t(d.out_h) * d.out_w;
      // im2col of dy (the y-side tensor), shared by dx and dwt.
      std::vector<T> col(size_t(d.batch) * hw * ckk);
      for (int bb = 0; bb < d.batch; ++bb)
        im2col(dy.ptr() + int64_t(bb) * d.in_ch * d.in_h * d.in_w, d,
               col.data() + int64_t(bb) * hw * ckk);
      g.accum(x, [&](TensorT<T>& dx) {
        // dx_b [Ci, hw] += wt[Ci, ckk] * col_b[hw, ckk]^T
        for (int bb = 0; bb < d.batch; ++bb)
          gemm_nt(g.val(wt).ptr(), col.data() + int64_t(bb) * hw * ckk,
                  dx.ptr() + int64_t(bb) * d.out_ch * hw, d.out_ch, ckk, int(hw), true);
      });
      g.accum(wt, [&](TensorT<T>& dw) {
        // dwt[Ci, ckk] += x_b[Ci, hw] * col_b[hw, ckk]
        for (int bb = 0; bb < d.batch; ++bb)
          gemm(g.val(x).ptr() + int64_t(bb) * d.out_ch * hw,
               col.data() + int64_t(bb) * hw * ckk, dw.ptr(), d.out_ch, int(hw), ckk, true);
      });
      g.accum(b, [&](TensorT<T>& db) {
        const int64_t yhw = int64_t(oh) * ow;
        for (int bb = 0; bb < d.batch; ++bb)
          for (int c = 0; c < co; ++c) {
            const T* src = dy.ptr() + (int64_t(bb) * co + c) * yhw;
            T acc = T(0);
            for (int64_t i = 0; i < yhw; ++i) acc += src[i];
            db[c] += acc;
          }
      });
    });
  }

  // ---------------------------------------------------------- backward

  void backward(Var loss) {
    if (val(loss).size() != 1) throw ContractViolation("backward: loss must be scalar");
    if (!nodes_[size_t(loss.id)].needs_grad)
      throw ContractViolation("backward: no gradient-tracked inputs in graph");
    gbuf(loss.id)[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (n.needs_grad && n.grad_alloc && n.back) n.back(*this);
    }
  }

  static T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
  }

 private:
  struct Node {
    TensorT<T> v;
    TensorT<T> g;
    bool needs_grad = false;
    bool grad_alloc = false;
    std::function<void(GraphT&)> back;
  };

  std::vector<Node> nodes_;

  Var push(TensorT<T> v, bool needs_grad) {
    Node n;
    n.v = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
  }

  TensorT<T>& gbuf(int id) {
    Node& n = nodes_[size_t(id)];
    if (!n.grad_alloc) {
      n.g = TensorT<T>::zeros(n.v.shape);
      n.grad_alloc = true;
    }
    return n.g;
  }

  const TensorT<T>& gref(Var y) { return gbuf(y.id); }

  /// Run `fn` with the input's gradient buffer iff that input tracks gradients.
  template <typename F>
  void accum(Var in, F&& fn) {
    if (nodes_[size_t(in.id)].needs_grad) fn(gbuf(in.id));
  }

  void check_same(Var a, Var b, const char* op) {
    if (!val(a).same_shape(val(b)))
      throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_str(val(a).shape) +
                            " vs " + shape_str(val(b).shape));
  }

  template <typename F>
  Var unary(TensorT<T> out, Var a, F&& back) {
    bool ng = nodes_[size_t(a.id)].needs_grad;
    Var y = push(std::move(out), ng);
    if (ng) {
      nodes_[size_t(y.id)].back = [a, y, f = std::forward<F>(back)](GraphT& g) { f(g, y, a); };
    }
    return y;
  }

  template <typename F>
  Var binary(TensorT<T> out, Var a, Var b, F&& back) {
    bool ng = nodes_[size_t(a.id)].needs_grad || nodes_[size_t(b.id)].needs_grad;
    Var y = push(std::move(out), ng);
    if (ng) {
      nodes_[size_t(y.id)].back = [a, b, y, f = std::forward<F>(back)](GraphT& g) {
        f(g, y, a, b);
      };
    }
    return y;
  }

  template <typename F>
  Var nary(TensorT<T> out, const std::vector<Var>& ins, F&& back) {
    bool ng = false;
    for (Var v : ins) ng = ng || nodes_[size_t(v.id)].needs_grad;
    Var y = push(std::move(out), ng);
    if (ng) {
      nodes_[size_t(y.id)].back = [y, f = std::forward<F>(back)](GraphT& g) { f(g, y); };
    }
    return y;
  }
};

using Graph = GraphT<float>;
using GraphD = GraphT<double>;

}  // namespace cmwm
