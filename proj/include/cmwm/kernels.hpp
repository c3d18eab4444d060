#pragma once

#include <Eigen/Dense>

#include "cmwm/tensor.hpp"

// Dense/conv compute kernels shared by the autodiff graph and the eager
// inference paths. All layouts are row-major; images are NCHW.

namespace cmwm {

template <typename T>
using EigMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<EigMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const EigMat<T>>;

/// C[M,N] = A[M,K] * B[K,N], optionally accumulating into C.
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
  CMapM<T> A(a, m, k);
  CMapM<T> B(b, k, n);
  MapM<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

/// C[M,N] = A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
  CMapM<T> A(a, k, m);
  CMapM<T> B(b, k, n);
  MapM<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

/// C[M,N] = A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
  CMapM<T> A(a, m, k);
  CMapM<T> B(b, n, k);
  MapM<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

struct ConvDims {
  int batch, in_ch, in_h, in_w;
  int out_ch, kernel, stride, pad;
  int out_h, out_w;
};

inline ConvDims conv_dims(int batch, int in_ch, int in_h, int in_w, int out_ch, int kernel,
                          int stride, int pad) {
  ConvDims d{batch, in_ch, in_h, in_w, out_ch, kernel, stride, pad, 0, 0};
  d.out_h = (in_h + 2 * pad - kernel) / stride + 1;
  d.out_w = (in_w + 2 * pad - kernel) / stride + 1;
  if (d.out_h <= 0 || d.out_w <= 0)
    throw InvalidArgument("conv_dims: non-positive output size");
  return d;
}

/// One image [C,H,W] -> col [out_h*out_w, C*k*k].
template <typename T>
void im2col(const T* img, const ConvDims& d, T* col) {
  const int k = d.kernel, ckk = d.in_ch * k * k;
  for (int oy = 0; oy < d.out_h; ++oy) {
    for (int ox = 0; ox < d.out_w; ++ox) {
      T* row = col + (int64_t(oy) * d.out_w + ox) * ckk;
      for (int c = 0; c < d.in_ch; ++c) {
        const T* plane = img + int64_t(c) * d.in_h * d.in_w;
        for (int ki = 0; ki < k; ++ki) {
          int iy = oy * d.stride - d.pad + ki;
          for (int kj = 0; kj < k; ++kj) {
            int ix = ox * d.stride - d.pad + kj;
            T v = (iy >= 0 && iy < d.in_h && ix >= 0 && ix < d.in_w)
                      ? plane[int64_t(iy) * d.in_w + ix]
                      : T(0);
            row[(c * k + ki) * k + kj] = v;
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-add col [out_h*out_w, C*k*k] back into img [C,H,W].
template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* img) {
  const int k = d.kernel, ckk = d.in_ch * k * k;
  for (int oy = 0; oy < d.out_h; ++oy) {
    for (int ox = 0; ox < d.out_w; ++ox) {
      const T* row = col + (int64_t(oy) * d.out_w + ox) * ckk;
      for (int c = 0; c < d.in_ch; ++c) {
        T* plane = img + int64_t(c) * d.in_h * d.in_w;
        for (int ki = 0; ki < k; ++ki) {
          int iy = oy * d.stride - d.pad + ki;
          if (iy < 0 || iy >= d.in_h) continue;
          for (int kj = 0; kj < k; ++kj) {
            int ix = ox * d.stride - d.pad + kj;
            if (ix < 0 || ix >= d.in_w) continue;
            plane[int64_t(iy) * d.in_w + ix] += row[(c * k + ki) * k + kj];
          }
        }
      }
    }
  }
}

/// Forward convolution. x [B,C,H,W], w [O,C,k,k], bias [O] (may be null),
/// y [B,O,oh,ow]. If col_cache is non-null it receives the per-batch im2col
/// blocks ([B, oh*ow, C*k*k] contiguous) for reuse in the backward pass.
template <typename T>
void conv_fwd(const T* x, const T* w, const T* bias, const ConvDims& d, T* y, T* col_cache,
              bool accumulate = false) {
  const int ckk = d.in_ch * d.kernel * d.kernel;
  const int64_t hw = int64_t(d.out_h) * d.out_w;
  std::vector<T> scratch;
  T* col = col_cache;
  if (!col) {
    scratch.resize(size_t(hw) * ckk);
    col = scratch.data();
  }
  for (int b = 0; b < d.batch; ++b) {
    T* col_b = col_cache ? col_cache + int64_t(b) * hw * ckk : col;
    im2col(x + int64_t(b) * d.in_ch * d.in_h * d.in_w, d, col_b);
    // y_b [O, hw] = w[O, ckk] * col_b[hw, ckk]^T
    gemm_nt(w, col_b, y + int64_t(b) * d.out_ch * hw, d.out_ch, ckk, int(hw), accumulate);
  }
  if (bias) {
    for (int b = 0; b < d.batch; ++b)
      for (int o = 0; o < d.out_ch; ++o) {
        T* dst = y + (int64_t(b) * d.out_ch + o) * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] += bias[o];
      }
  }
}

/// dx += adjoint-conv of dy. dy [B,O,oh,ow], w [O,C,k,k], dx [B,C,H,W].
template <typename T>
void conv_bwd_data(const T* dy, const T* w, const ConvDims& d, T* dx) {
  const int ckk = d.in_ch * d.kernel * d.kernel;
  const int64_t hw = int64_t(d.out_h) * d.out_w;
  std::vector<T> dcol(size_t(hw) * ckk);
  for (int b = 0; b < d.batch; ++b) {
    // dcol [hw, ckk] = dy_b[O, hw]^T * w[O, ckk]
    gemm_tn(dy + int64_t(b) * d.out_ch * hw, w, dcol.data(), int(hw), d.out_ch, ckk);
    col2im_add(dcol.data(), d, dx + int64_t(b) * d.in_ch * d.in_h * d.in_w);
  }
}

/// dw += conv weight gradient given cached im2col blocks of the forward input.
template <typename T>
void conv_bwd_weight(const T* col_cache, const T* dy, const ConvDims& d, T* dw, T* dbias) {
  const int ckk = d.in_ch * d.kernel * d.kernel;
  const int64_t hw = int64_t(d.out_h) * d.out_w;
  for (int b = 0; b < d.batch; ++b) {
    // dw[O, ckk] += dy_b[O, hw] * col_b[hw, ckk]
    gemm(dy + int64_t(b) * d.out_ch * hw, col_cache + int64_t(b) * hw * ckk, dw, d.out_ch,
         int(hw), ckk, /*accumulate=*/true);
  }
  if (dbias) {
    for (int b = 0; b < d.batch; ++b)
      for (int o = 0; o < d.out_ch; ++o) {
        const T* src = dy + (int64_t(b) * d.out_ch + o) * hw;
        T acc = T(0);
        for (int64_t i = 0; i < hw; ++i) acc += src[i];
        dbias[o] += acc;
      }
  }
}

/// Transposed convolution forward: x [B,Ci,H,W], wt [Ci,Co,k,k], bias [Co],
/// y [B,Co,H2,W2] where H2 = (H-1)*stride - 2*pad + k. `d` describes the
/// adjoint convolution (input y, output x), i.e. conv_dims(B, Co, H2, W2, Ci, ...).
template <typename T>
void deconv_fwd(const T* x, const T* wt, const T* bias, const ConvDims& d, T* y) {
  // roles in d: in_* refer to the y side, out_ch = Ci, out_h/out_w = x spatial.
  const int ckk = d.in_ch * d.kernel * d.kernel;
  const int64_t hw = int64_t(d.out_h) * d.out_w;     // x spatial
  const int64_t yhw = int64_t(d.in_h) * d.in_w;      // y spatial
  std::vector<T> dcol(size_t(hw) * ckk);
  std::fill_n(y, int64_t(d.batch) * d.in_ch * yhw, T(0));
  for (int b = 0; b < d.batch; ++b) {
    gemm_tn(x + int64_t(b) * d.out_ch * hw, wt, dcol.data(), int(hw), d.out_ch, ckk);
    col2im_add(dcol.data(), d, y + int64_t(b) * d.in_ch * yhw);
  }
  if (bias) {
    for (int b = 0; b < d.batch; ++b)
      for (int c = 0; c < d.in_ch; ++c) {
        T* dst = y + (int64_t(b) * d.in_ch + c) * yhw;
        for (int64_t i = 0; i < yhw; ++i) dst[i] += bias[c];
      }
  }
}

}  // namespace cmwm
