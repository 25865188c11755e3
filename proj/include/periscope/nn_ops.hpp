#pragma once

#include <cblas.h>

#include <cstring>
#include <limits>
#include <utility>

#include "periscope/rng.hpp"
#include "periscope/tensor.hpp"

namespace periscope {

namespace detail {

inline TensorPtr make_node_vec(std::vector<int> shape, const std::vector<TensorPtr>& parents) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || (p && p->requires_grad);
  auto t = Tensor::create(std::move(shape), rg);
  if (rg)
    for (const auto& p : parents)
      if (p) t->parents.push_back(p);
  return t;
}

/// Lowers one sample's [C,H,W] slab to a [C*kh*kw, OH*OW] patch matrix.
inline void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride,
                   int pad, int OH, int OW, double* col) {
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        double* row = col + (static_cast<int64_t>((c * kh + i) * kw + j)) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + i;
          double* dst = row + static_cast<int64_t>(oh) * OW;
          if (ih < 0 || ih >= H) {
            std::memset(dst, 0, sizeof(double) * static_cast<size_t>(OW));
            continue;
          }
          const double* src = x + (static_cast<int64_t>(c) * H + ih) * W;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride - pad + j;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0;
          }
        }
      }
}

/// Transpose of im2col: scatter-adds a patch-matrix gradient back to [C,H,W].
inline void col2im_add(const double* col, int C, int H, int W, int kh, int kw, int stride,
                       int pad, int OH, int OW, double* gx) {
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        const double* row = col + (static_cast<int64_t>((c * kh + i) * kw + j)) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + i;
          if (ih < 0 || ih >= H) continue;
          double* dst = gx + (static_cast<int64_t>(c) * H + ih) * W;
          const double* src = row + static_cast<int64_t>(oh) * OW;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride - pad + j;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution, NCHW. x:[N,C,H,W], w:[K,C,kh,kw], b:[K] (optional).
/// Lowered to im2col + dgemm; the backward pass re-lowers the input instead of
/// caching patch matrices, trading ~15% extra copies for O(activations) memory.
inline TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b,
                        int stride = 1, int pad = 1) {
  if (x->shape.size() != 4 || w->shape.size() != 4)
    throw std::invalid_argument("conv2d: expected 4-D input and weight");
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int K = w->shape[0], kh = w->shape[2], kw = w->shape[3];
  if (w->shape[1] != C) throw std::invalid_argument("conv2d: channel mismatch");
  if (b && (b->shape.size() != 1 || b->shape[0] != K))
    throw std::invalid_argument("conv2d: bias must be [K]");
  if (H + 2 * pad < kh || W + 2 * pad < kw)
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  const int CKK = C * kh * kw;
  const int64_t ospatial = static_cast<int64_t>(OH) * OW;

  auto out = b ? detail::make_node_vec({N, K, OH, OW}, {x, w, b})
               : detail::make_node_vec({N, K, OH, OW}, {x, w});
  std::vector<double> col(static_cast<size_t>(CKK) * ospatial);
  for (int n = 0; n < N; ++n) {
    const double* xn = x->data.data() + static_cast<int64_t>(n) * C * H * W;
    double* on = out->data.data() + static_cast<int64_t>(n) * K * ospatial;
    detail::im2col(xn, C, H, W, kh, kw, stride, pad, OH, OW, col.data());
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, K, static_cast<int>(ospatial),
                CKK, 1.0, w->data.data(), CKK, col.data(), static_cast<int>(ospatial),
                0.0, on, static_cast<int>(ospatial));
    if (b)
      for (int k = 0; k < K; ++k) {
        const double bk = b->data[k];
        double* dst = on + static_cast<int64_t>(k) * ospatial;
        for (int64_t q = 0; q < ospatial; ++q) dst[q] += bk;
      }
  }

  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [x, w, b, o, N, C, H, W, K, kh, kw, stride, pad, OH, OW, CKK,
                        ospatial] {
      std::vector<double> col(static_cast<size_t>(CKK) * ospatial);
      std::vector<double> gcol;
      if (x->requires_grad) gcol.resize(static_cast<size_t>(CKK) * ospatial);
      for (int n = 0; n < N; ++n) {
        const double* gon = o->grad.data() + static_cast<int64_t>(n) * K * ospatial;
        if (b && b->requires_grad)
          for (int k = 0; k < K; ++k) {
            const double* src = gon + static_cast<int64_t>(k) * ospatial;
            double s = 0.0;
            for (int64_t q = 0; q < ospatial; ++q) s += src[q];
            b->grad[k] += s;
          }
        if (w->requires_grad) {
          const double* xn = x->data.data() + static_cast<int64_t>(n) * C * H * W;
          detail::im2col(xn, C, H, W, kh, kw, stride, pad, OH, OW, col.data());
          cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, K, CKK,
                      static_cast<int>(ospatial), 1.0, gon, static_cast<int>(ospatial),
                      col.data(), static_cast<int>(ospatial), 1.0, w->grad.data(), CKK);
        }
        if (x->requires_grad) {
          cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, CKK,
                      static_cast<int>(ospatial), K, 1.0, w->data.data(), CKK, gon,
                      static_cast<int>(ospatial), 0.0, gcol.data(),
                      static_cast<int>(ospatial));
          double* gxn = x->grad.data() + static_cast<int64_t>(n) * C * H * W;
          detail::col2im_add(gcol.data(), C, H, W, kh, kw, stride, pad, OH, OW, gxn);
        }
      }
    };
  }
  return out;
}

/// Max pooling, NCHW. Ties resolve to the first element in row-major window
/// order; gradients route solely to each window's argmax.
inline TensorPtr maxpool2d(const TensorPtr& x, int size = 2, int stride = 2) {
  if (x->shape.size() != 4) throw std::invalid_argument("maxpool2d: expected 4-D input");
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  if (H < size || W < size)
    throw std::invalid_argument("maxpool2d: spatial dims smaller than window");
  const int OH = (H - size) / stride + 1;
  const int OW = (W - size) / stride + 1;
  auto out = detail::make_node_vec({N, C, OH, OW}, {x});
  std::vector<int64_t> argmax(static_cast<size_t>(out->numel()));
  int64_t q = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* plane = x->data.data() + (static_cast<int64_t>(n) * C + c) * H * W;
      const int64_t base = (static_cast<int64_t>(n) * C + c) * H * W;
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++q) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t besti = -1;
          for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
              const int ih = oh * stride + i, iw = ow * stride + j;
              const double v = plane[static_cast<int64_t>(ih) * W + iw];
              if (v > best) {
                best = v;
                besti = base + static_cast<int64_t>(ih) * W + iw;
              }
            }
          out->data[q] = best;
          argmax[static_cast<size_t>(q)] = besti;
        }
    }
  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [x, o, argmax = std::move(argmax)] {
      const int64_t m = o->numel();
      for (int64_t i = 0; i < m; ++i) x->grad[argmax[static_cast<size_t>(i)]] += o->grad[i];
    };
  }
  return out;
}

/// Bilinear upsampling by an integer factor with half-pixel (align_corners =
/// false) source coordinates; border samples clamp.
inline TensorPtr bilinear_upsample(const TensorPtr& x, int factor) {
  if (x->shape.size() != 4) throw std::invalid_argument("bilinear_upsample: expected 4-D input");
  if (factor < 1) throw std::invalid_argument("bilinear_upsample: factor must be >= 1");
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int OH = H * factor, OW = W * factor;
  auto out = detail::make_node_vec({N, C, OH, OW}, {x});

  // Source taps depend only on geometry; precompute per output row/col.
  struct Tap {
    int i0, i1;
    double w0, w1;
  };
  auto make_taps = [factor](int out_len, int in_len) {
    std::vector<Tap> taps(static_cast<size_t>(out_len));
    for (int o = 0; o < out_len; ++o) {
      const double s = (o + 0.5) / factor - 0.5;
      double f = std::floor(s);
      int i0 = static_cast<int>(f);
      double w1 = s - f;
      int i1 = i0 + 1;
      i0 = std::clamp(i0, 0, in_len - 1);
      i1 = std::clamp(i1, 0, in_len - 1);
      taps[static_cast<size_t>(o)] = {i0, i1, 1.0 - w1, w1};
    }
    return taps;
  };
  const auto ty = make_taps(OH, H);
  const auto tx = make_taps(OW, W);

  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* src = x->data.data() + (static_cast<int64_t>(n) * C + c) * H * W;
      double* dst = out->data.data() + (static_cast<int64_t>(n) * C + c) * OH * OW;
      for (int oy = 0; oy < OH; ++oy) {
        const Tap& a = ty[static_cast<size_t>(oy)];
        for (int ox = 0; ox < OW; ++ox) {
          const Tap& bx = tx[static_cast<size_t>(ox)];
          dst[static_cast<int64_t>(oy) * OW + ox] =
              a.w0 * (bx.w0 * src[static_cast<int64_t>(a.i0) * W + bx.i0] +
                      bx.w1 * src[static_cast<int64_t>(a.i0) * W + bx.i1]) +
              a.w1 * (bx.w0 * src[static_cast<int64_t>(a.i1) * W + bx.i0] +
                      bx.w1 * src[static_cast<int64_t>(a.i1) * W + bx.i1]);
        }
      }
    }

  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [x, o, ty, tx, N, C, H, W, OH, OW] {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          double* gsrc = x->grad.data() + (static_cast<int64_t>(n) * C + c) * H * W;
          const double* gdst = o->grad.data() + (static_cast<int64_t>(n) * C + c) * OH * OW;
          for (int oy = 0; oy < OH; ++oy) {
            const Tap& a = ty[static_cast<size_t>(oy)];
            for (int ox = 0; ox < OW; ++ox) {
              const Tap& bx = tx[static_cast<size_t>(ox)];
              const double g = gdst[static_cast<int64_t>(oy) * OW + ox];
              gsrc[static_cast<int64_t>(a.i0) * W + bx.i0] += g * a.w0 * bx.w0;
              gsrc[static_cast<int64_t>(a.i0) * W + bx.i1] += g * a.w0 * bx.w1;
              gsrc[static_cast<int64_t>(a.i1) * W + bx.i0] += g * a.w1 * bx.w0;
              gsrc[static_cast<int64_t>(a.i1) * W + bx.i1] += g * a.w1 * bx.w1;
            }
          }
        }
    };
  }
  return out;
}

/// Per-channel running statistics owned by a BatchNorm layer (not part of the
/// autodiff graph; serialized with checkpoints).
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  explicit BatchNormState(int channels = 0)
      : running_mean(static_cast<size_t>(channels), 0.0),
        running_var(static_cast<size_t>(channels), 1.0) {}
};

/// Batch normalization over (N,H,W) per channel. Training mode normalizes by
/// batch statistics (biased variance), updates running stats with the given
/// momentum (unbiased variance, matching common deep-learning convention) and
/// backpropagates through the statistics. Eval mode uses running stats as
/// constants.
inline TensorPtr batchnorm2d(const TensorPtr& x, const TensorPtr& gamma,
                             const TensorPtr& beta, BatchNormState& state, bool training,
                             double momentum = 0.1, double eps = 1e-5) {
  if (x->shape.size() != 4) throw std::invalid_argument("batchnorm2d: expected 4-D input");
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  if (gamma->numel() != C || beta->numel() != C ||
      static_cast<int>(state.running_mean.size()) != C)
    throw std::invalid_argument("batchnorm2d: channel mismatch");
  const int64_t cnt = static_cast<int64_t>(N) * H * W;
  if (training && cnt < 2)
    throw std::invalid_argument("batchnorm2d: training mode needs more than one value per channel");

  auto out = detail::make_node_vec({N, C, H, W}, {x, gamma, beta});
  const int64_t plane = static_cast<int64_t>(H) * W;
  std::vector<double> mu(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));

  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* src = x->data.data() + (static_cast<int64_t>(n) * C + c) * plane;
        for (int64_t q = 0; q < plane; ++q) s += src[q];
      }
      const double m = s / static_cast<double>(cnt);
      double v = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* src = x->data.data() + (static_cast<int64_t>(n) * C + c) * plane;
        for (int64_t q = 0; q < plane; ++q) {
          const double d = src[q] - m;
          v += d * d;
        }
      }
      const double var = v / static_cast<double>(cnt);
      mu[static_cast<size_t>(c)] = m;
      invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(var + eps);
      state.running_mean[static_cast<size_t>(c)] =
          (1.0 - momentum) * state.running_mean[static_cast<size_t>(c)] + momentum * m;
      state.running_var[static_cast<size_t>(c)] =
          (1.0 - momentum) * state.running_var[static_cast<size_t>(c)] +
          momentum * var * static_cast<double>(cnt) / static_cast<double>(cnt - 1);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mu[static_cast<size_t>(c)] = state.running_mean[static_cast<size_t>(c)];
      invstd[static_cast<size_t>(c)] =
          1.0 / std::sqrt(state.running_var[static_cast<size_t>(c)] + eps);
    }
  }

  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* src = x->data.data() + (static_cast<int64_t>(n) * C + c) * plane;
      double* dst = out->data.data() + (static_cast<int64_t>(n) * C + c) * plane;
      const double m = mu[static_cast<size_t>(c)], is = invstd[static_cast<size_t>(c)];
      const double g = gamma->data[static_cast<size_t>(c)], bta = beta->data[static_cast<size_t>(c)];
      for (int64_t q = 0; q < plane; ++q) dst[q] = (src[q] - m) * is * g + bta;
    }

  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [x, gamma, beta, o, mu, invstd, training, N, C, plane, cnt] {
      for (int c = 0; c < C; ++c) {
        const double m = mu[static_cast<size_t>(c)], is = invstd[static_cast<size_t>(c)];
        const double g = gamma->data[static_cast<size_t>(c)];
        double sum_g = 0.0, sum_gx = 0.0;
        for (int n = 0; n < N; ++n) {
          const double* go = o->grad.data() + (static_cast<int64_t>(n) * C + c) * plane;
          const double* xs = x->data.data() + (static_cast<int64_t>(n) * C + c) * plane;
          for (int64_t q = 0; q < plane; ++q) {
            sum_g += go[q];
            sum_gx += go[q] * (xs[q] - m) * is;
          }
        }
        if (gamma->requires_grad) gamma->grad[static_cast<size_t>(c)] += sum_gx;
        if (beta->requires_grad) beta->grad[static_cast<size_t>(c)] += sum_g;
        if (!x->requires_grad) continue;
        const double mg = sum_g / static_cast<double>(cnt);
        const double mgx = sum_gx / static_cast<double>(cnt);
        for (int n = 0; n < N; ++n) {
          const double* go = o->grad.data() + (static_cast<int64_t>(n) * C + c) * plane;
          const double* xs = x->data.data() + (static_cast<int64_t>(n) * C + c) * plane;
          double* gx = x->grad.data() + (static_cast<int64_t>(n) * C + c) * plane;
          if (training) {
            for (int64_t q = 0; q < plane; ++q) {
              const double xhat = (xs[q] - m) * is;
              gx[q] += g * is * (go[q] - mg - xhat * mgx);
            }
          } else {
            for (int64_t q = 0; q < plane; ++q) gx[q] += g * is * go[q];
          }
        }
      }
    };
  }
  return out;
}

/// Inverted dropout: zeroes activations with probability p during training and
/// rescales survivors by 1/(1-p); identity (same node) in eval mode. Mask
/// draws come from the supplied stream in flat index order.
inline TensorPtr dropout(const TensorPtr& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  auto out = detail::make_node_vec(x->shape, {x});
  const int64_t n = x->numel();
  std::vector<double> mask(static_cast<size_t>(n));
  const double keep_scale = 1.0 / (1.0 - p);
  for (int64_t i = 0; i < n; ++i) {
    mask[static_cast<size_t>(i)] = rng.uniform01() >= p ? keep_scale : 0.0;
    out->data[i] = x->data[i] * mask[static_cast<size_t>(i)];
  }
  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [x, o, mask = std::move(mask), n] {
      for (int64_t i = 0; i < n; ++i) x->grad[i] += o->grad[i] * mask[static_cast<size_t>(i)];
    };
  }
  return out;
}

/// Channel-wise concatenation with a fixed scalar weight per source, in the
/// order given: out = [w0*a0 | w1*a1 | ...]. All sources must share N, H, W.
inline TensorPtr weighted_concat(const std::vector<std::pair<TensorPtr, double>>& parts) {
  if (parts.empty()) throw std::invalid_argument("weighted_concat: no inputs");
  const auto& first = parts.front().first;
  if (first->shape.size() != 4)
    throw std::invalid_argument("weighted_concat: expected 4-D inputs");
  const int N = first->shape[0], H = first->shape[2], W = first->shape[3];
  int Cout = 0;
  std::vector<TensorPtr> parents;
  for (const auto& [t, wgt] : parts) {
    if (t->shape.size() != 4 || t->shape[0] != N || t->shape[2] != H || t->shape[3] != W)
      throw std::invalid_argument("weighted_concat: spatial/batch shape mismatch");
    Cout += t->shape[1];
    parents.push_back(t);
  }
  auto out = detail::make_node_vec({N, Cout, H, W}, parents);
  const int64_t plane = static_cast<int64_t>(H) * W;
  int coff = 0;
  for (const auto& [t, wgt] : parts) {
    const int Ci = t->shape[1];
    for (int n = 0; n < N; ++n) {
      const double* src = t->data.data() + static_cast<int64_t>(n) * Ci * plane;
      double* dst = out->data.data() +
                    (static_cast<int64_t>(n) * Cout + coff) * plane;
      for (int64_t q = 0; q < static_cast<int64_t>(Ci) * plane; ++q) dst[q] = src[q] * wgt;
    }
    coff += Ci;
  }
  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [parts, o, N, Cout, plane] {
      int coff = 0;
      for (const auto& [t, wgt] : parts) {
        const int Ci = t->shape[1];
        if (t->requires_grad)
          for (int n = 0; n < N; ++n) {
            double* gsrc = t->grad.data() + static_cast<int64_t>(n) * Ci * plane;
            const double* gdst = o->grad.data() +
                                 (static_cast<int64_t>(n) * Cout + coff) * plane;
            for (int64_t q = 0; q < static_cast<int64_t>(Ci) * plane; ++q)
              gsrc[q] += gdst[q] * wgt;
          }
        coff += Ci;
      }
    };
  }
  return out;
}

}  // namespace periscope
