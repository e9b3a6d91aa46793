#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mpnet/parallel.hpp"
#include "mpnet/tape.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

enum class Padding { same, valid };

namespace detail {

template <class T>
Var<T> result(Tensor<T> value, bool needs_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->needs_grad = needs_grad;
  if (needs_grad) n->ensure_grad();
  return n;
}

template <class T>
bool wants(Tape<T>* tape, std::initializer_list<const Var<T>*> inputs) {
  if (!tape) return false;
  for (const Var<T>* v : inputs)
    if ((*v)->needs_grad) return true;
  return false;
}

template <class T>
void prep(std::initializer_list<const Var<T>*> inputs) {
  for (const Var<T>* v : inputs)
    if ((*v)->needs_grad) (*v)->ensure_grad();
}

// Loop bounds for conv: output indices o with 0 <= o*stride + k - pad < limit.
inline int64_t conv_lo(int64_t k, int64_t pad, int64_t stride) {
  const int64_t excess = pad - k;
  if (excess <= 0) return 0;
  return (excess + stride - 1) / stride;
}
inline int64_t conv_hi(int64_t k, int64_t pad, int64_t stride, int64_t limit, int64_t out) {
  const int64_t top = limit - 1 - k + pad;
  if (top < 0) return 0;
  return std::min(out, top / stride + 1);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  int64_t batch, in_c, in_h, in_w;
  int64_t filters, k;
  int64_t out_h, out_w;
  int64_t pad_top, pad_left;
  int64_t stride;
};

template <class T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                   Padding pad) {
  if (x.rank() != 4)
    throw ShapeError("conv2d: input must be 4-d NCHW, got " + shape_string(x.shape()));
  if (w.rank() != 4)
    throw ShapeError("conv2d: weights must be 4-d FCKK, got " + shape_string(w.shape()));
  if (w.dim(2) != w.dim(3))
    throw ShapeError("conv2d: kernel must be square, got " + shape_string(w.shape()));
  if (x.dim(1) != w.dim(1))
    throw ShapeError("conv2d: input channels " + shape_string(x.shape()) +
                     " do not match weight channels " + shape_string(w.shape()));
  if (b.rank() != 1 || b.dim(0) != w.dim(0))
    throw ShapeError("conv2d: bias shape " + shape_string(b.shape()) + " does not match " +
                     std::to_string(w.dim(0)) + " filters");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");

  ConvDims d;
  d.batch = x.dim(0);
  d.in_c = x.dim(1);
  d.in_h = x.dim(2);
  d.in_w = x.dim(3);
  d.filters = w.dim(0);
  d.k = w.dim(2);
  d.stride = stride;
  if (pad == Padding::same) {
    if (d.k % 2 == 0) throw ShapeError("conv2d: same padding requires odd kernel size");
    d.out_h = (d.in_h + stride - 1) / stride;
    d.out_w = (d.in_w + stride - 1) / stride;
    const int64_t pad_h = std::max<int64_t>(0, (d.out_h - 1) * stride + d.k - d.in_h);
    const int64_t pad_w = std::max<int64_t>(0, (d.out_w - 1) * stride + d.k - d.in_w);
    d.pad_top = pad_h / 2;
    d.pad_left = pad_w / 2;
  } else {
    if (d.in_h < d.k || d.in_w < d.k)
      throw ShapeError("conv2d: input " + shape_string(x.shape()) +
                       " smaller than kernel with valid padding");
    d.out_h = (d.in_h - d.k) / stride + 1;
    d.out_w = (d.in_w - d.k) / stride + 1;
    d.pad_top = 0;
    d.pad_left = 0;
  }
  return d;
}

template <class T>
void conv_forward(const ConvDims& d, const T* in, const T* w, const T* b, T* out) {
  parallel_for(d.batch * d.filters, [&](int64_t nf) {
    const int64_t n = nf / d.filters;
    const int64_t f = nf % d.filters;
    T* out_nf = out + (n * d.filters + f) * d.out_h * d.out_w;
    std::fill(out_nf, out_nf + d.out_h * d.out_w, b[f]);
    for (int64_t c = 0; c < d.in_c; ++c) {
      const T* in_nc = in + (n * d.in_c + c) * d.in_h * d.in_w;
      const T* w_fc = w + (f * d.in_c + c) * d.k * d.k;
      for (int64_t ky = 0; ky < d.k; ++ky) {
        const int64_t oy0 = conv_lo(ky, d.pad_top, d.stride);
        const int64_t oy1 = conv_hi(ky, d.pad_top, d.stride, d.in_h, d.out_h);
        for (int64_t kx = 0; kx < d.k; ++kx) {
          const T wv = w_fc[ky * d.k + kx];
          const int64_t ox0 = conv_lo(kx, d.pad_left, d.stride);
          const int64_t ox1 = conv_hi(kx, d.pad_left, d.stride, d.in_w, d.out_w);
          for (int64_t oy = oy0; oy < oy1; ++oy) {
            const T* in_row = in_nc + (oy * d.stride + ky - d.pad_top) * d.in_w;
            T* out_row = out_nf + oy * d.out_w;
            if (d.stride == 1) {
              const T* in_shift = in_row + kx - d.pad_left;
              for (int64_t ox = ox0; ox < ox1; ++ox) out_row[ox] += wv * in_shift[ox];
            } else {
              for (int64_t ox = ox0; ox < ox1; ++ox)
                out_row[ox] += wv * in_row[ox * d.stride + kx - d.pad_left];
            }
          }
        }
      }
    }
  });
}

template <class T>
void conv_backward_input(const ConvDims& d, const T* w, const T* dout, T* din) {
  parallel_for(d.batch * d.in_c, [&](int64_t nc) {
    const int64_t n = nc / d.in_c;
    const int64_t c = nc % d.in_c;
    T* din_nc = din + (n * d.in_c + c) * d.in_h * d.in_w;
    for (int64_t f = 0; f < d.filters; ++f) {
      const T* dout_nf = dout + (n * d.filters + f) * d.out_h * d.out_w;
      const T* w_fc = w + (f * d.in_c + c) * d.k * d.k;
      for (int64_t ky = 0; ky < d.k; ++ky) {
        const int64_t oy0 = conv_lo(ky, d.pad_top, d.stride);
        const int64_t oy1 = conv_hi(ky, d.pad_top, d.stride, d.in_h, d.out_h);
        for (int64_t kx = 0; kx < d.k; ++kx) {
          const T wv = w_fc[ky * d.k + kx];
          const int64_t ox0 = conv_lo(kx, d.pad_left, d.stride);
          const int64_t ox1 = conv_hi(kx, d.pad_left, d.stride, d.in_w, d.out_w);
          for (int64_t oy = oy0; oy < oy1; ++oy) {
            T* din_row = din_nc + (oy * d.stride + ky - d.pad_top) * d.in_w;
            const T* dout_row = dout_nf + oy * d.out_w;
            if (d.stride == 1) {
              T* din_shift = din_row + kx - d.pad_left;
              for (int64_t ox = ox0; ox < ox1; ++ox) din_shift[ox] += wv * dout_row[ox];
            } else {
              for (int64_t ox = ox0; ox < ox1; ++ox)
                din_row[ox * d.stride + kx - d.pad_left] += wv * dout_row[ox];
            }
          }
        }
      }
    }
  });
}

template <class T>
void conv_backward_weights(const ConvDims& d, const T* in, const T* dout, T* dw) {
  parallel_for(d.filters, [&](int64_t f) {
    for (int64_t c = 0; c < d.in_c; ++c) {
      T* dw_fc = dw + (f * d.in_c + c) * d.k * d.k;
      for (int64_t ky = 0; ky < d.k; ++ky) {
        const int64_t oy0 = conv_lo(ky, d.pad_top, d.stride);
        const int64_t oy1 = conv_hi(ky, d.pad_top, d.stride, d.in_h, d.out_h);
        for (int64_t kx = 0; kx < d.k; ++kx) {
          const int64_t ox0 = conv_lo(kx, d.pad_left, d.stride);
          const int64_t ox1 = conv_hi(kx, d.pad_left, d.stride, d.in_w, d.out_w);
          T acc = T(0);
          for (int64_t n = 0; n < d.batch; ++n) {
            const T* in_nc = in + (n * d.in_c + c) * d.in_h * d.in_w;
            const T* dout_nf = dout + (n * d.filters + f) * d.out_h * d.out_w;
            for (int64_t oy = oy0; oy < oy1; ++oy) {
              const T* in_row = in_nc + (oy * d.stride + ky - d.pad_top) * d.in_w;
              const T* dout_row = dout_nf + oy * d.out_w;
              if (d.stride == 1) {
                const T* in_shift = in_row + kx - d.pad_left;
                for (int64_t ox = ox0; ox < ox1; ++ox) acc += in_shift[ox] * dout_row[ox];
              } else {
                for (int64_t ox = ox0; ox < ox1; ++ox)
                  acc += in_row[ox * d.stride + kx - d.pad_left] * dout_row[ox];
              }
            }
          }
          dw_fc[ky * d.k + kx] += acc;
        }
      }
    }
  });
}

template <class T>
void conv_backward_bias(const ConvDims& d, const T* dout, T* db) {
  for (int64_t n = 0; n < d.batch; ++n)
    for (int64_t f = 0; f < d.filters; ++f) {
      const T* dout_nf = dout + (n * d.filters + f) * d.out_h * d.out_w;
      T acc = T(0);
      for (int64_t i = 0; i < d.out_h * d.out_w; ++i) acc += dout_nf[i];
      db[f] += acc;
    }
}

}  // namespace detail

/// 2-d convolution, NCHW input, FCKK weights, per-filter bias.
template <class T>
Var<T> conv2d(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride,
              Padding pad) {
  const detail::ConvDims d = detail::conv_dims(x->value, w->value, b->value, stride, pad);
  Tensor<T> out({d.batch, d.filters, d.out_h, d.out_w});
  detail::conv_forward(d, x->value.data(), w->value.data(), b->value.data(), out.data());

  const bool ng = detail::wants(tape, {&x, &w, &b});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&x, &w, &b});
    tape->record([d, x, w, b, y] {
      const T* dout = y->grad.data();
      if (x->needs_grad) detail::conv_backward_input(d, w->value.data(), dout, x->grad.data());
      if (w->needs_grad) detail::conv_backward_weights(d, x->value.data(), dout, w->grad.data());
      if (b->needs_grad) detail::conv_backward_bias(d, dout, b->grad.data());
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// Affine map: x (N x Fin) * w (Fin x Fout) + b (Fout).
template <class T>
Var<T> dense(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x->value.rank() != 2)
    throw ShapeError("dense: input must be 2-d, got " + shape_string(x->value.shape()));
  if (w->value.rank() != 2 || x->value.dim(1) != w->value.dim(0))
    throw ShapeError("dense: inner dims disagree, input " + shape_string(x->value.shape()) +
                     " vs weights " + shape_string(w->value.shape()));
  if (b->value.rank() != 1 || b->value.dim(0) != w->value.dim(1))
    throw ShapeError("dense: bias shape " + shape_string(b->value.shape()) +
                     " does not match weights " + shape_string(w->value.shape()));

  const int64_t n_rows = x->value.dim(0), fin = w->value.dim(0), fout = w->value.dim(1);
  Tensor<T> out({n_rows, fout});
  {
    const T* xp = x->value.data();
    const T* wp = w->value.data();
    const T* bp = b->value.data();
    T* yp = out.data();
    parallel_for(n_rows, [&](int64_t n) {
      T* y_row = yp + n * fout;
      std::copy(bp, bp + fout, y_row);
      const T* x_row = xp + n * fin;
      for (int64_t k = 0; k < fin; ++k) {
        const T xv = x_row[k];
        const T* w_row = wp + k * fout;
        for (int64_t j = 0; j < fout; ++j) y_row[j] += xv * w_row[j];
      }
    });
  }

  const bool ng = detail::wants(tape, {&x, &w, &b});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&x, &w, &b});
    tape->record([x, w, b, y, n_rows, fin, fout] {
      const T* dy = y->grad.data();
      if (x->needs_grad) {
        const T* wp = w->value.data();
        T* dx = x->grad.data();
        parallel_for(n_rows, [&](int64_t n) {
          const T* dy_row = dy + n * fout;
          T* dx_row = dx + n * fin;
          for (int64_t k = 0; k < fin; ++k) {
            const T* w_row = wp + k * fout;
            T acc = T(0);
            for (int64_t j = 0; j < fout; ++j) acc += dy_row[j] * w_row[j];
            dx_row[k] += acc;
          }
        });
      }
      if (w->needs_grad) {
        const T* xp = x->value.data();
        T* dw = w->grad.data();
        for (int64_t n = 0; n < n_rows; ++n) {
          const T* x_row = xp + n * fin;
          const T* dy_row = dy + n * fout;
          for (int64_t k = 0; k < fin; ++k) {
            const T xv = x_row[k];
            T* dw_row = dw + k * fout;
            for (int64_t j = 0; j < fout; ++j) dw_row[j] += xv * dy_row[j];
          }
        }
      }
      if (b->needs_grad) {
        T* db = b->grad.data();
        for (int64_t n = 0; n < n_rows; ++n) {
          const T* dy_row = dy + n * fout;
          for (int64_t j = 0; j < fout; ++j) db[j] += dy_row[j];
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise and pooling
// ---------------------------------------------------------------------------

template <class T>
Var<T> relu(Tape<T>* tape, const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  const int64_t n = x->value.size();
  for (int64_t i = 0; i < n; ++i) out[i] = x->value[i] > T(0) ? x->value[i] : T(0);

  const bool ng = detail::wants(tape, {&x});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&x});
    tape->record([x, y, n] {
      // relu'(0) := 0
      for (int64_t i = 0; i < n; ++i)
        if (x->value[i] > T(0)) x->grad[i] += y->grad[i];
    });
  }
  return y;
}

/// 2x2 max pooling, stride 2. Odd trailing rows/columns are dropped.
/// Backward routes the gradient to the argmax position; ties go to the
/// first position in (y, x) scan order.
template <class T>
Var<T> maxpool2x2(Tape<T>* tape, const Var<T>& x) {
  if (x->value.rank() != 4)
    throw ShapeError("maxpool2x2: input must be 4-d NCHW, got " + shape_string(x->value.shape()));
  const int64_t n_b = x->value.dim(0), c_n = x->value.dim(1);
  const int64_t h = x->value.dim(2), w = x->value.dim(3);
  const int64_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0)
    throw ShapeError("maxpool2x2: spatial dims too small in " + shape_string(x->value.shape()));

  Tensor<T> out({n_b, c_n, oh, ow});
  std::vector<int64_t> argmax(static_cast<size_t>(out.size()));
  const T* in = x->value.data();
  T* op = out.data();
  int64_t oi = 0;
  for (int64_t nc = 0; nc < n_b * c_n; ++nc) {
    const T* plane = in + nc * h * w;
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox, ++oi) {
        int64_t best = (2 * oy) * w + 2 * ox;
        T best_v = plane[best];
        const int64_t cand[3] = {(2 * oy) * w + 2 * ox + 1, (2 * oy + 1) * w + 2 * ox,
                                 (2 * oy + 1) * w + 2 * ox + 1};
        for (int64_t idx : cand)
          if (plane[idx] > best_v) {
            best_v = plane[idx];
            best = idx;
          }
        op[oi] = best_v;
        argmax[static_cast<size_t>(oi)] = nc * h * w + best;
      }
  }

  const bool ng = detail::wants(tape, {&x});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&x});
    tape->record([x, y, argmax = std::move(argmax)] {
      for (int64_t i = 0; i < y->grad.size(); ++i)
        x->grad[argmax[static_cast<size_t>(i)]] += y->grad[i];
    });
  }
  return y;
}

/// Softmax over the last dimension of a 1-d vector or the rows of a 2-d
/// tensor. Max-subtraction keeps the result invariant to constant shifts.
template <class T>
Var<T> softmax(Tape<T>* tape, const Var<T>& x) {
  if (x->value.rank() != 1 && x->value.rank() != 2)
    throw ShapeError("softmax: input must be 1-d or 2-d, got " + shape_string(x->value.shape()));
  const int64_t cols = x->value.rank() == 1 ? x->value.dim(0) : x->value.dim(1);
  const int64_t rows = x->value.size() / std::max<int64_t>(cols, 1);
  if (cols < 1) throw ShapeError("softmax: input length must be >= 1");

  Tensor<T> out(x->value.shape());
  const T* xp = x->value.data();
  T* yp = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * cols;
    T* yr = yp + r * cols;
    T m = xr[0];
    for (int64_t j = 1; j < cols; ++j) m = std::max(m, xr[j]);
    T sum = T(0);
    for (int64_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - m);
      sum += yr[j];
    }
    for (int64_t j = 0; j < cols; ++j) yr[j] /= sum;
  }

  const bool ng = detail::wants(tape, {&x});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&x});
    tape->record([x, y, rows, cols] {
      const T* yv = y->value.data();
      const T* dy = y->grad.data();
      T* dx = x->grad.data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* yr = yv + r * cols;
        const T* dyr = dy + r * cols;
        T dot = T(0);
        for (int64_t j = 0; j < cols; ++j) dot += dyr[j] * yr[j];
        T* dxr = dx + r * cols;
        for (int64_t j = 0; j < cols; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
      }
    });
  }
  return y;
}

/// Per-channel spatial mean: (N, C, H, W) -> (N, C).
template <class T>
Var<T> global_avg_pool(Tape<T>* tape, const Var<T>& x) {
  if (x->value.rank() != 4)
    throw ShapeError("global_avg_pool: input must be 4-d NCHW, got " +
                     shape_string(x->value.shape()));
  const int64_t n_b = x->value.dim(0), c_n = x->value.dim(1);
  const int64_t hw = x->value.dim(2) * x->value.dim(3);
  const T inv = T(1) / static_cast<T>(hw);

  Tensor<T> out({n_b, c_n});
  const T* in = x->value.data();
  for (int64_t nc = 0; nc < n_b * c_n; ++nc) {
    const T* plane = in + nc * hw;
    T acc = T(0);
    for (int64_t i = 0; i < hw; ++i) acc += plane[i];
    out[nc] = acc * inv;
  }

  const bool ng = detail::wants(tape, {&x});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&x});
    tape->record([x, y, n_b, c_n, hw, inv] {
      T* dx = x->grad.data();
      for (int64_t nc = 0; nc < n_b * c_n; ++nc) {
        const T g = y->grad[nc] * inv;
        T* plane = dx + nc * hw;
        for (int64_t i = 0; i < hw; ++i) plane[i] += g;
      }
    });
  }
  return y;
}

template <class T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "add");
  Tensor<T> out(a->value.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];

  const bool ng = detail::wants(tape, {&a, &b});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&a, &b});
    tape->record([a, b, y, n] {
      if (a->needs_grad)
        for (int64_t i = 0; i < n; ++i) a->grad[i] += y->grad[i];
      if (b->needs_grad)
        for (int64_t i = 0; i < n; ++i) b->grad[i] += y->grad[i];
    });
  }
  return y;
}

/// y = c * x for a compile-time-constant scalar c.
template <class T>
Var<T> scale(Tape<T>* tape, const Var<T>& x, T c) {
  Tensor<T> out(x->value.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out[i] = c * x->value[i];

  const bool ng = detail::wants(tape, {&x});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&x});
    tape->record([x, y, c, n] {
      for (int64_t i = 0; i < n; ++i) x->grad[i] += c * y->grad[i];
    });
  }
  return y;
}

template <class T>
Var<T> sub(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  return add(tape, a, scale(tape, b, T(-1)));
}

/// Broadcasts a single-element tensor g over x: y = g * x.
/// d(loss)/dg = sum(x * upstream).
template <class T>
Var<T> scalar_broadcast_mul(Tape<T>* tape, const Var<T>& g, const Var<T>& x) {
  if (g->value.size() != 1)
    throw ShapeError("scalar_broadcast_mul: gate must be a single element, got " +
                     shape_string(g->value.shape()));
  const T gv = g->value[0];
  Tensor<T> out(x->value.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out[i] = gv * x->value[i];

  const bool ng = detail::wants(tape, {&g, &x});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&g, &x});
    tape->record([g, x, y, gv, n] {
      if (g->needs_grad) {
        T acc = T(0);
        for (int64_t i = 0; i < n; ++i) acc += y->grad[i] * x->value[i];
        g->grad[0] += acc;
      }
      if (x->needs_grad)
        for (int64_t i = 0; i < n; ++i) x->grad[i] += gv * y->grad[i];
    });
  }
  return y;
}

/// Scales each sample in the batch by its own scalar:
/// y[k, ...] = g[k] * x[k, ...] with g of shape (N).
template <class T>
Var<T> rowwise_scale(Tape<T>* tape, const Var<T>& g, const Var<T>& x) {
  if (g->value.rank() != 1 || x->value.rank() < 1 || g->value.dim(0) != x->value.dim(0))
    throw ShapeError("rowwise_scale: gate shape " + shape_string(g->value.shape()) +
                     " does not match batch of " + shape_string(x->value.shape()));
  const int64_t n_b = x->value.dim(0);
  const int64_t inner = x->value.size() / n_b;

  Tensor<T> out(x->value.shape());
  for (int64_t r = 0; r < n_b; ++r) {
    const T gv = g->value[r];
    const T* xr = x->value.data() + r * inner;
    T* yr = out.data() + r * inner;
    for (int64_t i = 0; i < inner; ++i) yr[i] = gv * xr[i];
  }

  const bool ng = detail::wants(tape, {&g, &x});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&g, &x});
    tape->record([g, x, y, n_b, inner] {
      for (int64_t r = 0; r < n_b; ++r) {
        const T* dyr = y->grad.data() + r * inner;
        const T* xr = x->value.data() + r * inner;
        if (g->needs_grad) {
          T acc = T(0);
          for (int64_t i = 0; i < inner; ++i) acc += dyr[i] * xr[i];
          g->grad[r] += acc;
        }
        if (x->needs_grad) {
          const T gv = g->value[r];
          T* dxr = x->grad.data() + r * inner;
          for (int64_t i = 0; i < inner; ++i) dxr[i] += gv * dyr[i];
        }
      }
    });
  }
  return y;
}

/// Elementwise mean of k same-shaped tensors.
template <class T>
Var<T> mean_over(Tape<T>* tape, const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("mean_over: empty tensor list");
  for (const auto& x : xs) check_same_shape(xs[0]->value, x->value, "mean_over");
  const int64_t n = xs[0]->value.size();
  const T inv = T(1) / static_cast<T>(xs.size());

  Tensor<T> out(xs[0]->value.shape());
  for (const auto& x : xs)
    for (int64_t i = 0; i < n; ++i) out[i] += x->value[i];
  for (int64_t i = 0; i < n; ++i) out[i] *= inv;

  bool ng = false;
  if (tape)
    for (const auto& x : xs) ng = ng || x->needs_grad;
  auto y = detail::result(std::move(out), ng && tape);
  if (ng && tape) {
    for (const auto& x : xs)
      if (x->needs_grad) x->ensure_grad();
    tape->record([xs, y, n, inv] {
      for (const auto& x : xs)
        if (x->needs_grad)
          for (int64_t i = 0; i < n; ++i) x->grad[i] += inv * y->grad[i];
    });
  }
  return y;
}

/// (N, C, H, W) or any rank >= 2 tensor -> (N, rest).
template <class T>
Var<T> flatten2d(Tape<T>* tape, const Var<T>& x) {
  if (x->value.rank() < 2)
    throw ShapeError("flatten2d: input must have rank >= 2, got " +
                     shape_string(x->value.shape()));
  const int64_t n_b = x->value.dim(0);
  const int64_t inner = x->value.size() / n_b;
  Tensor<T> out({n_b, inner});
  std::copy(x->value.data(), x->value.data() + x->value.size(), out.data());

  const bool ng = detail::wants(tape, {&x});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&x});
    tape->record([x, y] {
      for (int64_t i = 0; i < y->grad.size(); ++i) x->grad[i] += y->grad[i];
    });
  }
  return y;
}

/// Selects one element by flat index, as a single-element tensor.
template <class T>
Var<T> pick(Tape<T>* tape, const Var<T>& x, int64_t flat_index) {
  if (flat_index < 0 || flat_index >= x->value.size())
    throw ShapeError("pick: index " + std::to_string(flat_index) + " out of range for " +
                     shape_string(x->value.shape()));
  Tensor<T> out = Tensor<T>::scalar(x->value[flat_index]);

  const bool ng = detail::wants(tape, {&x});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&x});
    tape->record([x, y, flat_index] { x->grad[flat_index] += y->grad[0]; });
  }
  return y;
}

/// Column j of a 2-d tensor as a 1-d tensor of length N.
template <class T>
Var<T> pick_column(Tape<T>* tape, const Var<T>& x, int64_t j) {
  if (x->value.rank() != 2)
    throw ShapeError("pick_column: input must be 2-d, got " + shape_string(x->value.shape()));
  const int64_t n_b = x->value.dim(0), cols = x->value.dim(1);
  if (j < 0 || j >= cols)
    throw ShapeError("pick_column: column " + std::to_string(j) + " out of range for " +
                     shape_string(x->value.shape()));
  Tensor<T> out({n_b});
  for (int64_t r = 0; r < n_b; ++r) out[r] = x->value[r * cols + j];

  const bool ng = detail::wants(tape, {&x});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&x});
    tape->record([x, y, n_b, cols, j] {
      for (int64_t r = 0; r < n_b; ++r) x->grad[r * cols + j] += y->grad[r];
    });
  }
  return y;
}

/// Sum of squared elements, as a single-element tensor.
template <class T>
Var<T> sum_squares(Tape<T>* tape, const Var<T>& x) {
  T acc = T(0);
  const int64_t n = x->value.size();
  for (int64_t i = 0; i < n; ++i) acc += x->value[i] * x->value[i];
  auto out = Tensor<T>::scalar(acc);

  const bool ng = detail::wants(tape, {&x});
  auto y = detail::result(std::move(out), ng);
  if (ng) {
    detail::prep({&x});
    tape->record([x, y, n] {
      const T g = y->grad[0];
      for (int64_t i = 0; i < n; ++i) x->grad[i] += T(2) * x->value[i] * g;
    });
  }
  return y;
}

/// Mean over the batch of -log softmax(logits)[label].
template <class T>
Var<T> cross_entropy_loss(Tape<T>* tape, const Var<T>& logits, const std::vector<int>& labels) {
  if (logits->value.rank() != 2)
    throw ShapeError("cross_entropy_loss: logits must be 2-d, got " +
                     shape_string(logits->value.shape()));
  const int64_t n_b = logits->value.dim(0), classes = logits->value.dim(1);
  if (static_cast<int64_t>(labels.size()) != n_b)
    throw ShapeError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n_b) + " rows");
  for (int lab : labels)
    if (lab < 0 || lab >= classes)
      throw ShapeError("cross_entropy_loss: label " + std::to_string(lab) +
                       " out of range [0, " + std::to_string(classes) + ")");

  // Stable log-softmax; probabilities kept for the backward rule.
  Tensor<T> probs({n_b, classes});
  T loss = T(0);
  const T* xp = logits->value.data();
  T* pp = probs.data();
  for (int64_t r = 0; r < n_b; ++r) {
    const T* xr = xp + r * classes;
    T* pr = pp + r * classes;
    T m = xr[0];
    for (int64_t j = 1; j < classes; ++j) m = std::max(m, xr[j]);
    T sum = T(0);
    for (int64_t j = 0; j < classes; ++j) {
      pr[j] = std::exp(xr[j] - m);
      sum += pr[j];
    }
    for (int64_t j = 0; j < classes; ++j) pr[j] /= sum;
    loss += std::log(sum) + m - xr[labels[static_cast<size_t>(r)]];
  }
  loss /= static_cast<T>(n_b);

  const bool ng = detail::wants(tape, {&logits});
  auto y = detail::result(Tensor<T>::scalar(loss), ng);
  if (ng) {
    detail::prep({&logits});
    tape->record([logits, y, labels, probs = std::move(probs), n_b, classes] {
      const T g = y->grad[0] / static_cast<T>(n_b);
      T* dx = logits->grad.data();
      const T* pr = probs.data();
      for (int64_t r = 0; r < n_b; ++r) {
        T* dxr = dx + r * classes;
        const T* p_row = pr + r * classes;
        for (int64_t j = 0; j < classes; ++j) dxr[j] += g * p_row[j];
        dxr[labels[static_cast<size_t>(r)]] -= g;
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers
// ---------------------------------------------------------------------------

template <class T>
int64_t argmax_row(const Tensor<T>& t, int64_t row) {
  const int64_t cols = t.dim(1);
  const T* p = t.data() + row * cols;
  int64_t best = 0;
  for (int64_t j = 1; j < cols; ++j)
    if (p[j] > p[best]) best = j;
  return best;
}

}  // namespace mpnet
