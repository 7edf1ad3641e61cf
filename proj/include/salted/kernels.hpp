#pragma once

// Batched forward/backward kernels. Every tensor carries a leading batch
// axis. Per-sample results do not depend on the batch size, which is what
// makes split inference bit-identical to a single-process forward.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "salted/error.hpp"
#include "salted/tensor.hpp"

namespace salted::kernels {

/// Output length of a zero-padded convolution along one axis; 0 if the
/// kernel does not fit.
constexpr std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (in + 2 * padding < kernel || stride == 0) return 0;
  return (in + 2 * padding - kernel) / stride + 1;
}

/// out = (in - 1) * stride - 2 * padding + kernel; 0 if not positive.
constexpr std::size_t conv_transpose_out(std::size_t in, std::size_t kernel, std::size_t stride,
                                         std::size_t padding) {
  const std::size_t grown = (in - 1) * stride + kernel;
  return grown > 2 * padding ? grown - 2 * padding : 0;
}

// ---------------------------------------------------------------- dense

template <typename T>
Tensor<T> fc_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  Tensor<T> y({n, out});
  for (std::size_t s = 0; s < n; ++s) {
    const T* xs = x.data() + s * in;
    T* ys = y.data() + s * out;
    for (std::size_t o = 0; o < out; ++o) {
      const T* wo = w.data() + o * in;
      T acc = T{0};
      for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xs[i];
      ys[o] = acc + b[o];
    }
  }
  return y;
}

template <typename T>
void fc_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& w, Tensor<T>* dx,
                 Tensor<T>* dw, Tensor<T>* db) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  for (std::size_t s = 0; s < n; ++s) {
    const T* xs = x.data() + s * in;
    const T* dys = dy.data() + s * out;
    for (std::size_t o = 0; o < out; ++o) {
      const T g = dys[o];
      if (db) (*db)[o] += g;
      if (dw) {
        T* dwo = dw->data() + o * in;
        for (std::size_t i = 0; i < in; ++i) dwo[i] += g * xs[i];
      }
      if (dx) {
        const T* wo = w.data() + o * in;
        T* dxs = dx->data() + s * in;
        for (std::size_t i = 0; i < in; ++i) dxs[i] += g * wo[i];
      }
    }
  }
}

// ---------------------------------------------------------- convolution

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x [N,C,H,W], w [O,C,k,k], b [O] -> [N,O,Ho,Wo]
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         ConvGeometry g) {
  const std::size_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t c_out = w.dim(0), k = w.dim(2);
  const std::size_t ho = conv_out(h, k, g.stride, g.padding);
  const std::size_t wo = conv_out(wd, k, g.stride, g.padding);
  Tensor<T> y({n, c_out, ho, wo});
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < c_out; ++o) {
      T* yo = y.data() + ((s * c_out + o) * ho) * wo;
      std::fill(yo, yo + ho * wo, b[o]);
      for (std::size_t c = 0; c < c_in; ++c) {
        const T* xc = x.data() + ((s * c_in + c) * h) * wd;
        for (std::size_t ki = 0; ki < k; ++ki) {
          for (std::size_t kj = 0; kj < k; ++kj) {
            const T wv = w[((o * c_in + c) * k + ki) * k + kj];
            for (std::size_t oh = 0; oh < ho; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * stride - pad +
                                        static_cast<std::ptrdiff_t>(ki);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
              const T* xrow = xc + static_cast<std::size_t>(ih) * wd;
              T* yrow = yo + oh * wo;
              for (std::size_t ow = 0; ow < wo; ++ow) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * stride - pad +
                                          static_cast<std::ptrdiff_t>(kj);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(wd)) continue;
                yrow[ow] += wv * xrow[iw];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& w, ConvGeometry g,
                     Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const std::size_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t c_out = w.dim(0), k = w.dim(2);
  const std::size_t ho = dy.dim(2), wo = dy.dim(3);
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < c_out; ++o) {
      const T* dyo = dy.data() + ((s * c_out + o) * ho) * wo;
      if (db) {
        T acc = T{0};
        for (std::size_t i = 0; i < ho * wo; ++i) acc += dyo[i];
        (*db)[o] += acc;
      }
      for (std::size_t c = 0; c < c_in; ++c) {
        const std::size_t xoff = ((s * c_in + c) * h) * wd;
        for (std::size_t ki = 0; ki < k; ++ki) {
          for (std::size_t kj = 0; kj < k; ++kj) {
            const std::size_t widx = ((o * c_in + c) * k + ki) * k + kj;
            const T wv = w[widx];
            T wacc = T{0};
            for (std::size_t oh = 0; oh < ho; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * stride - pad +
                                        static_cast<std::ptrdiff_t>(ki);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
              const std::size_t row = xoff + static_cast<std::size_t>(ih) * wd;
              for (std::size_t ow = 0; ow < wo; ++ow) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * stride - pad +
                                          static_cast<std::ptrdiff_t>(kj);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(wd)) continue;
                const T gy = dyo[oh * wo + ow];
                wacc += gy * x[row + static_cast<std::size_t>(iw)];
                if (dx) (*dx)[row + static_cast<std::size_t>(iw)] += gy * wv;
              }
            }
            if (dw) (*dw)[widx] += wacc;
          }
        }
      }
    }
  }
}

/// x [N,C,H,W], w [C,O,k,k], b [O] -> [N,O,Ho,Wo] with
/// Ho = (H - 1) * stride - 2 * padding + k.
template <typename T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                                   ConvGeometry g) {
  const std::size_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t c_out = w.dim(1), k = w.dim(2);
  const std::size_t ho = conv_transpose_out(h, k, g.stride, g.padding);
  const std::size_t wo = conv_transpose_out(wd, k, g.stride, g.padding);
  Tensor<T> y({n, c_out, ho, wo});
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < c_out; ++o) {
      T* yo = y.data() + ((s * c_out + o) * ho) * wo;
      std::fill(yo, yo + ho * wo, b[o]);
      for (std::size_t c = 0; c < c_in; ++c) {
        const T* xc = x.data() + ((s * c_in + c) * h) * wd;
        for (std::size_t ki = 0; ki < k; ++ki) {
          for (std::size_t kj = 0; kj < k; ++kj) {
            const T wv = w[((c * c_out + o) * k + ki) * k + kj];
            for (std::size_t ih = 0; ih < h; ++ih) {
              const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(ih) * stride - pad +
                                        static_cast<std::ptrdiff_t>(ki);
              if (oh < 0 || oh >= static_cast<std::ptrdiff_t>(ho)) continue;
              for (std::size_t iw = 0; iw < wd; ++iw) {
                const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(iw) * stride - pad +
                                          static_cast<std::ptrdiff_t>(kj);
                if (ow < 0 || ow >= static_cast<std::ptrdiff_t>(wo)) continue;
                yo[static_cast<std::size_t>(oh) * wo + static_cast<std::size_t>(ow)] +=
                    wv * xc[ih * wd + iw];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& w,
                               ConvGeometry g, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const std::size_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t c_out = w.dim(1), k = w.dim(2);
  const std::size_t ho = dy.dim(2), wo = dy.dim(3);
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < c_out; ++o) {
      const T* dyo = dy.data() + ((s * c_out + o) * ho) * wo;
      if (db) {
        T acc = T{0};
        for (std::size_t i = 0; i < ho * wo; ++i) acc += dyo[i];
        (*db)[o] += acc;
      }
      for (std::size_t c = 0; c < c_in; ++c) {
        const std::size_t xoff = ((s * c_in + c) * h) * wd;
        for (std::size_t ki = 0; ki < k; ++ki) {
          for (std::size_t kj = 0; kj < k; ++kj) {
            const std::size_t widx = ((c * c_out + o) * k + ki) * k + kj;
            const T wv = w[widx];
            T wacc = T{0};
            for (std::size_t ih = 0; ih < h; ++ih) {
              const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(ih) * stride - pad +
                                        static_cast<std::ptrdiff_t>(ki);
              if (oh < 0 || oh >= static_cast<std::ptrdiff_t>(ho)) continue;
              for (std::size_t iw = 0; iw < wd; ++iw) {
                const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(iw) * stride - pad +
                                          static_cast<std::ptrdiff_t>(kj);
                if (ow < 0 || ow >= static_cast<std::ptrdiff_t>(wo)) continue;
                const T gy = dyo[static_cast<std::size_t>(oh) * wo + static_cast<std::size_t>(ow)];
                wacc += gy * x[xoff + ih * wd + iw];
                if (dx) (*dx)[xoff + ih * wd + iw] += gy * wv;
              }
            }
            if (dw) (*dw)[widx] += wacc;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------- elementwise

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (T& v : y.values()) v = v > T{0} ? v : T{0};
  return y;
}

template <typename T>
void relu_backward(const Tensor<T>& dy, const Tensor<T>& x, Tensor<T>& dx) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > T{0}) dx[i] += dy[i];
  }
}

// ------------------------------------------------------- concat / split

/// Concatenates along axis 1 (the first per-sample axis): channels for
/// [N,C,H,W], features for [N,F].
template <typename T>
Tensor<T> concat_axis1(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t n = a.dim(0);
  const std::size_t a_row = a.size() / n, b_row = b.size() / n;
  Shape shape = a.shape();
  shape[1] += b.dim(1);
  Tensor<T> y(shape);
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(a.data() + s * a_row, a_row, y.data() + s * (a_row + b_row));
    std::copy_n(b.data() + s * b_row, b_row, y.data() + s * (a_row + b_row) + a_row);
  }
  return y;
}

/// Inverse of concat_axis1: first `lead` entries of axis 1, then the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_axis1(const Tensor<T>& y, std::size_t lead) {
  if (y.rank() < 2 || lead == 0 || lead >= y.dim(1)) {
    throw Error(Errc::ShapeMismatch,
                "cannot split " + shape_str(y.shape()) + " at " + std::to_string(lead));
  }
  const std::size_t n = y.dim(0);
  Shape sa = y.shape(), sb = y.shape();
  sa[1] = lead;
  sb[1] = y.dim(1) - lead;
  Tensor<T> a(sa), b(sb);
  const std::size_t a_row = a.size() / n, b_row = b.size() / n;
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(y.data() + s * (a_row + b_row), a_row, a.data() + s * a_row);
    std::copy_n(y.data() + s * (a_row + b_row) + a_row, b_row, b.data() + s * b_row);
  }
  return {std::move(a), std::move(b)};
}

// -------------------------------------------------------------- softmax

/// Row-wise softmax over [N,K].
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t s = 0; s < n; ++s) {
    const T* z = logits.data() + s * k;
    T* ps = p.data() + s * k;
    const T zmax = *std::max_element(z, z + k);
    T total = T{0};
    for (std::size_t j = 0; j < k; ++j) {
      ps[j] = std::exp(z[j] - zmax);
      total += ps[j];
    }
    for (std::size_t j = 0; j < k; ++j) ps[j] /= total;
  }
  return p;
}

template <typename T>
void softmax_rows_backward(const Tensor<T>& dy, const Tensor<T>& p, Tensor<T>& dx) {
  const std::size_t n = p.dim(0), k = p.dim(1);
  for (std::size_t s = 0; s < n; ++s) {
    const T* ps = p.data() + s * k;
    const T* g = dy.data() + s * k;
    T dot = T{0};
    for (std::size_t j = 0; j < k; ++j) dot += g[j] * ps[j];
    for (std::size_t j = 0; j < k; ++j) dx[s * k + j] += ps[j] * (g[j] - dot);
  }
}

/// Mean over the batch of -log softmax(logits)[target].
template <typename T>
T softmax_cross_entropy_rows(const Tensor<T>& logits, std::span<const std::size_t> targets) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  T total = T{0};
  for (std::size_t s = 0; s < n; ++s) {
    const T* z = logits.data() + s * k;
    const T zmax = *std::max_element(z, z + k);
    T sum = T{0};
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    total += std::log(sum) + zmax - z[targets[s]];
  }
  return total / static_cast<T>(n);
}

/// d(loss)/d(logits) = (softmax - onehot) / N, scaled by the upstream seed.
template <typename T>
void softmax_cross_entropy_rows_backward(T seed, const Tensor<T>& logits,
                                         std::span<const std::size_t> targets, Tensor<T>& dx) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const Tensor<T> p = softmax_rows(logits);
  const T scale = seed / static_cast<T>(n);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < k; ++j) {
      const T onehot = j == targets[s] ? T{1} : T{0};
      dx[s * k + j] += scale * (p[s * k + j] - onehot);
    }
  }
}

}  // namespace salted::kernels
