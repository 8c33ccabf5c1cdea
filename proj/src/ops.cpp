// SPDX-License-Identifier: Apache-2.0
#include "dance/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dance/error.hpp"
#include "dance/kernels.hpp"

namespace dance {
namespace {

void require(bool ok, std::string_view op, const std::string& msg) {
  if (!ok) throw ShapeError(std::string(op) + ": " + msg);
}

template <class T>
void require_rank(const Tensor<T>& t, std::size_t rank, std::string_view op, std::string_view arg) {
  require(t.rank() == rank, op,
          std::string(arg) + " must have rank " + std::to_string(rank) + ", got " +
              shape_str(t.shape()));
}

template <class T>
void require_same_tape(std::string_view op, std::initializer_list<const Var<T>*> vars) {
  const Tape<T>* tape = nullptr;
  for (const Var<T>* v : vars) {
    if (!v->valid()) throw TapeError(std::string(op) + ": invalid variable");
    if (tape && &v->tape() != tape) throw TapeError(std::string(op) + ": variables on different tapes");
    tape = &v->tape();
  }
}

template <class T>
void add_into(Tensor<T>* dst, const Tensor<T>& src) {
  if (!dst) return;
  T* d = dst->data();
  const T* s = src.data();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += s[i];
}

void relu_values(const float* x, float* y, std::size_t n) { kernels::active().relu(x, y, n); }
void relu_values(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

// Per-plane instance-norm loops; float goes through the kernel table.
struct NormLoops {
  static float sum(const float* x, std::size_t n) { return kernels::active().sum(x, n); }
  static float sq_dev(const float* x, std::size_t n, float mean) {
    return kernels::active().sq_dev(x, n, mean);
  }
  static float dot(const float* x, const float* y, std::size_t n) {
    return kernels::active().dot(x, y, n);
  }
  static void normalize(const float* x, float* xh, float* y, std::size_t n, float mean, float inv,
                        float g, float s) {
    kernels::active().normalize(x, xh, y, n, mean, inv, g, s);
  }
  static void backward(const float* dy, const float* xh, float* y, std::size_t n, float a,
                       float b, float c) {
    kernels::active().norm_backward(dy, xh, y, n, a, b, c);
  }

  static double sum(const double* x, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  static double sq_dev(const double* x, std::size_t n, double mean) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (x[i] - mean) * (x[i] - mean);
    return s;
  }
  static double dot(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
  }
  static void normalize(const double* x, double* xh, double* y, std::size_t n, double mean,
                        double inv, double g, double s) {
    for (std::size_t i = 0; i < n; ++i) {
      xh[i] = (x[i] - mean) * inv;
      y[i] = g * xh[i] + s;
    }
  }
  static void backward(const double* dy, const double* xh, double* y, std::size_t n, double a,
                       double b, double c) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * dy[i] + b * xh[i] + c;
  }
};

// ---------------------------------------------------------------------------
// conv2d via im2col + GEMM, processed in chunks of whole images. Columns are
// stored transposed, [C*k*k, chunk*pixels], so each column row is a run of
// shifted input rows and the GEMM output lands channel-major.

struct ConvGeom {
  std::size_t n, c, h, w;
  std::size_t co, k, stride, pad;
  std::size_t ho, wo;
  std::size_t patch() const { return c * k * k; }
  std::size_t pixels() const { return ho * wo; }
};

// Valid output range [lo, hi) along one axis for kernel offset `off`, i.e.
// outputs whose input coordinate o*stride - pad + off lies inside [0, extent).
inline std::pair<std::size_t, std::size_t> valid_outputs(std::size_t off, std::size_t extent,
                                                         std::size_t out, const ConvGeom& g) {
  std::size_t lo = 0;
  while (lo < out && lo * g.stride + off < g.pad) ++lo;
  std::size_t hi = lo;
  while (hi < out && hi * g.stride + off < g.pad + extent) ++hi;
  return {lo, hi};
}

template <class T>
void im2col(const T* x, const ConvGeom& g, std::size_t n0, std::size_t n1, T* col) {
  const std::size_t ld = (n1 - n0) * g.pixels();
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      const auto [oy0, oy1] = valid_outputs(ky, g.h, g.ho, g);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const auto [ox0, ox1] = valid_outputs(kx, g.w, g.wo, g);
        T* row = col + ((c * g.k + ky) * g.k + kx) * ld;
        for (std::size_t n = n0; n < n1; ++n) {
          const T* plane = x + (n * g.c + c) * g.h * g.w;
          T* dst = row + (n - n0) * g.pixels();
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            T* d = dst + oy * g.wo;
            if (oy < oy0 || oy >= oy1) {
              std::fill(d, d + g.wo, T{0});
              continue;
            }
            const T* src = plane + (oy * g.stride + ky - g.pad) * g.w;
            for (std::size_t ox = 0; ox < ox0; ++ox) d[ox] = T{0};
            if (g.stride == 1) {
              std::copy(src + ox0 + kx - g.pad, src + ox1 + kx - g.pad, d + ox0);
            } else {
              for (std::size_t ox = ox0; ox < ox1; ++ox) d[ox] = src[ox * g.stride + kx - g.pad];
            }
            for (std::size_t ox = ox1; ox < g.wo; ++ox) d[ox] = T{0};
          }
        }
      }
    }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, std::size_t n0, std::size_t n1, T* gx) {
  const std::size_t ld = (n1 - n0) * g.pixels();
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      const auto [oy0, oy1] = valid_outputs(ky, g.h, g.ho, g);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const auto [ox0, ox1] = valid_outputs(kx, g.w, g.wo, g);
        const T* row = col + ((c * g.k + ky) * g.k + kx) * ld;
        for (std::size_t n = n0; n < n1; ++n) {
          T* plane = gx + (n * g.c + c) * g.h * g.w;
          const T* src = row + (n - n0) * g.pixels();
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            T* d = plane + (oy * g.stride + ky - g.pad) * g.w;
            const T* s = src + oy * g.wo;
            if (g.stride == 1) {
              T* dd = d + kx - g.pad;
              for (std::size_t ox = ox0; ox < ox1; ++ox) dd[ox] += s[ox];
            } else {
              for (std::size_t ox = ox0; ox < ox1; ++ox) d[ox * g.stride + kx - g.pad] += s[ox];
            }
          }
        }
      }
    }
}

// Scratch storage without zero-fill; callers overwrite every element.
template <class T>
std::unique_ptr<T[]> scratch(std::size_t n) {
  return std::unique_ptr<T[]>(new T[n]);
}

std::size_t conv_chunk(const ConvGeom& g) {
  constexpr std::size_t kTargetRows = 4096;
  return std::max<std::size_t>(1, kTargetRows / std::max<std::size_t>(1, g.pixels()));
}

// ---------------------------------------------------------------------------
// Bilinear sampling table for one axis.

struct AxisTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

AxisTaps half_pixel_taps(std::size_t in, std::size_t out) {
  AxisTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    t.lo[o] = lo;
    t.hi[o] = std::min(lo + 1, in - 1);
    t.frac[o] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------

template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t padding) {
  constexpr std::string_view op = "conv2d";
  require_same_tape<T>(op, {&input, &weight, &bias});
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  const Tensor<T>& b = bias.value();
  require_rank(x, 4, op, "input");
  require_rank(w, 4, op, "weight");
  require_rank(b, 1, op, "bias");
  require(stride >= 1, op, "stride must be >= 1");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, padding, 0, 0};
  require(w.dim(1) == g.c, op,
          "weight expects " + std::to_string(w.dim(1)) + " input channels, input has " +
              std::to_string(g.c));
  require(w.dim(2) == w.dim(3) && g.k % 2 == 1, op,
          "kernel must be square with odd extent, got " + shape_str(w.shape()));
  require(b.dim(0) == g.co, op, "bias extent " + std::to_string(b.dim(0)) + " != out channels " +
                                    std::to_string(g.co));
  require(g.h >= 1 && g.w >= 1, op, "empty spatial extent " + shape_str(x.shape()));
  require(g.h + 2 * padding >= g.k && g.w + 2 * padding >= g.k, op,
          "kernel larger than padded input " + shape_str(x.shape()));
  g.ho = (g.h + 2 * padding - g.k) / stride + 1;
  g.wo = (g.w + 2 * padding - g.k) / stride + 1;

  Tensor<T> out({g.n, g.co, g.ho, g.wo});
  const std::size_t kk = g.patch();
  const std::size_t np = g.pixels();
  const std::size_t chunk = conv_chunk(g);
  const std::size_t cap = std::min(chunk, std::max<std::size_t>(g.n, 1));
  auto col = scratch<T>(kk * cap * np);
  auto tmp = scratch<T>(g.co * cap * np);
  for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::size_t n1 = std::min(g.n, n0 + chunk);
    const std::size_t cols = (n1 - n0) * np;
    im2col(x.data(), g, n0, n1, col.get());
    // tmp[co, n*p] = W[co, kk] * col[kk, n*p]
    kernels::gemm(false, false, g.co, cols, kk, T{1}, w.data(), kk, col.get(), cols, T{0},
                  tmp.get(), cols);
    for (std::size_t n = n0; n < n1; ++n)
      for (std::size_t co = 0; co < g.co; ++co) {
        T* dst = out.data() + (n * g.co + co) * np;
        const T* src = tmp.get() + co * cols + (n - n0) * np;
        const T bc = b[co];
        for (std::size_t p = 0; p < np; ++p) dst[p] = src[p] + bc;
      }
  }

  const std::size_t xi = input.id(), wi = weight.id(), bi = bias.id();
  return input.tape().record(op, std::move(out), {input, weight, bias},
                             [g, xi, wi, bi](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* gx = tape.grad_slot(xi);
    Tensor<T>* gw = tape.grad_slot(wi);
    Tensor<T>* gb = tape.grad_slot(bi);
    const Tensor<T>& x = tape.value(xi);
    const Tensor<T>& w = tape.value(wi);
    const std::size_t kk = g.patch();
    const std::size_t np = g.pixels();
    const std::size_t chunk = conv_chunk(g);
    const std::size_t cap = std::min(chunk, g.n);
    auto dyt = scratch<T>(g.co * cap * np);
    auto col = scratch<T>(gw ? kk * cap * np : 0);
    auto dcol = scratch<T>(gx ? kk * cap * np : 0);
    for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
      const std::size_t n1 = std::min(g.n, n0 + chunk);
      const std::size_t cols = (n1 - n0) * np;
      for (std::size_t n = n0; n < n1; ++n)
        for (std::size_t co = 0; co < g.co; ++co)
          std::copy_n(gy.data() + (n * g.co + co) * np, np,
                      dyt.get() + co * cols + (n - n0) * np);
      if (gb) {
        for (std::size_t co = 0; co < g.co; ++co) {
          T s{0};
          const T* r = dyt.get() + co * cols;
          for (std::size_t i = 0; i < cols; ++i) s += r[i];
          (*gb)[co] += s;
        }
      }
      if (gw) {
        im2col(x.data(), g, n0, n1, col.get());
        // gW[co, kk] += dy[co, n*p] * col[kk, n*p]^T
        kernels::gemm(false, true, g.co, kk, cols, T{1}, dyt.get(), cols, col.get(), cols, T{1},
                      gw->data(), kk);
      }
      if (gx) {
        // dcol[kk, n*p] = W^T[kk, co] * dy[co, n*p]
        kernels::gemm(true, false, kk, cols, g.co, T{1}, w.data(), kk, dyt.get(), cols, T{0},
                      dcol.get(), cols);
        col2im_add(dcol.get(), g, n0, n1, gx->data());
      }
    }
  });
}

template <class T>
Var<T> avg_pool2d(const Var<T>& input, std::size_t kernel, std::size_t stride,
                  std::size_t padding) {
  constexpr std::string_view op = "avg_pool2d";
  const Tensor<T>& x = input.value();
  require_rank(x, 4, op, "input");
  require(kernel >= 1 && stride >= 1, op, "kernel and stride must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h + 2 * padding >= kernel && w + 2 * padding >= kernel, op,
          "output extent < 1 for input " + shape_str(x.shape()) + " kernel " +
              std::to_string(kernel));
  const std::size_t ho = (h + 2 * padding - kernel) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kernel) / stride + 1;
  const T inv = T{1} / static_cast<T>(kernel * kernel);

  // Window of each output as a [lo, hi) range of valid input rows/cols.
  auto ranges = [=](std::size_t out_n, std::size_t extent) {
    std::vector<std::pair<std::size_t, std::size_t>> r(out_n);
    for (std::size_t o = 0; o < out_n; ++o) {
      const long s = static_cast<long>(o * stride) - static_cast<long>(padding);
      const long e = std::min<long>(s + static_cast<long>(kernel), static_cast<long>(extent));
      r[o] = {static_cast<std::size_t>(std::max<long>(s, 0)), static_cast<std::size_t>(e)};
    }
    return r;
  };
  const auto ry = ranges(ho, h);
  const auto rx = ranges(wo, w);

  // Separable: sum the window's input rows (contiguous), then the columns.
  Tensor<T> out({n, c, ho, wo});
  std::vector<T> vs(w);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = x.data() + plane * h * w;
    T* dst = out.data() + plane * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ix = 0; ix < w; ++ix) vs[ix] = T{0};
      for (std::size_t iy = ry[oy].first; iy < ry[oy].second; ++iy) {
        const T* r = src + iy * w;
        for (std::size_t ix = 0; ix < w; ++ix) vs[ix] += r[ix];
      }
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T s{0};
        for (std::size_t ix = rx[ox].first; ix < rx[ox].second; ++ix) s += vs[ix];
        dst[oy * wo + ox] = s * inv;
      }
    }
  }

  const std::size_t xi = input.id();
  return input.tape().record(op, std::move(out), {input},
                             [=](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* gx = tape.grad_slot(xi);
    std::vector<T> us(w);
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      T* dst = gx->data() + plane * h * w;
      const T* src = gy.data() + plane * ho * wo;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ix = 0; ix < w; ++ix) us[ix] = T{0};
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const T gval = src[oy * wo + ox] * inv;
          for (std::size_t ix = rx[ox].first; ix < rx[ox].second; ++ix) us[ix] += gval;
        }
        for (std::size_t iy = ry[oy].first; iy < ry[oy].second; ++iy) {
          T* r = dst + iy * w;
          for (std::size_t ix = 0; ix < w; ++ix) r[ix] += us[ix];
        }
      }
    }
  });
}

template <class T>
Var<T> instance_norm(const Var<T>& input, const Var<T>& gain, const Var<T>& shift, double eps) {
  constexpr std::string_view op = "instance_norm";
  require_same_tape<T>(op, {&input, &gain, &shift});
  const Tensor<T>& x = input.value();
  require_rank(x, 4, op, "input");
  const std::size_t n = x.dim(0), c = x.dim(1), m = x.dim(2) * x.dim(3);
  require(m >= 2, op, "spatial extent H*W must be >= 2, got " + shape_str(x.shape()));
  require(gain.value().shape() == Shape{c} && shift.value().shape() == Shape{c}, op,
          "gain/shift must be [" + std::to_string(c) + "]");
  const Tensor<T>& gv = gain.value();
  const Tensor<T>& bv = shift.value();

  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(n * c);
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* src = x.data() + nc * m;
    const T mean = NormLoops::sum(src, m) / static_cast<T>(m);
    const T var = NormLoops::sq_dev(src, m, mean) / static_cast<T>(m);
    const T inv = T{1} / std::sqrt(var + static_cast<T>(eps));
    (*inv_std)[nc] = inv;
    const std::size_t ch = nc % c;
    NormLoops::normalize(src, xhat->data() + nc * m, out.data() + nc * m, m, mean, inv, gv[ch],
                         bv[ch]);
  }

  const std::size_t xi = input.id(), gi = gain.id(), si = shift.id();
  return input.tape().record(op, std::move(out), {input, gain, shift},
                             [=](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* gx = tape.grad_slot(xi);
    Tensor<T>* gg = tape.grad_slot(gi);
    Tensor<T>* gs = tape.grad_slot(si);
    const Tensor<T>& gvals = tape.value(gi);
    for (std::size_t nc = 0; nc < n * c; ++nc) {
      const std::size_t ch = nc % c;
      const T* dy = gy.data() + nc * m;
      const T* xh = xhat->data() + nc * m;
      const T sum_dy = NormLoops::sum(dy, m);
      const T sum_dy_xh = NormLoops::dot(dy, xh, m);
      if (gg) (*gg)[ch] += sum_dy_xh;
      if (gs) (*gs)[ch] += sum_dy;
      if (gx) {
        // dx = g*inv/M * (M*dy - sum(dy) - xhat*sum(dy*xhat))
        const T k = gvals[ch] * (*inv_std)[nc] / static_cast<T>(m);
        NormLoops::backward(dy, xh, gx->data() + nc * m, m, k * static_cast<T>(m),
                            -k * sum_dy_xh, -k * sum_dy);
      }
    }
  });
}

template <class T>
Var<T> relu(const Var<T>& input) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  relu_values(x.data(), out.data(), x.size());
  const std::size_t xi = input.id();
  return input.tape().record("relu", std::move(out), {input},
                             [xi](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* gx = tape.grad_slot(xi);
    const T* xv = tape.value(xi).data();
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (xv[i] > T{0}) (*gx)[i] += gy[i];
  });
}

template <class T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  constexpr std::string_view op = "linear";
  require_same_tape<T>(op, {&input, &weight, &bias});
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  const Tensor<T>& b = bias.value();
  require_rank(x, 2, op, "input");
  require_rank(w, 2, op, "weight");
  require_rank(b, 1, op, "bias");
  const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(0);
  require(w.dim(1) == d, op,
          "inner dims differ: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  require(b.dim(0) == k, op, "bias extent " + std::to_string(b.dim(0)) + " != " + std::to_string(k));

  Tensor<T> out({n, k});
  for (std::size_t r = 0; r < n; ++r) std::copy(b.data(), b.data() + k, out.data() + r * k);
  kernels::gemm(false, true, n, k, d, T{1}, x.data(), d, w.data(), d, T{1}, out.data(), k);

  const std::size_t xi = input.id(), wi = weight.id(), bi = bias.id();
  return input.tape().record(op, std::move(out), {input, weight, bias},
                             [=](Tape<T>& tape, const Tensor<T>& gy) {
    if (Tensor<T>* gx = tape.grad_slot(xi))
      kernels::gemm(false, false, n, d, k, T{1}, gy.data(), k, tape.value(wi).data(), d, T{1},
                    gx->data(), d);
    if (Tensor<T>* gw = tape.grad_slot(wi))
      kernels::gemm(true, false, k, d, n, T{1}, gy.data(), k, tape.value(xi).data(), d, T{1},
                    gw->data(), d);
    if (Tensor<T>* gb = tape.grad_slot(bi))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < k; ++j) (*gb)[j] += gy[r * k + j];
  });
}

template <class T>
Var<T> bilinear_upsample(const Var<T>& input, std::size_t out_h, std::size_t out_w) {
  constexpr std::string_view op = "bilinear_upsample";
  const Tensor<T>& x = input.value();
  require_rank(x, 4, op, "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h >= 1 && w >= 1 && out_h >= 1 && out_w >= 1, op, "zero extent");
  require(out_h >= h && out_w >= w, op,
          "output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
              " smaller than input " + shape_str(x.shape()));
  auto ty = std::make_shared<AxisTaps>(half_pixel_taps(h, out_h));
  auto tx = std::make_shared<AxisTaps>(half_pixel_taps(w, out_w));

  Tensor<T> out({n, c, out_h, out_w});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = x.data() + plane * h * w;
    T* dst = out.data() + plane * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T fy = static_cast<T>(ty->frac[oy]);
      const T* r0 = src + ty->lo[oy] * w;
      const T* r1 = src + ty->hi[oy] * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T fx = static_cast<T>(tx->frac[ox]);
        const std::size_t x0 = tx->lo[ox], x1 = tx->hi[ox];
        const T top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const T bot = r1[x0] + fx * (r1[x1] - r1[x0]);
        dst[oy * out_w + ox] = top + fy * (bot - top);
      }
    }
  }

  const std::size_t xi = input.id();
  return input.tape().record(op, std::move(out), {input},
                             [=](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* gx = tape.grad_slot(xi);
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      T* dst = gx->data() + plane * h * w;
      const T* src = gy.data() + plane * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const T fy = static_cast<T>(ty->frac[oy]);
        T* r0 = dst + ty->lo[oy] * w;
        T* r1 = dst + ty->hi[oy] * w;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const T fx = static_cast<T>(tx->frac[ox]);
          const std::size_t x0 = tx->lo[ox], x1 = tx->hi[ox];
          const T g = src[oy * out_w + ox];
          r0[x0] += g * (T{1} - fy) * (T{1} - fx);
          r0[x1] += g * (T{1} - fy) * fx;
          r1[x0] += g * fy * (T{1} - fx);
          r1[x1] += g * fy * fx;
        }
      }
    }
  });
}

template <class T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::uint32_t> labels) {
  constexpr std::string_view op = "softmax_cross_entropy";
  const Tensor<T>& z = logits.value();
  require_rank(z, 2, op, "logits");
  const std::size_t n = z.dim(0), k = z.dim(1);
  require(n >= 1, op, "empty batch");
  require(labels.size() == n, op,
          std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  for (std::uint32_t y : labels)
    require(y < k, op, "label " + std::to_string(y) + " out of range for " + std::to_string(k) +
                           " classes");

  auto probs = std::make_shared<std::vector<T>>(n * k);
  T total{0};
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = z.data() + r * k;
    const T mx = *std::max_element(row, row + k);
    T s{0};
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const T lse = mx + std::log(s);
    total += lse - row[labels[r]];
    for (std::size_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(row[j] - lse);
  }
  Tensor<T> out(Shape{}, T{0});
  out[0] = total / static_cast<T>(n);

  const std::size_t zi = logits.id();
  std::vector<std::uint32_t> ys(labels.begin(), labels.end());
  return logits.tape().record(op, std::move(out), {logits},
                              [=, ys = std::move(ys)](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* gz = tape.grad_slot(zi);
    const T s = gy[0] / static_cast<T>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < k; ++j)
        (*gz)[r * k + j] += s * ((*probs)[r * k + j] - (j == ys[r] ? T{1} : T{0}));
  });
}

template <class T>
Var<T> mean_embedding_sq_dist(const Var<T>& a, const Var<T>& b) {
  constexpr std::string_view op = "mean_embedding_sq_dist";
  require_same_tape<T>(op, {&a, &b});
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank(av, 2, op, "a");
  require_rank(bv, 2, op, "b");
  const std::size_t na = av.dim(0), nb = bv.dim(0), d = av.dim(1);
  require(na >= 1 && nb >= 1, op, "empty input");
  require(bv.dim(1) == d, op, "feature dims differ: " + shape_str(av.shape()) + " vs " +
                                  shape_str(bv.shape()));
  auto diff = std::make_shared<std::vector<T>>(d, T{0});
  for (std::size_t r = 0; r < na; ++r)
    for (std::size_t j = 0; j < d; ++j) (*diff)[j] += av[r * d + j];
  for (std::size_t j = 0; j < d; ++j) (*diff)[j] /= static_cast<T>(na);
  std::vector<T> mb(d, T{0});
  for (std::size_t r = 0; r < nb; ++r)
    for (std::size_t j = 0; j < d; ++j) mb[j] += bv[r * d + j];
  T total{0};
  for (std::size_t j = 0; j < d; ++j) {
    (*diff)[j] -= mb[j] / static_cast<T>(nb);
    total += (*diff)[j] * (*diff)[j];
  }
  Tensor<T> out(Shape{}, total);

  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(op, std::move(out), {a, b}, [=](Tape<T>& tape, const Tensor<T>& gy) {
    if (Tensor<T>* ga = tape.grad_slot(ai)) {
      const T s = T{2} * gy[0] / static_cast<T>(na);
      for (std::size_t r = 0; r < na; ++r)
        for (std::size_t j = 0; j < d; ++j) (*ga)[r * d + j] += s * (*diff)[j];
    }
    if (Tensor<T>* gb = tape.grad_slot(bi)) {
      const T s = T{2} * gy[0] / static_cast<T>(nb);
      for (std::size_t r = 0; r < nb; ++r)
        for (std::size_t j = 0; j < d; ++j) (*gb)[r * d + j] -= s * (*diff)[j];
    }
  });
}

// ---------------------------------------------------------------------------

template <class T>
Var<T> reshape(const Var<T>& input, Shape shape) {
  const Shape original = input.shape();
  Tensor<T> out = input.value().reshaped(std::move(shape));
  const std::size_t xi = input.id();
  return input.tape().record("reshape", std::move(out), {input},
                             [xi](Tape<T>& tape, const Tensor<T>& gy) {
    add_into(tape.grad_slot(xi), gy);
  });
}

template <class T>
Var<T> flatten(const Var<T>& input) {
  const Shape& s = input.shape();
  if (s.empty()) throw ShapeError("flatten: rank-0 input");
  const std::size_t rest = shape_numel(Shape(s.begin() + 1, s.end()));
  return reshape(input, Shape{s[0], rest});
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_tape<T>("add", {&a, &b});
  require(a.shape() == b.shape() || (a.value().size() == 1 && b.value().size() == 1), "add",
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record("add", std::move(out), {a, b}, [ai, bi](Tape<T>& tape, const Tensor<T>& gy) {
    add_into(tape.grad_slot(ai), gy);
    add_into(tape.grad_slot(bi), gy);
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_tape<T>("mul", {&a, &b});
  require(a.shape() == b.shape(), "mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record("mul", std::move(out), {a, b}, [ai, bi](Tape<T>& tape, const Tensor<T>& gy) {
    const Tensor<T>& av = tape.value(ai);
    const Tensor<T>& bv = tape.value(bi);
    if (Tensor<T>* ga = tape.grad_slot(ai))
      for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * bv[i];
    if (Tensor<T>* gb = tape.grad_slot(bi))
      for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] += gy[i] * av[i];
  });
}

template <class T>
Var<T> scale(const Var<T>& a, double factor) {
  const T f = static_cast<T>(factor);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= f;
  const std::size_t ai = a.id();
  return a.tape().record("scale", std::move(out), {a}, [ai, f](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* ga = tape.grad_slot(ai);
    for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += f * gy[i];
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T s{0};
  for (T v : a.value().values()) s += v;
  const std::size_t ai = a.id();
  return a.tape().record("sum", Tensor<T>(Shape{}, s), {a}, [ai](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* ga = tape.grad_slot(ai);
    for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += gy[0];
  });
}

template <class T>
Var<T> slice_rows(const Var<T>& input, std::size_t begin, std::size_t end) {
  Tensor<T> out = input.value().slice_rows(begin, end);
  const std::size_t row = input.dim(0) ? input.value().size() / input.dim(0) : 0;
  const std::size_t xi = input.id();
  return input.tape().record("slice_rows", std::move(out), {input},
                             [xi, row, begin](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* gx = tape.grad_slot(xi);
    T* dst = gx->data() + begin * row;
    for (std::size_t i = 0; i < gy.size(); ++i) dst[i] += gy[i];
  });
}

template <class T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  Tensor<T> out = concat_rows<T>(std::span<const Tensor<T>>(values));
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.value().size();
  }
  return parts[0].tape().record("concat_rows", std::move(out), parts,
                                [ids, offsets](Tape<T>& tape, const Tensor<T>& gy) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor<T>* g = tape.grad_slot(ids[k]);
      if (!g) continue;
      const T* src = gy.data() + offsets[k];
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += src[i];
    }
  });
}

template <class T>
Var<T> crop_cells(const Var<T>& input, std::size_t factor) {
  constexpr std::string_view op = "crop_cells";
  const Tensor<T>& x = input.value();
  require_rank(x, 4, op, "input");
  require(factor >= 1, op, "factor must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h % factor == 0 && w % factor == 0, op,
          "extent " + shape_str(x.shape()) + " not divisible by factor " + std::to_string(factor));
  const std::size_t ch = h / factor, cw = w / factor, cells = factor * factor;
  auto index = [=](std::size_t img, std::size_t cell, std::size_t k, std::size_t yy,
                   std::size_t xx) {
    const std::size_t gy = (cell / factor) * ch + yy;
    const std::size_t gx = (cell % factor) * cw + xx;
    return ((img * c + k) * h + gy) * w + gx;
  };
  Tensor<T> out({n * cells, c, ch, cw});
  std::size_t o = 0;
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t cell = 0; cell < cells; ++cell)
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t yy = 0; yy < ch; ++yy)
          for (std::size_t xx = 0; xx < cw; ++xx) out[o++] = x[index(img, cell, k, yy, xx)];

  const std::size_t xi = input.id();
  return input.tape().record(op, std::move(out), {input}, [=](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* gx = tape.grad_slot(xi);
    std::size_t o = 0;
    for (std::size_t img = 0; img < n; ++img)
      for (std::size_t cell = 0; cell < cells; ++cell)
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t yy = 0; yy < ch; ++yy)
            for (std::size_t xx = 0; xx < cw; ++xx) (*gx)[index(img, cell, k, yy, xx)] += gy[o++];
  });
}

template <class T>
Var<T> color_jitter(const Var<T>& input, std::span<const double> brightness,
                    std::span<const double> contrast) {
  constexpr std::string_view op = "color_jitter";
  const Tensor<T>& x = input.value();
  require(x.rank() >= 2, op, "input must be batched");
  const std::size_t n = x.dim(0);
  require(brightness.size() == n && contrast.size() == n, op, "one parameter pair per sample");
  const std::size_t m = n ? x.size() / n : 0;
  std::vector<T> bs(n), cs(n);
  Tensor<T> out(x.shape());
  for (std::size_t s = 0; s < n; ++s) {
    bs[s] = static_cast<T>(brightness[s]);
    cs[s] = static_cast<T>(contrast[s]);
    const T* src = x.data() + s * m;
    T* dst = out.data() + s * m;
    T mean{0};
    for (std::size_t i = 0; i < m; ++i) mean += src[i] * bs[s];
    mean /= static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i) dst[i] = (src[i] * bs[s] - mean) * cs[s] + mean;
  }
  const std::size_t xi = input.id();
  return input.tape().record(op, std::move(out), {input}, [=](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* gx = tape.grad_slot(xi);
    for (std::size_t s = 0; s < n; ++s) {
      const T* dy = gy.data() + s * m;
      T* dst = gx->data() + s * m;
      T total{0};
      for (std::size_t i = 0; i < m; ++i) total += dy[i];
      const T shared = (T{1} - cs[s]) * total / static_cast<T>(m);
      for (std::size_t i = 0; i < m; ++i) dst[i] += bs[s] * (cs[s] * dy[i] + shared);
    }
  });
}

template <class T>
Var<T> shift_crop(const Var<T>& input, std::span<const int> dy, std::span<const int> dx) {
  constexpr std::string_view op = "shift_crop";
  const Tensor<T>& x = input.value();
  require_rank(x, 4, op, "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(dy.size() == n && dx.size() == n, op, "one shift per sample");
  std::vector<int> sy(dy.begin(), dy.end()), sx(dx.begin(), dx.end());
  auto visit = [=](auto&& fn) {
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t yy = 0; yy < h; ++yy) {
          const long iy = static_cast<long>(yy) + sy[s];
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const long ix = static_cast<long>(xx) + sx[s];
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const std::size_t base = (s * c + k) * h;
            fn(((base + static_cast<std::size_t>(iy)) * w) + static_cast<std::size_t>(ix),
               (base + yy) * w + xx);
          }
        }
  };
  Tensor<T> out(x.shape());
  visit([&](std::size_t src, std::size_t dst) { out[dst] = x[src]; });
  const std::size_t xi = input.id();
  return input.tape().record(op, std::move(out), {input}, [=](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* gx = tape.grad_slot(xi);
    visit([&](std::size_t src, std::size_t dst) { (*gx)[src] += gy[dst]; });
  });
}

#define DANCE_INSTANTIATE_OPS(T)                                                                  \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t);  \
  template Var<T> avg_pool2d(const Var<T>&, std::size_t, std::size_t, std::size_t);               \
  template Var<T> instance_norm(const Var<T>&, const Var<T>&, const Var<T>&, double);             \
  template Var<T> relu(const Var<T>&);                                                            \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                            \
  template Var<T> bilinear_upsample(const Var<T>&, std::size_t, std::size_t);                     \
  template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const std::uint32_t>);           \
  template Var<T> mean_embedding_sq_dist(const Var<T>&, const Var<T>&);                           \
  template Var<T> reshape(const Var<T>&, Shape);                                                  \
  template Var<T> flatten(const Var<T>&);                                                         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale(const Var<T>&, double);                                                   \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> slice_rows(const Var<T>&, std::size_t, std::size_t);                            \
  template Var<T> concat_rows(std::span<const Var<T>>);                                           \
  template Var<T> crop_cells(const Var<T>&, std::size_t);                                         \
  template Var<T> color_jitter(const Var<T>&, std::span<const double>, std::span<const double>);  \
  template Var<T> shift_crop(const Var<T>&, std::span<const int>, std::span<const int>);

DANCE_INSTANTIATE_OPS(float)
DANCE_INSTANTIATE_OPS(double)

#undef DANCE_INSTANTIATE_OPS

}  // namespace dance
