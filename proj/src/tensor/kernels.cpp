#include "cotmisr/kernels.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace cotmisr::kernels {

namespace {

using index_t = std::int64_t;

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

// c += a * b with a: m x k, b: k x n. Rows of c are split across threads and
// each element sums over k in ascending order.
template <typename T>
void gemm_nn_acc(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  constexpr std::size_t kBlockN = 512;
  constexpr index_t kRows = 4;
  const index_t row_groups = static_cast<index_t>((m + kRows - 1) / kRows);
  const bool parallel = m * n * k >= kParallelWork;

#pragma omp parallel for schedule(static) if (parallel)
  for (index_t g = 0; g < row_groups; ++g) {
    const std::size_t i0 = static_cast<std::size_t>(g * kRows);
    const std::size_t rows = std::min<std::size_t>(kRows, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
      const std::size_t j1 = std::min(n, j0 + kBlockN);
      if (rows == 4) {
        T* c0 = c + (i0 + 0) * n;
        T* c1 = c + (i0 + 1) * n;
        T* c2 = c + (i0 + 2) * n;
        T* c3 = c + (i0 + 3) * n;
        const T* a0 = a + (i0 + 0) * k;
        const T* a1 = a + (i0 + 1) * k;
        const T* a2 = a + (i0 + 2) * k;
        const T* a3 = a + (i0 + 3) * k;
        for (std::size_t p = 0; p < k; ++p) {
          const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
          const T* brow = b + p * n;
#pragma omp simd
          for (std::size_t j = j0; j < j1; ++j) {
            const T bv = brow[j];
            c0[j] += v0 * bv;
            c1[j] += v1 * bv;
            c2[j] += v2 * bv;
            c3[j] += v3 * bv;
          }
        }
      } else {
        for (std::size_t r = 0; r < rows; ++r) {
          T* crow = c + (i0 + r) * n;
          const T* arow = a + (i0 + r) * k;
          for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
#pragma omp simd
            for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
          }
        }
      }
    }
  }
}

// exp(x) for x <= 0 over a row, as used by softmax. The float version is a
// branch-free range reduction plus a degree-6 polynomial (about 1 ulp) that
// the compiler can vectorize; the double version keeps std::exp so gradient
// checks see the exact function.
void exp_row(double* x, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) x[j] = std::exp(x[j]);
}

void exp_row(float* x, std::size_t n) {
  constexpr float log2e = 1.44269504088896341f;
  constexpr float ln2_hi = 0.693359375f, ln2_lo = -2.12194440e-4f;
#pragma omp simd
  for (std::size_t j = 0; j < n; ++j) {
    const float v = std::max(x[j], -87.0f);
    const float t = v * log2e;
    const auto ki = static_cast<std::int32_t>(t + (t < 0.0f ? -0.5f : 0.5f));
    const float k = static_cast<float>(ki);
    const float r = (v - k * ln2_hi) - k * ln2_lo;
    float p = 1.0f / 720.0f;
    p = p * r + 1.0f / 120.0f;
    p = p * r + 1.0f / 24.0f;
    p = p * r + 1.0f / 6.0f;
    p = p * r + 0.5f;
    p = p * r + 1.0f;
    p = p * r + 1.0f;
    const auto bits = static_cast<std::uint32_t>(ki + 127) << 23;
    x[j] = p * std::bit_cast<float>(bits);
  }
}

template <typename T>
T row_max(const T* x, std::size_t n) {
  T mx = -std::numeric_limits<T>::infinity();
#pragma omp simd reduction(max : mx)
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[j]);
  return mx;
}

template <typename T>
T row_sum(const T* x, std::size_t n) {
  T total = T(0);
#pragma omp simd reduction(+ : total)
  for (std::size_t j = 0; j < n; ++j) total += x[j];
  return total;
}

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  const bool parallel = rows * cols >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (index_t r = 0; r < static_cast<index_t>(rows); ++r) {
    for (std::size_t q = 0; q < cols; ++q) out[q * rows + static_cast<std::size_t>(r)] = src[static_cast<std::size_t>(r) * cols + q];
  }
  return out;
}

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const index_t rows = static_cast<index_t>(g.in_channels * g.kernel_h * g.kernel_w);
  const bool parallel = static_cast<std::size_t>(rows) * oh * ow >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (index_t row = 0; row < rows; ++row) {
    const std::size_t r = static_cast<std::size_t>(row);
    const std::size_t kj = r % g.kernel_w;
    const std::size_t ki = (r / g.kernel_w) % g.kernel_h;
    const std::size_t ci = r / (g.kernel_w * g.kernel_h);
    const T* plane = x + ci * g.height * g.width;
    T* dst = col + r * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const index_t iy = static_cast<index_t>(y * g.stride + ki) - static_cast<index_t>(g.padding);
      T* out = dst + y * ow;
      if (iy < 0 || iy >= static_cast<index_t>(g.height)) {
        std::fill(out, out + ow, T(0));
        continue;
      }
      const T* src = plane + static_cast<std::size_t>(iy) * g.width;
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const index_t ix = static_cast<index_t>(xx * g.stride + kj) - static_cast<index_t>(g.padding);
        out[xx] = (ix < 0 || ix >= static_cast<index_t>(g.width)) ? T(0) : src[ix];
      }
    }
  }
}

// Adds col back into the image; parallel over input channels so each image
// element is written by one thread in a fixed tap order.
template <typename T>
void col2im_acc(const ConvGeometry& g, const T* col, T* x) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t taps = g.kernel_h * g.kernel_w;
  const bool parallel = g.in_channels * taps * oh * ow >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (index_t c = 0; c < static_cast<index_t>(g.in_channels); ++c) {
    T* plane = x + static_cast<std::size_t>(c) * g.height * g.width;
    for (std::size_t t = 0; t < taps; ++t) {
      const std::size_t ki = t / g.kernel_w, kj = t % g.kernel_w;
      const T* src = col + (static_cast<std::size_t>(c) * taps + t) * oh * ow;
      for (std::size_t y = 0; y < oh; ++y) {
        const index_t iy = static_cast<index_t>(y * g.stride + ki) - static_cast<index_t>(g.padding);
        if (iy < 0 || iy >= static_cast<index_t>(g.height)) continue;
        T* dst = plane + static_cast<std::size_t>(iy) * g.width;
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const index_t ix = static_cast<index_t>(xx * g.stride + kj) - static_cast<index_t>(g.padding);
          if (ix >= 0 && ix < static_cast<index_t>(g.width)) dst[ix] += src[y * ow + xx];
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
}

}  // namespace

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<T> a_buf, b_buf;
  if (trans_a == Trans::yes) {
    a_buf = transposed(a, k, m);
    a = a_buf.data();
  }
  if (trans_b == Trans::yes) {
    b_buf = transposed(b, n, k);
    b = b_buf.data();
  }
  gemm_nn_acc(m, n, k, a, b, c);
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const std::size_t plane = g.out_height() * g.out_width();
  const std::size_t col_rows = g.in_channels * g.kernel_h * g.kernel_w;
  const bool pointwise = is_pointwise(g);
  std::vector<T> col(pointwise ? 0 : col_rows * plane);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* xb = x + b * g.in_channels * g.height * g.width;
    T* yb = y + b * g.out_channels * plane;
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      std::fill(yb + o * plane, yb + (o + 1) * plane, bias ? bias[o] : T(0));
    }
    const T* src = xb;
    if (!pointwise) {
      im2col(g, xb, col.data());
      src = col.data();
    }
    gemm_nn_acc(g.out_channels, plane, col_rows, w, src, yb);
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* dbias) {
  const std::size_t plane = g.out_height() * g.out_width();
  const std::size_t col_rows = g.in_channels * g.kernel_h * g.kernel_w;
  const bool pointwise = is_pointwise(g);
  std::vector<T> col(pointwise ? 0 : col_rows * plane);
  std::vector<T> dcol(dx ? col_rows * plane : 0);
  std::vector<T> w_t;
  if (dx) w_t = transposed(w, g.out_channels, col_rows);

  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* dyb = dy + b * g.out_channels * plane;
    if (dbias) {
      for (std::size_t o = 0; o < g.out_channels; ++o) {
        T s = T(0);
        for (std::size_t i = 0; i < plane; ++i) s += dyb[o * plane + i];
        dbias[o] += s;
      }
    }
    if (dw) {
      const T* xb = x + b * g.in_channels * g.height * g.width;
      const T* src = xb;
      if (!pointwise) {
        im2col(g, xb, col.data());
        src = col.data();
      }
      std::vector<T> src_t = transposed(src, col_rows, plane);
      gemm_nn_acc(g.out_channels, col_rows, plane, dyb, src_t.data(), dw);
    }
    if (dx) {
      T* dxb = dx + b * g.in_channels * g.height * g.width;
      if (pointwise) {
        gemm_nn_acc(col_rows, plane, g.out_channels, w_t.data(), dyb, dxb);
      } else {
        std::fill(dcol.begin(), dcol.end(), T(0));
        gemm_nn_acc(col_rows, plane, g.out_channels, w_t.data(), dyb, dcol.data());
        col2im_acc(g, dcol.data(), dxb);
      }
    }
  }
}

template <typename T>
void depthwise_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t channels = g.in_channels;
  const index_t jobs = static_cast<index_t>(g.batch * channels);
  const bool parallel = g.batch * channels * oh * ow * g.kernel_h * g.kernel_w >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (index_t job = 0; job < jobs; ++job) {
    const std::size_t c = static_cast<std::size_t>(job) % channels;
    const T* plane = x + static_cast<std::size_t>(job) * g.height * g.width;
    T* out = y + static_cast<std::size_t>(job) * oh * ow;
    const T* kernel = w + c * g.kernel_h * g.kernel_w;
    std::fill(out, out + oh * ow, bias ? bias[c] : T(0));
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
        const index_t iy = static_cast<index_t>(oy * g.stride + ki) - static_cast<index_t>(g.padding);
        if (iy < 0 || iy >= static_cast<index_t>(g.height)) continue;
        const T* src = plane + static_cast<std::size_t>(iy) * g.width;
        for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
          const T wv = kernel[ki * g.kernel_w + kj];
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const index_t ix = static_cast<index_t>(ox * g.stride + kj) - static_cast<index_t>(g.padding);
            if (ix >= 0 && ix < static_cast<index_t>(g.width)) out[oy * ow + ox] += wv * src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                        T* dbias) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t channels = g.in_channels;
  const std::size_t hw = g.height * g.width;
  const bool parallel = g.batch * channels * oh * ow * g.kernel_h * g.kernel_w >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (index_t ci = 0; ci < static_cast<index_t>(channels); ++ci) {
    const std::size_t c = static_cast<std::size_t>(ci);
    const T* kernel = w + c * g.kernel_h * g.kernel_w;
    for (std::size_t b = 0; b < g.batch; ++b) {
      const std::size_t job = b * channels + c;
      const T* grad = dy + job * oh * ow;
      const T* plane = x + job * hw;
      if (dbias) {
        T s = T(0);
        for (std::size_t i = 0; i < oh * ow; ++i) s += grad[i];
        dbias[c] += s;
      }
      for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
        for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
          T wsum = T(0);
          const T wv = kernel[ki * g.kernel_w + kj];
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const index_t iy = static_cast<index_t>(oy * g.stride + ki) - static_cast<index_t>(g.padding);
            if (iy < 0 || iy >= static_cast<index_t>(g.height)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const index_t ix = static_cast<index_t>(ox * g.stride + kj) - static_cast<index_t>(g.padding);
              if (ix < 0 || ix >= static_cast<index_t>(g.width)) continue;
              const std::size_t src = static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix);
              const T gv = grad[oy * ow + ox];
              wsum += gv * plane[src];
              if (dx) dx[job * hw + src] += wv * gv;
            }
          }
          if (dw) dw[c * g.kernel_h * g.kernel_w + ki * g.kernel_w + kj] += wsum;
        }
      }
    }
  }
}

template <typename T>
void attention_forward(std::size_t n, std::size_t len, std::size_t dim, const T* q, const T* k,
                       const T* v, T scale, T* out, T* probs) {
  const bool parallel = n * len * len * dim >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (index_t bi = 0; bi < static_cast<index_t>(n); ++bi) {
    const std::size_t base = static_cast<std::size_t>(bi) * len * dim;
    const std::vector<T> kt = transposed(k + base, len, dim);
    const std::vector<T> vt = transposed(v + base, len, dim);
    std::vector<T> row(len);
    for (std::size_t i = 0; i < len; ++i) {
      const T* qi = q + base + i * dim;
      std::fill(row.begin(), row.end(), T(0));
      for (std::size_t d = 0; d < dim; ++d) {
        const T qv = qi[d] * scale;
        const T* ktd = kt.data() + d * len;
#pragma omp simd
        for (std::size_t j = 0; j < len; ++j) row[j] += qv * ktd[j];
      }
      const T mx = row_max(row.data(), len);
#pragma omp simd
      for (std::size_t j = 0; j < len; ++j) row[j] -= mx;
      exp_row(row.data(), len);
      const T inv = T(1) / row_sum(row.data(), len);
#pragma omp simd
      for (std::size_t j = 0; j < len; ++j) row[j] *= inv;
      if (probs) std::copy(row.begin(), row.end(), probs + (static_cast<std::size_t>(bi) * len + i) * len);
      T* oi = out + base + i * dim;
      for (std::size_t d = 0; d < dim; ++d) {
        const T* vtd = vt.data() + d * len;
        T acc = T(0);
#pragma omp simd reduction(+ : acc)
        for (std::size_t j = 0; j < len; ++j) acc += row[j] * vtd[j];
        oi[d] = acc;
      }
    }
  }
}

template <typename T>
void attention_backward(std::size_t n, std::size_t len, std::size_t dim, const T* q, const T* k,
                        const T* v, const T* probs, const T* dout, T scale, T* dq, T* dk, T* dv) {
  const bool parallel = n * len * len * dim >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (index_t bi = 0; bi < static_cast<index_t>(n); ++bi) {
    const std::size_t base = static_cast<std::size_t>(bi) * len * dim;
    const T* p = probs + static_cast<std::size_t>(bi) * len * len;
    const std::vector<T> kt = transposed(k + base, len, dim);
    const std::vector<T> vt = transposed(v + base, len, dim);
    std::vector<T> dkt(len * dim, T(0)), dvt(len * dim, T(0));
    std::vector<T> ds(len);
    for (std::size_t i = 0; i < len; ++i) {
      const T* pi = p + i * len;
      const T* doi = dout + base + i * dim;
      std::fill(ds.begin(), ds.end(), T(0));
      for (std::size_t d = 0; d < dim; ++d) {
        const T g = doi[d];
        T* dvtd = dvt.data() + d * len;
        const T* vtd = vt.data() + d * len;
#pragma omp simd
        for (std::size_t j = 0; j < len; ++j) {
          dvtd[j] += g * pi[j];
          ds[j] += g * vtd[j];
        }
      }
      T dot = T(0);
#pragma omp simd reduction(+ : dot)
      for (std::size_t j = 0; j < len; ++j) dot += pi[j] * ds[j];
#pragma omp simd
      for (std::size_t j = 0; j < len; ++j) ds[j] = pi[j] * (ds[j] - dot) * scale;
      const T* qi = q + base + i * dim;
      if (dq) {
        for (std::size_t d = 0; d < dim; ++d) {
          const T* ktd = kt.data() + d * len;
          T acc = T(0);
#pragma omp simd reduction(+ : acc)
          for (std::size_t j = 0; j < len; ++j) acc += ds[j] * ktd[j];
          dq[base + i * dim + d] += acc;
        }
      }
      for (std::size_t d = 0; d < dim; ++d) {
        const T qv = qi[d];
        T* dktd = dkt.data() + d * len;
#pragma omp simd
        for (std::size_t j = 0; j < len; ++j) dktd[j] += qv * ds[j];
      }
    }
    for (std::size_t j = 0; j < len; ++j) {
      for (std::size_t d = 0; d < dim; ++d) {
        if (dk) dk[base + j * dim + d] += dkt[d * len + j];
        if (dv) dv[base + j * dim + d] += dvt[d * len + j];
      }
    }
  }
}

#define COTMISR_INSTANTIATE_KERNELS(T)                                                          \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*,         \
                        const T*, T*, bool);                                                    \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);       \
  template void conv2d_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*, T*,   \
                                   T*);                                                         \
  template void depthwise_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);    \
  template void depthwise_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*,    \
                                      T*, T*);                                                  \
  template void attention_forward<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, \
                                     const T*, T, T*, T*);                                      \
  template void attention_backward<T>(std::size_t, std::size_t, std::size_t, const T*,          \
                                      const T*, const T*, const T*, const T*, T, T*, T*, T*);

COTMISR_INSTANTIATE_KERNELS(float)
COTMISR_INSTANTIATE_KERNELS(double)

}  // namespace cotmisr::kernels
