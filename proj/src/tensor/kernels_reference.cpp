// Serial loop-nest versions of the kernels. Straight from the definitions,
// no blocking, no buffers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cotmisr/kernels.hpp"

namespace cotmisr::kernels::reference {

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a == Trans::yes ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b == Trans::yes ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = bias ? bias[o] : T(0);
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
              for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const auto iy = static_cast<std::int64_t>(oy * g.stride + ki) - static_cast<std::int64_t>(g.padding);
                const auto ix = static_cast<std::int64_t>(ox * g.stride + kj) - static_cast<std::int64_t>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::int64_t>(g.height) ||
                    ix >= static_cast<std::int64_t>(g.width))
                  continue;
                acc += w[((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj] *
                       x[((b * g.in_channels + c) * g.height + static_cast<std::size_t>(iy)) * g.width +
                         static_cast<std::size_t>(ix)];
              }
          y[((b * g.out_channels + o) * oh + oy) * ow + ox] = acc;
        }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* dbias) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T gv = dy[((b * g.out_channels + o) * oh + oy) * ow + ox];
          if (dbias) dbias[o] += gv;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
              for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const auto iy = static_cast<std::int64_t>(oy * g.stride + ki) - static_cast<std::int64_t>(g.padding);
                const auto ix = static_cast<std::int64_t>(ox * g.stride + kj) - static_cast<std::int64_t>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::int64_t>(g.height) ||
                    ix >= static_cast<std::int64_t>(g.width))
                  continue;
                const std::size_t xi = ((b * g.in_channels + c) * g.height + static_cast<std::size_t>(iy)) * g.width +
                                       static_cast<std::size_t>(ix);
                const std::size_t wi = ((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj;
                if (dw) dw[wi] += gv * x[xi];
                if (dx) dx[xi] += gv * w[wi];
              }
        }
}

template <typename T>
void depthwise_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t c = 0; c < g.in_channels; ++c)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = bias ? bias[c] : T(0);
          for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
              const auto iy = static_cast<std::int64_t>(oy * g.stride + ki) - static_cast<std::int64_t>(g.padding);
              const auto ix = static_cast<std::int64_t>(ox * g.stride + kj) - static_cast<std::int64_t>(g.padding);
              if (iy < 0 || ix < 0 || iy >= static_cast<std::int64_t>(g.height) ||
                  ix >= static_cast<std::int64_t>(g.width))
                continue;
              acc += w[(c * g.kernel_h + ki) * g.kernel_w + kj] *
                     x[((b * g.in_channels + c) * g.height + static_cast<std::size_t>(iy)) * g.width +
                       static_cast<std::size_t>(ix)];
            }
          y[((b * g.in_channels + c) * oh + oy) * ow + ox] = acc;
        }
}

template <typename T>
void attention_forward(std::size_t n, std::size_t len, std::size_t dim, const T* q, const T* k,
                       const T* v, T scale, T* out, T* probs) {
  std::vector<T> row(len);
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t base = b * len * dim;
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = 0; j < len; ++j) {
        T s = T(0);
        for (std::size_t d = 0; d < dim; ++d) s += q[base + i * dim + d] * k[base + j * dim + d];
        row[j] = s * scale;
      }
      const T mx = *std::max_element(row.begin(), row.end());
      T total = T(0);
      for (auto& r : row) {
        r = std::exp(r - mx);
        total += r;
      }
      for (auto& r : row) r /= total;
      if (probs) std::copy(row.begin(), row.end(), probs + (b * len + i) * len);
      for (std::size_t d = 0; d < dim; ++d) {
        T acc = T(0);
        for (std::size_t j = 0; j < len; ++j) acc += row[j] * v[base + j * dim + d];
        out[base + i * dim + d] = acc;
      }
    }
  }
}

#define COTMISR_INSTANTIATE_REFERENCE(T)                                                       \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*,        \
                        const T*, T*, bool);                                                   \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);      \
  template void conv2d_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*, T*,  \
                                   T*);                                                        \
  template void depthwise_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);   \
  template void attention_forward<T>(std::size_t, std::size_t, std::size_t, const T*,          \
                                     const T*, const T*, T, T*, T*);

COTMISR_INSTANTIATE_REFERENCE(float)
COTMISR_INSTANTIATE_REFERENCE(double)

}  // namespace cotmisr::kernels::reference
