#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "cotmisr/errors.hpp"
#include "cotmisr/kernels.hpp"
#include "cotmisr/ops.hpp"

namespace cotmisr {

namespace {

using index_t = std::int64_t;

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

kernels::ConvGeometry conv_geometry(const char* op, const Shape& x, const Shape& w,
                                    std::size_t stride, std::size_t padding) {
  if (x.size() != 4 || w.size() != 4) {
    throw ShapeError(std::string(op) + ": expected [B,C,H,W] input and 4-d weight, got " +
                     shape_string(x) + " and " + shape_string(w));
  }
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
  if (w[2] > x[2] + 2 * padding || w[3] > x[3] + 2 * padding) {
    throw ShapeError(std::string(op) + ": kernel " + shape_string(w) +
                     " larger than padded input " + shape_string(x));
  }
  kernels::ConvGeometry g;
  g.batch = x[0];
  g.in_channels = x[1];
  g.height = x[2];
  g.width = x[3];
  g.out_channels = w[0];
  g.kernel_h = w[2];
  g.kernel_w = w[3];
  g.stride = stride;
  g.padding = padding;
  return g;
}

template <typename T>
void check_bias(const char* op, const Tensor<T>& bias, std::size_t channels) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != channels)) {
    throw ShapeError(std::string(op) + ": bias " + shape_string(bias.shape()) + " does not match " +
                     std::to_string(channels) + " output channels");
  }
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range for " + shape_string(x.shape()));
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
#pragma omp parallel for schedule(static) if (x.numel() >= (1u << 14))
  for (index_t o = 0; o < static_cast<index_t>(s.outer); ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = static_cast<std::size_t>(o) * s.len * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, px[base + l * s.inner]);
      T total = T(0);
      for (std::size_t l = 0; l < s.len; ++l) {
        const T e = std::exp(px[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= total;
    }
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {&x}, [s](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        T dot = T(0);
        for (std::size_t l = 0; l < s.len; ++l)
          dot += self.grad[base + l * s.inner] * self.data[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t at = base + l * s.inner;
          g[at] += self.data[at] * (self.grad[at] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t features = x.dim(x.rank() - 1);
  for (const Tensor<T>* p : {&gamma, &beta}) {
    if (p->defined() && (p->rank() != 1 || p->dim(0) != features)) {
      throw ShapeError("layer_norm: affine parameter " + shape_string(p->shape()) +
                       " does not match " + std::to_string(features) + " features");
    }
  }
  const std::size_t rows = x.numel() / features;
  auto normalized = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  const T* pg = gamma.defined() ? gamma.data().data() : nullptr;
  const T* pb = beta.defined() ? beta.data().data() : nullptr;
#pragma omp parallel for schedule(static) if (x.numel() >= (1u << 14))
  for (index_t ri = 0; ri < static_cast<index_t>(rows); ++ri) {
    const std::size_t r = static_cast<std::size_t>(ri);
    const T* row = px + r * features;
    T mu = T(0);
    for (std::size_t f = 0; f < features; ++f) mu += row[f];
    mu /= static_cast<T>(features);
    T var = T(0);
    for (std::size_t f = 0; f < features; ++f) var += (row[f] - mu) * (row[f] - mu);
    var /= static_cast<T>(features);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t f = 0; f < features; ++f) {
      const T xh = (row[f] - mu) * is;
      (*normalized)[r * features + f] = xh;
      out[r * features + f] = (pg ? pg[f] * xh : xh) + (pb ? pb[f] : T(0));
    }
  }

  std::vector<Tensor<T>> inputs{x};
  const bool has_gamma = gamma.defined(), has_beta = beta.defined();
  if (has_gamma) inputs.push_back(gamma);
  if (has_beta) inputs.push_back(beta);
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), inputs,
      [normalized, inv_std, rows, features, has_gamma, has_beta](detail::Node<T>& self) {
        auto& nx = *self.inputs[0];
        detail::Node<T>* ng = has_gamma ? self.inputs[1].get() : nullptr;
        detail::Node<T>* nb = has_beta ? self.inputs[has_gamma ? 2 : 1].get() : nullptr;
        const T* gy = self.grad.data();
        const T* xh = normalized->data();
        if (ng && ng->requires_grad) {
          auto& gg = ng->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t f = 0; f < features; ++f) gg[f] += gy[r * features + f] * xh[r * features + f];
        }
        if (nb && nb->requires_grad) {
          auto& gb = nb->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t f = 0; f < features; ++f) gb[f] += gy[r * features + f];
        }
        if (!nx.requires_grad) return;
        auto& gx = nx.grad_buffer();
        const T inv_n = T(1) / static_cast<T>(features);
#pragma omp parallel for schedule(static) if (rows * features >= (1u << 14))
        for (index_t ri = 0; ri < static_cast<index_t>(rows); ++ri) {
          const std::size_t r = static_cast<std::size_t>(ri);
          T mean_g = T(0), mean_gx = T(0);
          for (std::size_t f = 0; f < features; ++f) {
            const T dxh = gy[r * features + f] * (ng ? ng->data[f] : T(1));
            mean_g += dxh;
            mean_gx += dxh * xh[r * features + f];
          }
          mean_g *= inv_n;
          mean_gx *= inv_n;
          for (std::size_t f = 0; f < features; ++f) {
            const T dxh = gy[r * features + f] * (ng ? ng->data[f] : T(1));
            gx[r * features + f] += (*inv_std)[r] * (dxh - mean_g - xh[r * features + f] * mean_gx);
          }
        }
      });
}

template <typename T>
Tensor<T> global_avg_pool2d(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool2d: expected [B,C,H,W], got " + shape_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  std::vector<T> out(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    T total = T(0);
    for (std::size_t i = 0; i < area; ++i) total += x.data()[p * area + i];
    out[p] = total / static_cast<T>(area);
  }
  return make_result<T>("global_avg_pool2d", Shape{x.dim(0), x.dim(1), 1, 1}, std::move(out), {&x},
                        [planes, area](detail::Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          const T inv = T(1) / static_cast<T>(area);
                          for (std::size_t p = 0; p < planes; ++p)
                            for (std::size_t i = 0; i < area; ++i) g[p * area + i] += self.grad[p] * inv;
                        });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  const auto g = conv_geometry("conv2d", x.shape(), weight.shape(), stride, padding);
  if (weight.dim(1) != g.in_channels) {
    throw ShapeError("conv2d: weight " + shape_string(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1)) + " input channels, input " +
                     shape_string(x.shape()) + " has " + std::to_string(g.in_channels));
  }
  check_bias("conv2d", bias, g.out_channels);
  std::vector<T> out(g.batch * g.out_channels * g.out_height() * g.out_width());
  kernels::conv2d_forward(g, x.data().data(), weight.data().data(),
                          bias.defined() ? bias.data().data() : nullptr, out.data());
  Shape shape{g.batch, g.out_channels, g.out_height(), g.out_width()};
  const bool has_bias = bias.defined();
  auto backward = [g, has_bias](detail::Node<T>& self) {
    auto& nx = *self.inputs[0];
    auto& nw = *self.inputs[1];
    detail::Node<T>* nb = has_bias ? self.inputs[2].get() : nullptr;
    kernels::conv2d_backward(g, nx.data.data(), nw.data.data(), self.grad.data(),
                             nx.requires_grad ? nx.grad_buffer().data() : nullptr,
                             nw.requires_grad ? nw.grad_buffer().data() : nullptr,
                             nb && nb->requires_grad ? nb->grad_buffer().data() : nullptr);
  };
  if (has_bias) return make_result<T>("conv2d", std::move(shape), std::move(out), {&x, &weight, &bias}, backward);
  return make_result<T>("conv2d", std::move(shape), std::move(out), {&x, &weight}, backward);
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t stride, std::size_t padding) {
  auto g = conv_geometry("depthwise_conv2d", x.shape(), weight.shape(), stride, padding);
  if (weight.dim(0) != g.in_channels || weight.dim(1) != 1) {
    throw ShapeError("depthwise_conv2d: weight " + shape_string(weight.shape()) + " must be [" +
                     std::to_string(g.in_channels) + ",1,kh,kw] for input " +
                     shape_string(x.shape()));
  }
  check_bias("depthwise_conv2d", bias, g.in_channels);
  g.out_channels = g.in_channels;
  std::vector<T> out(g.batch * g.in_channels * g.out_height() * g.out_width());
  kernels::depthwise_forward(g, x.data().data(), weight.data().data(),
                             bias.defined() ? bias.data().data() : nullptr, out.data());
  Shape shape{g.batch, g.in_channels, g.out_height(), g.out_width()};
  const bool has_bias = bias.defined();
  auto backward = [g, has_bias](detail::Node<T>& self) {
    auto& nx = *self.inputs[0];
    auto& nw = *self.inputs[1];
    detail::Node<T>* nb = has_bias ? self.inputs[2].get() : nullptr;
    kernels::depthwise_backward(g, nx.data.data(), nw.data.data(), self.grad.data(),
                                nx.requires_grad ? nx.grad_buffer().data() : nullptr,
                                nw.requires_grad ? nw.grad_buffer().data() : nullptr,
                                nb && nb->requires_grad ? nb->grad_buffer().data() : nullptr);
  };
  if (has_bias) {
    return make_result<T>("depthwise_conv2d", std::move(shape), std::move(out), {&x, &weight, &bias}, backward);
  }
  return make_result<T>("depthwise_conv2d", std::move(shape), std::move(out), {&x, &weight}, backward);
}

namespace {

// Source index in the [B, C*r*r, H, W] tensor for every element of the
// [B, C, r*H, r*W] tensor.
std::vector<std::size_t> shuffle_map(std::size_t batch, std::size_t channels, std::size_t height,
                                     std::size_t width, std::size_t r) {
  std::vector<std::size_t> map(batch * channels * r * r * height * width);
  const std::size_t oh = height * r, ow = width * r;
  std::size_t dst = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const std::size_t h = y / r, i = y % r, w = x / r, j = x % r;
          const std::size_t src_c = c * r * r + i * r + j;
          map[dst++] = ((b * channels * r * r + src_c) * height + h) * width + w;
        }
  return map;
}

}  // namespace

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t factor) {
  if (x.rank() != 4 || factor == 0 || x.dim(1) % (factor * factor) != 0) {
    throw ShapeError("pixel_shuffle: channels of " + shape_string(x.shape()) +
                     " not divisible by factor^2 = " + std::to_string(factor * factor));
  }
  const std::size_t channels = x.dim(1) / (factor * factor);
  auto map = std::make_shared<std::vector<std::size_t>>(
      shuffle_map(x.dim(0), channels, x.dim(2), x.dim(3), factor));
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[(*map)[i]];
  return make_result<T>("pixel_shuffle", Shape{x.dim(0), channels, x.dim(2) * factor, x.dim(3) * factor},
                        std::move(out), {&x}, [map](detail::Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*map)[i]] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t factor) {
  if (x.rank() != 4 || factor == 0 || x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
    throw ShapeError("pixel_unshuffle: spatial extents of " + shape_string(x.shape()) +
                     " not divisible by " + std::to_string(factor));
  }
  const std::size_t h = x.dim(2) / factor, w = x.dim(3) / factor;
  auto map = std::make_shared<std::vector<std::size_t>>(shuffle_map(x.dim(0), x.dim(1), h, w, factor));
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[(*map)[i]] = x.data()[i];
  return make_result<T>("pixel_unshuffle", Shape{x.dim(0), x.dim(1) * factor * factor, h, w},
                        std::move(out), {&x}, [map](detail::Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[(*map)[i]];
                        });
}

namespace {

// Catmull-Rom taps (a = -0.5) along one axis with clamped edges; output
// sample o sits at input coordinate (o + 0.5) / r - 0.5.
struct CubicTaps {
  std::vector<std::size_t> index;  // 4 per output sample
  std::vector<double> weight;
};

double catmull_rom_weight(double t) {
  t = std::abs(t);
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

CubicTaps cubic_taps(std::size_t n_in, std::size_t r) {
  CubicTaps taps;
  taps.index.resize(n_in * r * 4);
  taps.weight.resize(n_in * r * 4);
  const auto last = static_cast<std::int64_t>(n_in) - 1;
  for (std::size_t o = 0; o < n_in * r; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / static_cast<double>(r) - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    for (int j = 0; j < 4; ++j) {
      const auto idx = static_cast<std::int64_t>(base) - 1 + j;
      taps.index[o * 4 + j] = static_cast<std::size_t>(std::clamp<std::int64_t>(idx, 0, last));
      taps.weight[o * 4 + j] = catmull_rom_weight(t - static_cast<double>(j - 1));
    }
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bicubic(const Tensor<T>& x, std::size_t factor) {
  if (x.rank() != 4 || factor == 0 || x.dim(2) == 0 || x.dim(3) == 0)
    throw ShapeError("upsample_bicubic: expected non-empty [B,C,H,W] and factor >= 1, got " + shape_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  auto ty = std::make_shared<CubicTaps>(cubic_taps(h, factor));
  auto tx = std::make_shared<CubicTaps>(cubic_taps(w, factor));
  std::vector<T> out(planes * oh * ow);
  const auto xd = x.data();
  std::vector<T> rows(h * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xd.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t c = 0; c < ow; ++c) {
        T acc = T(0);
        for (int j = 0; j < 4; ++j) acc += static_cast<T>(tx->weight[c * 4 + j]) * src[y * w + tx->index[c * 4 + j]];
        rows[y * ow + c] = acc;
      }
    T* dst = out.data() + p * oh * ow;
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        T acc = T(0);
        for (int j = 0; j < 4; ++j) acc += static_cast<T>(ty->weight[r * 4 + j]) * rows[ty->index[r * 4 + j] * ow + c];
        dst[r * ow + c] = acc;
      }
  }
  return make_result<T>("upsample_bicubic", Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x},
                        [ty, tx, planes, h, w, oh, ow](detail::Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          std::vector<T> grows(h * ow);
                          for (std::size_t p = 0; p < planes; ++p) {
                            std::fill(grows.begin(), grows.end(), T(0));
                            const T* go = self.grad.data() + p * oh * ow;
                            for (std::size_t r = 0; r < oh; ++r)
                              for (int j = 0; j < 4; ++j) {
                                const T wgt = static_cast<T>(ty->weight[r * 4 + j]);
                                T* gr = grows.data() + ty->index[r * 4 + j] * ow;
                                for (std::size_t c = 0; c < ow; ++c) gr[c] += wgt * go[r * ow + c];
                              }
                            T* gi = g.data() + p * h * w;
                            for (std::size_t y = 0; y < h; ++y)
                              for (std::size_t c = 0; c < ow; ++c)
                                for (int j = 0; j < 4; ++j)
                                  gi[y * w + tx->index[c * 4 + j]] += static_cast<T>(tx->weight[c * 4 + j]) * grows[y * ow + c];
                          }
                        });
}

#define COTMISR_INSTANTIATE_NN(T)                                                             \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> global_avg_pool2d(const Tensor<T>&);                                     \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                            std::size_t, std::size_t);                                        \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                      std::size_t, std::size_t);                              \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, std::size_t);                          \
  template Tensor<T> upsample_bicubic(const Tensor<T>&, std::size_t);

COTMISR_INSTANTIATE_NN(float)
COTMISR_INSTANTIATE_NN(double)

}  // namespace cotmisr
