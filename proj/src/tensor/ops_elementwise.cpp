#include <algorithm>
#include <cmath>
#include <cstdint>

#include "cotmisr/errors.hpp"
#include "cotmisr/ops.hpp"

namespace cotmisr {

namespace {

using index_t = std::int64_t;
constexpr std::size_t kParallelElems = 1u << 14;

// Offset into an input of shape `in` for every element of `out`, where `in`
// broadcasts to `out`. Empty result means the shapes are identical.
std::vector<std::size_t> broadcast_offsets(const Shape& out, const Shape& in) {
  if (in == out) return {};
  const std::size_t rank = out.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t in_axis = in.size() - 1 - i;
    const std::size_t out_axis = rank - 1 - i;
    stride[out_axis] = in[in_axis] == 1 ? 0 : s;
    s *= in[in_axis];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    offsets[i] = offset;
    for (std::size_t axis = rank; axis-- > 0;) {
      ++counter[axis];
      offset += stride[axis];
      if (counter[axis] < out[axis]) break;
      offset -= stride[axis] * counter[axis];
      counter[axis] = 0;
    }
  }
  return offsets;
}

template <typename T, typename Fwd, typename GradA, typename GradB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, GradA grad_a,
                 GradB grad_b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto oa = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(out_shape, a.shape()));
  auto ob = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(out_shape, b.shape()));
  const std::size_t n = shape_numel(out_shape);
  std::vector<T> out(n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  const std::size_t* ia = oa->empty() ? nullptr : oa->data();
  const std::size_t* ib = ob->empty() ? nullptr : ob->data();
#pragma omp parallel for schedule(static) if (n >= kParallelElems)
  for (index_t i = 0; i < static_cast<index_t>(n); ++i) {
    const std::size_t u = static_cast<std::size_t>(i);
    out[u] = fwd(pa[ia ? ia[u] : u], pb[ib ? ib[u] : u]);
  }
  return make_result<T>(op, std::move(out_shape), std::move(out), {&a, &b},
                        [oa, ob, grad_a, grad_b](detail::Node<T>& self) {
                          auto& na = *self.inputs[0];
                          auto& nb = *self.inputs[1];
                          const std::size_t count = self.data.size();
                          const std::size_t* ia = oa->empty() ? nullptr : oa->data();
                          const std::size_t* ib = ob->empty() ? nullptr : ob->data();
                          if (na.requires_grad) {
                            auto& ga = na.grad_buffer();
                            for (std::size_t i = 0; i < count; ++i) {
                              const std::size_t ja = ia ? ia[i] : i, jb = ib ? ib[i] : i;
                              ga[ja] += grad_a(self.grad[i], na.data[ja], nb.data[jb], self.data[i]);
                            }
                          }
                          if (nb.requires_grad) {
                            auto& gb = nb.grad_buffer();
                            for (std::size_t i = 0; i < count; ++i) {
                              const std::size_t ja = ia ? ia[i] : i, jb = ib ? ib[i] : i;
                              gb[jb] += grad_b(self.grad[i], na.data[ja], nb.data[jb], self.data[i]);
                            }
                          }
                        });
}

template <typename T, typename Fwd, typename Grad>
Tensor<T> unary(const char* op, const Tensor<T>& x, Fwd fwd, Grad grad) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  const T* px = x.data().data();
#pragma omp parallel for schedule(static) if (n >= kParallelElems)
  for (index_t i = 0; i < static_cast<index_t>(n); ++i) out[static_cast<std::size_t>(i)] = fwd(px[i]);
  return make_result<T>(op, x.shape(), std::move(out), {&x}, [grad](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    const std::size_t count = self.data.size();
#pragma omp parallel for schedule(static) if (count >= kParallelElems)
    for (index_t i = 0; i < static_cast<index_t>(count); ++i) {
      const std::size_t u = static_cast<std::size_t>(i);
      g[u] += grad(self.grad[u], in.data[u], self.data[u]);
    }
  });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("broadcast: incompatible shapes " + shape_string(a) + " and " +
                       shape_string(b));
    }
    out[rank - 1 - i] = da == 1 ? db : da;
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T, T) { return g; },
      [](T g, T, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T, T) { return g; },
      [](T g, T, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y, T) { return g * y; },
      [](T g, T x, T, T) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T g, T, T y, T) { return g / y; },
      [](T g, T, T y, T out) { return -g * out / y; });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape) != shape) {
    throw ShapeError("broadcast_to: " + shape_string(x.shape()) + " does not broadcast to " +
                     shape_string(shape));
  }
  auto offsets = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(shape, x.shape()));
  const std::size_t n = shape_numel(shape);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.data()[offsets->empty() ? i : (*offsets)[i]];
  return make_result<T>("broadcast_to", shape, std::move(out), {&x},
                        [offsets](detail::Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                            g[offsets->empty() ? i : (*offsets)[i]] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary<T>("neg", x, [](T v) { return -v; }, [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>(
      "scale", x, [factor](T v) { return v * factor; },
      [factor](T g, T, T) { return g * factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary<T>(
      "add_scalar", x, [value](T v) { return v + value; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T g, T v, T) { return v > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T g, T, T y) { return g * y * (T(1) - y); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T g, T v, T) { return v > T(0) ? g : (v < T(0) ? -g : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary<T>("square", x, [](T v) { return v * v; }, [](T g, T v, T) { return T(2) * g * v; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return make_result<T>("sum", Shape{}, {total}, {&x}, [](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis, bool keepdim) {
  const Shape& in = x.shape();
  if (axis >= in.size()) throw ShapeError("sum: axis out of range for " + shape_string(in));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t len = in[axis];
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x.data()[(o * len + l) * inner + i];
  Shape shape = in;
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return make_result<T>("sum_axis", std::move(shape), std::move(out), {&x},
                        [outer, len, inner](detail::Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t l = 0; l < len; ++l)
                              for (std::size_t i = 0; i < inner; ++i)
                                g[(o * len + l) * inner + i] += self.grad[o * inner + i];
                        });
}

template <typename T>
Tensor<T> median(const Tensor<T>& x, std::size_t axis) {
  const Shape& in = x.shape();
  if (axis >= in.size()) throw ShapeError("median: axis out of range for " + shape_string(in));
  const std::size_t len = in[axis];
  if (len == 0) throw ShapeError("median: empty reduction axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];

  // For each output, the one or two source elements it was built from.
  auto picks = std::make_shared<std::vector<std::size_t>>(outer * inner * 2);
  std::vector<T> out(outer * inner);
  std::vector<std::pair<T, std::size_t>> column(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t src = (o * len + l) * inner + i;
        column[l] = {x.data()[src], src};
      }
      std::sort(column.begin(), column.end());
      const std::size_t dst = o * inner + i;
      const std::size_t hi = len / 2;
      const std::size_t lo = len % 2 ? hi : hi - 1;
      out[dst] = len % 2 ? column[hi].first : (column[lo].first + column[hi].first) / T(2);
      (*picks)[2 * dst] = column[lo].second;
      (*picks)[2 * dst + 1] = column[hi].second;
    }
  }
  Shape shape = in;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const bool odd = len % 2 == 1;
  return make_result<T>("median", std::move(shape), std::move(out), {&x},
                        [picks, odd](detail::Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t d = 0; d < self.grad.size(); ++d) {
                            if (odd) {
                              g[(*picks)[2 * d]] += self.grad[d];
                            } else {
                              g[(*picks)[2 * d]] += self.grad[d] / T(2);
                              g[(*picks)[2 * d + 1]] += self.grad[d] / T(2);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const T keep_scale = T(1) / static_cast<T>(1.0 - p);
  auto keep = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*keep)[i] = rng.uniform() >= p ? keep_scale : T(0);
    out[i] = x.data()[i] * (*keep)[i];
  }
  return make_result<T>("dropout", x.shape(), std::move(out), {&x}, [keep](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*keep)[i];
  });
}

#define COTMISR_INSTANTIATE_ELEMENTWISE(T)                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);              \
  template Tensor<T> neg(const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                           \
  template Tensor<T> relu(const Tensor<T>&);                                    \
  template Tensor<T> sigmoid(const Tensor<T>&);                                 \
  template Tensor<T> abs(const Tensor<T>&);                                     \
  template Tensor<T> square(const Tensor<T>&);                                  \
  template Tensor<T> sum(const Tensor<T>&);                                     \
  template Tensor<T> mean(const Tensor<T>&);                                    \
  template Tensor<T> sum(const Tensor<T>&, std::size_t, bool);                  \
  template Tensor<T> median(const Tensor<T>&, std::size_t);                     \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&);

COTMISR_INSTANTIATE_ELEMENTWISE(float)
COTMISR_INSTANTIATE_ELEMENTWISE(double)

}  // namespace cotmisr
