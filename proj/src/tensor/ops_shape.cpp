#include <algorithm>
#include <numeric>

#include "cotmisr/errors.hpp"
#include "cotmisr/ops.hpp"

namespace cotmisr {

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {&x}, [](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const Shape& in = x.shape();
  const std::size_t rank = in.size();
  std::vector<std::size_t> check(order);
  std::sort(check.begin(), check.end());
  std::vector<std::size_t> identity(rank);
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  if (check != identity) throw ShapeError("permute: order is not a permutation of the axes of " + shape_string(in));

  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t a = rank; a-- > 1;) in_stride[a - 1] = in_stride[a] * in[a];
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t a = 0; a < rank; ++a) {
    out_shape[a] = in[order[a]];
    stride[a] = in_stride[order[a]];
  }
  const std::size_t n = x.numel();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*map)[i] = offset;
    for (std::size_t a = rank; a-- > 0;) {
      ++counter[a];
      offset += stride[a];
      if (counter[a] < out_shape[a]) break;
      offset -= stride[a] * counter[a];
      counter[a] = 0;
    }
  }
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.data()[(*map)[i]];
  return make_result<T>("permute", std::move(out_shape), std::move(out), {&x}, [map](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*map)[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t axis_a, std::size_t axis_b) {
  if (axis_a >= x.rank() || axis_b >= x.rank()) {
    throw ShapeError("transpose: axes out of range for " + shape_string(x.shape()));
  }
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::swap(order[axis_a], order[axis_b]);
  return permute(x, order);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  auto lens = std::make_shared<std::vector<std::size_t>>();
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape expect = first;
    expect[axis] = p.shape().size() == first.size() ? p.dim(axis) : 0;
    if (p.shape() != expect) {
      throw ShapeError("concat: " + shape_string(p.shape()) + " does not match " + shape_string(first) +
                       " off axis " + std::to_string(axis));
    }
    lens->push_back(p.dim(axis));
    total += p.dim(axis);
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<T> out(shape_numel(out_shape));
  std::size_t dst = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const std::size_t chunk = (*lens)[pi] * inner;
      const auto src = parts[pi].data().begin() + static_cast<std::ptrdiff_t>(o * chunk);
      std::copy(src, src + static_cast<std::ptrdiff_t>(chunk), out.begin() + static_cast<std::ptrdiff_t>(dst));
      dst += chunk;
    }
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), parts,
                        [lens, outer, inner](detail::Node<T>& self) {
                          std::size_t src = 0;
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t pi = 0; pi < lens->size(); ++pi) {
                              const std::size_t chunk = (*lens)[pi] * inner;
                              auto& node = *self.inputs[pi];
                              if (node.requires_grad) {
                                auto& g = node.grad_buffer();
                                for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += self.grad[src + i];
                              }
                              src += chunk;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& in = x.shape();
  if (axis >= in.size() || start + length > in[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of bounds on axis " + std::to_string(axis) + " of " + shape_string(in));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t len = in[axis];
  Shape out_shape = in;
  out_shape[axis] = length;
  std::vector<T> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    const auto src = x.data().begin() + static_cast<std::ptrdiff_t>((o * len + start) * inner);
    std::copy(src, src + static_cast<std::ptrdiff_t>(length * inner),
              out.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  }
  return make_result<T>("slice", std::move(out_shape), std::move(out), {&x},
                        [outer, len, start, length, inner](detail::Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < length * inner; ++i)
                              g[(o * len + start) * inner + i] += self.grad[o * length * inner + i];
                        });
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& sizes) {
  if (axis >= x.rank()) throw ShapeError("split: axis out of range for " + shape_string(x.shape()));
  if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != x.dim(axis)) {
    throw ShapeError("split: sizes do not add up to extent " + std::to_string(x.dim(axis)));
  }
  std::vector<Tensor<T>> parts;
  std::size_t start = 0;
  for (auto s : sizes) {
    parts.push_back(slice(x, axis, start, s));
    start += s;
  }
  return parts;
}

#define COTMISR_INSTANTIATE_SHAPE(T)                                                          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);              \
  template Tensor<T> transpose(const Tensor<T>&, std::size_t, std::size_t);                   \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                      \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);          \
  template std::vector<Tensor<T>> split(const Tensor<T>&, std::size_t, const std::vector<std::size_t>&);

COTMISR_INSTANTIATE_SHAPE(float)
COTMISR_INSTANTIATE_SHAPE(double)

}  // namespace cotmisr
