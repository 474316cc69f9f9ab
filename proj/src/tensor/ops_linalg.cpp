#include <cmath>

#include "cotmisr/errors.hpp"
#include "cotmisr/kernels.hpp"
#include "cotmisr/ops.hpp"

namespace cotmisr {

using kernels::Trans;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.rank() == 3;
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw ShapeError("matmul: expected two rank-2 or two rank-3 operands, got " +
                     shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t n = b.dim(b.rank() - 1);
  if (b.dim(b.rank() - 2) != k || (batched && b.dim(0) != batch)) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm(Trans::no, Trans::no, m, n, k, a.data().data() + i * m * k,
                  b.data().data() + i * k * n, out.data() + i * m * n, false);
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return make_result<T>("matmul", std::move(shape), std::move(out), {&a, &b},
                        [batch, m, n, k](detail::Node<T>& self) {
                          auto& na = *self.inputs[0];
                          auto& nb = *self.inputs[1];
                          for (std::size_t i = 0; i < batch; ++i) {
                            const T* g = self.grad.data() + i * m * n;
                            if (na.requires_grad) {
                              kernels::gemm(Trans::no, Trans::yes, m, k, n, g,
                                            nb.data.data() + i * k * n,
                                            na.grad_buffer().data() + i * m * k, true);
                            }
                            if (nb.requires_grad) {
                              kernels::gemm(Trans::yes, Trans::no, k, n, m,
                                            na.data.data() + i * m * k, g,
                                            nb.grad_buffer().data() + i * k * n, true);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.rank() == 0 || x.dim(x.rank() - 1) != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                     shape_string(weight.shape()));
  }
  const std::size_t in = weight.dim(1), out_features = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_features)) {
    throw ShapeError("linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                     shape_string(weight.shape()));
  }
  const std::size_t rows = x.numel() / in;
  std::vector<T> out(rows * out_features);
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(bias.data().begin(), bias.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r * out_features));
  }
  kernels::gemm(Trans::no, Trans::yes, rows, out_features, in, x.data().data(),
                weight.data().data(), out.data(), bias.defined());
  Shape shape = x.shape();
  shape.back() = out_features;
  const bool has_bias = bias.defined();
  auto backward = [rows, in, out_features, has_bias](detail::Node<T>& self) {
    auto& nx = *self.inputs[0];
    auto& nw = *self.inputs[1];
    const T* g = self.grad.data();
    if (nx.requires_grad) {
      kernels::gemm(Trans::no, Trans::no, rows, in, out_features, g, nw.data.data(),
                    nx.grad_buffer().data(), true);
    }
    if (nw.requires_grad) {
      kernels::gemm(Trans::yes, Trans::no, out_features, in, rows, g, nx.data.data(),
                    nw.grad_buffer().data(), true);
    }
    if (has_bias && self.inputs[2]->requires_grad) {
      auto& gb = self.inputs[2]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_features; ++o) gb[o] += g[r * out_features + o];
    }
  };
  if (has_bias) {
    return make_result<T>("linear", std::move(shape), std::move(out), {&x, &weight, &bias}, backward);
  }
  return make_result<T>("linear", std::move(shape), std::move(out), {&x, &weight}, backward);
}

namespace {

template <typename T>
void check_attention_shapes(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>* v) {
  if (q.rank() != 3 || q.shape() != k.shape() || (v && v->shape() != q.shape())) {
    throw ShapeError("attention: q, k, v must share one [n, len, dim] shape, got " +
                     shape_string(q.shape()) + " and " + shape_string(k.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k,
                                       const Tensor<T>& v, T scale) {
  check_attention_shapes(q, k, &v);
  const std::size_t n = q.dim(0), len = q.dim(1), dim = q.dim(2);
  const bool recording =
      GradMode::enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  auto probs = std::make_shared<std::vector<T>>(recording ? n * len * len : 0);
  std::vector<T> out(n * len * dim);
  kernels::attention_forward(n, len, dim, q.data().data(), k.data().data(), v.data().data(), scale,
                             out.data(), recording ? probs->data() : nullptr);
  return make_result<T>(
      "attention", q.shape(), std::move(out), {&q, &k, &v},
      [probs, n, len, dim, scale](detail::Node<T>& self) {
        auto& nq = *self.inputs[0];
        auto& nk = *self.inputs[1];
        auto& nv = *self.inputs[2];
        kernels::attention_backward(n, len, dim, nq.data.data(), nk.data.data(), nv.data.data(),
                                    probs->data(), self.grad.data(), scale,
                                    nq.requires_grad ? nq.grad_buffer().data() : nullptr,
                                    nk.requires_grad ? nk.grad_buffer().data() : nullptr,
                                    nv.requires_grad ? nv.grad_buffer().data() : nullptr);
      });
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, T scale) {
  check_attention_shapes<T>(q, k, nullptr);
  const std::size_t n = q.dim(0), len = q.dim(1), dim = q.dim(2);
  std::vector<T> probs(n * len * len);
  std::vector<T> scratch(n * len * dim);
  kernels::attention_forward(n, len, dim, q.data().data(), k.data().data(), k.data().data(), scale,
                             scratch.data(), probs.data());
  return Tensor<T>(Shape{n, len, len}, std::move(probs));
}

#define COTMISR_INSTANTIATE_LINALG(T)                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> scaled_dot_product_attention(const Tensor<T>&, const Tensor<T>&,    \
                                                  const Tensor<T>&, T);                  \
  template Tensor<T> attention_weights(const Tensor<T>&, const Tensor<T>&, T);

COTMISR_INSTANTIATE_LINALG(float)
COTMISR_INSTANTIATE_LINALG(double)

}  // namespace cotmisr
