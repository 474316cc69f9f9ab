#pragma once

// Differentiable tensor operations. Every op returns a new tensor and, when
// recording, attaches an exact backward rule. All ops are templates
// instantiated for float (training) and double (gradient checks).

#include <cstddef>
#include <vector>

#include "cotmisr/rng.hpp"
#include "cotmisr/tensor.hpp"

namespace cotmisr {

// Elementwise arithmetic with numpy-style broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);
Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);

// Reductions.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x, std::size_t axis, bool keepdim);
// Elementwise median along `axis`; even counts average the two middle values.
template <typename T> Tensor<T> median(const Tensor<T>& x, std::size_t axis);

// Linear algebra.
// [m,k]x[k,n] or batched [b,m,k]x[b,k,n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x[..., in] * weight[out, in]^T + bias[out]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
// softmax(q k^T * scale) v over [n, len, dim] inputs.
template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k,
                                       const Tensor<T>& v, T scale);
// The attention weights of the above, [n, len, len]; not differentiable.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, T scale);

// Neural-network layers.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
// Normalizes over the last axis; gamma/beta ([features]) may be undefined.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);
template <typename T> Tensor<T> global_avg_pool2d(const Tensor<T>& x);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0);
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t stride = 1, std::size_t padding = 0);
template <typename T> Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t factor);
template <typename T> Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t factor);
// Catmull-Rom bicubic upsampling of [B,C,H,W] by an integer factor, edges
// clamped; linear in x.
template <typename T> Tensor<T> upsample_bicubic(const Tensor<T>& x, std::size_t factor);
// Inverted dropout; identity when p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng);

// Layout.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, std::size_t axis_a, std::size_t axis_b);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t axis,
                             const std::vector<std::size_t>& sizes);

}  // namespace cotmisr
