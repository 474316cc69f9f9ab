#pragma once

// Raw compute kernels behind the tensor ops.
//
// Every kernel in `cotmisr::kernels` is OpenMP-parallel. Work is split so
// that each output element is produced by exactly one thread with a fixed
// summation order, so results do not depend on the thread count. The
// `cotmisr::kernels::reference` namespace holds plain serial loop nests with
// the same signatures; they exist for tests and the benchmark.

#include <cstddef>

namespace cotmisr::kernels {

enum class Trans { no, yes };

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel_w) / stride + 1; }
};

// c[m,n] (+)= op(a) * op(b). op(a) is m x k, op(b) is k x n; all row-major.
template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

// Cross-correlation. x: [B,Cin,H,W], w: [Cout,Cin,kh,kw], bias: [Cout] or null.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

// Accumulates into whichever of dx, dw, dbias is non-null.
template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* dbias);

// Per-channel convolution; in_channels == out_channels, w: [C,1,kh,kw].
template <typename T>
void depthwise_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

template <typename T>
void depthwise_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                        T* dbias);

// Softmax attention over [n, len, dim] query/key/value blocks.
// probs (optional, [n, len, len]) receives the attention weights.
template <typename T>
void attention_forward(std::size_t n, std::size_t len, std::size_t dim, const T* q, const T* k,
                       const T* v, T scale, T* out, T* probs);

template <typename T>
void attention_backward(std::size_t n, std::size_t len, std::size_t dim, const T* q, const T* k,
                        const T* v, const T* probs, const T* dout, T scale, T* dq, T* dk, T* dv);

namespace reference {

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* dbias);

template <typename T>
void depthwise_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

template <typename T>
void attention_forward(std::size_t n, std::size_t len, std::size_t dim, const T* q, const T* k,
                       const T* v, T scale, T* out, T* probs);

}  // namespace reference

}  // namespace cotmisr::kernels
