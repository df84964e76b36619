#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "rawvsr/nn/tensor.h"

namespace rawvsr::nn {

bool grad_enabled();

/// Disables graph construction in scope (inference mode).
struct NoGradGuard {
  bool prev;
  NoGradGuard();
  ~NoGradGuard();
};

/// Forward-pass multiply-accumulate counter (1 MAC counted as 1 FLOP;
/// elementwise ops count one per element). Thread-local.
void flops_reset();
uint64_t flops_get();

template <typename T>
struct Node {
  Tensor<T> val;
  Tensor<T> grad;  // allocated on demand, same shape as val
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backfn;

  void ensure_grad() {
    if (!grad.same_shape(val)) grad = Tensor<T>(val.n, val.c, val.h, val.w);
  }
  void zero_grad() {
    if (grad.same_shape(val)) std::fill(grad.v.begin(), grad.v.end(), T(0));
  }
  /// Drops the recorded graph (after backward) so activations free up.
  void detach() {
    parents.clear();
    backfn = nullptr;
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_var(Tensor<T> t, bool requires_grad = false);
template <typename T>
Var<T> make_const(Tensor<T> t);

/// Reverse-mode sweep from root (grad seeded with ones). Frees each node's
/// graph edges as it finishes with them.
template <typename T>
void backward(const Var<T>& root);

// Convolutions. Weight layout [Cout, Cin, K, K]; bias [1, Cout, 1, 1] or null.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1,
              int pad = 1);

/// Modulated deformable 3x3 convolution, stride 1, pad 1. `offset` has
/// 2*K*G channels laid out ((g*K)+k)*2 + {0: dy, 1: dx}; `mask` holds K*G
/// already-activated modulation scalars. Samples outside the input are zero
/// with zero gradient.
template <typename T>
Var<T> deform_conv2d(const Var<T>& x, const Var<T>& offset, const Var<T>& mask,
                     const Var<T>& w, const Var<T>& b, int groups);

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> lrelu(const Var<T>& x, T slope = T(0.1));
template <typename T>
Var<T> sigmoid(const Var<T>& x);

// Elementwise with NumPy-style broadcasting over size-1 axes.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& x, T s);

template <typename T>
Var<T> softmax_n(const Var<T>& x);  // softmax along the N axis
template <typename T>
Var<T> sum_c(const Var<T>& x);  // [N,1,H,W]
template <typename T>
Var<T> sum_n(const Var<T>& x);  // [1,C,H,W]
template <typename T>
Var<T> gap(const Var<T>& x);  // global average pool -> [N,C,1,1]
template <typename T>
Var<T> avgpool(const Var<T>& x, int k);  // kxk, stride k
template <typename T>
Var<T> maxpool2(const Var<T>& x);

/// Half-pixel bilinear upsampling by an integer factor, edges clamped.
template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int factor);

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int r);

template <typename T>
Var<T> concat_n(const std::vector<Var<T>>& xs);
template <typename T>
Var<T> concat_c(const std::vector<Var<T>>& xs);
template <typename T>
Var<T> slice_n(const Var<T>& x, int start, int len);
template <typename T>
Var<T> reshape(const Var<T>& x, int n, int c, int h, int w);

/// out_c = sum_k m[c*3+k] * x_k for 3-channel input; m is constant.
template <typename T>
Var<T> channel_linear(const Var<T>& x, const std::array<double, 9>& m);

/// mean over elements of sqrt(d^2 + eps); returns a [1,1,1,1] scalar node.
template <typename T>
Var<T> charbonnier_loss(const Var<T>& pred, const Tensor<T>& target, double eps = 1e-6);

}  // namespace rawvsr::nn
