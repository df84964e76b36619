#pragma once

#include <string>
#include <vector>

#include "rawvsr/nn/ops.h"

namespace rawvsr::nn {

enum class Init {
  Zero,
  Kaiming,           // normal, std = sqrt(2 / fan_in)
  KaimingScaled01,   // Kaiming scaled by 0.1 (residual-branch convs)
};

template <typename T>
struct ParamEntry {
  std::string name;
  Var<T> var;
};

/// Named trainable parameters with deterministic per-name init streams, so
/// registration order does not affect initial values.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : seed_(seed) {}

  Var<T> create(const std::string& name, int n, int c, int h, int w, Init init);
  Var<T> find(const std::string& name) const;  // null when absent

  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  size_t count_scalars() const;
  void zero_grads();
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::vector<ParamEntry<T>> entries_;
};

template <typename T>
struct Conv2d {
  Var<T> w, b;
  int stride = 1, pad = 1;

  Conv2d() = default;
  /// pad < 0 means "same" padding (k-1)/2. bias starts at zero.
  Conv2d(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k,
         int stride = 1, int pad = -1, Init init = Init::Kaiming, bool bias = true);

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

/// x + c2(relu(c1(x))), no normalization; both convs start small so the
/// block is near-identity at init.
template <typename T>
struct ResBlock {
  Conv2d<T> c1, c2;

  ResBlock() = default;
  ResBlock(ParamStore<T>& ps, const std::string& name, int channels);

  Var<T> operator()(const Var<T>& x) const;
};

template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Applies one update from the accumulated grads (missing grads count as 0).
  void step(const std::vector<ParamEntry<T>>& params);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }
  int64_t t() const { return t_; }
  void set_t(int64_t t) { t_ = t; }

  /// Moment buffers in parameter order; sized lazily. Exposed for
  /// checkpointing.
  std::vector<Tensor<T>>& m_state() { return m_; }
  std::vector<Tensor<T>>& v_state() { return v_; }
  void ensure_state(const std::vector<ParamEntry<T>>& params);

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace rawvsr::nn
