#include "rawvsr/nn/module.h"

#include <cmath>

namespace rawvsr::nn {

namespace {

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

template <typename T>
Var<T> ParamStore<T>::create(const std::string& name, int n, int c, int h, int w,
                             Init init) {
  if (find(name)) throw Error("duplicate parameter: " + name);
  Tensor<T> t(n, c, h, w);
  if (init != Init::Zero) {
    const double fan_in = double(c) * h * w;
    double std = std::sqrt(2.0 / fan_in);
    if (init == Init::KaimingScaled01) std *= 0.1;
    Rng rng = Rng::derive(seed_, {fnv1a64(name)});
    for (auto& v : t.v) v = T(rng.normal() * std);
  }
  auto var = make_var(std::move(t), true);
  entries_.push_back({name, var});
  return var;
}

template <typename T>
Var<T> ParamStore<T>::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.var;
  return nullptr;
}

template <typename T>
size_t ParamStore<T>::count_scalars() const {
  size_t total = 0;
  for (const auto& e : entries_) total += e.var->val.numel();
  return total;
}

template <typename T>
void ParamStore<T>::zero_grads() {
  for (const auto& e : entries_) e.var->zero_grad();
}

template <typename T>
Conv2d<T>::Conv2d(ParamStore<T>& ps, const std::string& name, int cin, int cout,
                  int k, int stride, int pad, Init init, bool bias)
    : stride(stride), pad(pad < 0 ? (k - 1) / 2 : pad) {
  w = ps.create(name + ".w", cout, cin, k, k, init);
  if (bias) b = ps.create(name + ".b", 1, cout, 1, 1, Init::Zero);
}

template <typename T>
ResBlock<T>::ResBlock(ParamStore<T>& ps, const std::string& name, int channels)
    : c1(ps, name + ".c1", channels, channels, 3, 1, -1, Init::KaimingScaled01),
      c2(ps, name + ".c2", channels, channels, 3, 1, -1, Init::KaimingScaled01) {}

template <typename T>
Var<T> ResBlock<T>::operator()(const Var<T>& x) const {
  return add(x, c2(relu(c1(x))));
}

template <typename T>
void Adam<T>::ensure_state(const std::vector<ParamEntry<T>>& params) {
  if (m_.size() == params.size()) return;
  m_.clear();
  v_.clear();
  for (const auto& p : params) {
    const auto& t = p.var->val;
    m_.emplace_back(t.n, t.c, t.h, t.w);
    v_.emplace_back(t.n, t.c, t.h, t.w);
  }
}

template <typename T>
void Adam<T>::step(const std::vector<ParamEntry<T>>& params) {
  ensure_state(params);
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i].var;
    const bool has_grad = p.grad.same_shape(p.val);
    for (size_t j = 0; j < p.val.numel(); ++j) {
      const double g = has_grad ? double(p.grad.v[j]) : 0.0;
      double m = beta1_ * double(m_[i].v[j]) + (1.0 - beta1_) * g;
      double v = beta2_ * double(v_[i].v[j]) + (1.0 - beta2_) * g * g;
      m_[i].v[j] = T(m);
      v_[i].v[j] = T(v);
      p.val.v[j] -= T(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
    }
  }
}

#define RAWVSR_INSTANTIATE_MODULE(T) \
  template class ParamStore<T>;      \
  template struct Conv2d<T>;         \
  template struct ResBlock<T>;       \
  template class Adam<T>;

RAWVSR_INSTANTIATE_MODULE(float)
RAWVSR_INSTANTIATE_MODULE(double)

}  // namespace rawvsr::nn
