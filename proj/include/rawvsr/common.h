#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace rawvsr {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dimension or layout mismatch (odd mosaic sizes, plane shape drift, ...).
struct ShapeError : Error {
  using Error::Error;
};

/// Inconsistent frame metadata (e.g. white level not above black level).
struct MetadataError : Error {
  using Error::Error;
};

struct BoundsError : Error {
  using Error::Error;
};

/// Robust fitting could not produce a usable model.
struct EstimationError : Error {
  using Error::Error;
};

/// Non-finite values where finite ones are required (diverged training, ...).
struct NumericError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

inline bool is_even(int v) { return (v & 1) == 0; }

namespace detail {
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

/// xoshiro256++ with explicit state so streams serialize into checkpoints.
/// Distribution sampling is implemented here (not <random>) so sequences are
/// identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& s : state_) s = detail::splitmix64(sm);
  }

  /// Child stream for (seed, path...) so parallel jobs stay independent.
  static Rng derive(uint64_t seed, std::initializer_list<uint64_t> path) {
    uint64_t sm = seed;
    uint64_t mixed = detail::splitmix64(sm);
    for (uint64_t p : path) {
      sm ^= p * 0x2545f4914f6cdd1dull;
      mixed ^= detail::splitmix64(sm);
    }
    return Rng(mixed);
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + int(next_u64() % uint64_t(hi - lo + 1));
  }

  /// Box-Muller without spare caching, so state alone reproduces the stream.
  double normal() {
    double u1 = (double(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::array<uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

 private:
  std::array<uint64_t, 4> state_{};
};

}  // namespace rawvsr
