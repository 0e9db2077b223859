#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace prnet {

// Thrown when tensors that reached an operation cannot be wired together
// (channel/spatial mismatches). Distinct from std::invalid_argument, which
// covers bad scalar arguments (stride 0, indivisible sizes, ...).
class ContractViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail_contract(const std::string& msg) {
  throw ContractViolation(msg);
}

[[noreturn]] inline void fail_invalid(const std::string& msg) {
  throw std::invalid_argument(msg);
}

// Deterministic RNG. Floats and normals are derived from raw mt19937 draws
// so results do not depend on libstdc++ distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed)
      : gen_(static_cast<uint32_t>(seed & 0xffffffffu) ^
             static_cast<uint32_t>(seed >> 32)) {}

  // [0,1) with 24 bits of precision.
  float uniform() {
    return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f);
  }

  // [0,1) with 53 bits of precision.
  double uniform_double() {
    uint64_t hi = gen_();
    uint64_t lo = gen_();
    return static_cast<double>(((hi << 32) | lo) >> 11) *
           (1.0 / 9007199254740992.0);
  }

  // Standard normal via Box-Muller, second draw cached.
  float normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform_double();
    double u2 = uniform_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586 * u2;
    spare_ = static_cast<float>(r * std::sin(a));
    have_spare_ = true;
    return static_cast<float>(r * std::cos(a));
  }

  // Uniform integer in [lo, hi], rejection-sampled.
  int uniform_int(int lo, int hi) {
    uint32_t range = static_cast<uint32_t>(hi - lo + 1);
    uint32_t limit = 0xffffffffu - 0xffffffffu % range;
    uint32_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return lo + static_cast<int>(x % range);
  }

  uint32_t next_u32() { return gen_(); }

 private:
  std::mt19937 gen_;
  bool have_spare_ = false;
  float spare_ = 0.0f;
};

// Stable per-item seed derivation (dataset images, epochs, ...).
inline uint64_t derive_seed(uint64_t base, uint64_t index) {
  return base ^ index;
}

}  // namespace prnet
