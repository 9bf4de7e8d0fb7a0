#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "bmtm/math.hpp"

namespace bmtm {

//! Seeded random stream with hand-rolled variate generation so that draw
//! sequences are reproducible independent of the standard library's
//! distribution implementations. Not safe to share across threads.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  //! Independent stream derived from this stream's seed (per chain,
  //! per replication, ...). Does not consume state.
  RngStream derive(std::uint64_t index) const {
    return RngStream(seed_mix(seed_, index));
  }

  std::uint64_t seed() const { return seed_; }

  //! Uniform on (0, 1), never exactly 0 or 1.
  double uniform() {
    std::uint64_t u = engine_();
    return (static_cast<double>(u >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  //! Standard normal via Box-Muller (both values used).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double mu, double sd) { return mu + sd * normal(); }

  //! Normal truncated to (0, inf) by rejection; requires P(X>0) not tiny.
  double halfnormal(double mu, double sd) {
    for (;;) {
      double x = normal(mu, sd);
      if (x > 0.0) return x;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

private:
  static std::uint64_t seed_mix(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finalizer over (seed, index)
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace bmtm
