#pragma once

#include <cmath>
#include <cstdint>

namespace vlora {

// Counter-free splitmix64 generator. The whole state is one u64, which makes
// checkpointed training trivially resumable and bit-reproducible across
// platforms (std:: distributions are not).
class Rng {
 public:
  Rng() : state_(0x9e3779b97f4a7c15ull) {}
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller without the cached second value, so the state stays one u64.
  double normal() {
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

  // Derives an independent stream; used to give each subsystem its own seed.
  Rng fork(uint64_t salt) { return Rng(next_u64() ^ (salt * 0x2545f4914f6cdd1dull)); }

 private:
  uint64_t state_;
};

template <typename Seq>
void shuffle(Seq& seq, Rng& rng) {
  for (size_t i = seq.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.below(i));
    std::swap(seq[i - 1], seq[j]);
  }
}

}  // namespace vlora
