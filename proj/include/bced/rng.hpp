#ifndef BCED_RNG_HPP
#define BCED_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace bced {

// mt19937_64 with hand-rolled distributions; the standard distribution
// objects are implementation-defined, which would break byte-reproducible
// datasets and models across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n ? eng_() % n : 0; }

  double gaussian(double sigma) {
    // Box-Muller; one value per call keeps replay independent of call sites.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0) u1 = 0x1.0p-53;
    return sigma * std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace bced

#endif
