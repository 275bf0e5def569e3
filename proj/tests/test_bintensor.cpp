#include "doctest.h"

#include <stdexcept>

#include "bced/bintensor.hpp"
#include "bced/rng.hpp"

using namespace bced;

TEST_CASE("pack/unpack round-trips across word boundaries") {
  for (int c : {1, 3, 63, 64, 65, 128, 130}) {
    Rng rng(7 + c);
    RealTensor t(3, 5, c);
    for (double& v : t.values) v = rng.below(2) ? 1.0 : 0.0;
    BitTensor b = pack(t);
    CHECK(b.words_per_pixel == (c + 63) / 64);
    CHECK(padding_clear(b));
    RealTensor back = unpack(b);
    CHECK(back.values == t.values);
  }
}

TEST_CASE("pack rejects non-binary values") {
  RealTensor t(1, 1, 2);
  t.values = {0.0, 0.5};
  CHECK_THROWS_AS(pack(t), std::invalid_argument);
  t.values = {1.0, -1.0};
  CHECK_THROWS_AS(pack(t), std::invalid_argument);
}

TEST_CASE("to_pm maps bits to +-1") {
  RealTensor t(2, 2, 3);
  Rng rng(3);
  for (double& v : t.values) v = rng.below(2) ? 1.0 : 0.0;
  RealTensor pm = to_pm(pack(t));
  for (size_t i = 0; i < t.values.size(); ++i)
    CHECK(pm.values[i] == (t.values[i] == 1.0 ? 1.0 : -1.0));
}

TEST_CASE("xnor_popcount_dot counts agreements, oracle-checked") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const long bits = 1 + static_cast<long>(rng.below(300));
    const size_t nw = (bits + 63) / 64;
    std::vector<uint64_t> a(nw, 0), w(nw, 0);
    long expect = 0;
    for (long i = 0; i < bits; ++i) {
      bool ba = rng.below(2), bw = rng.below(2);
      if (ba) a[i >> 6] |= uint64_t(1) << (i & 63);
      if (bw) w[i >> 6] |= uint64_t(1) << (i & 63);
      expect += ba == bw;
    }
    CHECK(xnor_popcount_dot(a.data(), nw, w.data(), nw, bits) == expect);
  }
}

TEST_CASE("xnor_popcount_dot rejects word-count mismatch") {
  std::vector<uint64_t> a(2, 0), w(1, 0);
  CHECK_THROWS_AS(xnor_popcount_dot(a.data(), 2, w.data(), 1, 100),
                  std::invalid_argument);
}

TEST_CASE("padding bits beyond the channel count stay clear after set_bit") {
  BitTensor b(2, 2, 70);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 70; ++c) b.set_bit(y, x, c, true);
  CHECK(padding_clear(b));
  b.pixel(0, 0)[1] |= uint64_t(1) << 40;  // channel 104: padding
  CHECK(!padding_clear(b));
}
