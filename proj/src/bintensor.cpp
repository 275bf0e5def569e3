#include "bced/bintensor.hpp"

#include <bit>
#include <stdexcept>

namespace bced {

BitTensor pack(const RealTensor& t) {
  if (t.height < 1 || t.width < 1 || t.channels < 1)
    throw std::invalid_argument("pack: empty tensor");
  BitTensor b(t.height, t.width, t.channels);
  size_t vi = 0;
  for (int y = 0; y < t.height; ++y) {
    for (int x = 0; x < t.width; ++x) {
      uint64_t* px = b.pixel(y, x);
      for (int c = 0; c < t.channels; ++c, ++vi) {
        double v = t.values[vi];
        if (v == 1.0) {
          px[c >> 6] |= uint64_t(1) << (c & 63);
        } else if (v != 0.0) {
          throw std::invalid_argument("pack: value is neither 0 nor 1");
        }
      }
    }
  }
  return b;
}

RealTensor unpack(const BitTensor& b) {
  RealTensor t(b.height, b.width, b.channels);
  size_t vi = 0;
  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x) {
      const uint64_t* px = b.pixel(y, x);
      for (int c = 0; c < b.channels; ++c, ++vi)
        t.values[vi] = (px[c >> 6] >> (c & 63)) & 1u ? 1.0 : 0.0;
    }
  return t;
}

RealTensor to_pm(const BitTensor& b) {
  RealTensor t(b.height, b.width, b.channels);
  size_t vi = 0;
  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x) {
      const uint64_t* px = b.pixel(y, x);
      for (int c = 0; c < b.channels; ++c, ++vi)
        t.values[vi] = (px[c >> 6] >> (c & 63)) & 1u ? 1.0 : -1.0;
    }
  return t;
}

long xnor_popcount_dot(const uint64_t* a, size_t a_words,
                       const uint64_t* w, size_t w_words, long valid_bits) {
  size_t need = static_cast<size_t>((valid_bits + 63) / 64);
  if (a_words != w_words || a_words != need)
    throw std::invalid_argument("xnor_popcount_dot: word count mismatch");
  // Padding bits are zero in both operands, so they never appear as
  // mismatches; matches = valid_bits - popcount(a XOR w).
  long mismatch = 0;
  for (size_t i = 0; i < need; ++i)
    mismatch += std::popcount(a[i] ^ w[i]);
  return valid_bits - mismatch;
}

bool padding_clear(const BitTensor& b) {
  int rem = b.channels & 63;
  if (rem == 0) return true;
  uint64_t bad = ~((uint64_t(1) << rem) - 1);
  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x)
      if (b.pixel(y, x)[b.words_per_pixel - 1] & bad) return false;
  return true;
}

}  // namespace bced
