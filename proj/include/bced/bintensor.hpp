#ifndef BCED_BINTENSOR_HPP
#define BCED_BINTENSOR_HPP

#include <cstdint>
#include <cstddef>
#include <vector>

namespace bced {

// Dense H x W x C tensor of doubles, row-major with channels innermost.
struct RealTensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;

  RealTensor() = default;
  RealTensor(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c),
        values(static_cast<size_t>(h) * w * c, fill) {}

  size_t index(int y, int x, int c) const {
    return (static_cast<size_t>(y) * width + x) * channels + c;
  }
  double& at(int y, int x, int c) { return values[index(y, x, c)]; }
  double at(int y, int x, int c) const { return values[index(y, x, c)]; }
  size_t size() const { return values.size(); }
};

// Channel-packed binary feature map. One bit per (y, x, c); channel c lives
// at bit (c % 64) of word (c / 64) within the pixel's word group, LSB first.
struct BitTensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  int words_per_pixel = 0;
  std::vector<uint64_t> words;

  BitTensor() = default;
  BitTensor(int h, int w, int c)
      : height(h), width(w), channels(c), words_per_pixel((c + 63) / 64),
        words(static_cast<size_t>(h) * w * ((c + 63) / 64), 0) {}

  size_t pixel_index(int y, int x) const {
    return (static_cast<size_t>(y) * width + x) * words_per_pixel;
  }
  const uint64_t* pixel(int y, int x) const { return words.data() + pixel_index(y, x); }
  uint64_t* pixel(int y, int x) { return words.data() + pixel_index(y, x); }

  bool bit(int y, int x, int c) const {
    return (pixel(y, x)[c >> 6] >> (c & 63)) & 1u;
  }
  void set_bit(int y, int x, int c, bool v) {
    uint64_t& w = pixel(y, x)[c >> 6];
    uint64_t m = uint64_t(1) << (c & 63);
    if (v) w |= m; else w &= ~m;
  }
  size_t bit_count() const {
    return static_cast<size_t>(height) * width * channels;
  }
  bool same_shape(const BitTensor& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// Per-window argmax record of a 2x2 max-pool. Values 0..3 enumerate the
// source corners in order top-left, top-right, bottom-left, bottom-right.
struct PoolIndexMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<uint8_t> indices;

  PoolIndexMap() = default;
  PoolIndexMap(int h, int w, int c)
      : height(h), width(w), channels(c),
        indices(static_cast<size_t>(h) * w * c, 0) {}

  size_t index(int y, int x, int c) const {
    return (static_cast<size_t>(y) * width + x) * channels + c;
  }
  uint8_t at(int y, int x, int c) const { return indices[index(y, x, c)]; }
  uint8_t& at(int y, int x, int c) { return indices[index(y, x, c)]; }
};

// Packs a {0,1}-valued tensor. Throws std::invalid_argument on any other value.
BitTensor pack(const RealTensor& t);

// Inverse of pack; values are exactly 0.0 or 1.0.
RealTensor unpack(const BitTensor& b);

// Bit 1 -> +1.0, bit 0 -> -1.0.
RealTensor to_pm(const BitTensor& b);

// Number of positions i < valid_bits where a and w agree.
// Both spans must hold ceil(valid_bits/64) words with clear padding bits.
long xnor_popcount_dot(const uint64_t* a, size_t a_words,
                       const uint64_t* w, size_t w_words, long valid_bits);

// True when every bit at channel positions >= channels is zero.
bool padding_clear(const BitTensor& b);

}  // namespace bced

#endif
