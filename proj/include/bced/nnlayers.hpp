#ifndef BCED_NNLAYERS_HPP
#define BCED_NNLAYERS_HPP

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "bced/bintensor.hpp"

namespace bced {

// Per-output-channel batch normalization parameters and running statistics.
struct BNParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> mean;
  std::vector<double> var;
  double epsilon = 1e-5;

  BNParams() = default;
  explicit BNParams(int channels)
      : gamma(channels, 1.0), beta(channels, 0.0),
        mean(channels, 0.0), var(channels, 1.0) {}
  int channels() const { return static_cast<int>(gamma.size()); }
};

// The one evaluation of the normalization affine map; folding calibrates
// against exactly this expression, so keep it in one place.
inline double bn_apply(const BNParams& bn, int c, double x) {
  return (x - bn.mean[c]) / std::sqrt(bn.var[c] + bn.epsilon) * bn.gamma[c] +
         bn.beta[c];
}

struct RealConvLayer {
  int kernel_h = 0, kernel_w = 0;
  int in_channels = 0, out_channels = 0;
  int pad = 0;
  std::vector<double> weights;  // [oc][ky][kx][ic]
  BNParams bn;
};

struct BinConvLayer {
  int kernel_h = 0, kernel_w = 0;
  int in_channels = 0, out_channels = 0;
  int pad = 0;
  std::vector<BitTensor> weights;  // one kernel_h x kernel_w x in_channels tensor per filter
  BNParams bn;

  long kernel_volume() const {
    return static_cast<long>(kernel_h) * kernel_w * in_channels;
  }
};

enum class Polarity : uint8_t { greater, less, constant_one, constant_zero };

// Fused batchnorm+binarize decision per output channel, evaluated on
// integer-valued inputs s in [s_min, s_max]. theta is the real threshold
// mu - beta*sqrt(var+eps)/gamma expressed in the normalizer's input domain;
// cutoff is the integer decision boundary calibrated bit-exactly against
// binarize(batchnorm_infer(pre_scale*s + pre_shift)).
struct FoldedThreshold {
  std::vector<double> theta;
  std::vector<Polarity> polarity;
  std::vector<long> cutoff;
  long s_min = 0, s_max = 0;
  double pre_scale = 1.0, pre_shift = 0.0;

  bool bit(int c, long s) const {
    switch (polarity[c]) {
      case Polarity::greater: return s >= cutoff[c];
      case Polarity::less: return s <= cutoff[c];
      case Polarity::constant_one: return true;
      default: return false;
    }
  }
};

// Same-padding cross-correlation with zero border padding.
RealTensor conv2d_real(const RealTensor& input, const RealConvLayer& layer);

// Same-padding cross-correlation with an arbitrary constant border value.
// weights layout [oc][ky][kx][ic]; pad = (kernel-1)/2 per side.
RealTensor conv2d_pad(const RealTensor& input, const double* weights,
                      int kernel_h, int kernel_w, int in_channels,
                      int out_channels, double pad_value);

// XNOR-popcount convolution. Output values are integer popcounts in
// [0, kernel_volume]; border positions see 0-bits.
RealTensor binconv(const BitTensor& input, const BinConvLayer& layer);

RealTensor batchnorm_infer(const RealTensor& s, const BNParams& bn);

// Normalizes a batch with its own statistics and folds them into the
// running statistics: running <- momentum*running + (1-momentum)*batch.
std::pair<std::vector<RealTensor>, BNParams> batchnorm_train(
    const std::vector<RealTensor>& s_batch, const BNParams& bn,
    double momentum);

// bit = 1 iff value > 0 (exact zero maps to 0).
BitTensor binarize(const RealTensor& a);

// Non-overlapping 2x2 stride-2 max pooling; ties go to the lowest corner.
std::pair<RealTensor, PoolIndexMap> maxpool2x2(const RealTensor& a);

// Scatter each value to its recorded corner of the doubled grid, zeros elsewhere.
RealTensor unpool2x2(const RealTensor& a, const PoolIndexMap& idx);

FoldedThreshold fold_bn_binrz(const BNParams& bn, long s_min, long s_max,
                              double pre_scale = 1.0, double pre_shift = 0.0);

// Numerically stable per-pixel softmax over channels.
RealTensor softmax_pixels(const RealTensor& logits);

}  // namespace bced

#endif
