#include "bced/nnlayers.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace bced {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

RealTensor conv2d_pad(const RealTensor& input, const double* weights,
                      int kernel_h, int kernel_w, int in_channels,
                      int out_channels, double pad_value) {
  require(input.channels == in_channels, "conv2d: channel mismatch");
  require(kernel_h % 2 == 1 && kernel_w % 2 == 1, "conv2d: kernel must be odd");
  const int H = input.height, W = input.width, C = in_channels;
  const int ph = (kernel_h - 1) / 2, pw = (kernel_w - 1) / 2;
  const int PH = H + kernel_h - 1, PW = W + kernel_w - 1;

  std::vector<double> padded(static_cast<size_t>(PH) * PW * C, pad_value);
  for (int y = 0; y < H; ++y)
    std::copy_n(&input.values[input.index(y, 0, 0)], static_cast<size_t>(W) * C,
                &padded[(static_cast<size_t>(y + ph) * PW + pw) * C]);

  RealTensor out(H, W, out_channels);
  const size_t row_len = static_cast<size_t>(kernel_w) * C;
  const size_t fstride = static_cast<size_t>(kernel_h) * row_len;

  // Filters in blocks of four so the padded input is streamed few times
  // while the block's weights stay cache-resident.
  int f = 0;
  for (; f + 4 <= out_channels; f += 4) {
    const double* w0 = weights + (f + 0) * fstride;
    const double* w1 = weights + (f + 1) * fstride;
    const double* w2 = weights + (f + 2) * fstride;
    const double* w3 = weights + (f + 3) * fstride;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
        for (int ky = 0; ky < kernel_h; ++ky) {
          const double* in = &padded[(static_cast<size_t>(y + ky) * PW + x) * C];
          const double* p0 = w0 + ky * row_len;
          const double* p1 = w1 + ky * row_len;
          const double* p2 = w2 + ky * row_len;
          const double* p3 = w3 + ky * row_len;
          for (size_t i = 0; i < row_len; ++i) {
            const double v = in[i];
            a0 += v * p0[i];
            a1 += v * p1[i];
            a2 += v * p2[i];
            a3 += v * p3[i];
          }
        }
        double* o = &out.values[out.index(y, x, f)];
        o[0] = a0; o[1] = a1; o[2] = a2; o[3] = a3;
      }
  }
  for (; f < out_channels; ++f) {
    const double* wf = weights + f * fstride;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int ky = 0; ky < kernel_h; ++ky) {
          const double* in = &padded[(static_cast<size_t>(y + ky) * PW + x) * C];
          const double* p = wf + ky * row_len;
          for (size_t i = 0; i < row_len; ++i) acc += in[i] * p[i];
        }
        out.at(y, x, f) = acc;
      }
  }
  return out;
}

RealTensor conv2d_real(const RealTensor& input, const RealConvLayer& layer) {
  require(input.channels == layer.in_channels, "conv2d_real: channel mismatch");
  return conv2d_pad(input, layer.weights.data(), layer.kernel_h, layer.kernel_w,
                    layer.in_channels, layer.out_channels, 0.0);
}

RealTensor binconv(const BitTensor& input, const BinConvLayer& layer) {
  require(input.channels == layer.in_channels, "binconv: channel mismatch");
  require(layer.kernel_h % 2 == 1 && layer.kernel_w % 2 == 1,
          "binconv: kernel must be odd");
  const int H = input.height, W = input.width;
  const int kh = layer.kernel_h, kw = layer.kernel_w;
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const int wpp = input.words_per_pixel;
  const int PH = H + kh - 1, PW = W + kw - 1;
  const long n = layer.kernel_volume();

  // Zero-padded copy: border pixels see 0-bits, matching the pad rule.
  std::vector<uint64_t> padded(static_cast<size_t>(PH) * PW * wpp, 0);
  for (int y = 0; y < H; ++y)
    std::copy_n(input.pixel(y, 0), static_cast<size_t>(W) * wpp,
                &padded[(static_cast<size_t>(y + ph) * PW + pw) * wpp]);

  RealTensor out(H, W, layer.out_channels);
  const size_t row_words = static_cast<size_t>(kw) * wpp;
  for (int f = 0; f < layer.out_channels; ++f) {
    const BitTensor& wt = layer.weights[f];
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        long mismatch = 0;
        for (int ky = 0; ky < kh; ++ky) {
          const uint64_t* a = &padded[(static_cast<size_t>(y + ky) * PW + x) * wpp];
          const uint64_t* w = wt.pixel(ky, 0);
          for (size_t i = 0; i < row_words; ++i)
            mismatch += std::popcount(a[i] ^ w[i]);
        }
        out.at(y, x, f) = static_cast<double>(n - mismatch);
      }
  }
  return out;
}

RealTensor batchnorm_infer(const RealTensor& s, const BNParams& bn) {
  require(s.channels == bn.channels(), "batchnorm_infer: channel mismatch");
  RealTensor out(s.height, s.width, s.channels);
  const size_t pixels = static_cast<size_t>(s.height) * s.width;
  for (size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < s.channels; ++c)
      out.values[p * s.channels + c] = bn_apply(bn, c, s.values[p * s.channels + c]);
  return out;
}

std::pair<std::vector<RealTensor>, BNParams> batchnorm_train(
    const std::vector<RealTensor>& s_batch, const BNParams& bn,
    double momentum) {
  require(!s_batch.empty(), "batchnorm_train: empty batch");
  const RealTensor& first = s_batch.front();
  const int C = first.channels;
  require(C == bn.channels(), "batchnorm_train: channel mismatch");
  for (const RealTensor& t : s_batch)
    require(t.height == first.height && t.width == first.width && t.channels == C,
            "batchnorm_train: shape mismatch");

  const size_t pixels = static_cast<size_t>(first.height) * first.width;
  const double count = static_cast<double>(pixels * s_batch.size());
  std::vector<double> mu(C, 0.0), var(C, 0.0);
  for (const RealTensor& t : s_batch)
    for (size_t p = 0; p < pixels; ++p)
      for (int c = 0; c < C; ++c) mu[c] += t.values[p * C + c];
  for (int c = 0; c < C; ++c) mu[c] /= count;
  for (const RealTensor& t : s_batch)
    for (size_t p = 0; p < pixels; ++p)
      for (int c = 0; c < C; ++c) {
        double d = t.values[p * C + c] - mu[c];
        var[c] += d * d;
      }
  for (int c = 0; c < C; ++c) var[c] /= count;

  BNParams updated = bn;
  for (int c = 0; c < C; ++c) {
    updated.mean[c] = momentum * bn.mean[c] + (1.0 - momentum) * mu[c];
    updated.var[c] = momentum * bn.var[c] + (1.0 - momentum) * var[c];
  }

  BNParams batch_bn = bn;
  batch_bn.mean = mu;
  batch_bn.var = var;
  std::vector<RealTensor> out;
  out.reserve(s_batch.size());
  for (const RealTensor& t : s_batch) out.push_back(batchnorm_infer(t, batch_bn));
  return {std::move(out), std::move(updated)};
}

BitTensor binarize(const RealTensor& a) {
  BitTensor b(a.height, a.width, a.channels);
  size_t vi = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      uint64_t* px = b.pixel(y, x);
      for (int c = 0; c < a.channels; ++c, ++vi)
        if (a.values[vi] > 0.0) px[c >> 6] |= uint64_t(1) << (c & 63);
    }
  return b;
}

std::pair<RealTensor, PoolIndexMap> maxpool2x2(const RealTensor& a) {
  require(a.height % 2 == 0 && a.width % 2 == 0, "maxpool2x2: odd spatial dims");
  const int OH = a.height / 2, OW = a.width / 2, C = a.channels;
  RealTensor out(OH, OW, C);
  PoolIndexMap idx(OH, OW, C);
  for (int y = 0; y < OH; ++y)
    for (int x = 0; x < OW; ++x)
      for (int c = 0; c < C; ++c) {
        const double corners[4] = {
            a.at(2 * y, 2 * x, c), a.at(2 * y, 2 * x + 1, c),
            a.at(2 * y + 1, 2 * x, c), a.at(2 * y + 1, 2 * x + 1, c)};
        int best = 0;
        for (int k = 1; k < 4; ++k)
          if (corners[k] > corners[best]) best = k;
        out.at(y, x, c) = corners[best];
        idx.at(y, x, c) = static_cast<uint8_t>(best);
      }
  return {std::move(out), std::move(idx)};
}

RealTensor unpool2x2(const RealTensor& a, const PoolIndexMap& idx) {
  require(a.height == idx.height && a.width == idx.width && a.channels == idx.channels,
          "unpool2x2: dim mismatch");
  RealTensor out(a.height * 2, a.width * 2, a.channels);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < a.channels; ++c) {
        uint8_t k = idx.at(y, x, c);
        if (k > 3) throw std::invalid_argument("unpool2x2: index out of range");
        out.at(2 * y + (k >> 1), 2 * x + (k & 1), c) = a.at(y, x, c);
      }
  return out;
}

FoldedThreshold fold_bn_binrz(const BNParams& bn, long s_min, long s_max,
                              double pre_scale, double pre_shift) {
  require(pre_scale > 0, "fold_bn_binrz: pre_scale must be positive");
  const int C = bn.channels();
  FoldedThreshold ft;
  ft.theta.resize(C);
  ft.polarity.resize(C);
  ft.cutoff.resize(C, 0);
  ft.s_min = s_min;
  ft.s_max = s_max;
  ft.pre_scale = pre_scale;
  ft.pre_shift = pre_shift;

  auto bit_of = [&](int c, long s) {
    return bn_apply(bn, c, pre_scale * static_cast<double>(s) + pre_shift) > 0.0;
  };

  for (int c = 0; c < C; ++c) {
    const double g = bn.gamma[c];
    if (g == 0.0) {
      ft.theta[c] = 0.0;
      ft.polarity[c] = bn.beta[c] > 0.0 ? Polarity::constant_one
                                        : Polarity::constant_zero;
      continue;
    }
    const double theta =
        bn.mean[c] - bn.beta[c] * std::sqrt(bn.var[c] + bn.epsilon) / g;
    ft.theta[c] = theta;
    const double s_star = (theta - pre_shift) / pre_scale;
    if (g > 0.0) {
      ft.polarity[c] = Polarity::greater;
      // Smallest integer s with bit 1; the formula lands within rounding
      // error of the true boundary, then exact evaluation settles it.
      long k = std::isfinite(s_star)
                   ? std::clamp(static_cast<long>(std::floor(s_star)) + 1,
                                s_min, s_max + 1)
                   : s_max + 1;
      while (k > s_min && bit_of(c, k - 1)) --k;
      while (k <= s_max && !bit_of(c, k)) ++k;
      ft.cutoff[c] = k;  // s_max + 1 means never
    } else {
      ft.polarity[c] = Polarity::less;
      long k = std::isfinite(s_star)
                   ? std::clamp(static_cast<long>(std::floor(s_star)),
                                s_min - 1, s_max)
                   : s_min - 1;
      while (k < s_max && bit_of(c, k + 1)) ++k;
      while (k >= s_min && !bit_of(c, k)) --k;
      ft.cutoff[c] = k;  // s_min - 1 means never
    }
  }
  return ft;
}

RealTensor softmax_pixels(const RealTensor& logits) {
  const int C = logits.channels;
  RealTensor out(logits.height, logits.width, C);
  const size_t pixels = static_cast<size_t>(logits.height) * logits.width;
  for (size_t p = 0; p < pixels; ++p) {
    const double* in = &logits.values[p * C];
    double* o = &out.values[p * C];
    double m = in[0];
    for (int c = 1; c < C; ++c) m = std::max(m, in[c]);
    double sum = 0;
    for (int c = 0; c < C; ++c) {
      o[c] = std::exp(in[c] - m);
      sum += o[c];
    }
    for (int c = 0; c < C; ++c) o[c] /= sum;
  }
  return out;
}

}  // namespace bced
