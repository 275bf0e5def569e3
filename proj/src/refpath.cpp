#include "bced/refpath.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace bced {

RealTensor pm_conv(const RealTensor& input_pm, const std::vector<double>& weights,
                   int kernel_h, int kernel_w, int in_channels, int out_channels,
                   double pad_value) {
  if (input_pm.channels != in_channels)
    throw std::invalid_argument("pm_conv: channel mismatch");
  if (kernel_h % 2 != 1 || kernel_w % 2 != 1)
    throw std::invalid_argument("pm_conv: kernel must be odd");
  const int H = input_pm.height, W = input_pm.width;
  const int ph = (kernel_h - 1) / 2, pw = (kernel_w - 1) / 2;
  RealTensor out(H, W, out_channels);
  for (int f = 0; f < out_channels; ++f)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int ky = 0; ky < kernel_h; ++ky)
          for (int kx = 0; kx < kernel_w; ++kx)
            for (int c = 0; c < in_channels; ++c) {
              int sy = y + ky - ph, sx = x + kx - pw;
              double v = (sy < 0 || sy >= H || sx < 0 || sx >= W)
                             ? pad_value
                             : input_pm.at(sy, sx, c);
              acc += v * weights[((static_cast<size_t>(f) * kernel_h + ky) *
                                      kernel_w + kx) * in_channels + c];
            }
        out.at(y, x, f) = acc;
      }
  return out;
}

RealTensor popcount_to_pm(const RealTensor& s, long kernel_volume) {
  RealTensor out = s;
  for (double& v : out.values) v = 2.0 * v - static_cast<double>(kernel_volume);
  return out;
}

namespace {

RealTensor bn_ref(const RealTensor& s, const BNParams& bn) {
  RealTensor out(s.height, s.width, s.channels);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      for (int c = 0; c < s.channels; ++c)
        out.at(y, x, c) = bn_apply(bn, c, s.at(y, x, c));
  return out;
}

RealTensor binarize01(const RealTensor& a) {
  RealTensor out(a.height, a.width, a.channels);
  for (size_t i = 0; i < a.values.size(); ++i)
    out.values[i] = a.values[i] > 0.0 ? 1.0 : 0.0;
  return out;
}

RealTensor to_pm_ref(const RealTensor& b01) {
  RealTensor out = b01;
  for (double& v : out.values) v = 2.0 * v - 1.0;
  return out;
}

std::pair<RealTensor, PoolIndexMap> pool_ref(const RealTensor& a) {
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

RealTensor unpool_ref(const RealTensor& a, const PoolIndexMap& idx) {
  RealTensor out(a.height * 2, a.width * 2, a.channels);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < a.channels; ++c) {
        uint8_t k = idx.at(y, x, c);
        out.at(2 * y + (k >> 1), 2 * x + (k & 1), c) = a.at(y, x, c);
      }
  return out;
}

RealTensor softmax_ref(const RealTensor& logits) {
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

}  // namespace

RealTensor reference_forward(const Network& net, const RealTensor& image,
                             ReferenceTrace* trace) {
  const NetConfig& cfg = net.config;
  if (image.height != cfg.input_h || image.width != cfg.input_w ||
      image.channels != 1)
    throw std::invalid_argument("reference_forward: image dims mismatch");

  RealTensor s0 = pm_conv(image, net.block0.weights, net.block0.kernel_h,
                          net.block0.kernel_w, 1, net.block0.out_channels, 0.0);
  RealTensor a0 = bn_ref(s0, net.block0.bn);
  RealTensor act = binarize01(a0);
  if (trace) {
    trace->pre_bn.push_back(s0);
    trace->post_bn.push_back(a0);
    trace->activations.push_back(act);
  }

  std::map<int, PoolIndexMap> pool_by_block;
  for (size_t i = 0; i < net.bin_blocks.size(); ++i) {
    const int block_id = static_cast<int>(i) + 1;
    const BlockSpec& spec = cfg.blocks[block_id];
    const BinConvLayer& layer = net.bin_blocks[i];

    if (spec.has_unpool) {
      auto it = pool_by_block.find(spec.unpool_source);
      if (it == pool_by_block.end())
        throw std::invalid_argument("reference_forward: missing unpool source");
      act = unpool_ref(act, it->second);
    }

    RealTensor s = pm_conv(to_pm_ref(act), net.pm_weights[i], layer.kernel_h,
                           layer.kernel_w, layer.in_channels,
                           layer.out_channels, -1.0);
    RealTensor a = bn_ref(s, layer.bn);

    if (spec.kind == BlockKind::classifier_softmax) {
      if (trace) {
        trace->pre_bn.push_back(s);
        trace->logits = a;
      }
      return softmax_ref(a);
    }

    if (spec.has_pool) {
      auto [pooled, idx] = pool_ref(a);
      pool_by_block.emplace(block_id, idx);
      if (trace) trace->pool_indices.push_back(idx);
      a = std::move(pooled);
    }
    act = binarize01(a);
    if (trace) {
      trace->pre_bn.push_back(s);
      trace->post_bn.push_back(a);
      trace->activations.push_back(act);
    }
  }
  throw std::logic_error("reference_forward: no classifier_softmax block");
}

}  // namespace bced
