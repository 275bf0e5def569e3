#include "bced/netgraph.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "bced/rng.hpp"

namespace bced {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

const char* kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::adapter: return "adapter";
    case BlockKind::encoder: return "encoder";
    case BlockKind::decoder: return "decoder";
    case BlockKind::classifier: return "classifier";
    default: return "classifier_softmax";
  }
}

BlockKind kind_from_name(const std::string& s) {
  if (s == "adapter") return BlockKind::adapter;
  if (s == "encoder") return BlockKind::encoder;
  if (s == "decoder") return BlockKind::decoder;
  if (s == "classifier") return BlockKind::classifier;
  if (s == "classifier_softmax") return BlockKind::classifier_softmax;
  throw std::invalid_argument("unknown block kind: " + s);
}

}  // namespace

void NetConfig::validate() const {
  require(input_h >= 1 && input_w >= 1, "config: input dims must be positive");
  require(num_classes >= 2, "config: need at least two classes");
  require(!blocks.empty(), "config: no blocks");
  require(blocks.front().kind == BlockKind::adapter,
          "config: first block must be the adapter");
  require(blocks.back().kind == BlockKind::classifier_softmax,
          "config: last block must be classifier_softmax");
  require(blocks.back().out_channels == num_classes,
          "config: final block must emit num_classes channels");

  std::vector<int> encoders;  // block ids with a pool
  std::vector<int> decoders;  // block ids with an unpool
  for (size_t i = 0; i < blocks.size(); ++i) {
    const BlockSpec& b = blocks[i];
    require(b.out_channels >= 1, "config: out_channels must be positive");
    require(b.kernel_h % 2 == 1 && b.kernel_w % 2 == 1,
            "config: kernels must be odd");
    if (b.kind == BlockKind::adapter)
      require(i == 0, "config: adapter must appear exactly once, first");
    if (b.kind == BlockKind::classifier ||
        b.kind == BlockKind::classifier_softmax)
      require(b.kernel_h == 1 && b.kernel_w == 1,
              "config: classifier blocks use 1x1 kernels");
    require(!b.has_pool || b.kind == BlockKind::encoder,
            "config: only encoder blocks pool");
    require(!b.has_unpool || b.kind == BlockKind::decoder,
            "config: only decoder blocks unpool");
    if (b.has_pool) encoders.push_back(static_cast<int>(i));
    if (b.has_unpool) decoders.push_back(static_cast<int>(i));
  }
  require(encoders.size() == decoders.size(),
          "config: encoder pool count must equal decoder unpool count");
  for (size_t j = 0; j < decoders.size(); ++j) {
    int want = encoders[encoders.size() - 1 - j];
    require(blocks[decoders[j]].unpool_source == want,
            "config: unpool sources must mirror encoder order");
    // pool indices are per-channel, so the decoder's input must carry
    // exactly the channels its source encoder pooled
    require(blocks[decoders[j] - 1].out_channels == blocks[want].out_channels,
            "config: unpool input channels must match the source encoder");
  }
  int shift = static_cast<int>(encoders.size());
  require(input_h % (1 << shift) == 0 && input_w % (1 << shift) == 0,
          "config: input dims must be divisible by 2^pools");
  require(input_h >> shift >= 1 && input_w >> shift >= 1,
          "config: pooled dims collapse to zero");
}

std::string NetConfig::to_text() const {
  std::ostringstream os;
  os << "input " << input_h << " " << input_w << "\n";
  os << "classes " << num_classes << "\n";
  for (const BlockSpec& b : blocks) {
    os << "block " << kind_name(b.kind) << " " << b.kernel_h << "x"
       << b.kernel_w << " " << b.out_channels;
    if (b.has_pool) os << " pool";
    if (b.has_unpool) os << " unpool=" << b.unpool_source;
    os << "\n";
  }
  return os.str();
}

NetConfig NetConfig::from_text(const std::string& text) {
  NetConfig cfg;
  cfg.blocks.clear();
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (auto pos = line.find('#'); pos != std::string::npos) line.resize(pos);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    if (tok == "input") {
      require(static_cast<bool>(ls >> cfg.input_h >> cfg.input_w),
              "config text: bad input line");
    } else if (tok == "classes") {
      require(static_cast<bool>(ls >> cfg.num_classes),
              "config text: bad classes line");
    } else if (tok == "block") {
      BlockSpec b;
      std::string kind, kernel;
      require(static_cast<bool>(ls >> kind >> kernel >> b.out_channels),
              "config text: bad block line");
      b.kind = kind_from_name(kind);
      auto xpos = kernel.find('x');
      require(xpos != std::string::npos, "config text: kernel must be HxW");
      b.kernel_h = std::stoi(kernel.substr(0, xpos));
      b.kernel_w = std::stoi(kernel.substr(xpos + 1));
      std::string flag;
      while (ls >> flag) {
        if (flag == "pool") {
          b.has_pool = true;
        } else if (flag.rfind("unpool=", 0) == 0) {
          b.has_unpool = true;
          b.unpool_source = std::stoi(flag.substr(7));
        } else {
          throw std::invalid_argument("config text: unknown flag " + flag);
        }
      }
      cfg.blocks.push_back(b);
    } else {
      throw std::invalid_argument("config text: unknown directive " + tok);
    }
  }
  cfg.validate();
  return cfg;
}

NetConfig default_config() {
  NetConfig cfg;
  cfg.blocks = {
      {BlockKind::adapter, 3, 3, 64, false, false, -1},
      {BlockKind::encoder, 3, 3, 512, true, false, -1},
      {BlockKind::encoder, 3, 3, 512, true, false, -1},
      {BlockKind::encoder, 3, 3, 512, true, false, -1},
      {BlockKind::encoder, 3, 3, 512, true, false, -1},
      {BlockKind::decoder, 3, 3, 512, false, true, 4},
      {BlockKind::decoder, 3, 3, 512, false, true, 3},
      {BlockKind::decoder, 3, 3, 512, false, true, 2},
      {BlockKind::decoder, 3, 3, 512, false, true, 1},
      {BlockKind::classifier, 1, 1, 512, false, false, -1},
      {BlockKind::classifier_softmax, 1, 1, 27, false, false, -1},
  };
  cfg.validate();
  return cfg;
}

void Network::refresh_packed() {
  pm_weights.resize(bin_blocks.size());
  for (size_t i = 0; i < bin_blocks.size(); ++i) {
    BinConvLayer& l = bin_blocks[i];
    const std::vector<double>& lat = latent[i];
    const size_t per_filter =
        static_cast<size_t>(l.kernel_h) * l.kernel_w * l.in_channels;
    l.weights.assign(l.out_channels,
                     BitTensor(l.kernel_h, l.kernel_w, l.in_channels));
    std::vector<double>& pm = pm_weights[i];
    pm.resize(lat.size());
    for (int f = 0; f < l.out_channels; ++f) {
      BitTensor& wt = l.weights[f];
      size_t base = f * per_filter, k = 0;
      for (int ky = 0; ky < l.kernel_h; ++ky)
        for (int kx = 0; kx < l.kernel_w; ++kx)
          for (int c = 0; c < l.in_channels; ++c, ++k) {
            bool bit = lat[base + k] > 0.0;
            if (bit) wt.set_bit(ky, kx, c, true);
            pm[base + k] = bit ? 1.0 : -1.0;
          }
    }
  }
}

void Network::refresh_folded() {
  folded.resize(bin_blocks.size());
  for (size_t i = 0; i < bin_blocks.size(); ++i) {
    const BinConvLayer& l = bin_blocks[i];
    if (config.blocks[i + 1].kind == BlockKind::classifier_softmax) {
      folded[i] = FoldedThreshold{};
      continue;
    }
    const long n = l.kernel_volume();
    // Popcount s in [0, n] feeds BN as the +-1 sum 2s - n.
    folded[i] = fold_bn_binrz(l.bn, 0, n, 2.0, -static_cast<double>(n));
  }
  folded_fresh = true;
}

size_t Network::binary_param_count() const {
  size_t total = 0;
  for (const BinConvLayer& l : bin_blocks)
    total += static_cast<size_t>(l.kernel_volume()) * l.out_channels;
  return total;
}

Network build(const NetConfig& config, uint64_t seed) {
  config.validate();
  Network net;
  net.config = config;
  Rng rng(seed);

  const BlockSpec& b0 = config.blocks[0];
  net.block0.kernel_h = b0.kernel_h;
  net.block0.kernel_w = b0.kernel_w;
  net.block0.in_channels = 1;
  net.block0.out_channels = b0.out_channels;
  net.block0.pad = (b0.kernel_h - 1) / 2;
  const size_t w0 = static_cast<size_t>(b0.kernel_h) * b0.kernel_w * b0.out_channels;
  net.block0.weights.resize(w0);
  const double scale0 =
      std::sqrt(3.0 / (static_cast<double>(b0.kernel_h) * b0.kernel_w));
  for (double& w : net.block0.weights) w = rng.uniform(-scale0, scale0);
  net.block0.bn = BNParams(b0.out_channels);

  int in_c = b0.out_channels;
  for (size_t i = 1; i < config.blocks.size(); ++i) {
    const BlockSpec& b = config.blocks[i];
    BinConvLayer l;
    l.kernel_h = b.kernel_h;
    l.kernel_w = b.kernel_w;
    l.in_channels = in_c;
    l.out_channels = b.out_channels;
    l.pad = (b.kernel_h - 1) / 2;
    l.bn = BNParams(b.out_channels);
    net.bin_blocks.push_back(std::move(l));
    std::vector<double> lat(static_cast<size_t>(b.kernel_h) * b.kernel_w *
                            in_c * b.out_channels);
    for (double& v : lat) v = rng.uniform(-0.1, 0.1);
    net.latent.push_back(std::move(lat));
    in_c = b.out_channels;
  }
  net.refresh_packed();
  net.refresh_folded();
  return net;
}

namespace {

BitTensor unpool_bits(const BitTensor& a, const PoolIndexMap& idx) {
  require(a.height == idx.height && a.width == idx.width &&
              a.channels == idx.channels,
          "unpool: dim mismatch");
  BitTensor out(a.height * 2, a.width * 2, a.channels);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < a.channels; ++c)
        if (a.bit(y, x, c)) {
          uint8_t k = idx.at(y, x, c);
          out.set_bit(2 * y + (k >> 1), 2 * x + (k & 1), c, true);
        }
  return out;
}

// Pooling of raw popcounts in folded mode: per-channel direction follows the
// sign of gamma so the argmax corner matches pooling after normalization.
std::pair<RealTensor, PoolIndexMap> pool_folded(const RealTensor& s,
                                                const FoldedThreshold& ft) {
  const int OH = s.height / 2, OW = s.width / 2, C = s.channels;
  RealTensor out(OH, OW, C);
  PoolIndexMap idx(OH, OW, C);
  for (int y = 0; y < OH; ++y)
    for (int x = 0; x < OW; ++x)
      for (int c = 0; c < C; ++c) {
        const double corners[4] = {
            s.at(2 * y, 2 * x, c), s.at(2 * y, 2 * x + 1, c),
            s.at(2 * y + 1, 2 * x, c), s.at(2 * y + 1, 2 * x + 1, c)};
        int best = 0;
        if (ft.polarity[c] == Polarity::greater) {
          for (int k = 1; k < 4; ++k)
            if (corners[k] > corners[best]) best = k;
        } else if (ft.polarity[c] == Polarity::less) {
          for (int k = 1; k < 4; ++k)
            if (corners[k] < corners[best]) best = k;
        }  // constant: every corner normalizes to beta, corner 0 wins the tie
        out.at(y, x, c) = corners[best];
        idx.at(y, x, c) = static_cast<uint8_t>(best);
      }
  return {std::move(out), std::move(idx)};
}

BitTensor folded_bits(const RealTensor& s, const FoldedThreshold& ft) {
  BitTensor b(s.height, s.width, s.channels);
  size_t vi = 0;
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      uint64_t* px = b.pixel(y, x);
      for (int c = 0; c < s.channels; ++c, ++vi)
        if (ft.bit(c, static_cast<long>(s.values[vi])))
          px[c >> 6] |= uint64_t(1) << (c & 63);
    }
  return b;
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double lap() {
    auto t1 = std::chrono::steady_clock::now();
    double s = std::chrono::duration<double>(t1 - t0).count();
    t0 = t1;
    return s;
  }
};

}  // namespace

RealTensor forward(const Network& net, const RealTensor& image, Mode mode,
                   Intermediates* keep, BlockTimes* times) {
  const NetConfig& cfg = net.config;
  require(image.height == cfg.input_h && image.width == cfg.input_w &&
              image.channels == 1,
          "forward: image dims do not match config");
  if (mode == Mode::packed_folded && !net.folded_fresh)
    throw std::runtime_error(
        "forward: folded thresholds are stale; call refresh_folded()");

  Timer timer;
  if (times) times->seconds.assign(cfg.blocks.size(), 0.0);

  // Block 0: full-precision adapter, identical in every mode.
  RealTensor s0 = conv2d_real(image, net.block0);
  RealTensor a0 = batchnorm_infer(s0, net.block0.bn);
  BitTensor bits = binarize(a0);
  if (times) times->seconds[0] = timer.lap();
  if (keep) {
    keep->activations.clear();
    keep->pool_indices.clear();
    keep->activations.push_back(bits);
  }

  std::map<int, PoolIndexMap> pool_by_block;
  int h = cfg.input_h, w = cfg.input_w;
  RealTensor salience;

  for (size_t i = 0; i < net.bin_blocks.size(); ++i) {
    const int block_id = static_cast<int>(i) + 1;
    const BlockSpec& spec = cfg.blocks[block_id];
    const BinConvLayer& layer = net.bin_blocks[i];
    const long n = layer.kernel_volume();

    if (spec.has_unpool) {
      auto it = pool_by_block.find(spec.unpool_source);
      require(it != pool_by_block.end(), "forward: missing unpool source");
      bits = unpool_bits(bits, it->second);
      h *= 2;
      w *= 2;
    }
    require(bits.height == h && bits.width == w, "forward: shape chain broken");
    require(bits.channels == layer.in_channels, "forward: channel chain broken");

    if (spec.kind == BlockKind::classifier_softmax) {
      RealTensor s_pm;
      if (mode == Mode::real) {
        s_pm = conv2d_pad(to_pm(bits), net.pm_weights[i].data(), layer.kernel_h,
                          layer.kernel_w, layer.in_channels, layer.out_channels,
                          -1.0);
      } else {
        s_pm = binconv(bits, layer);
        for (double& v : s_pm.values) v = 2.0 * v - static_cast<double>(n);
      }
      RealTensor logits = batchnorm_infer(s_pm, layer.bn);
      salience = softmax_pixels(logits);
      if (keep) keep->logits = std::move(logits);
      if (times) times->seconds[block_id] = timer.lap();
      break;
    }

    if (mode == Mode::packed_folded) {
      RealTensor s = binconv(bits, layer);
      const FoldedThreshold& ft = net.folded[i];
      if (spec.has_pool) {
        auto [pooled, idx] = pool_folded(s, ft);
        bits = folded_bits(pooled, ft);
        pool_by_block.emplace(block_id, idx);
        if (keep) keep->pool_indices.push_back(std::move(idx));
        h /= 2;
        w /= 2;
      } else {
        bits = folded_bits(s, ft);
      }
    } else {
      RealTensor s_pm;
      if (mode == Mode::real) {
        s_pm = conv2d_pad(to_pm(bits), net.pm_weights[i].data(), layer.kernel_h,
                          layer.kernel_w, layer.in_channels, layer.out_channels,
                          -1.0);
      } else {
        s_pm = binconv(bits, layer);
        for (double& v : s_pm.values) v = 2.0 * v - static_cast<double>(n);
      }
      RealTensor a = batchnorm_infer(s_pm, layer.bn);
      if (spec.has_pool) {
        auto [pooled, idx] = maxpool2x2(a);
        bits = binarize(pooled);
        pool_by_block.emplace(block_id, idx);
        if (keep) keep->pool_indices.push_back(std::move(idx));
        h /= 2;
        w /= 2;
      } else {
        bits = binarize(a);
      }
    }
    if (keep) keep->activations.push_back(bits);
    if (times) times->seconds[block_id] = timer.lap();
  }
  return salience;
}

std::vector<uint8_t> predict_labels(const RealTensor& salience) {
  const int C = salience.channels;
  std::vector<uint8_t> labels(static_cast<size_t>(salience.height) *
                              salience.width);
  const size_t pixels = labels.size();
  for (size_t p = 0; p < pixels; ++p) {
    const double* v = &salience.values[p * C];
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (v[c] > v[best]) best = c;
    labels[p] = static_cast<uint8_t>(best);
  }
  return labels;
}

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::real: return "real";
    case Mode::packed_unfolded: return "packed_unfolded";
    default: return "packed_folded";
  }
}

Mode mode_from_name(const std::string& name) {
  if (name == "real") return Mode::real;
  if (name == "packed_unfolded") return Mode::packed_unfolded;
  if (name == "packed_folded") return Mode::packed_folded;
  throw std::invalid_argument("unknown mode: " + name);
}

}  // namespace bced
