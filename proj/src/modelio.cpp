#include "bced/modelio.hpp"

#include <cstring>
#include <stdexcept>

#include "bced/pgm.hpp"

namespace bced {

namespace {

constexpr char kMagic[4] = {'B', 'C', 'E', 'D'};
constexpr uint32_t kVersion = 1;

enum LayerKind : uint8_t { kReal = 0, kBinary = 1, kLatent = 2 };

void append_u32(std::string& s, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  s.append(b, 4);
}

void append_u64(std::string& s, uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  s.append(b, 8);
}

void append_f64(std::string& s, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  s.append(b, 8);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size())
      throw std::runtime_error("model file truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void append_bn(std::string& s, const BNParams& bn) {
  append_f64(s, bn.epsilon);
  for (double v : bn.gamma) append_f64(s, v);
  for (double v : bn.beta) append_f64(s, v);
  for (double v : bn.mean) append_f64(s, v);
  for (double v : bn.var) append_f64(s, v);
}

BNParams read_bn(Reader& r, int channels) {
  BNParams bn(channels);
  bn.epsilon = r.f64();
  for (double& v : bn.gamma) v = r.f64();
  for (double& v : bn.beta) v = r.f64();
  for (double& v : bn.mean) v = r.f64();
  for (double& v : bn.var) v = r.f64();
  return bn;
}

std::string serialize(const Network& net, bool latent_payload,
                      int trained_epochs) {
  std::string s;
  s.append(kMagic, 4);
  append_u32(s, kVersion);
  if (latent_payload) append_u32(s, static_cast<uint32_t>(trained_epochs));
  const std::string cfg = net.config.to_text();
  append_u32(s, static_cast<uint32_t>(cfg.size()));
  s.append(cfg);
  append_u32(s, static_cast<uint32_t>(1 + net.bin_blocks.size()));

  // Block 0.
  s.push_back(static_cast<char>(kReal));
  append_u32(s, net.block0.kernel_h);
  append_u32(s, net.block0.kernel_w);
  append_u32(s, net.block0.in_channels);
  append_u32(s, net.block0.out_channels);
  for (double v : net.block0.weights) append_f64(s, v);
  append_bn(s, net.block0.bn);

  for (size_t i = 0; i < net.bin_blocks.size(); ++i) {
    const BinConvLayer& l = net.bin_blocks[i];
    s.push_back(static_cast<char>(latent_payload ? kLatent : kBinary));
    append_u32(s, l.kernel_h);
    append_u32(s, l.kernel_w);
    append_u32(s, l.in_channels);
    append_u32(s, l.out_channels);
    if (latent_payload) {
      for (double v : net.latent[i]) append_f64(s, v);
    } else {
      for (const BitTensor& wt : l.weights)
        for (uint64_t w : wt.words) append_u64(s, w);
    }
    append_bn(s, l.bn);
  }

  append_u64(s, fnv1a64(s.data(), s.size()));
  return s;
}

}  // namespace

uint64_t fnv1a64(const void* data, size_t len) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

size_t save_model(const Network& net, const std::string& path) {
  std::string bytes = serialize(net, false, 0);
  write_file_atomic(path, bytes);
  return bytes.size();
}

size_t save_latent(const Network& net, int trained_epochs,
                   const std::string& path) {
  std::string bytes = serialize(net, true, trained_epochs);
  write_file_atomic(path, bytes);
  return bytes.size();
}

namespace {

// Shared parse; latent files carry the extra epoch counter and kLatent
// payloads, model files carry packed words.
struct Parsed {
  Network net;
  int trained_epochs = 0;
  bool latent = false;
};

Parsed parse(const std::string& buf, bool expect_latent) {
  if (buf.size() < 16) throw std::runtime_error("model file truncated");
  uint64_t check;
  std::memcpy(&check, buf.data() + buf.size() - 8, 8);
  if (fnv1a64(buf.data(), buf.size() - 8) != check)
    throw std::runtime_error("model file checksum mismatch");

  Reader r{buf};
  if (r.bytes(4) != std::string(kMagic, 4))
    throw std::runtime_error("not a model file (bad magic)");
  if (uint32_t v = r.u32(); v != kVersion)
    throw std::runtime_error("model file version mismatch: " +
                             std::to_string(v));
  Parsed out;
  out.latent = expect_latent;
  if (expect_latent) out.trained_epochs = static_cast<int>(r.u32());

  const uint32_t cfg_len = r.u32();
  NetConfig cfg = NetConfig::from_text(r.bytes(cfg_len));
  const uint32_t layer_count = r.u32();
  if (layer_count != cfg.blocks.size())
    throw std::runtime_error("model file layer count disagrees with config");

  Network& net = out.net;
  net.config = cfg;

  {
    if (r.bytes(1)[0] != kReal)
      throw std::runtime_error("model file: first layer must be real");
    RealConvLayer& l = net.block0;
    l.kernel_h = static_cast<int>(r.u32());
    l.kernel_w = static_cast<int>(r.u32());
    l.in_channels = static_cast<int>(r.u32());
    l.out_channels = static_cast<int>(r.u32());
    l.pad = (l.kernel_h - 1) / 2;
    l.weights.resize(static_cast<size_t>(l.kernel_h) * l.kernel_w *
                     l.in_channels * l.out_channels);
    for (double& v : l.weights) v = r.f64();
    l.bn = read_bn(r, l.out_channels);
  }

  const uint8_t want_kind = expect_latent ? kLatent : kBinary;
  for (size_t i = 1; i < layer_count; ++i) {
    if (static_cast<uint8_t>(r.bytes(1)[0]) != want_kind)
      throw std::runtime_error("model file: unexpected layer kind");
    BinConvLayer l;
    l.kernel_h = static_cast<int>(r.u32());
    l.kernel_w = static_cast<int>(r.u32());
    l.in_channels = static_cast<int>(r.u32());
    l.out_channels = static_cast<int>(r.u32());
    l.pad = (l.kernel_h - 1) / 2;
    std::vector<double> lat(static_cast<size_t>(l.kernel_h) * l.kernel_w *
                            l.in_channels * l.out_channels);
    if (expect_latent) {
      for (double& v : lat) v = r.f64();
    } else {
      BitTensor proto(l.kernel_h, l.kernel_w, l.in_channels);
      l.weights.assign(l.out_channels, proto);
      size_t k = 0;
      for (int f = 0; f < l.out_channels; ++f) {
        BitTensor& wt = l.weights[f];
        for (uint64_t& w : wt.words) w = r.u64();
        for (int ky = 0; ky < l.kernel_h; ++ky)
          for (int kx = 0; kx < l.kernel_w; ++kx)
            for (int c = 0; c < l.in_channels; ++c, ++k)
              lat[k] = wt.bit(ky, kx, c) ? 1.0 : -1.0;
      }
    }
    l.bn = read_bn(r, l.out_channels);
    net.bin_blocks.push_back(std::move(l));
    net.latent.push_back(std::move(lat));
  }

  if (r.pos + 8 != buf.size())
    throw std::runtime_error("model file has trailing bytes");
  net.refresh_packed();
  net.refresh_folded();
  return out;
}

}  // namespace

Network load_model(const std::string& path) {
  return parse(read_file(path), false).net;
}

int load_latent(Network& net, const std::string& path) {
  Parsed p = parse(read_file(path), true);
  if (p.net.config.to_text() != net.config.to_text())
    throw std::runtime_error("latent sidecar config disagrees with model");
  net.latent = std::move(p.net.latent);
  net.refresh_packed();
  net.refresh_folded();
  return p.trained_epochs;
}

SizeReport size_report(const Network& net) {
  SizeReport r;
  for (const BinConvLayer& l : net.bin_blocks) {
    r.binary_param_count +=
        static_cast<uint64_t>(l.kernel_volume()) * l.out_channels;
    const uint64_t wpp = (l.in_channels + 63) / 64;
    r.binary_packed_bytes += static_cast<uint64_t>(l.out_channels) *
                             l.kernel_h * l.kernel_w * wpp * 8;
  }
  r.real_param_count = net.block0.weights.size();
  r.real_bytes = r.real_param_count * 8;
  r.bn_param_count = static_cast<uint64_t>(net.block0.bn.channels()) * 4;
  for (const BinConvLayer& l : net.bin_blocks)
    r.bn_param_count += static_cast<uint64_t>(l.bn.channels()) * 4;
  r.bn_param_bytes = r.bn_param_count * 8;
  r.total_bytes = r.binary_packed_bytes + r.real_bytes + r.bn_param_bytes;
  r.hypothetical_fp32_bytes =
      (r.binary_param_count + r.real_param_count + r.bn_param_count) * 4;
  r.reduction_ratio = 1.0 - static_cast<double>(r.total_bytes) /
                                static_cast<double>(r.hypothetical_fp32_bytes);
  return r;
}

}  // namespace bced
