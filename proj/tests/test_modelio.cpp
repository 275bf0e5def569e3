#include "doctest.h"

#include <stdexcept>

#include <cstring>
#include <filesystem>

#include "bced/modelio.hpp"
#include "bced/pgm.hpp"
#include "bced/rng.hpp"
#include "bced/trainer.hpp"

using namespace bced;

namespace {

namespace fs = std::filesystem;

NetConfig small_config() {
  NetConfig cfg;
  cfg.input_h = 8;
  cfg.input_w = 8;
  cfg.num_classes = 4;
  cfg.blocks = {
      {BlockKind::adapter, 3, 3, 3, false, false, -1},
      {BlockKind::encoder, 3, 3, 70, true, false, -1},  // crosses a word boundary
      {BlockKind::decoder, 3, 3, 5, false, true, 1},
      {BlockKind::classifier_softmax, 1, 1, 4, false, false, -1},
  };
  return cfg;
}

std::string tmp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

bool nets_equal(const Network& a, const Network& b) {
  if (a.config.to_text() != b.config.to_text()) return false;
  if (a.block0.weights != b.block0.weights) return false;
  if (a.block0.bn.gamma != b.block0.bn.gamma) return false;
  for (size_t i = 0; i < a.bin_blocks.size(); ++i) {
    for (size_t f = 0; f < a.bin_blocks[i].weights.size(); ++f)
      if (a.bin_blocks[i].weights[f].words != b.bin_blocks[i].weights[f].words)
        return false;
    if (a.bin_blocks[i].bn.gamma != b.bin_blocks[i].bn.gamma) return false;
    if (a.bin_blocks[i].bn.beta != b.bin_blocks[i].bn.beta) return false;
    if (a.bin_blocks[i].bn.mean != b.bin_blocks[i].bn.mean) return false;
    if (a.bin_blocks[i].bn.var != b.bin_blocks[i].bn.var) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("save/load round-trips and rewrites byte-identically") {
  Network net = build(small_config(), 5);
  Rng rng(5);
  for (BinConvLayer& l : net.bin_blocks)
    for (int c = 0; c < l.bn.channels(); ++c) {
      l.bn.gamma[c] = rng.uniform(-2, 2);
      l.bn.mean[c] = rng.uniform(-3, 3);
    }
  net.refresh_folded();  // BN changed; recompute thresholds before saving

  std::string p1 = tmp_path("bced_m1.bin"), p2 = tmp_path("bced_m2.bin");
  save_model(net, p1);
  Network back = load_model(p1);
  CHECK(nets_equal(net, back));

  save_model(back, p2);
  CHECK(read_file(p1) == read_file(p2));

  // packed caches are rebuilt on load: forwards agree exactly
  RealTensor img(8, 8, 1);
  for (double& v : img.values) v = rng.uniform();
  CHECK(forward(net, img, Mode::packed_folded).values ==
        forward(back, img, Mode::packed_folded).values);

  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("corruption, truncation and bad magic are distinct errors") {
  Network net = build(small_config(), 6);
  std::string path = tmp_path("bced_m3.bin");
  save_model(net, path);
  std::string good = read_file(path);

  std::string flipped = good;
  flipped[good.size() / 2] ^= 0x40;
  write_file_atomic(path, flipped);
  CHECK_THROWS_WITH_AS(load_model(path), "model file checksum mismatch",
                       std::runtime_error);

  write_file_atomic(path, good.substr(0, 10));
  CHECK_THROWS_WITH_AS(load_model(path), "model file truncated",
                       std::runtime_error);

  std::string wrong_magic = good;
  wrong_magic[0] = 'X';
  // keep the checksum consistent so the magic check is what fires
  uint64_t sum = fnv1a64(wrong_magic.data(), wrong_magic.size() - 8);
  std::memcpy(wrong_magic.data() + wrong_magic.size() - 8, &sum, 8);
  write_file_atomic(path, wrong_magic);
  CHECK_THROWS_WITH_AS(load_model(path), "not a model file (bad magic)",
                       std::runtime_error);

  fs::remove(path);
}

TEST_CASE("latent sidecar restores training state") {
  Network net = build(small_config(), 8);
  Rng rng(8);
  for (auto& lat : net.latent)
    for (double& v : lat) v = rng.uniform(-1, 1);
  net.refresh_packed();
  net.refresh_folded();

  std::string mp = tmp_path("bced_m4.bin"), lp = tmp_path("bced_m4.latent");
  save_model(net, mp);
  save_latent(net, 17, lp);

  Network back = load_model(mp);
  int epochs = load_latent(back, lp);
  CHECK(epochs == 17);
  CHECK(back.latent == net.latent);

  // mismatched config is rejected
  Network other = build(NetConfig::from_text(
      "input 8 8\nclasses 4\n"
      "block adapter 3x3 3\nblock encoder 3x3 70 pool\n"
      "block decoder 3x3 6 unpool=1\nblock classifier_softmax 1x1 4\n"), 1);
  CHECK_THROWS_AS(load_latent(other, lp), std::runtime_error);

  fs::remove(mp);
  fs::remove(lp);
}

TEST_CASE("size report for the default architecture") {
  Network net = build(default_config(), 1);
  SizeReport r = size_report(net);
  CHECK(r.binary_param_count == 17085952u);
  CHECK(r.binary_packed_bytes == 2135744u);
  // 64 fp weights per filter * 9 taps... block0: 3*3*1*64 doubles
  CHECK(r.real_param_count == 576u);
  CHECK(r.reduction_ratio > 0.96);
  // hypothetical fp32 footprint stays in the expected tens-of-MB range
  CHECK(r.hypothetical_fp32_bytes / (1024.0 * 1024.0) ==
        doctest::Approx(68.4).epsilon(0.05));
}

TEST_CASE("a 1x1x64-channel filter packs to exactly 8 bytes") {
  NetConfig cfg;
  cfg.input_h = 4;
  cfg.input_w = 4;
  cfg.num_classes = 2;
  cfg.blocks = {
      {BlockKind::adapter, 3, 3, 64, false, false, -1},
      {BlockKind::classifier_softmax, 1, 1, 2, false, false, -1},
  };
  Network net = build(cfg, 1);
  SizeReport r = size_report(net);
  CHECK(r.binary_packed_bytes == 2u * 8u);  // two filters, one word each
}
