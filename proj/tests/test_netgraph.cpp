#include "doctest.h"

#include <stdexcept>

#include "bced/netgraph.hpp"
#include "bced/rng.hpp"

using namespace bced;

namespace {

// Small all-feature config: pool/unpool pair, classifier head.
NetConfig tiny_config(int h = 8, int w = 16) {
  NetConfig cfg;
  cfg.input_h = h;
  cfg.input_w = w;
  cfg.num_classes = 5;
  cfg.blocks = {
      {BlockKind::adapter, 3, 3, 4, false, false, -1},
      {BlockKind::encoder, 3, 3, 6, true, false, -1},
      {BlockKind::encoder, 3, 3, 6, true, false, -1},
      {BlockKind::decoder, 3, 3, 6, false, true, 2},
      {BlockKind::decoder, 3, 3, 6, false, true, 1},
      {BlockKind::classifier, 1, 1, 6, false, false, -1},
      {BlockKind::classifier_softmax, 1, 1, 5, false, false, -1},
  };
  return cfg;
}

RealTensor random_image(Rng& rng, int h, int w) {
  RealTensor img(h, w, 1);
  for (double& v : img.values) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("config text round-trips") {
  NetConfig cfg = default_config();
  NetConfig back = NetConfig::from_text(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());
  CHECK(back.blocks.size() == 11);
  CHECK(back.num_classes == 27);

  NetConfig tiny = tiny_config();
  CHECK(NetConfig::from_text(tiny.to_text()).to_text() == tiny.to_text());
}

TEST_CASE("config text accepts comments and rejects garbage") {
  std::string text = "# a comment\n" + tiny_config().to_text();
  CHECK_NOTHROW(NetConfig::from_text(text));
  CHECK_THROWS_AS(NetConfig::from_text("bogus 1 2\n"), std::invalid_argument);
  CHECK_THROWS_AS(NetConfig::from_text("input 32 128\nclasses 27\n"),
                  std::invalid_argument);
}

TEST_CASE("validate catches structural violations") {
  NetConfig cfg = tiny_config();
  cfg.blocks[3].unpool_source = 1;  // not mirrored
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = tiny_config();
  cfg.blocks[5].kernel_h = 3;  // classifier must be 1x1
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = tiny_config();
  cfg.input_h = 10;  // not divisible by 2^pools
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = tiny_config();
  cfg.blocks.back().out_channels = 4;  // != num_classes
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("default architecture parameter counts") {
  Network net = build(default_config(), 1);
  // 64*(3*3*64) + 3*512*(3*3*512) + 4*512*(3*3*512) + 512*512 + 27*512
  //   = 17,085,952 one-bit weights
  CHECK(net.binary_param_count() == 17085952u);
}

TEST_CASE("build is deterministic in the seed") {
  Network a = build(tiny_config(), 42);
  Network b = build(tiny_config(), 42);
  Network c = build(tiny_config(), 43);
  CHECK(a.block0.weights == b.block0.weights);
  CHECK(a.latent == b.latent);
  CHECK(a.block0.weights != c.block0.weights);
}

TEST_CASE("three forward modes agree exactly on random networks") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Network net = build(tiny_config(), seed);
    // shift BN around so thresholds are non-trivial, including gamma < 0
    Rng rng(seed * 977);
    for (BinConvLayer& l : net.bin_blocks)
      for (int c = 0; c < l.bn.channels(); ++c) {
        l.bn.gamma[c] = rng.uniform(-2, 2);
        l.bn.beta[c] = rng.uniform(-1, 1);
        l.bn.mean[c] = rng.uniform(-5, 5);
        l.bn.var[c] = rng.uniform(0.1, 9);
      }
    net.refresh_folded();

    Rng img_rng(seed);
    RealTensor img = random_image(img_rng, 8, 16);
    RealTensor r = forward(net, img, Mode::real);
    RealTensor u = forward(net, img, Mode::packed_unfolded);
    RealTensor f = forward(net, img, Mode::packed_folded);
    REQUIRE(r.values.size() == u.values.size());
    REQUIRE(r.values.size() == f.values.size());
    for (size_t i = 0; i < r.values.size(); ++i) {
      CHECK(r.values[i] == u.values[i]);
      CHECK(r.values[i] == f.values[i]);
    }
  }
}

TEST_CASE("packed_folded refuses stale thresholds") {
  Network net = build(tiny_config(), 3);
  net.folded_fresh = false;
  Rng rng(3);
  RealTensor img = random_image(rng, 8, 16);
  CHECK_THROWS_AS(forward(net, img, Mode::packed_folded), std::runtime_error);
  net.refresh_folded();
  CHECK_NOTHROW(forward(net, img, Mode::packed_folded));
}

TEST_CASE("forward rejects mismatched image dims") {
  Network net = build(tiny_config(), 3);
  RealTensor img(4, 4, 1);
  CHECK_THROWS_AS(forward(net, img, Mode::real), std::invalid_argument);
}

TEST_CASE("predict_labels argmax ties to the lowest class") {
  RealTensor s(1, 1, 3);
  s.values = {0.4, 0.4, 0.2};
  CHECK(predict_labels(s)[0] == 0);
  s.values = {0.1, 0.5, 0.4};
  CHECK(predict_labels(s)[0] == 1);
}

TEST_CASE("mode names round-trip") {
  for (Mode m : {Mode::real, Mode::packed_unfolded, Mode::packed_folded})
    CHECK(mode_from_name(mode_name(m)) == m);
  CHECK_THROWS_AS(mode_from_name("fast"), std::invalid_argument);
}
