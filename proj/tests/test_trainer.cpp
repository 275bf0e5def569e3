#include "doctest.h"

#include <stdexcept>

#include <cmath>

#include "bced/refpath.hpp"
#include "bced/rng.hpp"
#include "bced/trainer.hpp"

using namespace bced;

namespace {

NetConfig tiny_config() {
  NetConfig cfg;
  cfg.input_h = 4;
  cfg.input_w = 8;
  cfg.num_classes = 3;
  cfg.blocks = {
      {BlockKind::adapter, 3, 3, 2, false, false, -1},
      {BlockKind::encoder, 3, 3, 4, true, false, -1},
      {BlockKind::decoder, 3, 3, 4, false, true, 1},
      {BlockKind::classifier, 1, 1, 4, false, false, -1},
      {BlockKind::classifier_softmax, 1, 1, 3, false, false, -1},
  };
  return cfg;
}

struct TinyBatch {
  std::vector<RealTensor> images;
  std::vector<std::vector<uint8_t>> labels;
  std::vector<const RealTensor*> image_ptrs;
  std::vector<const uint8_t*> label_ptrs;
};

TinyBatch make_batch(const NetConfig& cfg, int n, uint64_t seed) {
  TinyBatch b;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    RealTensor img(cfg.input_h, cfg.input_w, 1);
    for (double& v : img.values) v = rng.uniform();
    std::vector<uint8_t> lab(static_cast<size_t>(cfg.input_h) * cfg.input_w);
    for (uint8_t& l : lab) l = static_cast<uint8_t>(rng.below(cfg.num_classes));
    b.images.push_back(std::move(img));
    b.labels.push_back(std::move(lab));
  }
  for (int i = 0; i < n; ++i) {
    b.image_ptrs.push_back(&b.images[i]);
    b.label_ptrs.push_back(b.labels[i].data());
  }
  return b;
}

double loss_only(Network net, const TinyBatch& b, const BackwardOptions& opts) {
  Gradients scratch;
  BackwardOptions o = opts;
  o.update_running_stats = false;
  return backward(net, b.image_ptrs, b.label_ptrs, scratch, o);
}

}  // namespace

TEST_CASE("loss_ce on uniform logits is ln(num_classes)") {
  RealTensor logits(2, 3, 27);  // all zeros -> uniform softmax
  std::vector<uint8_t> labels(6, 5);
  CHECK(loss_ce(logits, labels.data()) ==
        doctest::Approx(std::log(27.0)).epsilon(1e-12));
}

TEST_CASE("loss_ce gradient matches finite differences") {
  Rng rng(2);
  RealTensor logits(2, 2, 4);
  for (double& v : logits.values) v = rng.uniform(-2, 2);
  std::vector<uint8_t> labels = {0, 3, 1, 2};
  RealTensor grad;
  loss_ce(logits, labels.data(), &grad);
  const double eps = 1e-6;
  for (size_t i = 0; i < logits.values.size(); ++i) {
    RealTensor lp = logits, lm = logits;
    lp.values[i] += eps;
    lm.values[i] -= eps;
    double fd = (loss_ce(lp, labels.data()) - loss_ce(lm, labels.data())) /
                (2 * eps);
    CHECK(grad.values[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("loss_ce rejects out-of-range labels") {
  RealTensor logits(1, 1, 3);
  uint8_t bad = 3;
  CHECK_THROWS_AS(loss_ce(logits, &bad), std::invalid_argument);
}

TEST_CASE("STE passes gradients only where |pre| <= 1") {
  RealTensor g(1, 1, 4), pre(1, 1, 4);
  g.values = {1.0, 2.0, 3.0, 4.0};
  pre.values = {0.5, -1.0, 1.5, -3.0};
  RealTensor out = ste_binarize_backward(g, pre);
  CHECK(out.values == std::vector<double>{1.0, 2.0, 0.0, 0.0});
}

TEST_CASE("binarize_weights packs sign(latent) per filter") {
  std::vector<double> latent = {0.3, -0.2, 0.0, 1.0,    // filter 0
                                -0.5, 0.9, -0.1, 0.2};  // filter 1
  BitTensor f0 = binarize_weights(latent, 1, 2, 2, 0);
  BitTensor f1 = binarize_weights(latent, 1, 2, 2, 1);
  CHECK(f0.bit(0, 0, 0));
  CHECK(!f0.bit(0, 0, 1));
  CHECK(!f0.bit(0, 1, 0));  // latent exactly 0 -> bit 0
  CHECK(f0.bit(0, 1, 1));
  CHECK(!f1.bit(0, 0, 0));
  CHECK(f1.bit(0, 0, 1));
}

TEST_CASE("adamax_step matches the hand-computed first update") {
  AdaMaxState st;
  std::vector<double> params = {0.0};
  std::vector<double> grads = {0.1};
  adamax_step(st, params, grads, 0.002, AdaMaxParams{}, false);
  // m = 0.01, u = 0.1, bias = 0.1 -> step = (0.002/0.1) * 0.01/0.1 = 0.002
  CHECK(params[0] == doctest::Approx(-0.002).epsilon(1e-12));

  // clipping to [-1,1]
  AdaMaxState st2;
  std::vector<double> p2 = {-0.9999};
  adamax_step(st2, p2, {1.0}, 0.5, AdaMaxParams{}, true);
  CHECK(p2[0] == -1.0);

  std::vector<double> bad = {std::nan("")};
  AdaMaxState st3;
  std::vector<double> p3 = {0.0};
  CHECK_THROWS_AS(adamax_step(st3, p3, bad, 0.002, AdaMaxParams{}, false),
                  std::runtime_error);
}

TEST_CASE("continuous-twin backward matches finite differences") {
  Network net = build(tiny_config(), 7);
  TinyBatch batch = make_batch(net.config, 2, 7);

  BackwardOptions opts;
  opts.binarize_weights = false;
  opts.binarize_activations = false;
  opts.update_running_stats = false;

  Gradients grads;
  backward(net, batch.image_ptrs, batch.label_ptrs, grads, opts);

  const double eps = 1e-6;
  Rng pick(9);
  auto fd_check = [&](double& param, double analytic) {
    const double save = param;
    param = save + eps;
    double lp = loss_only(net, batch, opts);
    param = save - eps;
    double lm = loss_only(net, batch, opts);
    param = save;
    double fd = (lp - lm) / (2 * eps);
    // relative tolerance with an absolute floor for near-zero gradients
    CHECK(std::abs(analytic - fd) <=
          1e-4 * std::max({1e-3, std::abs(analytic), std::abs(fd)}));
  };

  for (int k = 0; k < 10; ++k) {
    size_t i = pick.below(net.block0.weights.size());
    fd_check(net.block0.weights[i], grads.block0_weights[i]);
  }
  for (size_t blk = 0; blk < net.latent.size(); ++blk)
    for (int k = 0; k < 6; ++k) {
      size_t i = pick.below(net.latent[blk].size());
      fd_check(net.latent[blk][i], grads.latent[blk][i]);
    }
  for (size_t blk = 0; blk < net.bin_blocks.size(); ++blk) {
    size_t c = pick.below(net.bin_blocks[blk].bn.gamma.size());
    fd_check(net.bin_blocks[blk].bn.gamma[c], grads.gamma[blk][c]);
    fd_check(net.bin_blocks[blk].bn.beta[c], grads.beta[blk][c]);
  }
  fd_check(net.block0.bn.gamma[0], grads.block0_gamma[0]);
  fd_check(net.block0.bn.beta[1], grads.block0_beta[1]);
}

TEST_CASE("final-block BN gradients match finite differences on the binary path") {
  Network net = build(tiny_config(), 11);
  TinyBatch batch = make_batch(net.config, 2, 13);

  BackwardOptions opts;  // full binary training path
  opts.update_running_stats = false;

  Gradients grads;
  backward(net, batch.image_ptrs, batch.label_ptrs, grads, opts);

  const double eps = 1e-6;
  BNParams& bn = net.bin_blocks.back().bn;
  for (int c = 0; c < bn.channels(); ++c) {
    for (auto [vec, gvec] : {std::pair{&bn.gamma, &grads.gamma.back()},
                             std::pair{&bn.beta, &grads.beta.back()}}) {
      const double save = (*vec)[c];
      (*vec)[c] = save + eps;
      double lp = loss_only(net, batch, opts);
      (*vec)[c] = save - eps;
      double lm = loss_only(net, batch, opts);
      (*vec)[c] = save;
      double fd = (lp - lm) / (2 * eps);
      CHECK((*gvec)[c] == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("frozen-stats backward matches finite differences") {
  Network net = build(tiny_config(), 17);
  TinyBatch batch = make_batch(net.config, 2, 17);

  BackwardOptions opts;
  opts.binarize_weights = false;
  opts.binarize_activations = false;
  opts.update_running_stats = false;
  opts.freeze_bn_stats = true;

  // give the running stats a non-trivial value first
  {
    Gradients scratch;
    BackwardOptions warm;
    warm.bn_momentum = 0.0;
    backward(net, batch.image_ptrs, batch.label_ptrs, scratch, warm);
  }

  Gradients grads;
  backward(net, batch.image_ptrs, batch.label_ptrs, grads, opts);

  const double eps = 1e-6;
  Rng pick(3);
  auto fd_check = [&](double& param, double analytic) {
    const double save = param;
    param = save + eps;
    double lp = loss_only(net, batch, opts);
    param = save - eps;
    double lm = loss_only(net, batch, opts);
    param = save;
    double fd = (lp - lm) / (2 * eps);
    CHECK(std::abs(analytic - fd) <=
          1e-4 * std::max({1e-3, std::abs(analytic), std::abs(fd)}));
  };
  for (int k = 0; k < 6; ++k) {
    size_t i = pick.below(net.block0.weights.size());
    fd_check(net.block0.weights[i], grads.block0_weights[i]);
  }
  for (size_t blk = 0; blk < net.latent.size(); ++blk) {
    size_t i = pick.below(net.latent[blk].size());
    fd_check(net.latent[blk][i], grads.latent[blk][i]);
    size_t c = pick.below(net.bin_blocks[blk].bn.gamma.size());
    fd_check(net.bin_blocks[blk].bn.gamma[c], grads.gamma[blk][c]);
    fd_check(net.bin_blocks[blk].bn.beta[c], grads.beta[blk][c]);
  }
}

TEST_CASE("recalibrate_bn aligns frozen training loss with inference logits") {
  Network net = build(tiny_config(), 19);
  std::vector<DatasetSample> samples;
  Rng rng(19);
  for (int i = 0; i < 3; ++i) {
    DatasetSample s;
    s.image = RealTensor(4, 8, 1);
    for (double& v : s.image.values) v = rng.uniform();
    s.labels.assign(32, 0);
    for (uint8_t& l : s.labels) l = static_cast<uint8_t>(rng.below(3));
    samples.push_back(std::move(s));
  }
  recalibrate_bn(net, samples);
  CHECK(net.folded_fresh);

  // frozen training-mode loss must equal the loss of the inference logits
  std::vector<const RealTensor*> imgs;
  std::vector<const uint8_t*> labs;
  for (const auto& s : samples) {
    imgs.push_back(&s.image);
    labs.push_back(s.labels.data());
  }
  Gradients scratch;
  BackwardOptions opts;
  opts.update_running_stats = false;
  opts.freeze_bn_stats = true;
  double train_loss = backward(net, imgs, labs, scratch, opts);
  net.refresh_packed();
  net.refresh_folded();

  double infer_loss = 0;
  for (const auto& s : samples) {
    RealTensor p = forward(net, s.image, Mode::real);  // softmax probabilities
    for (double& v : p.values) v = std::log(v);        // back to logit scale
    infer_loss += loss_ce(p, s.labels.data()) / samples.size();
  }
  CHECK(train_loss == doctest::Approx(infer_loss).epsilon(1e-9));
}

TEST_CASE("backward marks folded thresholds stale") {
  Network net = build(tiny_config(), 5);
  CHECK(net.folded_fresh);
  TinyBatch batch = make_batch(net.config, 2, 5);
  Gradients grads;
  backward(net, batch.image_ptrs, batch.label_ptrs, grads);
  CHECK(!net.folded_fresh);
  net.refresh_packed();
  net.refresh_folded();
  CHECK(net.folded_fresh);
}

TEST_CASE("fit reduces the loss and keeps the latent weights clipped") {
  Network net = build(tiny_config(), 21);
  std::vector<DatasetSample> train;
  Rng rng(21);
  for (int i = 0; i < 8; ++i) {
    DatasetSample s;
    s.image = RealTensor(4, 8, 1);
    for (double& v : s.image.values) v = rng.uniform();
    s.labels.assign(32, 0);
    // image-derived target so the mapping is learnable: bright vs dark pixel
    for (int p = 0; p < 32; ++p)
      s.labels[p] = s.image.values[p] > 0.5 ? 1 : 2;
    train.push_back(std::move(s));
  }

  FitOptions opts;
  opts.batch_size = 2;
  opts.lr = 0.01;
  opts.lr_decay = 0.98;
  TrainReport rep = fit(net, train, {}, 60, 21, opts);
  REQUIRE(rep.epochs.size() == 60);
  CHECK(rep.epochs.back().mean_loss < rep.epochs.front().mean_loss);
  CHECK(rep.epochs.back().mean_loss < std::log(3.0));
  for (const auto& lat : net.latent)
    for (double v : lat) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  // lr decay schedule
  CHECK(rep.epochs[1].lr == doctest::Approx(0.01 * 0.98));
  CHECK(net.folded_fresh);  // fit refreshes after each epoch
}
