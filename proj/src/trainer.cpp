#include "bced/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "bced/rng.hpp"

namespace bced {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

double loss_ce(const RealTensor& logits, const uint8_t* labels,
               RealTensor* grad) {
  const int C = logits.channels;
  const size_t pixels = static_cast<size_t>(logits.height) * logits.width;
  const double norm = 1.0 / static_cast<double>(pixels);
  if (grad) *grad = RealTensor(logits.height, logits.width, C);

  double J = 0;
  std::vector<double> p(C);
  for (size_t i = 0; i < pixels; ++i) {
    const double* in = &logits.values[i * C];
    const uint8_t label = labels[i];
    if (label >= C) throw std::invalid_argument("loss_ce: label out of range");
    double m = in[0];
    for (int c = 1; c < C; ++c) m = std::max(m, in[c]);
    double sum = 0;
    for (int c = 0; c < C; ++c) {
      p[c] = std::exp(in[c] - m);
      sum += p[c];
    }
    J -= (in[label] - m - std::log(sum)) * norm;
    if (grad) {
      double* g = &grad->values[i * C];
      for (int c = 0; c < C; ++c)
        g[c] = (p[c] / sum - (c == label ? 1.0 : 0.0)) * norm;
    }
  }
  return J;
}

RealTensor ste_binarize_backward(const RealTensor& upstream_grad,
                                 const RealTensor& pre_activation) {
  require(upstream_grad.values.size() == pre_activation.values.size(),
          "ste_binarize_backward: shape mismatch");
  RealTensor out = upstream_grad;
  for (size_t i = 0; i < out.values.size(); ++i)
    if (std::abs(pre_activation.values[i]) > 1.0) out.values[i] = 0.0;
  return out;
}

BitTensor binarize_weights(const std::vector<double>& latent, int kernel_h,
                           int kernel_w, int in_channels, int filter) {
  BitTensor bits(kernel_h, kernel_w, in_channels);
  const size_t per_filter =
      static_cast<size_t>(kernel_h) * kernel_w * in_channels;
  size_t base = filter * per_filter, k = 0;
  for (int ky = 0; ky < kernel_h; ++ky)
    for (int kx = 0; kx < kernel_w; ++kx)
      for (int c = 0; c < in_channels; ++c, ++k)
        if (latent[base + k] > 0.0) bits.set_bit(ky, kx, c, true);
  return bits;
}

void adamax_step(AdaMaxState& state, std::vector<double>& params,
                 const std::vector<double>& grads, double lr,
                 const AdaMaxParams& hp, bool clip_unit) {
  require(params.size() == grads.size(), "adamax_step: size mismatch");
  if (state.m.size() != params.size()) state.resize(params.size());
  for (double g : grads)
    if (!std::isfinite(g))
      throw std::runtime_error("adamax_step: non-finite gradient, step aborted");

  state.t += 1;
  const double bias = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
    state.u[i] = std::max(hp.beta2 * state.u[i], std::abs(g));
    const double denom = std::max(state.u[i], 1e-12);
    params[i] -= (lr / bias) * state.m[i] / denom;
    if (clip_unit) params[i] = std::clamp(params[i], -1.0, 1.0);
  }
}

void Gradients::resize_like(const Network& net) {
  block0_weights.assign(net.block0.weights.size(), 0.0);
  block0_gamma.assign(net.block0.bn.channels(), 0.0);
  block0_beta.assign(net.block0.bn.channels(), 0.0);
  latent.resize(net.latent.size());
  gamma.resize(net.bin_blocks.size());
  beta.resize(net.bin_blocks.size());
  for (size_t i = 0; i < net.latent.size(); ++i) {
    latent[i].assign(net.latent[i].size(), 0.0);
    gamma[i].assign(net.bin_blocks[i].bn.channels(), 0.0);
    beta[i].assign(net.bin_blocks[i].bn.channels(), 0.0);
  }
}

void Gradients::zero() {
  auto z = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
  z(block0_weights);
  z(block0_gamma);
  z(block0_beta);
  for (auto& v : latent) z(v);
  for (auto& v : gamma) z(v);
  for (auto& v : beta) z(v);
}

namespace {

// Per-block forward cache for one mini-batch.
struct BlockCache {
  std::vector<RealTensor> conv_in;  // carrier entering the convolution
  std::vector<RealTensor> s;        // convolution output
  std::vector<RealTensor> xhat;     // normalized pre-scale activations
  std::vector<double> invstd;       // per channel
  std::vector<RealTensor> pre_act;  // BN output after pooling (STE input)
  std::vector<PoolIndexMap> idx;    // pool indices (encoder blocks)
  bool frozen = false;              // normalized with running statistics
};

// Batch-statistics BN with caches for the backward pass. With `freeze` the
// stored running statistics are used instead (training == inference).
void bn_forward_train(const std::vector<RealTensor>& s, BNParams& bn,
                      BlockCache& cache, std::vector<RealTensor>& a_out,
                      double momentum, bool update_running, bool freeze) {
  const int C = s.front().channels;
  const size_t pixels = static_cast<size_t>(s.front().height) * s.front().width;
  const double count = static_cast<double>(pixels * s.size());

  cache.frozen = freeze;
  std::vector<double> mu(C, 0.0), var(C, 0.0);
  if (freeze) {
    mu = bn.mean;
    var = bn.var;
    update_running = false;
  } else {
    for (const RealTensor& t : s)
      for (size_t p = 0; p < pixels; ++p)
        for (int c = 0; c < C; ++c) mu[c] += t.values[p * C + c];
    for (int c = 0; c < C; ++c) mu[c] /= count;
    for (const RealTensor& t : s)
      for (size_t p = 0; p < pixels; ++p)
        for (int c = 0; c < C; ++c) {
          double d = t.values[p * C + c] - mu[c];
          var[c] += d * d;
        }
    for (int c = 0; c < C; ++c) var[c] /= count;
  }

  cache.invstd.resize(C);
  for (int c = 0; c < C; ++c) cache.invstd[c] = 1.0 / std::sqrt(var[c] + bn.epsilon);

  cache.xhat.clear();
  a_out.clear();
  for (const RealTensor& t : s) {
    RealTensor xh(t.height, t.width, C), a(t.height, t.width, C);
    for (size_t p = 0; p < pixels; ++p)
      for (int c = 0; c < C; ++c) {
        double v = (t.values[p * C + c] - mu[c]) * cache.invstd[c];
        xh.values[p * C + c] = v;
        a.values[p * C + c] = bn.gamma[c] * v + bn.beta[c];
      }
    cache.xhat.push_back(std::move(xh));
    a_out.push_back(std::move(a));
  }

  if (update_running)
    for (int c = 0; c < C; ++c) {
      bn.mean[c] = momentum * bn.mean[c] + (1.0 - momentum) * mu[c];
      bn.var[c] = momentum * bn.var[c] + (1.0 - momentum) * var[c];
    }
}

// Reverse of bn_forward_train for one channel-uniform batch.
void bn_backward(const std::vector<RealTensor>& dy, const BlockCache& cache,
                 const BNParams& bn, std::vector<RealTensor>& dx,
                 std::vector<double>& dgamma, std::vector<double>& dbeta) {
  const int C = dy.front().channels;
  const size_t pixels = static_cast<size_t>(dy.front().height) * dy.front().width;
  const double count = static_cast<double>(pixels * dy.size());

  std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
  for (size_t n = 0; n < dy.size(); ++n)
    for (size_t p = 0; p < pixels; ++p)
      for (int c = 0; c < C; ++c) {
        double g = dy[n].values[p * C + c];
        sum_dy[c] += g;
        sum_dy_xhat[c] += g * cache.xhat[n].values[p * C + c];
      }
  for (int c = 0; c < C; ++c) {
    dgamma[c] += sum_dy_xhat[c];
    dbeta[c] += sum_dy[c];
  }

  dx.clear();
  for (size_t n = 0; n < dy.size(); ++n) {
    RealTensor d(dy[n].height, dy[n].width, C);
    for (size_t p = 0; p < pixels; ++p)
      for (int c = 0; c < C; ++c) {
        double g = dy[n].values[p * C + c] * bn.gamma[c];
        if (cache.frozen) {  // statistics are constants
          d.values[p * C + c] = cache.invstd[c] * g;
          continue;
        }
        double xh = cache.xhat[n].values[p * C + c];
        d.values[p * C + c] =
            cache.invstd[c] *
            (g - (bn.gamma[c] / count) * (sum_dy[c] + xh * sum_dy_xhat[c]));
      }
    dx.push_back(std::move(d));
  }
}

// Accumulates weight gradients and produces the input gradient for one
// same-padded cross-correlation.
void conv_backward(const RealTensor& input, double pad_value,
                   const RealTensor& dout, const double* weights,
                   int kernel_h, int kernel_w, int in_channels,
                   int out_channels, double* dweights, RealTensor* dinput) {
  const int H = input.height, W = input.width, C = in_channels;
  const int ph = (kernel_h - 1) / 2, pw = (kernel_w - 1) / 2;
  const int PH = H + kernel_h - 1, PW = W + kernel_w - 1;
  const size_t row_len = static_cast<size_t>(kernel_w) * C;
  const size_t fstride = static_cast<size_t>(kernel_h) * row_len;

  std::vector<double> padded(static_cast<size_t>(PH) * PW * C, pad_value);
  for (int y = 0; y < H; ++y)
    std::copy_n(&input.values[input.index(y, 0, 0)], static_cast<size_t>(W) * C,
                &padded[(static_cast<size_t>(y + ph) * PW + pw) * C]);
  std::vector<double> dpadded;
  if (dinput) dpadded.assign(padded.size(), 0.0);

  for (int f = 0; f < out_channels; ++f) {
    double* dw = dweights + f * fstride;
    const double* w = weights + f * fstride;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double d = dout.at(y, x, f);
        if (d == 0.0) continue;
        for (int ky = 0; ky < kernel_h; ++ky) {
          const size_t off = (static_cast<size_t>(y + ky) * PW + x) * C;
          const double* in = &padded[off];
          double* dwr = dw + ky * row_len;
          for (size_t i = 0; i < row_len; ++i) dwr[i] += d * in[i];
          if (dinput) {
            double* din = &dpadded[off];
            const double* wr = w + ky * row_len;
            for (size_t i = 0; i < row_len; ++i) din[i] += d * wr[i];
          }
        }
      }
  }
  if (dinput) {
    *dinput = RealTensor(H, W, C);
    for (int y = 0; y < H; ++y)
      std::copy_n(&dpadded[(static_cast<size_t>(y + ph) * PW + pw) * C],
                  static_cast<size_t>(W) * C,
                  &dinput->values[dinput->index(y, 0, 0)]);
  }
}

RealTensor binact(const RealTensor& a, bool binarize) {
  RealTensor out = a;
  if (binarize)
    for (double& v : out.values) v = v > 0.0 ? 1.0 : -1.0;
  return out;
}

RealTensor unpool_carrier(const RealTensor& a, const PoolIndexMap& idx,
                          double fill) {
  RealTensor out(a.height * 2, a.width * 2, a.channels, fill);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < a.channels; ++c) {
        uint8_t k = idx.at(y, x, c);
        out.at(2 * y + (k >> 1), 2 * x + (k & 1), c) = a.at(y, x, c);
      }
  return out;
}

}  // namespace

double backward(Network& net, const std::vector<const RealTensor*>& images,
                const std::vector<const uint8_t*>& labels, Gradients& grads,
                const BackwardOptions& opts) {
  require(!images.empty() && images.size() == labels.size(),
          "backward: empty or mismatched batch");
  const size_t N = images.size();
  const NetConfig& cfg = net.config;
  const size_t num_bin = net.bin_blocks.size();

  grads.resize_like(net);
  grads.zero();

  // Effective convolution weights for this pass.
  std::vector<std::vector<double>> w_eff(num_bin);
  for (size_t i = 0; i < num_bin; ++i) {
    w_eff[i] = net.latent[i];
    if (opts.binarize_weights)
      for (double& v : w_eff[i]) v = v > 0.0 ? 1.0 : -1.0;
  }

  // ---- forward ----
  BlockCache cache0;
  std::vector<BlockCache> caches(num_bin);
  std::vector<RealTensor> carrier(N);

  {
    std::vector<RealTensor> s(N);
    for (size_t n = 0; n < N; ++n)
      s[n] = conv2d_pad(*images[n], net.block0.weights.data(),
                        net.block0.kernel_h, net.block0.kernel_w, 1,
                        net.block0.out_channels, 0.0);
    cache0.s = std::move(s);
    std::vector<RealTensor> a;
    bn_forward_train(cache0.s, net.block0.bn, cache0, a, opts.bn_momentum,
                     opts.update_running_stats, opts.freeze_bn_stats);
    cache0.pre_act = a;
    for (size_t n = 0; n < N; ++n)
      carrier[n] = binact(a[n], opts.binarize_activations);
  }

  std::vector<RealTensor> logits(N);
  std::map<int, size_t> pool_owner;  // block id -> bin block index with indices
  const double fill = opts.binarize_activations ? -1.0 : 0.0;

  for (size_t i = 0; i < num_bin; ++i) {
    const BlockSpec& spec = cfg.blocks[i + 1];
    BinConvLayer& layer = net.bin_blocks[i];
    BlockCache& bc = caches[i];

    bc.conv_in.resize(N);
    for (size_t n = 0; n < N; ++n) {
      if (spec.has_unpool) {
        size_t src = pool_owner.at(spec.unpool_source);
        bc.conv_in[n] = unpool_carrier(carrier[n], caches[src].idx[n], fill);
      } else {
        bc.conv_in[n] = std::move(carrier[n]);
      }
    }

    bc.s.resize(N);
    for (size_t n = 0; n < N; ++n)
      bc.s[n] = conv2d_pad(bc.conv_in[n], w_eff[i].data(), layer.kernel_h,
                           layer.kernel_w, layer.in_channels,
                           layer.out_channels, fill);

    std::vector<RealTensor> a;
    bn_forward_train(bc.s, layer.bn, bc, a, opts.bn_momentum,
                     opts.update_running_stats, opts.freeze_bn_stats);

    if (spec.kind == BlockKind::classifier_softmax) {
      for (size_t n = 0; n < N; ++n) logits[n] = std::move(a[n]);
      break;
    }

    if (spec.has_pool) {
      bc.idx.resize(N);
      bc.pre_act.resize(N);
      for (size_t n = 0; n < N; ++n) {
        auto [pooled, idx] = maxpool2x2(a[n]);
        bc.pre_act[n] = std::move(pooled);
        bc.idx[n] = std::move(idx);
      }
      pool_owner[static_cast<int>(i) + 1] = i;
    } else {
      bc.pre_act = std::move(a);
    }
    carrier.resize(N);
    for (size_t n = 0; n < N; ++n)
      carrier[n] = binact(bc.pre_act[n], opts.binarize_activations);
  }

  // ---- loss ----
  double total_loss = 0;
  std::vector<RealTensor> dy(N);
  const double inv_n = 1.0 / static_cast<double>(N);
  for (size_t n = 0; n < N; ++n) {
    RealTensor g;
    total_loss += loss_ce(logits[n], labels[n], &g) * inv_n;
    for (double& v : g.values) v *= inv_n;
    dy[n] = std::move(g);
  }
  if (!std::isfinite(total_loss))
    throw std::runtime_error("backward: non-finite loss");

  // ---- backward ----
  for (size_t ii = num_bin; ii-- > 0;) {
    const BlockSpec& spec = cfg.blocks[ii + 1];
    BinConvLayer& layer = net.bin_blocks[ii];
    BlockCache& bc = caches[ii];

    if (spec.kind != BlockKind::classifier_softmax) {
      // dy currently holds the gradient w.r.t. this block's carrier output.
      for (size_t n = 0; n < N; ++n)
        if (opts.binarize_activations)
          dy[n] = ste_binarize_backward(dy[n], bc.pre_act[n]);
      if (spec.has_pool) {
        for (size_t n = 0; n < N; ++n) {
          RealTensor d(bc.xhat[n].height, bc.xhat[n].width, dy[n].channels);
          for (int y = 0; y < dy[n].height; ++y)
            for (int x = 0; x < dy[n].width; ++x)
              for (int c = 0; c < dy[n].channels; ++c) {
                uint8_t k = bc.idx[n].at(y, x, c);
                d.at(2 * y + (k >> 1), 2 * x + (k & 1), c) = dy[n].at(y, x, c);
              }
          dy[n] = std::move(d);
        }
      }
    }

    std::vector<RealTensor> ds;
    bn_backward(dy, bc, layer.bn, ds, grads.gamma[ii], grads.beta[ii]);

    std::vector<RealTensor> din(N);
    for (size_t n = 0; n < N; ++n)
      conv_backward(bc.conv_in[n], fill, ds[n], w_eff[ii].data(),
                    layer.kernel_h, layer.kernel_w, layer.in_channels,
                    layer.out_channels, grads.latent[ii].data(), &din[n]);

    // STE saturation mask on the latent weights (clipping keeps them inside
    // [-1,1], so this passes everything in practice).
    if (opts.binarize_weights)
      for (size_t k = 0; k < grads.latent[ii].size(); ++k)
        if (std::abs(net.latent[ii][k]) > 1.0) grads.latent[ii][k] = 0.0;

    if (spec.has_unpool) {
      size_t src = pool_owner.at(spec.unpool_source);
      for (size_t n = 0; n < N; ++n) {
        const PoolIndexMap& idx = caches[src].idx[n];
        RealTensor d(idx.height, idx.width, din[n].channels);
        for (int y = 0; y < idx.height; ++y)
          for (int x = 0; x < idx.width; ++x)
            for (int c = 0; c < d.channels; ++c) {
              uint8_t k = idx.at(y, x, c);
              d.at(y, x, c) = din[n].at(2 * y + (k >> 1), 2 * x + (k & 1), c);
            }
        din[n] = std::move(d);
      }
    }
    dy = std::move(din);
  }

  // Block 0.
  for (size_t n = 0; n < N; ++n)
    if (opts.binarize_activations)
      dy[n] = ste_binarize_backward(dy[n], cache0.pre_act[n]);
  std::vector<RealTensor> ds0;
  bn_backward(dy, cache0, net.block0.bn, ds0, grads.block0_gamma,
              grads.block0_beta);
  for (size_t n = 0; n < N; ++n)
    conv_backward(*images[n], 0.0, ds0[n], net.block0.weights.data(),
                  net.block0.kernel_h, net.block0.kernel_w, 1,
                  net.block0.out_channels, grads.block0_weights.data(),
                  nullptr);

  net.folded_fresh = false;  // BN statistics moved
  return total_loss;
}

namespace {

double pixel_accuracy_simple(const Network& net,
                             const std::vector<DatasetSample>& data) {
  if (data.empty()) return 0.0;
  size_t hit = 0, total = 0;
  for (const DatasetSample& s : data) {
    RealTensor p = forward(net, s.image, Mode::real);
    std::vector<uint8_t> pred = predict_labels(p);
    for (size_t i = 0; i < pred.size(); ++i) hit += pred[i] == s.labels[i];
    total += pred.size();
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

TrainReport fit(Network& net, const std::vector<DatasetSample>& train,
                const std::vector<DatasetSample>& val, int epochs,
                uint64_t seed, const FitOptions& opts) {
  require(!train.empty(), "fit: empty training set");
  require(epochs >= 1, "fit: epochs must be >= 1");

  AdaMaxState st_w0, st_g0, st_b0;
  std::vector<AdaMaxState> st_latent(net.latent.size()),
      st_gamma(net.latent.size()), st_beta(net.latent.size());

  Gradients grads;
  TrainReport report;
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  BackwardOptions bopts;
  bopts.bn_momentum = opts.bn_momentum;
  bopts.freeze_bn_stats = opts.freeze_bn_stats;

  for (int e = 0; e < epochs; ++e) {
    const int epoch_id = opts.start_epoch + e;
    const double lr = opts.lr * std::pow(opts.lr_decay, epoch_id);
    auto t0 = std::chrono::steady_clock::now();

    Rng shuffle_rng(seed + 0x9e3779b97f4a7c15ULL * (epoch_id + 1));
    shuffle_rng.shuffle(order);

    double loss_sum = 0;
    size_t loss_count = 0;
    for (size_t start = 0; start < order.size(); start += opts.batch_size) {
      size_t end = std::min(order.size(),
                            start + static_cast<size_t>(opts.batch_size));
      std::vector<const RealTensor*> images;
      std::vector<const uint8_t*> labels;
      for (size_t k = start; k < end; ++k) {
        images.push_back(&train[order[k]].image);
        labels.push_back(train[order[k]].labels.data());
      }
      double loss = backward(net, images, labels, grads, bopts);
      loss_sum += loss * images.size();
      loss_count += images.size();

      adamax_step(st_w0, net.block0.weights, grads.block0_weights, lr,
                  opts.adamax, false);
      adamax_step(st_g0, net.block0.bn.gamma, grads.block0_gamma, lr,
                  opts.adamax, false);
      adamax_step(st_b0, net.block0.bn.beta, grads.block0_beta, lr,
                  opts.adamax, false);
      for (size_t i = 0; i < net.latent.size(); ++i) {
        adamax_step(st_latent[i], net.latent[i], grads.latent[i], lr,
                    opts.adamax, true);
        adamax_step(st_gamma[i], net.bin_blocks[i].bn.gamma, grads.gamma[i], lr,
                    opts.adamax, false);
        adamax_step(st_beta[i], net.bin_blocks[i].bn.beta, grads.beta[i], lr,
                    opts.adamax, false);
      }
    }

    net.refresh_packed();
    net.refresh_folded();

    TrainReport::Epoch ep;
    ep.epoch = epoch_id;
    ep.mean_loss = loss_sum / static_cast<double>(loss_count);
    ep.val_accuracy = pixel_accuracy_simple(net, val);
    ep.lr = lr;
    ep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                               t0).count();
    if (opts.verbose)
      std::printf("epoch %d loss %.6f val_acc %.4f lr %.6f (%.1fs)\n",
                  ep.epoch, ep.mean_loss, ep.val_accuracy, ep.lr, ep.seconds);
    report.epochs.push_back(ep);
  }
  return report;
}

void recalibrate_bn(Network& net, const std::vector<DatasetSample>& samples) {
  require(!samples.empty(), "recalibrate_bn: empty sample set");
  std::vector<const RealTensor*> images;
  std::vector<const uint8_t*> labels;
  for (const DatasetSample& s : samples) {
    images.push_back(&s.image);
    labels.push_back(s.labels.data());
  }
  Gradients scratch;
  BackwardOptions opts;
  opts.bn_momentum = 0.0;  // running stats := this batch's statistics
  opts.update_running_stats = true;
  backward(net, images, labels, scratch, opts);
  net.refresh_packed();
  net.refresh_folded();
}

}  // namespace bced
