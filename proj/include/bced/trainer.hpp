#ifndef BCED_TRAINER_HPP
#define BCED_TRAINER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "bced/netgraph.hpp"
#include "bced/textgen.hpp"

namespace bced {

struct AdaMaxParams {
  double alpha = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

struct AdaMaxState {
  std::vector<double> m;  // first moment
  std::vector<double> u;  // infinity-norm accumulator
  long t = 0;

  void resize(size_t n) {
    m.assign(n, 0.0);
    u.assign(n, 0.0);
  }
};

struct TrainReport {
  struct Epoch {
    int epoch = 0;
    double mean_loss = 0;
    double val_accuracy = 0;
    double lr = 0;
    double seconds = 0;
  };
  std::vector<Epoch> epochs;
};

// Mean pixel-wise cross-entropy over one image (normalized by W*H; batch
// averaging is the caller's job). Fills grad with dJ/dlogits when given.
double loss_ce(const RealTensor& logits, const uint8_t* labels,
               RealTensor* grad = nullptr);

// Straight-through estimator: pass where |pre_activation| <= 1, else zero.
RealTensor ste_binarize_backward(const RealTensor& upstream_grad,
                                 const RealTensor& pre_activation);

// bit = [latent > 0]; the packed image of one layer's latent weights.
BitTensor binarize_weights(const std::vector<double>& latent, int kernel_h,
                           int kernel_w, int in_channels, int filter);

// One AdaMax update; clips parameters to [-1,1] when clip_unit is set.
// Throws on non-finite gradients.
void adamax_step(AdaMaxState& state, std::vector<double>& params,
                 const std::vector<double>& grads, double lr,
                 const AdaMaxParams& hp, bool clip_unit);

// Gradient buffers congruent to the trainable parameters.
struct Gradients {
  std::vector<double> block0_weights;
  std::vector<double> block0_gamma, block0_beta;
  std::vector<std::vector<double>> latent;
  std::vector<std::vector<double>> gamma, beta;

  void resize_like(const Network& net);
  void zero();
};

struct BackwardOptions {
  bool binarize_weights = true;      // use sign(latent) in the forward pass
  bool binarize_activations = true;  // hard binarization with STE backward
  double bn_momentum = 0.9;
  bool update_running_stats = true;
  // Normalize with the stored running statistics instead of batch
  // statistics. Makes the training-mode forward identical to inference;
  // used to fine-tune after recalibrate_bn.
  bool freeze_bn_stats = false;
};

// Batched forward (batch statistics BN) + reverse-mode pass. Returns the
// mean loss over the batch and fills `grads`.
double backward(Network& net, const std::vector<const RealTensor*>& images,
                const std::vector<const uint8_t*>& labels, Gradients& grads,
                const BackwardOptions& opts = {});

struct FitOptions {
  int epochs = 1;
  int batch_size = 20;
  double lr = 0.002;
  double lr_decay = 0.9;
  double bn_momentum = 0.9;
  AdaMaxParams adamax;
  int start_epoch = 0;  // resumed runs continue the epoch counter
  bool freeze_bn_stats = false;  // fine-tune against the running statistics
  bool verbose = false;
};

TrainReport fit(Network& net, const std::vector<DatasetSample>& train,
                const std::vector<DatasetSample>& val, int epochs,
                uint64_t seed, const FitOptions& opts = {});

// Replaces the running BN statistics with the population statistics of
// `samples` (single training-mode pass, whole set as one batch). Refreshes
// the folded thresholds afterwards.
void recalibrate_bn(Network& net, const std::vector<DatasetSample>& samples);

}  // namespace bced

#endif
