#ifndef BCED_NETGRAPH_HPP
#define BCED_NETGRAPH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "bced/nnlayers.hpp"

namespace bced {

enum class BlockKind : uint8_t {
  adapter,
  encoder,
  decoder,
  classifier,
  classifier_softmax,
};

struct BlockSpec {
  BlockKind kind = BlockKind::encoder;
  int kernel_h = 3, kernel_w = 3;
  int out_channels = 0;
  bool has_pool = false;
  bool has_unpool = false;
  int unpool_source = -1;  // block id of the symmetric encoder block
};

struct NetConfig {
  int input_h = 32, input_w = 128;
  int num_classes = 27;
  std::vector<BlockSpec> blocks;

  // Throws std::invalid_argument when any structural invariant is broken.
  void validate() const;

  // Line-oriented plain-text form; grammar documented in docs/format.md.
  std::string to_text() const;
  static NetConfig from_text(const std::string& text);
};

// The published 11-block architecture: 3x3 real adapter 1->64, four 3x3
// binary encoder blocks with pooling (64->512, then 512->512), four
// mirrored decoder blocks, and two 1x1 classifier blocks (512->512->27).
NetConfig default_config();

struct Network {
  NetConfig config;
  RealConvLayer block0;
  std::vector<BinConvLayer> bin_blocks;          // config.blocks[1..]
  std::vector<std::vector<double>> latent;       // per bin block, [f][ky][kx][ic]
  std::vector<FoldedThreshold> folded;           // per bin block
  std::vector<std::vector<double>> pm_weights;   // +-1 image of the packed bits
  bool folded_fresh = false;

  // Rebuilds packed bits and the +-1 weight cache from the latent weights.
  void refresh_packed();
  // Recomputes folded thresholds from the current BN parameters.
  void refresh_folded();

  size_t binary_param_count() const;
};

Network build(const NetConfig& config, uint64_t seed);

enum class Mode : uint8_t { real, packed_unfolded, packed_folded };

// Per-block capture for tests and training diagnostics.
struct Intermediates {
  std::vector<BitTensor> activations;    // a_k^b for every block that binarizes
  std::vector<PoolIndexMap> pool_indices;
  RealTensor logits;                     // block-10 BN output
};

struct BlockTimes {
  std::vector<double> seconds;  // one entry per block
};

// Runs one image through the network. Returns the 27-channel salience map.
RealTensor forward(const Network& net, const RealTensor& image, Mode mode,
                   Intermediates* keep = nullptr, BlockTimes* times = nullptr);

// Per-pixel argmax class, ties to the lowest index. Row-major H*W bytes.
std::vector<uint8_t> predict_labels(const RealTensor& salience);

const char* mode_name(Mode m);
Mode mode_from_name(const std::string& name);

}  // namespace bced

#endif
