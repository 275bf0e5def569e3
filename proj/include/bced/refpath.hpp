#ifndef BCED_REFPATH_HPP
#define BCED_REFPATH_HPP

#include "bced/netgraph.hpp"

namespace bced {

// Double-precision +-1 reference path. Deliberately naive: straight loops,
// every intermediate kept, no sharing with the packed engine beyond types.

// Plain cross-correlation over +-1 (or real) inputs with constant border
// padding. weights layout [oc][ky][kx][ic].
RealTensor pm_conv(const RealTensor& input_pm, const std::vector<double>& weights,
                   int kernel_h, int kernel_w, int in_channels, int out_channels,
                   double pad_value = -1.0);

// The affine bridge from popcounts to the +-1 dot product: 2s - n.
RealTensor popcount_to_pm(const RealTensor& s, long kernel_volume);

struct ReferenceTrace {
  std::vector<RealTensor> pre_bn;       // s_k per block
  std::vector<RealTensor> post_bn;      // a_k per block (post pool where pooled)
  std::vector<RealTensor> activations;  // a_k^b as {0,1} tensors
  std::vector<PoolIndexMap> pool_indices;
  RealTensor logits;
};

// Full forward pass in real arithmetic; ground truth for the packed engine.
RealTensor reference_forward(const Network& net, const RealTensor& image,
                             ReferenceTrace* trace = nullptr);

}  // namespace bced

#endif
