#ifndef BCED_MODELIO_HPP
#define BCED_MODELIO_HPP

#include <cstdint>
#include <string>

#include "bced/netgraph.hpp"

namespace bced {

// Byte layout documented field by field in docs/format.md. Little-endian
// throughout; packed words in layout order, LSB-first bit semantics.

// Returns the number of bytes written. Writes to a temp file, then renames.
size_t save_model(const Network& net, const std::string& path);

// Throws std::runtime_error with a distinct message for checksum mismatch,
// version mismatch, and truncation.
Network load_model(const std::string& path);

// Training-resumption sidecar: same container, real-valued latent payloads.
size_t save_latent(const Network& net, int trained_epochs,
                   const std::string& path);
// Loads latent weights into a network restored from the main model file.
// Returns the stored epoch counter.
int load_latent(Network& net, const std::string& path);

struct SizeReport {
  uint64_t binary_param_count = 0;
  uint64_t binary_packed_bytes = 0;
  uint64_t real_param_count = 0;
  uint64_t real_bytes = 0;
  uint64_t bn_param_count = 0;
  uint64_t bn_param_bytes = 0;
  uint64_t total_bytes = 0;
  uint64_t hypothetical_fp32_bytes = 0;  // every parameter at 4 bytes
  double reduction_ratio = 0;            // 1 - total/hypothetical_fp32
};

SizeReport size_report(const Network& net);

// FNV-1a 64-bit fold over a byte range; the file checksum.
uint64_t fnv1a64(const void* data, size_t len);

}  // namespace bced

#endif
