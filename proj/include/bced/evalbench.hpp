#ifndef BCED_EVALBENCH_HPP
#define BCED_EVALBENCH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "bced/netgraph.hpp"

namespace bced {

struct AccuracyResult {
  double pixel_accuracy = 0;
  double ink_accuracy = 0;  // background pixels excluded from the denominator
  std::vector<double> per_class_accuracy;
  std::vector<uint64_t> confusion;  // num_classes x num_classes, row = truth
  int num_classes = 0;

  uint64_t confusion_at(int truth, int pred) const {
    return confusion[static_cast<size_t>(truth) * num_classes + pred];
  }
};

AccuracyResult pixel_accuracy(const std::vector<uint8_t>& pred,
                              const std::vector<uint8_t>& truth,
                              int num_classes);

// Analytic accumulate-equivalents per block: outH*outW*kh*kw*inC*outC.
std::vector<uint64_t> op_counts(const NetConfig& config);

struct BenchResult {
  struct Block {
    uint64_t ops = 0;
    double baseline_ns_per_image = 0;
    double packed_ns_per_image = 0;
    double speedup = 0;
  };
  std::vector<Block> blocks;
  double baseline_total_ns = 0;  // per image
  double packed_total_ns = 0;
  double speedup = 0;
  int batch = 0, reps = 0, warmup = 0;

  std::string table() const;
  std::string csv() const;
};

// Median-of-reps timing of the real-path baseline vs the packed folded path.
// The warmup pass doubles as a label-map agreement check between the paths.
BenchResult bench_forward(const Network& net, int batch, int reps, int warmup,
                          uint64_t seed = 42);

}  // namespace bced

#endif
