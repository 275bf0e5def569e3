#include "bced/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "bced/rng.hpp"

namespace bced {

AccuracyResult pixel_accuracy(const std::vector<uint8_t>& pred,
                              const std::vector<uint8_t>& truth,
                              int num_classes) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("pixel_accuracy: incongruent label maps");
  AccuracyResult r;
  r.num_classes = num_classes;
  r.confusion.assign(static_cast<size_t>(num_classes) * num_classes, 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= num_classes || truth[i] >= num_classes)
      throw std::invalid_argument("pixel_accuracy: label out of range");
    r.confusion[static_cast<size_t>(truth[i]) * num_classes + pred[i]]++;
  }
  uint64_t diag = 0, total = pred.size();
  uint64_t ink_diag = 0, ink_total = 0;
  r.per_class_accuracy.assign(num_classes, 0.0);
  for (int c = 0; c < num_classes; ++c) {
    uint64_t row = 0;
    for (int p = 0; p < num_classes; ++p) row += r.confusion_at(c, p);
    uint64_t hit = r.confusion_at(c, c);
    diag += hit;
    if (c != 0) {
      ink_diag += hit;
      ink_total += row;
    }
    r.per_class_accuracy[c] = row ? static_cast<double>(hit) / row : 0.0;
  }
  r.pixel_accuracy = static_cast<double>(diag) / total;
  r.ink_accuracy = ink_total ? static_cast<double>(ink_diag) / ink_total : 0.0;
  return r;
}

std::vector<uint64_t> op_counts(const NetConfig& config) {
  config.validate();
  std::vector<uint64_t> counts;
  uint64_t h = config.input_h, w = config.input_w;
  uint64_t in_c = 1;
  for (const BlockSpec& b : config.blocks) {
    if (b.has_unpool) {
      h *= 2;
      w *= 2;
    }
    counts.push_back(h * w * b.kernel_h * b.kernel_w * in_c * b.out_channels);
    if (b.has_pool) {
      h /= 2;
      w /= 2;
    }
    in_c = b.out_channels;
  }
  return counts;
}

BenchResult bench_forward(const Network& net, int batch, int reps, int warmup,
                          uint64_t seed) {
  if (reps < 3) throw std::invalid_argument("bench_forward: reps must be >= 3");
  if (warmup < 1) throw std::invalid_argument("bench_forward: warmup must be >= 1");

  const NetConfig& cfg = net.config;
  Rng rng(seed);
  std::vector<RealTensor> images;
  for (int i = 0; i < batch; ++i) {
    RealTensor img(cfg.input_h, cfg.input_w, 1);
    for (double& v : img.values) v = rng.uniform();
    images.push_back(std::move(img));
  }

  const size_t nblocks = cfg.blocks.size();
  auto run = [&](Mode mode, std::vector<double>* block_secs) -> double {
    BlockTimes times;
    double total = 0;
    if (block_secs) block_secs->assign(nblocks, 0.0);
    for (const RealTensor& img : images) {
      auto t0 = std::chrono::steady_clock::now();
      forward(net, img, mode, nullptr, block_secs ? &times : nullptr);
      total += std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                             t0).count();
      if (block_secs)
        for (size_t b = 0; b < nblocks; ++b) (*block_secs)[b] += times.seconds[b];
    }
    return total;
  };

  // Warmup doubles as the correctness gate: both paths must agree on every
  // label map before anything is timed.
  for (int wu = 0; wu < warmup; ++wu)
    for (const RealTensor& img : images) {
      auto real_labels = predict_labels(forward(net, img, Mode::real));
      auto packed_labels =
          predict_labels(forward(net, img, Mode::packed_folded));
      if (real_labels != packed_labels)
        throw std::runtime_error(
            "bench_forward: real and packed label maps disagree");
    }

  std::vector<double> base_totals, packed_totals;
  std::vector<std::vector<double>> base_blocks, packed_blocks;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> bb, pb;
    base_totals.push_back(run(Mode::real, &bb));
    packed_totals.push_back(run(Mode::packed_folded, &pb));
    base_blocks.push_back(std::move(bb));
    packed_blocks.push_back(std::move(pb));
  }

  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };

  BenchResult res;
  res.batch = batch;
  res.reps = reps;
  res.warmup = warmup;
  const double per_image = 1e9 / static_cast<double>(batch);
  res.baseline_total_ns = median(base_totals) * per_image;
  res.packed_total_ns = median(packed_totals) * per_image;
  res.speedup = res.baseline_total_ns / res.packed_total_ns;

  std::vector<uint64_t> ops = op_counts(cfg);
  for (size_t b = 0; b < nblocks; ++b) {
    std::vector<double> bt, pt;
    for (int r = 0; r < reps; ++r) {
      bt.push_back(base_blocks[r][b]);
      pt.push_back(packed_blocks[r][b]);
    }
    BenchResult::Block blk;
    blk.ops = ops[b];
    blk.baseline_ns_per_image = median(bt) * per_image;
    blk.packed_ns_per_image = median(pt) * per_image;
    blk.speedup = blk.packed_ns_per_image > 0
                      ? blk.baseline_ns_per_image / blk.packed_ns_per_image
                      : 0.0;
    res.blocks.push_back(blk);
  }
  return res;
}

std::string BenchResult::table() const {
  std::ostringstream os;
  os << "block  ops              baseline_ms  packed_ms  speedup\n";
  char line[160];
  for (size_t b = 0; b < blocks.size(); ++b) {
    std::snprintf(line, sizeof(line), "%-6zu %-16llu %-12.3f %-10.3f %.2fx\n",
                  b, static_cast<unsigned long long>(blocks[b].ops),
                  blocks[b].baseline_ns_per_image / 1e6,
                  blocks[b].packed_ns_per_image / 1e6, blocks[b].speedup);
    os << line;
  }
  std::snprintf(line, sizeof(line),
                "total  per image: baseline %.3f ms, packed %.3f ms, "
                "speedup %.2fx (batch %d, median of %d reps)\n",
                baseline_total_ns / 1e6, packed_total_ns / 1e6, speedup, batch,
                reps);
  os << line;
  os << "reference GPU figures reported for this architecture: 4.59 ms, 8x "
        "average, 17.7x peak (block-8)\n";
  return os.str();
}

std::string BenchResult::csv() const {
  std::ostringstream os;
  os << "block,path,ops,ns_per_image,speedup\n";
  for (size_t b = 0; b < blocks.size(); ++b) {
    os << b << ",baseline," << blocks[b].ops << ","
       << static_cast<uint64_t>(blocks[b].baseline_ns_per_image) << ","
       << blocks[b].speedup << "\n";
    os << b << ",packed," << blocks[b].ops << ","
       << static_cast<uint64_t>(blocks[b].packed_ns_per_image) << ","
       << blocks[b].speedup << "\n";
  }
  return os.str();
}

}  // namespace bced
