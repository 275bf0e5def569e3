#include "doctest.h"

#include <stdexcept>

#include <algorithm>

#include "bced/evalbench.hpp"

using namespace bced;

TEST_CASE("pixel_accuracy on a hand-built confusion") {
  //            truth: 0 0 1 1 2 2
  std::vector<uint8_t> truth = {0, 0, 1, 1, 2, 2};
  std::vector<uint8_t> pred = {0, 1, 1, 1, 2, 0};
  AccuracyResult r = pixel_accuracy(pred, truth, 3);
  CHECK(r.pixel_accuracy == doctest::Approx(4.0 / 6.0));
  CHECK(r.ink_accuracy == doctest::Approx(3.0 / 4.0));  // classes 1 and 2 only
  CHECK(r.per_class_accuracy[0] == doctest::Approx(0.5));
  CHECK(r.per_class_accuracy[1] == doctest::Approx(1.0));
  CHECK(r.per_class_accuracy[2] == doctest::Approx(0.5));
  CHECK(r.confusion_at(0, 1) == 1);
  CHECK(r.confusion_at(2, 0) == 1);
}

TEST_CASE("pixel_accuracy input validation") {
  std::vector<uint8_t> a = {0, 1}, b = {0};
  CHECK_THROWS_AS(pixel_accuracy(a, b, 2), std::invalid_argument);
  std::vector<uint8_t> bad = {0, 5};
  CHECK_THROWS_AS(pixel_accuracy(bad, a, 2), std::invalid_argument);
}

TEST_CASE("op_counts for the default architecture") {
  std::vector<uint64_t> ops = op_counts(default_config());
  REQUIRE(ops.size() == 11);
  // adapter: 32*128*3*3*1*64
  CHECK(ops[0] == 2359296u);
  // block 1: 32*128*3*3*64*512
  CHECK(ops[1] == 1207959552u);
  // block 8 unpools to 32x128 first: 32*128*3*3*512*512
  CHECK(ops[8] == 9663676416u);
  // block 8 is the largest block
  for (size_t i = 0; i < ops.size(); ++i) CHECK(ops[8] >= ops[i]);
  // classifier head: 32*128*1*1*512*27
  CHECK(ops[10] == 56623104u);
}

TEST_CASE("bench_forward validates its arguments and produces a table") {
  NetConfig cfg;
  cfg.input_h = 8;
  cfg.input_w = 8;
  cfg.num_classes = 3;
  cfg.blocks = {
      {BlockKind::adapter, 3, 3, 4, false, false, -1},
      {BlockKind::encoder, 3, 3, 8, true, false, -1},
      {BlockKind::decoder, 3, 3, 8, false, true, 1},
      {BlockKind::classifier_softmax, 1, 1, 3, false, false, -1},
  };
  Network net = build(cfg, 4);

  CHECK_THROWS_AS(bench_forward(net, 2, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(bench_forward(net, 2, 3, 0), std::invalid_argument);

  BenchResult r = bench_forward(net, 2, 3, 1);
  CHECK(r.blocks.size() == 4);
  CHECK(r.baseline_total_ns > 0);
  CHECK(r.packed_total_ns > 0);
  CHECK(r.speedup > 0);

  std::string csv = r.csv();
  CHECK(csv.rfind("block,path,ops,ns_per_image,speedup\n", 0) == 0);
  // one baseline and one packed row per block, plus the header
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
  CHECK(r.table().find("speedup") != std::string::npos);
}
