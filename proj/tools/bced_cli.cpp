// Command-line entry point: render / train / infer / eval / bench / inspect.
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "bced/evalbench.hpp"
#include "bced/modelio.hpp"
#include "bced/netgraph.hpp"
#include "bced/pgm.hpp"
#include "bced/refpath.hpp"
#include "bced/textgen.hpp"
#include "bced/trainer.hpp"

namespace {

using namespace bced;

NetConfig config_from_arg(const std::string& arg) {
  if (arg.empty() || arg == "default") return default_config();
  return NetConfig::from_text(read_file(arg));
}

int cmd_render(size_t count, uint64_t seed, const std::string& out,
               const RenderParams& params) {
  DatasetManifest m = render_dataset(count, seed, params, out);
  std::printf("wrote %zu samples to %s (seed %llu)\n", m.count, out.c_str(),
              static_cast<unsigned long long>(m.seed));
  std::printf("class pixel histogram:");
  for (int c = 0; c < kNumClasses; ++c)
    std::printf(" %llu", static_cast<unsigned long long>(m.class_pixels[c]));
  std::printf("\n");
  return 0;
}

int cmd_train(const std::string& data, const std::string& val_path, int epochs,
              const std::string& config_arg, uint64_t seed,
              const std::string& out_model, const std::string& resume,
              FitOptions opts, bool recalibrate) {
  auto train_set = load_dataset(data);
  std::vector<DatasetSample> val_set;
  if (!val_path.empty()) val_set = load_dataset(val_path);

  Network net;
  opts.verbose = true;
  if (!resume.empty()) {
    net = load_model(resume);
    opts.start_epoch = load_latent(net, resume + ".latent");
    std::printf("resuming at epoch %d\n", opts.start_epoch);
  } else {
    net = build(config_from_arg(config_arg), seed);
  }

  TrainReport report = fit(net, train_set, val_set, epochs, seed, opts);
  if (recalibrate) {
    // population statistics from a bounded prefix (one batch must fit memory)
    size_t n = std::min<size_t>(train_set.size(), 64);
    recalibrate_bn(net, {train_set.begin(), train_set.begin() + n});
    std::printf("recalibrated batch-norm statistics on %zu samples\n", n);
  }
  size_t bytes = save_model(net, out_model);
  int done = opts.start_epoch + epochs;
  save_latent(net, done, out_model + ".latent");
  std::printf("saved %s (%zu bytes) after %d epochs\n", out_model.c_str(),
              bytes, done);
  if (!report.epochs.empty())
    std::printf("final loss %.6f val_acc %.4f\n", report.epochs.back().mean_loss,
                report.epochs.back().val_accuracy);
  return 0;
}

int cmd_infer(const std::string& model_path, const std::string& image_path,
              const std::string& out_dir, const std::string& mode_name_arg) {
  Network net = load_model(model_path);
  PgmImage img = read_pgm(image_path);
  if (img.width != net.config.input_w || img.height != net.config.input_h)
    throw std::runtime_error("image dimensions do not match model config");
  RealTensor input(img.height, img.width, 1);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    input.values[i] = img.pixels[i] / 255.0;

  RealTensor salience = forward(net, input, mode_from_name(mode_name_arg));
  std::vector<uint8_t> labels = predict_labels(salience);

  std::filesystem::create_directories(out_dir);
  const size_t pixels = labels.size();
  std::vector<uint8_t> plane(pixels);
  for (int c = 0; c < net.config.num_classes; ++c) {
    for (size_t p = 0; p < pixels; ++p)
      plane[p] = static_cast<uint8_t>(
          std::floor(salience.values[p * net.config.num_classes + c] * 255.0 +
                     0.5));
    char name[32];
    std::snprintf(name, sizeof(name), "class_%02d.pgm", c);
    write_pgm(out_dir + "/" + name, img.width, img.height, plane.data());
  }
  for (size_t p = 0; p < pixels; ++p)
    plane[p] = static_cast<uint8_t>(labels[p] * 9);
  write_pgm(out_dir + "/labels.pgm", img.width, img.height, plane.data());
  std::printf("wrote %d salience maps and labels.pgm to %s\n",
              net.config.num_classes, out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data,
             const std::string& csv_path, bool ink_only) {
  Network net = load_model(model_path);
  auto samples = load_dataset(data);
  std::vector<uint8_t> pred_all, truth_all;
  for (const DatasetSample& s : samples) {
    auto pred = predict_labels(forward(net, s.image, Mode::packed_folded));
    pred_all.insert(pred_all.end(), pred.begin(), pred.end());
    truth_all.insert(truth_all.end(), s.labels.begin(), s.labels.end());
  }
  AccuracyResult r = pixel_accuracy(pred_all, truth_all, net.config.num_classes);
  std::printf("pixel accuracy: %.4f over %zu samples\n", r.pixel_accuracy,
              samples.size());
  std::printf("ink-only accuracy: %.4f\n", r.ink_accuracy);
  if (!ink_only) {
    std::printf("per-class accuracy:\n");
    for (int c = 0; c < r.num_classes; ++c)
      std::printf("  %2d %c : %.4f\n", c, c == 0 ? '.' : char('A' + c - 1),
                  r.per_class_accuracy[c]);
  }
  if (!csv_path.empty()) {
    std::string csv = "class,accuracy\n";
    for (int c = 0; c < r.num_classes; ++c)
      csv += std::to_string(c) + "," + std::to_string(r.per_class_accuracy[c]) +
             "\n";
    write_file_atomic(csv_path, csv);
  }
  return 0;
}

int cmd_bench(const std::string& model_path, int batch, int reps, int warmup,
              const std::string& csv_path) {
  Network net = load_model(model_path);
  BenchResult r = bench_forward(net, batch, reps, warmup);
  std::fputs(r.table().c_str(), stdout);
  if (!csv_path.empty()) write_file_atomic(csv_path, r.csv());
  return 0;
}

int cmd_inspect(const std::string& model_path) {
  Network net = load_model(model_path);
  SizeReport r = size_report(net);
  std::printf("config:\n%s", net.config.to_text().c_str());
  std::printf("binary parameters : %llu (%llu packed bytes)\n",
              static_cast<unsigned long long>(r.binary_param_count),
              static_cast<unsigned long long>(r.binary_packed_bytes));
  std::printf("real parameters   : %llu (%llu bytes)\n",
              static_cast<unsigned long long>(r.real_param_count),
              static_cast<unsigned long long>(r.real_bytes));
  std::printf("bn parameters     : %llu (%llu bytes)\n",
              static_cast<unsigned long long>(r.bn_param_count),
              static_cast<unsigned long long>(r.bn_param_bytes));
  std::printf("total bytes       : %llu\n",
              static_cast<unsigned long long>(r.total_bytes));
  std::printf("fp32 equivalent   : %llu bytes\n",
              static_cast<unsigned long long>(r.hypothetical_fp32_bytes));
  std::printf("memory reduction  : %.2f%%\n", r.reduction_ratio * 100.0);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binary convolutional encoder-decoder engine"};
  app.require_subcommand(1);

  int threads = 0;  // 0 = machine parallelism; outputs never depend on it
  if (const char* env = std::getenv("BCED_THREADS")) threads = std::atoi(env);
  app.add_option("--threads", threads, "execution contexts to use");

  // render
  auto* render = app.add_subcommand("render", "generate a labeled dataset");
  size_t count = 0;
  uint64_t seed = 1;
  std::string out;
  RenderParams params;
  render->add_option("--count", count, "number of samples")
      ->required()
      ->check(CLI::PositiveNumber);
  render->add_option("--seed", seed, "base seed");
  render->add_option("--out", out, "output directory")->required();
  render->add_option("--noise", params.noise_sigma, "gaussian noise sigma");
  render->add_option("--rotation", params.max_rotation, "max rotation (rad)");
  render->add_option("--shear", params.max_shear, "max shear");
  render->add_option("--perspective", params.max_perspective,
                     "max projective coefficient");
  render->add_option("--scale-min", params.scale_min, "min glyph scale");
  render->add_option("--scale-max", params.scale_max, "max glyph scale");
  render->add_option("--contrast", params.min_contrast, "min |fg-bg|");
  render->add_option("--jitter", params.max_jitter, "per-char jitter (px)");
  render->add_option("--len-min", params.min_length, "min string length");
  render->add_option("--len-max", params.max_length, "max string length");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string data, val_path, config_arg = "default", out_model, resume;
  int epochs = 1;
  train->add_option("--data", data, "training dataset directory")->required();
  train->add_option("--val", val_path, "validation dataset directory");
  train->add_option("--epochs", epochs, "epochs to run")
      ->check(CLI::PositiveNumber);
  train->add_option("--config", config_arg, "config file or 'default'");
  train->add_option("--seed", seed, "seed");
  train->add_option("--out-model", out_model, "output model path")->required();
  train->add_option("--resume", resume,
                    "model to resume from (expects <model>.latent sidecar)");
  FitOptions fit_opts;
  bool recalibrate = false;
  train->add_option("--lr", fit_opts.lr, "initial learning rate");
  train->add_option("--lr-decay", fit_opts.lr_decay, "per-epoch lr decay");
  train->add_option("--batch", fit_opts.batch_size, "mini-batch size")
      ->check(CLI::PositiveNumber);
  train->add_flag("--freeze-bn", fit_opts.freeze_bn_stats,
                  "normalize with running stats (fine-tuning)");
  train->add_flag("--recalibrate", recalibrate,
                  "recalibrate batch-norm statistics after training");

  // infer
  auto* infer = app.add_subcommand("infer", "run one image through a model");
  std::string model_path, image_path, out_dir, mode_arg = "packed_folded";
  infer->add_option("--model", model_path, "model file")->required();
  infer->add_option("--image", image_path, "input PGM (model input size)")
      ->required();
  infer->add_option("--out-dir", out_dir, "output directory")->required();
  infer->add_option("--mode", mode_arg,
                    "real | packed_unfolded | packed_folded");

  // eval
  auto* eval = app.add_subcommand("eval", "pixel accuracy on a dataset");
  std::string csv_path;
  bool ink_only = false;
  eval->add_option("--model", model_path, "model file")->required();
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--csv", csv_path, "write per-class CSV here");
  eval->add_flag("--ink-only", ink_only, "skip the per-class table");

  // bench
  auto* bench = app.add_subcommand("bench", "time baseline vs packed path");
  int batch = 16, reps = 3, warmup = 1;
  bench->add_option("--model", model_path, "model file")->required();
  bench->add_option("--batch", batch, "batch size");
  bench->add_option("--reps", reps, "timed repetitions (>=3)");
  bench->add_option("--warmup", warmup, "warmup passes (>=1)");
  bench->add_option("--csv", csv_path, "write CSV here");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "size report + config echo");
  inspect->add_option("--model", model_path, "model file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // usage errors are exit code 1; --help is 0
  }

  try {
    if (render->parsed()) return cmd_render(count, seed, out, params);
    if (train->parsed())
      return cmd_train(data, val_path, epochs, config_arg, seed, out_model,
                       resume, fit_opts, recalibrate);
    if (infer->parsed())
      return cmd_infer(model_path, image_path, out_dir, mode_arg);
    if (eval->parsed()) return cmd_eval(model_path, data, csv_path, ink_only);
    if (bench->parsed())
      return cmd_bench(model_path, batch, reps, warmup, csv_path);
    if (inspect->parsed()) return cmd_inspect(model_path);
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::string what = e.what();
    std::cerr << "error: " << what << "\n";
    return what.find("non-finite") != std::string::npos ? 3 : 2;
  }
  return 1;
}
