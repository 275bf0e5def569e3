// pybind11 surface over the core: render, build/load, forward, train, sizes.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bced/evalbench.hpp"
#include "bced/modelio.hpp"
#include "bced/netgraph.hpp"
#include "bced/textgen.hpp"
#include "bced/trainer.hpp"

namespace py = pybind11;
using namespace bced;

namespace {

py::array_t<double> tensor_to_array(const RealTensor& t) {
  py::array_t<double> arr({t.height, t.width, t.channels});
  std::copy(t.values.begin(), t.values.end(), arr.mutable_data());
  return arr;
}

RealTensor array_to_tensor(const py::array_t<double, py::array::c_style |
                                                         py::array::forcecast>& arr) {
  if (arr.ndim() == 2) {
    RealTensor t(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)), 1);
    std::copy(arr.data(), arr.data() + arr.size(), t.values.begin());
    return t;
  }
  if (arr.ndim() != 3) throw std::invalid_argument("expected a HxW or HxWxC array");
  RealTensor t(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
               static_cast<int>(arr.shape(2)));
  std::copy(arr.data(), arr.data() + arr.size(), t.values.begin());
  return t;
}

py::array_t<uint8_t> labels_to_array(const std::vector<uint8_t>& labels, int h, int w) {
  py::array_t<uint8_t> arr({h, w});
  std::copy(labels.begin(), labels.end(), arr.mutable_data());
  return arr;
}

RenderParams params_from_kwargs(const py::kwargs& kw) {
  RenderParams p;
  for (auto item : kw) {
    const std::string key = py::cast<std::string>(item.first);
    const double v = py::cast<double>(item.second);
    if (key == "scale_min") p.scale_min = v;
    else if (key == "scale_max") p.scale_max = v;
    else if (key == "max_rotation") p.max_rotation = v;
    else if (key == "max_shear") p.max_shear = v;
    else if (key == "max_perspective") p.max_perspective = v;
    else if (key == "min_contrast") p.min_contrast = v;
    else if (key == "noise_sigma") p.noise_sigma = v;
    else if (key == "max_jitter") p.max_jitter = v;
    else if (key == "min_length") p.min_length = static_cast<int>(v);
    else if (key == "max_length") p.max_length = static_cast<int>(v);
    else throw std::invalid_argument("unknown render parameter: " + key);
  }
  return p;
}

}  // namespace

PYBIND11_MODULE(_bced, m) {
  m.doc() = "binary convolutional encoder-decoder engine";

  py::class_<Network>(m, "Network")
      .def_property_readonly("config_text",
                             [](const Network& n) { return n.config.to_text(); })
      .def_property_readonly("binary_param_count",
                             [](const Network& n) { return n.binary_param_count(); })
      .def("forward",
           [](const Network& n, const py::array_t<double>& image,
              const std::string& mode) {
             return tensor_to_array(forward(n, array_to_tensor(image),
                                            mode_from_name(mode)));
           },
           py::arg("image"), py::arg("mode") = "packed_folded")
      .def("predict",
           [](const Network& n, const py::array_t<double>& image,
              const std::string& mode) {
             RealTensor t = array_to_tensor(image);
             auto labels = predict_labels(forward(n, t, mode_from_name(mode)));
             return labels_to_array(labels, t.height, t.width);
           },
           py::arg("image"), py::arg("mode") = "packed_folded")
      .def("save", [](const Network& n, const std::string& path) {
        return save_model(n, path);
      })
      .def("size_report", [](const Network& n) {
        SizeReport r = size_report(n);
        py::dict d;
        d["binary_param_count"] = r.binary_param_count;
        d["binary_packed_bytes"] = r.binary_packed_bytes;
        d["real_param_count"] = r.real_param_count;
        d["real_bytes"] = r.real_bytes;
        d["bn_param_count"] = r.bn_param_count;
        d["bn_param_bytes"] = r.bn_param_bytes;
        d["total_bytes"] = r.total_bytes;
        d["hypothetical_fp32_bytes"] = r.hypothetical_fp32_bytes;
        d["reduction_ratio"] = r.reduction_ratio;
        return d;
      });

  m.def("default_config_text", [] { return default_config().to_text(); });

  m.def("build",
        [](const std::string& config_text, uint64_t seed) {
          return build(config_text.empty() ? default_config()
                                           : NetConfig::from_text(config_text),
                       seed);
        },
        py::arg("config_text") = "", py::arg("seed") = 1);

  m.def("load_model", &load_model, py::arg("path"));

  m.def("render_sample",
        [](uint64_t seed, const py::kwargs& kw) {
          LabeledSample s = render_sample(seed, params_from_kwargs(kw));
          py::dict d;
          d["image"] = tensor_to_array(s.image);
          d["labels"] = labels_to_array(s.labels, s.image.height, s.image.width);
          d["text"] = s.text;
          d["seed"] = s.seed;
          return d;
        },
        py::arg("seed"));

  m.def("render_dataset",
        [](size_t count, uint64_t seed, const std::string& out_path,
           const py::kwargs& kw) {
          DatasetManifest man =
              render_dataset(count, seed, params_from_kwargs(kw), out_path);
          py::dict d;
          d["count"] = man.count;
          d["seed"] = man.seed;
          d["class_pixels"] = std::vector<uint64_t>(man.class_pixels.begin(),
                                                    man.class_pixels.end());
          return d;
        },
        py::arg("count"), py::arg("seed"), py::arg("out_path"));

  m.def("load_dataset", [](const std::string& path) {
    py::list out;
    for (const DatasetSample& s : load_dataset(path)) {
      py::dict d;
      d["image"] = tensor_to_array(s.image);
      d["labels"] = labels_to_array(s.labels, s.image.height, s.image.width);
      out.append(d);
    }
    return out;
  });

  m.def("fit",
        [](Network& net, const std::string& train_dir, const std::string& val_dir,
           int epochs, uint64_t seed, double lr, double lr_decay,
           int batch_size, bool freeze_bn, bool recalibrate) {
          auto train_set = load_dataset(train_dir);
          std::vector<DatasetSample> val_set;
          if (!val_dir.empty()) val_set = load_dataset(val_dir);
          FitOptions opts;
          opts.lr = lr;
          opts.lr_decay = lr_decay;
          opts.batch_size = batch_size;
          opts.freeze_bn_stats = freeze_bn;
          TrainReport rep = fit(net, train_set, val_set, epochs, seed, opts);
          if (recalibrate) {
            size_t n = std::min<size_t>(train_set.size(), 64);
            recalibrate_bn(net, {train_set.begin(), train_set.begin() + n});
          }
          py::list out;
          for (const auto& e : rep.epochs) {
            py::dict d;
            d["epoch"] = e.epoch;
            d["mean_loss"] = e.mean_loss;
            d["val_accuracy"] = e.val_accuracy;
            d["lr"] = e.lr;
            out.append(d);
          }
          return out;
        },
        py::arg("net"), py::arg("train_dir"), py::arg("val_dir") = "",
        py::arg("epochs") = 1, py::arg("seed") = 1, py::arg("lr") = 0.002,
        py::arg("lr_decay") = 0.9, py::arg("batch_size") = 20,
        py::arg("freeze_bn") = false, py::arg("recalibrate") = false);

  m.def("pixel_accuracy",
        [](const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& truth,
           int num_classes) {
          std::vector<uint8_t> p(pred.data(), pred.data() + pred.size());
          std::vector<uint8_t> t(truth.data(), truth.data() + truth.size());
          AccuracyResult r = pixel_accuracy(p, t, num_classes);
          py::dict d;
          d["pixel_accuracy"] = r.pixel_accuracy;
          d["ink_accuracy"] = r.ink_accuracy;
          d["per_class_accuracy"] = r.per_class_accuracy;
          return d;
        },
        py::arg("pred"), py::arg("truth"), py::arg("num_classes") = 27);

  m.def("op_counts", [](const std::string& config_text) {
    return op_counts(config_text.empty() ? default_config()
                                         : NetConfig::from_text(config_text));
  }, py::arg("config_text") = "");
}
