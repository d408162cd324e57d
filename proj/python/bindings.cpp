#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <optional>
#include <sstream>

#include "eifnet/config.hpp"
#include "eifnet/encoding.hpp"
#include "eifnet/error.hpp"
#include "eifnet/events.hpp"
#include "eifnet/gradcheck_suite.hpp"
#include "eifnet/synth.hpp"
#include "eifnet/tensor_io.hpp"
#include "eifnet/train.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace eifnet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

FloatArray to_numpy(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor<float> from_numpy(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

// Events travel as an [N,4] int64 array of (t_us, x, y, p).
IntArray events_to_numpy(const std::vector<Event>& events) {
  IntArray out({py::ssize_t(events.size()), py::ssize_t(4)});
  auto r = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < events.size(); ++i) {
    r(i, 0) = events[i].t_us;
    r(i, 1) = events[i].x;
    r(i, 2) = events[i].y;
    r(i, 3) = events[i].p;
  }
  return out;
}

std::vector<Event> events_from_numpy(const IntArray& a, SensorDims dims) {
  if (a.ndim() != 2 || (a.shape(0) > 0 && a.shape(1) != 4)) throw py::value_error("events must be an [N,4] array");
  auto r = a.unchecked<2>();
  std::vector<Event> events(std::size_t(a.shape(0)));
  for (std::size_t i = 0; i < events.size(); ++i) {
    events[i] = Event{r(i, 0), std::int32_t(r(i, 1)), std::int32_t(r(i, 2)), std::int8_t(r(i, 3))};
  }
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.t_us < 0 || e.x < 0 || e.y < 0 || std::size_t(e.x) >= dims.width || std::size_t(e.y) >= dims.height ||
        (e.p != 1 && e.p != -1)) {
      throw ValidationError(i + 1, "event outside the sensor or with polarity other than +-1");
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& x, const Event& y) { return x.t_us < y.t_us; });
  return events;
}

NetworkConfig config_arg(const std::optional<std::string>& json) {
  return json ? config_from_json(*json) : NetworkConfig{};
}

py::dict metrics_dict(const SegMetrics& m) {
  return py::dict("miou"_a = m.miou, "pa"_a = m.pa, "iou"_a = m.iou);
}

NetworkInputs inputs_from(const NetworkConfig& cfg, const FloatArray& image, const IntArray& events,
                          std::int64_t t_end, std::optional<std::int64_t> window_us,
                          const std::optional<FloatArray>& labels) {
  const SensorDims dims{cfg.height, cfg.width};
  const EventWindow w = window(events_from_numpy(events, dims), t_end, window_us.value_or(cfg.window_us), dims);
  std::vector<int> ids;
  if (labels) ids = labels_from_tensor(from_numpy(*labels));
  return make_inputs(from_numpy(image), encode(w, cfg.bins), std::move(ids));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Event-image fusion toolkit: event encoding, synthetic scenes and a toy segmentation network";

  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  m.attr("DEFAULT_BINS") = kDefaultBins;
  m.attr("DEFAULT_WINDOW_US") = kDefaultWindowUs;
  m.attr("GRAD_TOLERANCE") = kGradTolerance;

  m.def("kernel_k", &kernel_k, "z"_a, "Triangular kernel max(0, 1 - |z|).");

  m.def(
      "parse_events",
      [](const std::string& text, std::size_t height, std::size_t width) {
        return events_to_numpy(parse_events(text, {height, width}));
      },
      "text"_a, "height"_a, "width"_a, "Parse event CSV text into a sorted [N,4] array (t_us, x, y, p).");
  m.def(
      "format_events",
      [](const IntArray& events, std::size_t height, std::size_t width) {
        std::ostringstream out;
        write_events(out, events_from_numpy(events, {height, width}));
        return out.str();
      },
      "events"_a, "height"_a, "width"_a);

  m.def(
      "encode",
      [](const IntArray& events, std::size_t height, std::size_t width, std::optional<std::int64_t> t_end,
         std::int64_t window_us, std::size_t bins) {
        const SensorDims dims{height, width};
        const auto ev = events_from_numpy(events, dims);
        const std::int64_t end = t_end.value_or(ev.empty() ? window_us : ev.back().t_us + 1);
        const EncodedEvents enc = encode(window(ev, end, window_us, dims), bins);
        return py::make_tuple(to_numpy(enc.e_vt), to_numpy(enc.a_cm));
      },
      "events"_a, "height"_a, "width"_a, "t_end"_a = py::none(), "window_us"_a = kDefaultWindowUs,
      "bins"_a = kDefaultBins,
      "Encode the events in [t_end - window_us, t_end) into (e_vt, a_cm), each [bins, H, W]. "
      "t_end defaults to the last timestamp + 1.");

  m.def(
      "synth_scene",
      [](std::uint64_t seed, std::size_t height, std::size_t width, std::size_t objects, double noise,
         std::int64_t window_us) {
        SynthParams p;
        p.seed = seed;
        p.dims = {height, width};
        p.n_objects = objects;
        p.noise_rate = noise;
        p.window_us = window_us;
        const SyntheticScene s = synth_scene(p);
        return py::dict("events"_a = events_to_numpy(s.events), "image"_a = to_numpy(s.image),
                        "labels"_a = to_numpy(s.labels), "classes"_a = s.class_count);
      },
      "seed"_a = 1, "height"_a = 64, "width"_a = 64, "objects"_a = 2, "noise"_a = 0.0,
      "window_us"_a = kDefaultWindowUs);

  m.def("read_tensor", [](const std::string& path) { return to_numpy(read_tensor(path)); }, "path"_a);
  m.def(
      "write_tensor", [](const std::string& path, const FloatArray& a) { write_tensor(path, from_numpy(a)); },
      "path"_a, "array"_a);

  m.def("default_config", []() { return config_to_json(NetworkConfig{}); });
  m.def("minimal_config", []() { return config_to_json(minimal_config()); });
  m.def(
      "validate_config", [](const std::string& json) { return config_to_json(config_from_json(json)); }, "json"_a,
      "Parse, validate and return the normalized config JSON.");

  m.def(
      "forward",
      [](const FloatArray& image, const IntArray& events, std::int64_t t_end, std::optional<std::string> config,
         std::optional<FloatArray> labels, std::optional<std::int64_t> window_us) {
        const NetworkConfig cfg = config_arg(config);
        Eifnet net(cfg);
        ParamStore<float> params = net.make_params<float>();
        const Evaluation ev = evaluate(net, params, inputs_from(cfg, image, events, t_end, window_us, labels));
        py::dict out("logits"_a = to_numpy(ev.logits), "pred"_a = ev.pred);
        if (ev.metrics) {
          out["loss"] = ev.loss;
          out["metrics"] = metrics_dict(*ev.metrics);
        }
        return out;
      },
      "image"_a, "events"_a, "t_end"_a, "config"_a = py::none(), "labels"_a = py::none(),
      "window_us"_a = py::none(), "Forward pass with freshly seeded parameters.");

  m.def(
      "train",
      [](const FloatArray& image, const IntArray& events, std::int64_t t_end, const FloatArray& labels,
         std::optional<std::string> config, std::size_t steps, double lr) {
        const NetworkConfig cfg = config_arg(config);
        const NetworkInputs in = inputs_from(cfg, image, events, t_end, std::nullopt, labels);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_toy(cfg, in, TrainOptions{steps, lr});
        }
        return py::dict("losses"_a = r.losses, "final_loss"_a = r.final_loss, "metrics"_a = metrics_dict(r.metrics),
                        "diverged"_a = r.diverged, "message"_a = r.message);
      },
      "image"_a, "events"_a, "t_end"_a, "labels"_a, "config"_a = py::none(), "steps"_a = 200, "lr"_a = 0.05);

  m.def("gradcheck_modules", &gradcheck_modules);
  m.def(
      "gradcheck",
      [](const std::string& module, std::uint64_t seed) {
        ModuleGradReport r;
        {
          py::gil_scoped_release release;
          r = gradcheck_module(module, seed);
        }
        return py::dict("module"_a = r.module, "max_error"_a = r.max_error(), "coords"_a = r.coords(),
                        "passed"_a = r.passed(), "seconds"_a = r.seconds);
      },
      "module"_a, "seed"_a = 1);
}
