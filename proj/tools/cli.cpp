#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

#include "eifnet/config.hpp"
#include "eifnet/encoding.hpp"
#include "eifnet/error.hpp"
#include "eifnet/events.hpp"
#include "eifnet/gradcheck_suite.hpp"
#include "eifnet/metrics.hpp"
#include "eifnet/synth.hpp"
#include "eifnet/tensor_io.hpp"
#include "eifnet/train.hpp"

namespace eifnet::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

SensorDims parse_dims(const std::string& text) {
  const auto x = text.find_first_of("xX");
  auto number = [&](std::string_view s) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || v == 0) {
      throw UsageError("--dims must look like HxW, got '" + text + "'");
    }
    return v;
  };
  if (x == std::string::npos) throw UsageError("--dims must look like HxW, got '" + text + "'");
  const std::string_view sv(text);
  return {number(sv.substr(0, x)), number(sv.substr(x + 1))};
}

std::string dims_str(SensorDims d) { return std::to_string(d.height) + "x" + std::to_string(d.width); }

NetworkConfig config_or_default(const std::string& path) {
  return path.empty() ? NetworkConfig{} : load_config(path);
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << v;
  return ss.str();
}

std::string sci(double v) {
  std::ostringstream ss;
  ss << std::scientific << std::setprecision(3) << v;
  return ss.str();
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::int64_t default_t_end(const std::vector<Event>& events, std::int64_t fallback) {
  return events.empty() ? fallback : events.back().t_us + 1;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::uint64_t seed = 1;
  std::string dims = "64x64";
  std::size_t objects = 2;
  double noise = 0.0;
  std::int64_t window_us = kDefaultWindowUs;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthParams p;
  p.seed = a.seed;
  p.dims = parse_dims(a.dims);
  p.n_objects = a.objects;
  p.noise_rate = a.noise;
  p.window_us = a.window_us;
  const SyntheticScene scene = synth_scene(p);
  save_scene(a.out, scene);
  out << "scene " << a.out << ": " << dims_str(p.dims) << ", " << scene.objects.size() << " objects, "
      << scene.events.size() << " events, " << scene.class_count << " classes\n";
  return kExitOk;
}

struct EncodeArgs {
  std::string events;
  std::string dims;
  std::optional<std::int64_t> t_end;
  std::int64_t window_us = kDefaultWindowUs;
  std::size_t bins = kDefaultBins;
  std::string out;
};

int cmd_encode(const EncodeArgs& a, std::ostream& out) {
  const SensorDims dims = parse_dims(a.dims);
  const std::vector<Event> events = read_events(a.events, dims);
  const std::int64_t t_end = a.t_end.value_or(default_t_end(events, a.window_us));
  const EventWindow w = window(events, t_end, a.window_us, dims);
  const EncodedEvents enc = encode(w, a.bins);
  const fs::path evt = a.out + "_evt.eift";
  const fs::path acm = a.out + "_acm.eift";
  ensure_parent(evt);
  write_tensor(evt, enc.e_vt);
  write_tensor(acm, enc.a_cm);
  out << "encoded " << w.count() << " of " << events.size() << " events in [" << w.t_start_us << ", "
      << w.t_end_us << ") us into " << a.bins << " bins: " << evt.string() << ", " << acm.string() << '\n';
  return kExitOk;
}

struct ForwardArgs {
  std::string config;
  std::string scene;
  std::string out;
  std::string pred;
};

void print_metrics(std::ostream& out, const SegMetrics& m) {
  out << "mIoU " << fmt(m.miou) << "  PA " << fmt(m.pa) << '\n';
}

int cmd_forward(const ForwardArgs& a, std::ostream& out) {
  const NetworkConfig cfg = config_or_default(a.config);
  const SyntheticScene scene = load_scene(a.scene);
  const NetworkInputs in = scene_inputs(cfg, scene);
  Eifnet net(cfg);
  ParamStore<float> params = net.make_params<float>();
  const Evaluation ev = evaluate(net, params, in);
  ensure_parent(a.out);
  write_tensor(a.out, ev.logits);
  if (!a.pred.empty()) {
    ensure_parent(a.pred);
    write_tensor(a.pred, labels_to_tensor(ev.pred, {cfg.height, cfg.width}));
  }
  out << "logits " << shape_str(ev.logits.shape()) << " -> " << a.out << '\n';
  out << "loss " << fmt(ev.loss) << '\n';
  print_metrics(out, *ev.metrics);
  return kExitOk;
}

struct GradcheckArgs {
  std::string module = "all";
  std::uint64_t seed = 1;
  bool verbose = false;
  double fault = 0.0;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  std::vector<std::string> modules;
  if (a.module == "all") {
    modules = gradcheck_modules();
  } else {
    const auto& known = gradcheck_modules();
    if (std::find(known.begin(), known.end(), a.module) == known.end()) {
      throw UsageError("unknown module '" + a.module + "'");
    }
    modules = {a.module};
  }
  bool ok = true;
  out << std::left << std::setw(10) << "module" << std::right << std::setw(8) << "groups" << std::setw(9)
      << "coords" << std::setw(14) << "max_rel_err" << std::setw(10) << "seconds" << "  status\n";
  for (const auto& m : modules) {
    const ModuleGradReport r = gradcheck_module(m, a.seed, a.fault);
    ok = ok && r.passed();
    out << std::left << std::setw(10) << m << std::right << std::setw(8) << r.rows.size() << std::setw(9)
        << r.coords() << std::setw(14) << sci(r.max_error()) << std::setw(10) << fmt(r.seconds, 2) << "  "
        << (r.passed() ? "ok" : "FAIL") << '\n';
    if (a.verbose) {
      for (const auto& row : r.rows) {
        out << "    " << std::left << std::setw(36) << row.group << std::right << std::setw(6) << row.coords
            << std::setw(14) << sci(row.max_rel_error) << '\n';
      }
    }
  }
  out << "tolerance " << sci(kGradTolerance) << ": " << (ok ? "all passed" : "FAILED") << '\n';
  return ok ? kExitOk : kExitCheckFailed;
}

struct TrainArgs {
  std::string config;
  std::string scene;
  std::size_t steps = 200;
  double lr = 0.05;
  std::string out;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const NetworkConfig cfg = config_or_default(a.config);
  const NetworkInputs in = scene_inputs(cfg, load_scene(a.scene));
  const TrainResult r = train_toy(cfg, in, {a.steps, a.lr});
  if (!a.out.empty()) {
    ensure_parent(a.out);
    std::ofstream csv(a.out, std::ios::trunc);
    if (!csv) throw Error("cannot write " + a.out);
    csv << "step,loss\n" << std::setprecision(9);
    for (std::size_t i = 0; i < r.losses.size(); ++i) csv << i << ',' << r.losses[i] << '\n';
    if (!csv) throw Error("failed writing " + a.out);
  }
  if (r.diverged) {
    err << "error: " << r.message << '\n';
    return kExitCheckFailed;
  }
  out << "steps " << r.losses.size() << "  initial_loss " << fmt(r.losses.front()) << "  final_loss "
      << fmt(r.final_loss) << "  ratio " << fmt(r.final_loss / r.losses.front(), 4) << '\n';
  print_metrics(out, r.metrics);
  return kExitOk;
}

struct AblateArgs {
  std::string config;
  std::string scene;
  std::size_t steps = 50;
  double lr = 0.05;
  std::string out;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  const NetworkConfig cfg = config_or_default(a.config);
  const NetworkInputs in = scene_inputs(cfg, load_scene(a.scene));
  const std::vector<AblationRow> rows = ablate(cfg, in, {a.steps, a.lr});
  auto mark = [](bool on) { return on ? "x" : "-"; };
  std::ostringstream table;
  table << "aefrm marm mgfm  final_loss      mIoU        PA\n";
  std::ostringstream csv;
  csv << "aefrm,marm,mgfm,final_loss,miou,pa\n";
  bool ok = true;
  for (const auto& row : rows) {
    const auto& m = row.modules;
    const auto& r = row.result;
    if (r.diverged) {
      ok = false;
      err << "error: " << mark(m.aefrm) << mark(m.marm) << mark(m.mgfm) << " " << r.message << '\n';
    }
    table << std::setw(5) << mark(m.aefrm) << std::setw(5) << mark(m.marm) << std::setw(5) << mark(m.mgfm)
          << std::setw(12) << fmt(r.final_loss) << std::setw(10) << fmt(r.metrics.miou, 4) << std::setw(10)
          << fmt(r.metrics.pa, 4) << '\n';
    csv << m.aefrm << ',' << m.marm << ',' << m.mgfm << ',' << std::setprecision(9) << r.final_loss << ','
        << r.metrics.miou << ',' << r.metrics.pa << '\n';
  }
  out << table.str();
  if (!a.out.empty()) {
    ensure_parent(a.out);
    std::ofstream f(a.out, std::ios::trunc);
    if (!f) throw Error("cannot write " + a.out);
    f << csv.str();
  }
  return ok ? kExitOk : kExitCheckFailed;
}

struct SweepArgs {
  std::string config;
  std::string scene;
  std::string events;
  std::string dims;
  std::optional<std::int64_t> t_end;
  std::vector<std::int64_t> durations{10000, 50000, 250000};
  std::string image;
  std::string labels;
  std::string out_prefix = "sweep";
};

int cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream& err) {
  const NetworkConfig cfg = config_or_default(a.config);
  const SensorDims net_dims{cfg.height, cfg.width};
  std::vector<Event> events;
  Tensor<float> image({cfg.image_channels, cfg.height, cfg.width}, kBackgroundGray);
  std::vector<int> labels;
  std::int64_t fallback_end = 0;
  if (!a.scene.empty()) {
    if (!a.events.empty() || !a.image.empty() || !a.labels.empty()) {
      throw UsageError("--scene cannot be combined with --events, --image or --labels");
    }
    SyntheticScene scene = load_scene(a.scene);
    if (scene.params.dims != net_dims) throw ConfigError("scene dims do not match the config");
    events = std::move(scene.events);
    image = std::move(scene.image);
    labels = labels_from_tensor(scene.labels);
    fallback_end = scene.params.window_us;
  } else {
    if (a.events.empty()) throw UsageError("sweep needs --scene or --events");
    const SensorDims dims = a.dims.empty() ? net_dims : parse_dims(a.dims);
    if (dims != net_dims) {
      throw ConfigError("--dims " + dims_str(dims) + " does not match the config " + dims_str(net_dims));
    }
    events = read_events(a.events, dims);
    if (!a.image.empty()) image = read_tensor(a.image);
    if (!a.labels.empty()) labels = labels_from_tensor(read_tensor(a.labels));
    fallback_end = default_t_end(events, *std::max_element(a.durations.begin(), a.durations.end()));
  }
  const std::int64_t t_end = a.t_end.value_or(fallback_end);
  Eifnet net(cfg);
  ParamStore<float> params = net.make_params<float>();
  out << "duration_us  events  logit_min  logit_max  logit_mean" << (labels.empty() ? "" : "      mIoU        PA")
      << "  file\n";
  std::optional<Shape> first_shape;
  bool ok = true;
  for (std::int64_t d : a.durations) {
    if (d <= 0) throw UsageError("durations must be positive");
    const EventWindow w = window(events, t_end, d, net_dims);
    const NetworkInputs in = make_inputs(image, encode(w, cfg.bins), labels);
    const Evaluation ev = evaluate(net, params, in);
    const fs::path file = a.out_prefix + "_" + std::to_string(d) + "us.eift";
    ensure_parent(file);
    write_tensor(file, ev.logits);
    const auto data = ev.logits.data();
    const auto [mn, mx] = std::minmax_element(data.begin(), data.end());
    double mean = 0;
    for (float v : data) mean += v;
    mean /= static_cast<double>(data.size());
    if (!ev.logits.all_finite()) ok = false;
    if (!first_shape) first_shape = ev.logits.shape();
    if (*first_shape != ev.logits.shape()) ok = false;
    out << std::setw(11) << d << std::setw(8) << w.count() << std::setw(11) << fmt(*mn, 4) << std::setw(11)
        << fmt(*mx, 4) << std::setw(12) << fmt(mean, 4);
    if (ev.metrics) out << std::setw(10) << fmt(ev.metrics->miou, 4) << std::setw(10) << fmt(ev.metrics->pa, 4);
    out << "  " << file.string() << '\n';
  }
  if (!ok) err << "error: sweep outputs are not finite and shape-identical\n";
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Event-image fusion toolkit: synthetic scenes, event encoding, toy segmentation network"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic moving-object scene");
  s->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  s->add_option("--dims", synth.dims, "Sensor size HxW (multiples of 32)")->capture_default_str();
  s->add_option("--objects", synth.objects, "Number of moving objects")->capture_default_str();
  s->add_option("--noise", synth.noise, "Background noise events per ms")->capture_default_str();
  s->add_option("--window-us", synth.window_us, "Simulated duration in microseconds")->capture_default_str();
  s->add_option("--out", synth.out, "Output scene directory")->required();

  EncodeArgs enc;
  auto* e = app.add_subcommand("encode", "Encode an event CSV into e_vt / a_cm tensors");
  e->add_option("--events", enc.events, "Event CSV (t_us,x,y,p)")->required();
  e->add_option("--dims", enc.dims, "Sensor size HxW")->required();
  e->add_option("--t-end", enc.t_end, "Window end in microseconds (default: last event + 1)");
  e->add_option("--window-us", enc.window_us, "Window duration in microseconds")->capture_default_str();
  e->add_option("--bins", enc.bins, "Temporal bins")->capture_default_str();
  e->add_option("--out", enc.out, "Output prefix; writes PREFIX_evt.eift and PREFIX_acm.eift")->required();

  ForwardArgs fwd;
  auto* f = app.add_subcommand("forward", "Run the network on a scene with freshly seeded parameters");
  f->add_option("--config", fwd.config, "Network config JSON (default: built-in)");
  f->add_option("--scene", fwd.scene, "Scene directory")->required();
  f->add_option("--out", fwd.out, "Logits output (.eift)")->required();
  f->add_option("--pred", fwd.pred, "Argmax map output (.eift)");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  g->add_option("--module", gc.module, "aefrm|marm|mgfm|encoder|decoder|network|all")->capture_default_str();
  g->add_option("--seed", gc.seed, "Random seed")->capture_default_str();
  g->add_flag("--verbose", gc.verbose, "Print every parameter group");
  g->add_option("--inject-fault", gc.fault, "Scale analytic parameter gradients by (1 + X)")->group("");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Gradient-descent training on a single scene");
  t->alias("train-toy");
  t->add_option("--config", tr.config, "Network config JSON (default: built-in)");
  t->add_option("--scene", tr.scene, "Scene directory")->required();
  t->add_option("--steps", tr.steps, "Gradient steps")->capture_default_str();
  t->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
  t->add_option("--out", tr.out, "Loss history CSV (step,loss)");

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Train all 8 module-toggle combinations");
  b->add_option("--config", ab.config, "Network config JSON (default: built-in)");
  b->add_option("--scene", ab.scene, "Scene directory")->required();
  b->add_option("--steps", ab.steps, "Gradient steps per combination")->capture_default_str();
  b->add_option("--lr", ab.lr, "Learning rate")->capture_default_str();
  b->add_option("--out", ab.out, "Report CSV");

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "Re-window one event stream at several durations and run the network");
  w->alias("sweep-duration");
  w->add_option("--config", sw.config, "Network config JSON (default: built-in)");
  w->add_option("--scene", sw.scene, "Scene directory (events, image and labels)");
  w->add_option("--events", sw.events, "Event CSV");
  w->add_option("--dims", sw.dims, "Sensor size HxW (must match the config)");
  w->add_option("--t-end", sw.t_end, "Window end in microseconds");
  w->add_option("--durations", sw.durations, "Comma-separated durations in microseconds")
      ->delimiter(',')
      ->capture_default_str();
  w->add_option("--image", sw.image, "Image tensor [3,H,W] (.eift, default uniform gray)");
  w->add_option("--labels", sw.labels, "Label tensor [H,W] (.eift) for metrics");
  w->add_option("--out-prefix", sw.out_prefix, "Logits files are PREFIX_<d>us.eift")->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*e) return cmd_encode(enc, out);
    if (*f) return cmd_forward(fwd, out);
    if (*g) return cmd_gradcheck(gc, out);
    if (*t) return cmd_train(tr, out, err);
    if (*b) return cmd_ablate(ab, out, err);
    if (*w) return cmd_sweep(sw, out, err);
  } catch (const NumericError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitCheckFailed;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace eifnet::cli
