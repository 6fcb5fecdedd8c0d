#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "motionsep/adapters.hpp"
#include "motionsep/cli.hpp"
#include "motionsep/config.hpp"
#include "motionsep/diffusion.hpp"
#include "motionsep/errors.hpp"
#include "motionsep/net.hpp"
#include "motionsep/rng.hpp"
#include "motionsep/synthvid.hpp"
#include "motionsep/tensor.hpp"
#include "motionsep/trainer.hpp"

namespace py = pybind11;
using namespace motionsep;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(static_cast<size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor::from(std::move(shape), std::move(data));
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

synthvid::VideoClip to_clip(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 4 || a.shape(3) != 3) {
    throw ShapeError("clip arrays must have shape (frames, height, width, 3)");
  }
  synthvid::VideoClip clip;
  clip.data = to_tensor(a);
  return clip;
}

net::SkipSettings make_skip(const std::string& mode, double beta, double vanilla_scale,
                            uint32_t level_mask) {
  net::SkipSettings s;
  s.mode = net::skip_mode_from_string(mode);
  s.beta = beta;
  s.vanilla_scale = vanilla_scale;
  s.level_mask = level_mask;
  return s;
}

diffusion::EpsModel bound_eps(const net::UNet& model, const adapters::InjectionPlan* plan,
                              const net::SkipSettings& skip, const net::CondLabels& labels) {
  return [&model, plan, skip, labels](const Tensor& zt, int t) {
    net::ForwardOptions opts;
    opts.plan = plan;
    opts.skip = skip;
    const auto b = static_cast<size_t>(zt.dim(0));
    return model.predict(zt, std::vector<int>(b, t), std::vector<net::CondLabels>(b, labels),
                         opts);
  };
}

py::dict checkpoint_dict(const trainer::CheckpointSet& cs) {
  py::dict d;
  d["dir"] = cs.dir.string();
  d["base"] = cs.base.string();
  d["spatial"] = cs.spatial.string();
  d["temporal"] = cs.temporal.string();
  d["manifest"] = cs.manifest.string();
  d["config_hash"] = cs.config_hash;
  return d;
}

}  // namespace

PYBIND11_MODULE(_motionsep, m) {
  m.doc() = "Miniature video-diffusion motion customization lab";

  // Error taxonomy, one Python class per C++ type so callers can branch.
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<PlanError>(m, "PlanError", PyExc_ValueError);
  py::register_exception<VocabError>(m, "VocabError", PyExc_ValueError);
  py::register_exception<DependencyError>(m, "DependencyError", PyExc_RuntimeError);
  py::register_exception<FileFormatError>(m, "FileFormatError", PyExc_RuntimeError);
  py::register_exception<TrainingDivergedError>(m, "TrainingDivergedError", PyExc_RuntimeError);
  py::register_exception<MetricGateError>(m, "MetricGateError", PyExc_RuntimeError);

  // ---------------------------------------------------------------------
  // Vocabulary.
  // ---------------------------------------------------------------------
  py::enum_<synthvid::MotionLabel>(m, "MotionLabel")
      .value("BOUNCE", synthvid::MotionLabel::kBounce)
      .value("ORBIT", synthvid::MotionLabel::kOrbit)
      .value("ZIGZAG", synthvid::MotionLabel::kZigzag)
      .value("GROW_SHRINK", synthvid::MotionLabel::kGrowShrink)
      .value("SLIDE", synthvid::MotionLabel::kSlide);
  py::enum_<synthvid::ShapeKind>(m, "ShapeKind")
      .value("CIRCLE", synthvid::ShapeKind::kCircle)
      .value("SQUARE", synthvid::ShapeKind::kSquare)
      .value("TRIANGLE", synthvid::ShapeKind::kTriangle);
  m.attr("CUSTOM_MOTION_ID") = net::kCustomMotionId;
  m.attr("NUM_MOTIONS") = synthvid::kNumMotions;

  py::class_<net::CondLabels>(m, "CondLabels")
      .def(py::init([](int motion_id, synthvid::ShapeKind shape, int fg_bin, int bg_bin) {
             net::CondLabels l;
             l.motion_id = motion_id;
             l.shape = shape;
             l.fg_bin = fg_bin;
             l.bg_bin = bg_bin;
             return l;
           }),
           py::arg("motion_id"), py::arg("shape") = synthvid::ShapeKind::kCircle,
           py::arg("fg_bin") = 0, py::arg("bg_bin") = 0)
      .def_readwrite("motion_id", &net::CondLabels::motion_id)
      .def_readwrite("shape", &net::CondLabels::shape)
      .def_readwrite("fg_bin", &net::CondLabels::fg_bin)
      .def_readwrite("bg_bin", &net::CondLabels::bg_bin);

  // ---------------------------------------------------------------------
  // Configuration.
  // ---------------------------------------------------------------------
  py::class_<config::RunConfig>(m, "RunConfig")
      .def_static("defaults", &config::RunConfig::defaults)
      .def_static("from_file",
                  [](const std::string& path) { return config::RunConfig::from_file(path); },
                  py::arg("path"))
      .def_property(
          "seed", [](const config::RunConfig& rc) { return rc.seed; },
          [](config::RunConfig& rc, uint64_t v) { rc.seed = v; })
      .def_property(
          "out_dir", [](const config::RunConfig& rc) { return rc.out_dir; },
          [](config::RunConfig& rc, const std::string& v) { rc.out_dir = v; })
      .def_property(
          "plan", [](const config::RunConfig& rc) { return rc.temporal.plan; },
          [](config::RunConfig& rc, const std::string& v) {
            adapters::plan_preset_from_string(v);
            rc.temporal.plan = v;
          })
      .def_property(
          "tau", [](const config::RunConfig& rc) { return rc.sample.tau; },
          [](config::RunConfig& rc, int v) { rc.sample.tau = v; })
      .def_property(
          "beta", [](const config::RunConfig& rc) { return rc.net.beta; },
          [](config::RunConfig& rc, double v) { rc.net.beta = v; })
      .def_property(
          "skip_mode",
          [](const config::RunConfig& rc) { return net::to_string(rc.net.skip_mode); },
          [](config::RunConfig& rc, const std::string& v) {
            rc.net.skip_mode = net::skip_mode_from_string(v);
          })
      .def_property(
          "ah_in_training",
          [](const config::RunConfig& rc) { return rc.temporal.ah_in_training; },
          [](config::RunConfig& rc, bool v) { rc.temporal.ah_in_training = v; })
      .def_property_readonly("steps",
                             [](const config::RunConfig& rc) { return rc.sched.steps; })
      .def_property_readonly("frames",
                             [](const config::RunConfig& rc) { return rc.synth.frames; })
      .def_property_readonly("height",
                             [](const config::RunConfig& rc) { return rc.synth.height; })
      .def_property_readonly("width",
                             [](const config::RunConfig& rc) { return rc.synth.width; })
      .def("canonical", &config::RunConfig::canonical)
      .def("hash_hex", &config::RunConfig::hash_hex)
      .def("validate", &config::RunConfig::validate)
      .def("__repr__", [](const config::RunConfig& rc) {
        return "<RunConfig " + rc.hash_hex() + " seed=" + std::to_string(rc.seed) + ">";
      });

  // ---------------------------------------------------------------------
  // Diffusion numerics.
  // ---------------------------------------------------------------------
  py::class_<diffusion::NoiseSchedule>(m, "NoiseSchedule")
      .def(py::init([](const config::RunConfig& rc) { return diffusion::NoiseSchedule(rc.sched); }),
           py::arg("config"))
      .def(py::init([](const std::string& kind, int steps, double beta_start, double beta_end,
                       double cosine_s) {
             diffusion::ScheduleConfig c;
             c.kind = diffusion::schedule_kind_from_string(kind);
             c.steps = steps;
             c.beta_start = beta_start;
             c.beta_end = beta_end;
             c.cosine_s = cosine_s;
             return diffusion::NoiseSchedule(c);
           }),
           py::arg("kind") = "linear", py::arg("steps") = 100, py::arg("beta_start") = 1e-3,
           py::arg("beta_end") = 0.08, py::arg("cosine_s") = 0.008)
      .def_property_readonly("steps", &diffusion::NoiseSchedule::steps)
      .def("beta", &diffusion::NoiseSchedule::beta, py::arg("t"))
      .def("alpha", &diffusion::NoiseSchedule::alpha, py::arg("t"))
      .def("alpha_bar", &diffusion::NoiseSchedule::alpha_bar, py::arg("t"))
      .def("sigma", &diffusion::NoiseSchedule::sigma, py::arg("t"));

  m.def(
      "add_noise",
      [](const diffusion::NoiseSchedule& s, const py::array_t<double>& z0,
         const py::array_t<double>& eps, int t) {
        return to_array(diffusion::add_noise(s, to_tensor(z0), to_tensor(eps), t));
      },
      py::arg("schedule"), py::arg("z0"), py::arg("eps"), py::arg("t"),
      "Forward process: sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.");

  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("tag"),
        "Deterministic child seed for a named stream.");

  // ---------------------------------------------------------------------
  // Model and adapters.
  // ---------------------------------------------------------------------
  py::class_<adapters::InjectionPlan>(m, "InjectionPlan")
      .def_property_readonly("rank",
                             [](const adapters::InjectionPlan& p) { return p.rank; })
      .def_property_readonly("size",
                             [](const adapters::InjectionPlan& p) { return p.entries.size(); });

  py::class_<net::UNet>(m, "UNet")
      .def_static(
          "load", [](const std::string& path) { return net::UNet::load(path); },
          py::arg("path"))
      .def("save",
           [](const net::UNet& u, const std::string& path) { u.save(path); },
           py::arg("path"))
      .def_property_readonly("temporal_paths", &net::UNet::temporal_paths)
      .def_property_readonly("spatial_paths", &net::UNet::spatial_paths)
      .def(
          "predict",
          [](const net::UNet& u, const py::array_t<double>& z, int t,
             const net::CondLabels& labels, const adapters::InjectionPlan* plan,
             const std::string& skip_mode, double beta, double vanilla_scale) {
            net::ForwardOptions opts;
            opts.plan = plan;
            opts.skip = make_skip(skip_mode, beta, vanilla_scale, ~0u);
            const Tensor zt = to_tensor(z);
            const auto b = static_cast<size_t>(zt.dim(0));
            return to_array(u.predict(zt, std::vector<int>(b, t),
                                      std::vector<net::CondLabels>(b, labels), opts));
          },
          py::arg("z"), py::arg("t"), py::arg("labels"), py::arg("plan") = nullptr,
          py::arg("skip_mode") = "vanilla", py::arg("beta") = 1.1,
          py::arg("vanilla_scale") = 1.0,
          "Noise prediction for a (b, f, h, w, 3) batch at one timestep.");

  m.def(
      "load_plan",
      [](const std::string& path, const net::UNet& model) { return net::load_plan(path, model); },
      py::arg("path"), py::arg("model"), py::keep_alive<0, 2>(),
      "Load an adapter plan checkpoint against a model's shapes.");

  m.def(
      "sample_clip",
      [](const net::UNet& model, const config::RunConfig& rc, const net::CondLabels& labels,
         uint64_t seed, const adapters::InjectionPlan* plan, const std::string& skip_mode,
         double beta, double vanilla_scale, int tau) {
        const diffusion::NoiseSchedule sched(rc.sched);
        const Shape shape{1, rc.synth.frames, rc.synth.height, rc.synth.width, 3};
        const net::SkipSettings skip = make_skip(skip_mode, beta, vanilla_scale, ~0u);
        net::SkipSettings base;
        base.vanilla_scale = model.config().vanilla_skip_scale;
        diffusion::PliOptions po;
        po.tau = tau;
        Tensor z;
        {
          py::gil_scoped_release release;
          z = diffusion::sample_pli(sched, shape, bound_eps(model, plan, skip, labels),
                                    bound_eps(model, nullptr, base, labels), seed, po);
        }
        return to_array(diffusion::to_video_clip(z).data);
      },
      py::arg("model"), py::arg("config"), py::arg("labels"), py::arg("seed"),
      py::arg("plan") = nullptr, py::arg("skip_mode") = "vanilla", py::arg("beta") = 1.1,
      py::arg("vanilla_scale") = 1.0, py::arg("tau") = 0,
      "Ancestral sampling with phased integration; returns (f, h, w, 3) in [0, 1].");

  // ---------------------------------------------------------------------
  // Clip utilities.
  // ---------------------------------------------------------------------
  m.def(
      "export_gif",
      [](const py::array_t<double>& clip, const std::string& path, int delay_cs) {
        synthvid::export_gif(to_clip(clip), path, delay_cs);
      },
      py::arg("clip"), py::arg("path"), py::arg("delay_cs") = 12);

  m.def(
      "detect_artifact",
      [](const py::array_t<double>& clip, int row, int col, int size, double contrast,
         int window) {
        synthvid::ArtifactSpec art;
        art.row = row;
        art.col = col;
        art.size = size;
        art.contrast = contrast;
        return synthvid::detect_artifact(to_clip(clip), art, window);
      },
      py::arg("clip"), py::arg("row"), py::arg("col"), py::arg("size"), py::arg("contrast"),
      py::arg("window") = 1, "Continuous [0, 1] score for the appearance artifact.");

  m.def(
      "save_tensor",
      [](const std::string& path, const py::array_t<double>& a) {
        save_tensor(path, to_tensor(a));
      },
      py::arg("path"), py::arg("array"));
  m.def(
      "load_tensor", [](const std::string& path) { return to_array(load_tensor(path)); },
      py::arg("path"));

  // ---------------------------------------------------------------------
  // Pipeline commands. Heavy calls release the GIL; progress goes to files.
  // ---------------------------------------------------------------------
  m.def(
      "run_synth",
      [](const config::RunConfig& rc) {
        py::gil_scoped_release release;
        return cli::cmd_synth(rc, nullptr).string();
      },
      py::arg("config"), "Render the dataset; returns the dataset directory.");
  m.def(
      "run_pretrain",
      [](const config::RunConfig& rc) {
        trainer::CheckpointSet cs;
        {
          py::gil_scoped_release release;
          cs = cli::cmd_pretrain(rc, nullptr);
        }
        return checkpoint_dict(cs);
      },
      py::arg("config"), "Train (or reuse) the base model; returns checkpoint paths.");
  m.def(
      "run_customize",
      [](const config::RunConfig& rc) {
        trainer::CheckpointSet cs;
        {
          py::gil_scoped_release release;
          cs = cli::cmd_customize(rc, nullptr);
        }
        return checkpoint_dict(cs);
      },
      py::arg("config"), "Full dual-path run; returns checkpoint paths.");
  m.def(
      "run_sample",
      [](const config::RunConfig& rc) {
        py::gil_scoped_release release;
        return cli::cmd_sample(rc, nullptr).string();
      },
      py::arg("config"), "Generate the eval prompt grid; returns the samples directory.");
  m.def(
      "run_probe",
      [](const config::RunConfig& rc) {
        py::gil_scoped_release release;
        return cli::cmd_probe(rc, nullptr).string();
      },
      py::arg("config"), "Metric suite + similarity profile; returns the probe directory.");
  m.def(
      "run_ablate",
      [](const config::RunConfig& rc, const std::string& suite) {
        py::gil_scoped_release release;
        return cli::cmd_ablate(rc, suite, nullptr).string();
      },
      py::arg("config"), py::arg("suite"), "Run an ablation suite; returns its directory.");
  m.def("ablate_suites", [] { return cli::ablate_suites(); });
}
