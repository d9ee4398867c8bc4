#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "bcsi/ablate.hpp"
#include "bcsi/gradsuite.hpp"
#include "bcsi/trainer.hpp"

// Python surface over the C++ core: data generation, metrics, the warm-up
// schedule, training / evaluation / inference driven by the same JSON config
// as the CLI, and the gradient-check suite.

namespace py = pybind11;
using namespace bcsi;

namespace {

using ArrayF64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ArrayU8 = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

Volume volume_from_array(const ArrayF64& a) {
  if (a.ndim() != 3) throw ConfigError("volume array must be 3-d (D,H,W)");
  Volume v;
  v.D = static_cast<int>(a.shape(0));
  v.H = static_cast<int>(a.shape(1));
  v.W = static_cast<int>(a.shape(2));
  v.voxels.assign(a.data(), a.data() + a.size());
  return v;
}

LabelVolume label_from_array(const ArrayU8& a) {
  if (a.ndim() != 3) throw ConfigError("label array must be 3-d (D,H,W)");
  LabelVolume v;
  v.D = static_cast<int>(a.shape(0));
  v.H = static_cast<int>(a.shape(1));
  v.W = static_cast<int>(a.shape(2));
  v.mask.assign(a.data(), a.data() + a.size());
  return v;
}

py::array_t<double> array_from_volume(const Volume& v) {
  py::array_t<double> a({v.D, v.H, v.W});
  std::memcpy(a.mutable_data(), v.voxels.data(), v.voxels.size() * sizeof(double));
  return a;
}

py::array_t<uint8_t> array_from_label(const LabelVolume& v) {
  py::array_t<uint8_t> a({v.D, v.H, v.W});
  std::memcpy(a.mutable_data(), v.mask.data(), v.mask.size());
  return a;
}

TrainerState state_from(const std::string& config_json, const std::string& checkpoint) {
  const RunConfig cfg = parse_config(config_json);
  TrainerState s = init_state(cfg);
  load_state(checkpoint, s);
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "semi-supervised volumetric segmentation core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("default_config", [] { return dump_config(RunConfig{}); },
        "the full configuration document with every default filled in");

  m.def(
      "generate_case",
      [](uint64_t seed, std::array<int, 3> dims, int n_blobs, double radius_lo, double radius_hi,
         double noise_sigma, double intensity_contrast) {
        GeneratorParams p;
        p.dims = dims;
        p.n_blobs = n_blobs;
        p.radius_lo = radius_lo;
        p.radius_hi = radius_hi;
        p.noise_sigma = noise_sigma;
        p.intensity_contrast = intensity_contrast;
        auto [vol, lab] = generate_case(seed, p);
        return py::make_tuple(array_from_volume(vol), array_from_label(lab));
      },
      py::arg("seed"), py::arg("dims") = std::array<int, 3>{32, 32, 32}, py::arg("n_blobs") = 2,
      py::arg("radius_lo") = 4.0, py::arg("radius_hi") = 8.0, py::arg("noise_sigma") = 0.15,
      py::arg("intensity_contrast") = 0.3,
      "deterministic synthetic case: (volume f64 [D,H,W], mask u8 [D,H,W])");

  m.def("read_volume", [](const std::string& path) { return array_from_volume(read_volume(path)); },
        py::arg("path"));
  m.def("read_label", [](const std::string& path) { return array_from_label(read_label(path)); },
        py::arg("path"));
  m.def("write_volume",
        [](const std::string& path, const ArrayF64& a) { write_volume(path, volume_from_array(a)); },
        py::arg("path"), py::arg("volume"));
  m.def("write_label",
        [](const std::string& path, const ArrayU8& a) { write_volume(path, label_from_array(a)); },
        py::arg("path"), py::arg("label"));

  m.def("dice", [](const ArrayU8& p, const ArrayU8& g) {
    return dice(label_from_array(p), label_from_array(g));
  });
  m.def("jaccard", [](const ArrayU8& p, const ArrayU8& g) {
    return jaccard(label_from_array(p), label_from_array(g));
  });
  m.def("hd95", [](const ArrayU8& p, const ArrayU8& g) {
    return hd95(label_from_array(p), label_from_array(g));
  });
  m.def("asd", [](const ArrayU8& p, const ArrayU8& g) {
    return asd(label_from_array(p), label_from_array(g));
  });

  m.def("lambda_u", &lambda_u, py::arg("t"), py::arg("t_max"), py::arg("beta") = 0.1,
        "unsupervised warm-up weight beta * exp(-5 (1 - t/t_max)^2)");

  m.def(
      "gen_dataset",
      [](const std::string& config_json, const std::string& dir, bool force) {
        const RunConfig cfg = parse_config(config_json);
        const DatasetManifest man = generate_dataset(dir.empty() ? cfg.data_dir : dir, cfg, force);
        py::dict d;
        d["labeled_ids"] = man.labeled_ids;
        d["unlabeled_ids"] = man.unlabeled_ids;
        d["test_ids"] = man.test_ids;
        return d;
      },
      py::arg("config_json"), py::arg("dir") = "", py::arg("force") = false);

  m.def(
      "train",
      [](const std::string& config_json, const std::string& resume) {
        const RunConfig cfg = parse_config(config_json);
        run_training(cfg, resume);
        return cfg.out_dir + "/final.bck";
      },
      py::arg("config_json"), py::arg("resume") = "",
      "run to t_max per the config; returns the final checkpoint path");

  m.def(
      "evaluate",
      [](const std::string& config_json, const std::string& checkpoint) {
        const RunConfig cfg = parse_config(config_json);
        TrainerState s = state_from(config_json, checkpoint);
        const MetricsReport rep = evaluate_cases(s, load_dataset(cfg.data_dir).test);
        py::dict d;
        d["dice"] = rep.mean_dice;
        d["jaccard"] = rep.mean_jaccard;
        d["hd95"] = rep.mean_hd95;
        d["asd"] = rep.mean_asd;
        d["evaluated"] = rep.evaluated;
        d["cases"] = static_cast<int>(rep.cases.size());
        return d;
      },
      py::arg("config_json"), py::arg("checkpoint"),
      "metric means over the unflagged test cases of the config's dataset");

  m.def(
      "predict",
      [](const std::string& config_json, const std::string& checkpoint, const ArrayF64& volume) {
        TrainerState s = state_from(config_json, checkpoint);
        const Volume v = volume_from_array(volume);
        SegNet net(s.cfg.network);
        const Tensor x = Tensor::from_vector({1, 1, v.D, v.H, v.W}, v.voxels);
        const Tensor p = net.predict(x, s.params.detached());
        py::array_t<double> out({v.D, v.H, v.W});
        std::memcpy(out.mutable_data(), p.data(), static_cast<size_t>(p.numel()) * sizeof(double));
        return out;
      },
      py::arg("config_json"), py::arg("checkpoint"), py::arg("volume"),
      "foreground probabilities [D,H,W] for one volume; dims must suit the network");

  m.def(
      "grad_check",
      [](bool include_objective) {
        const GradSuiteReport rep = run_grad_suite(include_objective);
        return py::make_tuple(rep.all_pass, format_grad_report(rep));
      },
      py::arg("include_objective") = true, "(all_pass, formatted report)");
}
