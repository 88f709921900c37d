#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "htsim/attacks.hpp"
#include "htsim/config.hpp"
#include "htsim/robustness.hpp"
#include "htsim/serialize.hpp"
#include "htsim/weight_attack.hpp"

namespace py = pybind11;
using namespace htsim;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Tensor t;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) t.shape.push_back(a.shape(i));
  t.data.assign(a.data(), a.data() + a.size());
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> a(shape);
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

NoisePlan plan_from_entries(const std::vector<std::tuple<int, std::string, std::string>>& entries,
                            double v_dd, const std::string& scope) {
  NoisePlan plan;
  plan.scope = scope == "run" ? NoiseScope::per_run : NoiseScope::per_image;
  for (const auto& [layer, target, ratio] : entries) {
    NoisePlanEntry e;
    e.layer = layer;
    if (target == "activation_mb")
      e.target = NoiseTarget::activation_mb;
    else if (target == "parameter_mb")
      e.target = NoiseTarget::parameter_mb;
    else
      throw RangeError("target must be activation_mb or parameter_mb, got \"" + target + "\"");
    e.config = parse_ratio(ratio, v_dd);
    plan.entries.push_back(e);
  }
  return plan;
}

Dataset dataset_head(const Dataset& ds, std::int64_t n) {
  if (n <= 0 || n >= ds.size()) return ds;
  Dataset out;
  std::vector<std::int64_t> shape = ds.images.shape;
  shape[0] = n;
  out.images = Tensor(shape);
  const std::int64_t stride =
      Tensor::numel_of({ds.images.shape.begin() + 1, ds.images.shape.end()});
  std::copy_n(ds.images.data.begin(), n * stride, out.images.data.begin());
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
  return out;
}

py::dict report_to_dict(const SectionAttackReport& rep) {
  py::dict d;
  d["layer"] = rep.ref.layer;
  d["section_index"] = rep.ref.index;
  d["section_shape"] = rep.ref.shape;
  d["match_percent"] = rep.match_percent;
  d["mu"] = rep.mu;
  d["mode"] = attack_mode_name(rep.mode);
  d["config"] = rep.attack_config.str();
  d["selection_config"] = rep.selection_config.str();
  d["pre_accuracy"] = rep.pre_accuracy;
  d["pre_confidence"] = rep.pre_confidence;
  d["post_accuracy"] = rep.post_accuracy;
  d["post_confidence"] = rep.post_confidence;
  d["subsection_fraction"] = rep.subsection_fraction;
  return d;
}

using BankList = std::vector<std::tuple<std::int64_t, int, int, double>>;

MemoryDesign banks_to_design(const BankList& banks) {
  MemoryDesign d;
  for (const auto& [words, n8, n6, v] : banks) d.banks.push_back({words, n8, n6, v});
  return d;
}

}  // namespace

PYBIND11_MODULE(_htsim, m) {
  m.doc() =
      "Deterministic simulator of bit-error noise in hybrid 8T-6T SRAM memories, coupled to an "
      "8-bit quantized CNN inference engine with exact gradients";

  py::register_exception<RangeError>(m, "RangeError");
  py::register_exception<ShapeError>(m, "ShapeError");
  py::register_exception<LayerError>(m, "LayerError");
  py::register_exception<CalibrationError>(m, "CalibrationError");
  py::register_exception<FormatError>(m, "FormatError");
  py::register_exception<ConfigError>(m, "ConfigError");

  py::class_<HybridConfig>(m, "HybridConfig")
      .def(py::init([](int n8, int n6, double v_dd) {
             HybridConfig c{n8, n6, v_dd};
             c.validate();
             return c;
           }),
           py::arg("n8"), py::arg("n6"), py::arg("v_dd"))
      .def_readonly("n8", &HybridConfig::n8)
      .def_readonly("n6", &HybridConfig::n6)
      .def_readonly("v_dd", &HybridConfig::v_dd)
      .def("ratio", &HybridConfig::ratio_str)
      .def("__repr__", &HybridConfig::str);

  m.def("parse_ratio", &parse_ratio, py::arg("ratio"), py::arg("v_dd"));

  py::class_<BitErrorModel>(m, "BitErrorModel")
      .def(py::init([](const std::vector<std::pair<double, double>>& points,
                       const std::string& mode) {
             std::vector<BerPoint> pts;
             for (const auto& [v, p] : points) pts.push_back({v, p});
             return BitErrorModel(pts, mode == "error" ? Extrapolation::error
                                                       : Extrapolation::clamp);
           }),
           py::arg("points"), py::arg("extrapolation_mode") = "clamp")
      .def("ber_at", &BitErrorModel::ber_at, py::arg("v_dd"))
      .def_property_readonly("points", [](const BitErrorModel& bm) {
        std::vector<std::pair<double, double>> out;
        for (const auto& p : bm.points()) out.emplace_back(p.v_dd, p.p_flip);
        return out;
      });

  m.def("default_bit_error_model", [] { return default_bit_error_model(); },
        "Table calibrated against the built-in reference (mu, config) anchors");

  m.def("expected_mu",
        [](const HybridConfig& cfg, const BitErrorModel& model, double scale) {
          return expected_mu(cfg, model, scale);
        },
        py::arg("config"), py::arg("model"), py::arg("scale"));
  m.def("expected_mu_at_p", &expected_mu_at_p, py::arg("n6"), py::arg("p_flip"),
        py::arg("scale"));
  m.def("config_for_mu", &config_for_mu, py::arg("mu"));

  m.def("calibrate",
        [](const std::vector<std::tuple<double, std::string, double>>& targets, double scale,
           double tolerance) {
          std::vector<CalibrationTarget> ts;
          for (const auto& [mu, ratio, v] : targets) ts.push_back({parse_ratio(ratio, v), mu});
          return calibrate(ts, scale, tolerance);
        },
        py::arg("targets"), py::arg("scale"), py::arg("tolerance") = 0.10,
        "targets: list of (mu, \"n8-n6\", v_dd)");

  m.def("sample_noise",
        [](const py::array_t<std::uint8_t, py::array::c_style>& codes, bool is_signed,
           double scale, const HybridConfig& cfg, const BitErrorModel& model,
           std::uint64_t seed) {
          const std::span<const std::uint8_t> span(codes.data(),
                                                   static_cast<std::size_t>(codes.size()));
          const CodeScheme cs{is_signed ? Signedness::two_complement : Signedness::unsigned_int,
                              scale};
          const NoiseSample s = sample_noise(span, cs, cfg, model, seed);
          py::array_t<double> out(static_cast<py::ssize_t>(s.deltas.size()));
          std::copy(s.deltas.begin(), s.deltas.end(), out.mutable_data());
          return out;
        },
        py::arg("codes"), py::arg("is_signed"), py::arg("scale"), py::arg("config"),
        py::arg("model"), py::arg("seed"));

  py::class_<QuantScheme>(m, "QuantScheme")
      .def_static("signed_for_max_abs", &QuantScheme::signed_for_max_abs, py::arg("max_abs"))
      .def_static("unsigned_for_max", &QuantScheme::unsigned_for_max, py::arg("max_val"))
      .def_readonly("scale", &QuantScheme::scale)
      .def_property_readonly("is_signed", [](const QuantScheme& s) {
        return s.signedness == Signedness::two_complement;
      });

  py::class_<QuantTensor>(m, "QuantTensor")
      .def_property_readonly("shape", [](const QuantTensor& qt) { return qt.shape; })
      .def_property_readonly("codes",
                             [](const QuantTensor& qt) {
                               py::array_t<std::uint8_t> out(
                                   static_cast<py::ssize_t>(qt.codes.size()));
                               std::copy(qt.codes.begin(), qt.codes.end(), out.mutable_data());
                               return out;
                             })
      .def_property_readonly("scheme", [](const QuantTensor& qt) { return qt.scheme; });

  m.def("quantize",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const QuantScheme& s) { return quantize(tensor_from_array(x), s); },
        py::arg("x"), py::arg("scheme"));
  m.def("dequantize", [](const QuantTensor& qt) { return array_from_tensor(dequantize(qt)); },
        py::arg("qt"));
  m.def("inject", &inject, py::arg("qt"), py::arg("config"), py::arg("model"), py::arg("seed"));

  py::class_<Model>(m, "Model")
      .def_readonly("name", &Model::name)
      .def_readonly("reference_clean_accuracy", &Model::reference_clean_accuracy)
      .def_property_readonly("num_layers",
                             [](const Model& mm) { return mm.net.layers.size(); })
      .def_property_readonly("layer_kinds",
                             [](const Model& mm) {
                               std::vector<std::string> kinds;
                               for (const auto& l : mm.net.layers)
                                 kinds.push_back(layer_kind_name(l.kind));
                               return kinds;
                             })
      .def_property_readonly("attackable_layers",
                             [](const Model& mm) { return attackable_layers(mm.net, true); });

  m.def("load_model", &load_model, py::arg("path"));

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("size", &Dataset::size)
      .def_property_readonly("labels", [](const Dataset& ds) { return ds.labels; })
      .def("example", [](const Dataset& ds, std::int64_t i) {
        return array_from_tensor(ds.example(i));
      });

  m.def("load_dataset", &load_dataset, py::arg("images_path"), py::arg("labels_path"));

  m.def("forward",
        [](const Model& model, const py::array_t<double, py::array::c_style>& x,
           const std::vector<std::tuple<int, std::string, std::string>>& plan, double v_dd,
           const BitErrorModel& ber, std::uint64_t seed, const std::string& scope) {
          return array_from_tensor(forward(model, tensor_from_array(x),
                                           plan_from_entries(plan, v_dd, scope), ber, seed));
        },
        py::arg("model"), py::arg("x"),
        py::arg("plan") = std::vector<std::tuple<int, std::string, std::string>>{},
        py::arg("v_dd") = 0.68, py::arg("ber") = default_bit_error_model(), py::arg("seed") = 1,
        py::arg("noise_scope") = "image");

  m.def("loss",
        [](const py::array_t<double, py::array::c_style>& logits, int target) {
          return loss(tensor_from_array(logits), target);
        },
        py::arg("logits"), py::arg("target"));

  m.def("grad_input",
        [](const Model& model, const py::array_t<double, py::array::c_style>& x, int target) {
          return array_from_tensor(
              grad_input(model.net, model.params, tensor_from_array(x), target));
        },
        py::arg("model"), py::arg("x"), py::arg("target"));

  m.def("evaluate",
        [](const Model& model, const Dataset& ds,
           const std::vector<std::tuple<int, std::string, std::string>>& plan, double v_dd,
           const BitErrorModel& ber, std::uint64_t seed, std::int64_t subset,
           const std::string& scope) {
          const EvalResult r =
              evaluate(model, ds, plan_from_entries(plan, v_dd, scope), ber, seed, subset);
          return py::make_tuple(r.accuracy, r.mean_confidence);
        },
        py::arg("model"), py::arg("dataset"),
        py::arg("plan") = std::vector<std::tuple<int, std::string, std::string>>{},
        py::arg("v_dd") = 0.68, py::arg("ber") = default_bit_error_model(), py::arg("seed") = 1,
        py::arg("subset") = 0, py::arg("noise_scope") = "image",
        "Returns (accuracy percent, mean max-softmax confidence percent)");

  m.def("fgsm",
        [](const Model& model, const py::array_t<double, py::array::c_style>& x, int target,
           double epsilon) {
          return array_from_tensor(
              fgsm(model.net, model.params, tensor_from_array(x), target, epsilon));
        },
        py::arg("model"), py::arg("x"), py::arg("target"), py::arg("epsilon"));

  m.def("adv_loss", &adv_loss, py::arg("clean_acc"), py::arg("adv_acc"));

  m.def("weight_attack_ideal",
        [](const py::array_t<double, py::array::c_style>& w,
           const py::array_t<double, py::array::c_style>& g, double eps) {
          return array_from_tensor(
              weight_attack_ideal(tensor_from_array(w), tensor_from_array(g), eps));
        },
        py::arg("w"), py::arg("g"), py::arg("epsilon"));
  m.def("noise_direction",
        [](const py::array_t<double, py::array::c_style>& n) {
          return array_from_tensor(noise_direction(tensor_from_array(n)));
        },
        py::arg("noise"));
  m.def("weight_attack_sni",
        [](const py::array_t<double, py::array::c_style>& w, double mu,
           const py::array_t<double, py::array::c_style>& d) {
          return array_from_tensor(
              weight_attack_sni(tensor_from_array(w), mu, tensor_from_array(d)));
        },
        py::arg("w"), py::arg("mu"), py::arg("direction"));

  py::class_<SectionSelection>(m, "SectionSelection")
      .def_property_readonly("layer", [](const SectionSelection& s) { return s.ref.layer; })
      .def_property_readonly("section_index",
                             [](const SectionSelection& s) { return s.ref.index; })
      .def_property_readonly("section_shape",
                             [](const SectionSelection& s) { return s.ref.shape; })
      .def_readonly("match_percent", &SectionSelection::match_percent);

  m.def("select_section",
        [](const Model& model, int layer, const HybridConfig& cfg, const BitErrorModel& ber,
           const Dataset& ds, int batch, int resamples, std::uint64_t seed) {
          return select_section(model, layer, cfg, ber, dataset_head(ds, batch), resamples,
                                seed);
        },
        py::arg("model"), py::arg("layer"), py::arg("config"), py::arg("ber"),
        py::arg("dataset"), py::arg("batch") = 32, py::arg("resamples") = 64,
        py::arg("seed") = 1);

  m.def("attack_section",
        [](const Model& model, const Dataset& ds, const SectionSelection& sel, double mu,
           const std::string& mode, const BitErrorModel& ber, std::uint64_t seed,
           std::int64_t subset) {
          return report_to_dict(attack_section(
              model, ds, sel, mu, mode == "sampled" ? AttackMode::sampled : AttackMode::ideal,
              ber, seed, subset));
        },
        py::arg("model"), py::arg("dataset"), py::arg("selection"), py::arg("mu"),
        py::arg("mode") = "ideal", py::arg("ber") = default_bit_error_model(),
        py::arg("seed") = 1, py::arg("subset") = 0);

  m.def("subsection_sweep",
        [](const Model& model, const Dataset& ds, const SectionSelection& sel,
           const std::vector<double>& fractions, double mu, const BitErrorModel& ber,
           std::uint64_t seed, std::int64_t subset) {
          std::vector<std::tuple<double, double, double>> out;
          for (const auto& p :
               subsection_sweep(model, ds, sel, fractions, mu, ber, seed, subset))
            out.emplace_back(p.fraction, p.accuracy, p.confidence);
          return out;
        },
        py::arg("model"), py::arg("dataset"), py::arg("selection"), py::arg("fractions"),
        py::arg("mu"), py::arg("ber") = default_bit_error_model(), py::arg("seed") = 1,
        py::arg("subset") = 0, "Returns a list of (fraction, accuracy, confidence)");

  py::class_<CellCostModel>(m, "CellCostModel")
      .def(py::init<>())
      .def_readwrite("e6_nominal", &CellCostModel::e6_nominal)
      .def_readwrite("k8", &CellCostModel::k8)
      .def_readwrite("area6", &CellCostModel::area6)
      .def_readwrite("area_ratio_8T", &CellCostModel::area_ratio_8T)
      .def_readwrite("v_nominal", &CellCostModel::v_nominal);

  m.def("total_energy",
        [](const BankList& banks, const CellCostModel& cm) {
          return total_energy(banks_to_design(banks), cm);
        },
        py::arg("banks"), py::arg("cost_model") = CellCostModel{},
        "banks: list of (words, n8, n6, rail_v)");
  m.def("total_area",
        [](const BankList& banks, const CellCostModel& cm) {
          return total_area(banks_to_design(banks), cm);
        },
        py::arg("banks"), py::arg("cost_model") = CellCostModel{});
  m.def("energy_compare",
        [](const BankList& a, const BankList& b, const CellCostModel& cm) {
          return energy_compare(banks_to_design(a), banks_to_design(b), cm);
        },
        py::arg("a"), py::arg("b"), py::arg("cost_model") = CellCostModel{});
  m.def("area_compare",
        [](const BankList& a, const BankList& b, const CellCostModel& cm) {
          return area_compare(banks_to_design(a), banks_to_design(b), cm);
        },
        py::arg("a"), py::arg("b"), py::arg("cost_model") = CellCostModel{});
}
