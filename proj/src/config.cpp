#include "htsim/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace htsim {

namespace {

using nlohmann::json;

json parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path + " is not valid JSON: " + e.what());
  }
}

void require_exists(const std::string& path, const char* what) {
  if (!path.empty() && !std::filesystem::exists(path))
    throw ConfigError(std::string(what) + " file does not exist: " + path);
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
  const json j = parse_file(path);
  ExperimentConfig cfg;
  try {
    if (!j.contains("seed"))
      throw ConfigError("config must pin a seed; wall-clock seeding is not supported");
    cfg.seed = j.at("seed").get<std::uint64_t>();

    cfg.model_path = j.value("model", "");
    cfg.images_path = j.value("dataset_images", "");
    cfg.labels_path = j.value("dataset_labels", "");
    cfg.ber_table_path = j.value("ber_table", "");
    cfg.calibration_targets_path = j.value("calibration_targets", "");

    cfg.v_dd = j.value("v_dd", cfg.v_dd);
    if (j.contains("v_dd_list")) cfg.v_dd_list = j.at("v_dd_list").get<std::vector<double>>();
    if (j.contains("epsilons")) cfg.epsilons = j.at("epsilons").get<std::vector<double>>();
    if (j.contains("mus")) cfg.mus = j.at("mus").get<std::vector<double>>();
    cfg.eval_subset = j.value("eval_subset", cfg.eval_subset);
    cfg.max_subset = j.value("max_subset", cfg.max_subset);
    cfg.resamples = j.value("resamples", cfg.resamples);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.selection_ratio = j.value("selection_ratio", cfg.selection_ratio);
    cfg.selection_v_dd = j.value("selection_v_dd", cfg.selection_v_dd);
    cfg.exclude_residual = j.value("exclude_residual", cfg.exclude_residual);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);

    const std::string scope = j.value("noise_scope", "image");
    if (scope == "image")
      cfg.noise_scope = NoiseScope::per_image;
    else if (scope == "run")
      cfg.noise_scope = NoiseScope::per_run;
    else
      throw ConfigError("noise_scope must be \"image\" or \"run\", got \"" + scope + "\"");

    if (j.contains("cost")) {
      const json& c = j.at("cost");
      cfg.cost.e6_nominal = c.value("e6_nominal", cfg.cost.e6_nominal);
      cfg.cost.k8 = c.value("k8", cfg.cost.k8);
      cfg.cost.area6 = c.value("area6", cfg.cost.area6);
      cfg.cost.area_ratio_8T = c.value("area_ratio_8T", cfg.cost.area_ratio_8T);
      cfg.cost.v_nominal = c.value("v_nominal", cfg.cost.v_nominal);
      cfg.v_scaled = c.value("v_scaled", cfg.v_scaled);
    }

    if (j.contains("plan")) {
      for (const auto& e : j.at("plan")) {
        ExperimentConfig::PlanEntry pe;
        pe.layer = e.at("layer").get<int>();
        pe.target = e.value("target", "activation_mb");
        pe.ratio = e.at("ratio").get<std::string>();
        cfg.plan.push_back(pe);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }

  if (cfg.epsilons.empty() || cfg.mus.empty() || cfg.v_dd_list.empty())
    throw ConfigError("epsilons, mus and v_dd_list must be non-empty");
  if (!cfg.ber_table_path.empty() && !cfg.calibration_targets_path.empty())
    throw ConfigError("give either ber_table or calibration_targets, not both");
  require_exists(cfg.model_path, "model");
  require_exists(cfg.images_path, "dataset images");
  require_exists(cfg.labels_path, "dataset labels");
  require_exists(cfg.ber_table_path, "BER table");
  require_exists(cfg.calibration_targets_path, "calibration targets");

  cfg.canonical_json = j.dump();
  return cfg;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : cfg.canonical_json) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(h));
  return buf;
}

BitErrorModel load_ber_table(const std::string& path) {
  const json j = parse_file(path);
  try {
    const std::string mode_s = j.value("extrapolation_mode", "clamp");
    Extrapolation mode;
    if (mode_s == "clamp")
      mode = Extrapolation::clamp;
    else if (mode_s == "error")
      mode = Extrapolation::error;
    else
      throw ConfigError("extrapolation_mode must be \"clamp\" or \"error\"");
    std::vector<BerPoint> points;
    for (const auto& p : j.at("points"))
      points.push_back({p.at("v_dd").get<double>(), p.at("p_flip").get<double>()});
    return BitErrorModel(std::move(points), mode);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const RangeError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void save_ber_table(const std::string& path, const BitErrorModel& model) {
  json j;
  j["extrapolation_mode"] = model.extrapolation_mode() == Extrapolation::clamp ? "clamp" : "error";
  json points = json::array();
  for (const auto& p : model.points()) points.push_back({{"v_dd", p.v_dd}, {"p_flip", p.p_flip}});
  j["points"] = points;
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  os << j.dump(2) << "\n";
}

std::vector<CalibrationTarget> load_calibration_targets(const std::string& path, double* scale) {
  const json j = parse_file(path);
  try {
    if (scale) *scale = j.value("scale", kDefaultCalibrationScale);
    std::vector<CalibrationTarget> targets;
    for (const auto& t : j.at("targets")) {
      CalibrationTarget ct;
      ct.config = parse_ratio(t.at("ratio").get<std::string>(), t.at("v_dd").get<double>());
      ct.mu_target = t.at("mu").get<double>();
      targets.push_back(ct);
    }
    if (targets.empty()) throw ConfigError(path + ": targets list is empty");
    return targets;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

BitErrorModel resolve_ber_model(const ExperimentConfig& cfg) {
  if (!cfg.ber_table_path.empty()) return load_ber_table(cfg.ber_table_path);
  if (!cfg.calibration_targets_path.empty()) {
    double scale = kDefaultCalibrationScale;
    const auto targets = load_calibration_targets(cfg.calibration_targets_path, &scale);
    return calibrate(targets, scale);
  }
  return default_bit_error_model();
}

NoisePlan resolve_plan(const ExperimentConfig& cfg) {
  NoisePlan plan;
  plan.scope = cfg.noise_scope;
  for (const auto& pe : cfg.plan) {
    NoisePlanEntry e;
    e.layer = pe.layer;
    if (pe.target == "activation_mb")
      e.target = NoiseTarget::activation_mb;
    else if (pe.target == "parameter_mb")
      e.target = NoiseTarget::parameter_mb;
    else
      throw ConfigError("plan target must be activation_mb or parameter_mb, got \"" + pe.target +
                        "\"");
    e.config = parse_ratio(pe.ratio, cfg.v_dd);
    plan.entries.push_back(e);
  }
  return plan;
}

}  // namespace htsim
