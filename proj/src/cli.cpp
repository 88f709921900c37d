#include "htsim/cli.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "htsim/attacks.hpp"
#include "htsim/config.hpp"
#include "htsim/robustness.hpp"
#include "htsim/serialize.hpp"
#include "htsim/weight_attack.hpp"

namespace htsim {

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text_atomic(const std::string& path, const std::string& content) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw FormatError("cannot open " + tmp + " for writing");
    os << content;
  }
  std::filesystem::rename(tmp, path);
}

json report_meta(const ExperimentConfig& cfg) {
  return json{{"config_hash", config_hash(cfg)},
              {"seed", cfg.seed},
              {"generated_at", timestamp_utc()}};
}

std::string csv_meta_line(const ExperimentConfig& cfg) {
  return "# config_hash=" + config_hash(cfg) + " seed=" + std::to_string(cfg.seed) + "\n";
}

void write_json_report(const std::string& path, json j) {
  write_text_atomic(path, j.dump(2) + "\n");
}

struct LoadedExperiment {
  ExperimentConfig cfg;
  Model model;
  Dataset dataset;
  BitErrorModel ber;
};

LoadedExperiment load_experiment(const std::string& config_path, bool need_model) {
  LoadedExperiment ex;
  ex.cfg = load_config(config_path);
  ex.ber = resolve_ber_model(ex.cfg);
  if (need_model) {
    if (ex.cfg.model_path.empty()) throw ConfigError("config does not name a model");
    if (ex.cfg.images_path.empty() || ex.cfg.labels_path.empty())
      throw ConfigError("config does not name a dataset");
    ex.model = load_model(ex.cfg.model_path);
    ex.dataset = load_dataset(ex.cfg.images_path, ex.cfg.labels_path);
  }
  return ex;
}

Dataset head_of(const Dataset& ds, std::int64_t n) {
  n = std::min(n, ds.size());
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

// ---------------------------------------------------------------------------
// characterize: expected perturbation over the (ratio, voltage) grid
// ---------------------------------------------------------------------------

int run_characterize(const std::string& config_path, const std::string& out_override) {
  LoadedExperiment ex = load_experiment(config_path, false);
  const std::string out_dir = out_override.empty() ? ex.cfg.out_dir : out_override;

  std::ostringstream csv;
  csv << csv_meta_line(ex.cfg);
  csv << "v_dd,n8,n6,p_flip,expected_mu\n";
  for (double v : ex.cfg.v_dd_list) {
    for (int n6 = 1; n6 <= 7; ++n6) {
      const HybridConfig cfg{8 - n6, n6, v};
      const double p = ex.ber.ber_at(v);
      const double mu = expected_mu(cfg, ex.ber, kDefaultCalibrationScale);
      csv << fmt_double(v) << "," << cfg.n8 << "," << cfg.n6 << "," << fmt_double(p) << ","
          << fmt_double(mu) << "\n";
    }
  }
  const std::string path = out_dir + "/characterize.csv";
  write_text_atomic(path, csv.str());
  std::cout << "wrote " << path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// search: per-layer scan + combination search
// ---------------------------------------------------------------------------

json scan_to_json(const LayerScanResult& s, const NetworkDef& net) {
  json adv = json::array();
  for (double a : s.adv_acc_by_n6) adv.push_back(a);
  return json{{"layer", s.layer},
              {"kind", layer_kind_name(net.layers[s.layer].kind)},
              {"best_ratio", s.best_config.ratio_str()},
              {"best_adv_acc", s.best_adv_acc},
              {"baseline_adv_acc", s.baseline_adv_acc},
              {"improvement", s.improvement()},
              {"label", layer_label_name(s.label)},
              {"adv_acc_by_n6", adv}};
}

int run_search(const std::string& config_path, const std::string& out_override) {
  LoadedExperiment ex = load_experiment(config_path, true);
  const std::string out_dir = out_override.empty() ? ex.cfg.out_dir : out_override;

  SearchOptions opts;
  opts.epsilon = ex.cfg.epsilons.front();
  opts.v_dd = ex.cfg.v_dd;
  opts.seed = ex.cfg.seed;
  opts.subset = ex.cfg.eval_subset;
  opts.max_subset = ex.cfg.max_subset;
  opts.scope = ex.cfg.noise_scope;

  RobustnessSearch search(ex.model, ex.dataset, ex.ber, opts);
  const BestConfigStore store = search.run();

  json j;
  j["meta"] = report_meta(ex.cfg);
  j["model"] = ex.model.name;
  j["v_dd"] = store.v_dd;
  j["epsilon"] = store.epsilon;
  j["baseline_clean_acc"] = store.baseline_clean_acc;
  j["baseline_adv_acc"] = store.baseline_adv_acc;
  json scans = json::array();
  for (const auto& s : store.scans) scans.push_back(scan_to_json(s, ex.model.net));
  j["scans"] = scans;
  json chosen = json::array();
  for (const auto& c : store.chosen)
    chosen.push_back(json{{"layer", c.layer}, {"ratio", c.config.ratio_str()}});
  j["chosen"] = chosen;
  j["combined_adv_acc"] = store.combined_adv_acc;
  j["combined_clean_acc"] = store.combined_clean_acc;
  j["clean_deviation"] = store.clean_deviation;
  j["subsets_evaluated"] = store.subsets_evaluated;
  if (!store.note.empty()) j["note"] = store.note;
  write_json_report(out_dir + "/search_scan.json", j);

  std::ostringstream csv;
  csv << csv_meta_line(ex.cfg);
  csv << "layer,kind,config,v_dd,clean_acc,clean_deviation\n";
  for (const auto& row : emit_config_table(store, ex.model.net))
    csv << row.layer << "," << row.kind << "," << row.config << "," << fmt_double(store.v_dd)
        << "," << fmt_double(store.combined_clean_acc) << ","
        << fmt_double(store.clean_deviation) << "\n";
  write_text_atomic(out_dir + "/search_table.csv", csv.str());

  std::cout << "wrote " << out_dir << "/search_scan.json and " << out_dir
            << "/search_table.csv\n";
  return 0;
}

// ---------------------------------------------------------------------------
// attack / sweep
// ---------------------------------------------------------------------------

json attack_report_to_json(const SectionAttackReport& rep) {
  return json{{"layer", rep.ref.layer},
              {"section_index", rep.ref.index},
              {"section_shape", rep.ref.shape},
              {"match_percent", rep.match_percent},
              {"mu", rep.mu},
              {"mode", attack_mode_name(rep.mode)},
              {"config", rep.attack_config.str()},
              {"selection_config", rep.selection_config.str()},
              {"pre_accuracy", rep.pre_accuracy},
              {"pre_confidence", rep.pre_confidence},
              {"post_accuracy", rep.post_accuracy},
              {"post_confidence", rep.post_confidence},
              {"subsection_fraction", rep.subsection_fraction}};
}

WeightAttackOptions attack_options(const ExperimentConfig& cfg) {
  WeightAttackOptions opts;
  opts.resamples = cfg.resamples;
  opts.batch = cfg.batch;
  opts.eval_subset = cfg.eval_subset;
  opts.exclude_residual = cfg.exclude_residual;
  opts.selection_config = parse_ratio(cfg.selection_ratio, cfg.selection_v_dd);
  return opts;
}

int run_attack(const std::string& config_path, const std::string& out_override, double mu,
               int layer, const std::string& mode_s, bool grid) {
  LoadedExperiment ex = load_experiment(config_path, true);
  const std::string out_dir = out_override.empty() ? ex.cfg.out_dir : out_override;
  const WeightAttackOptions opts = attack_options(ex.cfg);
  const AttackMode mode = mode_s == "sampled" ? AttackMode::sampled : AttackMode::ideal;
  const Dataset batch = head_of(ex.dataset, opts.batch);

  if (grid) {
    const auto cells =
        layer_sensitivity_report(ex.model, ex.dataset, ex.cfg.mus, ex.ber, ex.cfg.seed, opts);
    std::ostringstream csv;
    csv << csv_meta_line(ex.cfg);
    csv << "layer,mu,section_index,match_percent,pre_accuracy,post_accuracy,post_confidence\n";
    for (const auto& c : cells)
      csv << c.layer << "," << fmt_double(c.mu) << "," << c.report.ref.index << ","
          << fmt_double(c.report.match_percent) << "," << fmt_double(c.report.pre_accuracy)
          << "," << fmt_double(c.report.post_accuracy) << ","
          << fmt_double(c.report.post_confidence) << "\n";
    const std::string path = out_dir + "/attack_grid.csv";
    write_text_atomic(path, csv.str());
    std::cout << "wrote " << path << "\n";
    return 0;
  }

  SectionAttackReport best;
  bool have = false;
  std::vector<int> layers;
  if (layer >= 0)
    layers.push_back(layer);
  else
    layers = attackable_layers(ex.model.net, opts.exclude_residual);
  for (int l : layers) {
    const SectionSelection sel =
        select_section(ex.model, l, opts.selection_config, ex.ber, batch, opts.resamples,
                       ex.cfg.seed);
    const SectionAttackReport rep =
        attack_section(ex.model, ex.dataset, sel, mu, mode, ex.ber, ex.cfg.seed,
                       ex.cfg.eval_subset);
    if (!have || rep.post_accuracy < best.post_accuracy) {
      best = rep;
      have = true;
    }
  }

  json j = attack_report_to_json(best);
  j["meta"] = report_meta(ex.cfg);
  const std::string path = out_dir + "/attack_report.json";
  write_json_report(path, j);
  std::cout << "wrote " << path << "\n";
  return 0;
}

int run_sweep(const std::string& config_path, const std::string& out_override, double mu,
              int layer, std::vector<double> fractions) {
  LoadedExperiment ex = load_experiment(config_path, true);
  const std::string out_dir = out_override.empty() ? ex.cfg.out_dir : out_override;
  const WeightAttackOptions opts = attack_options(ex.cfg);
  const Dataset batch = head_of(ex.dataset, opts.batch);
  if (fractions.empty()) fractions = {0.25, 0.5, 0.75, 1.0};

  if (layer < 0) {
    // Default to the layer the attack hits hardest at this mu.
    double worst = 1e300;
    for (int l : attackable_layers(ex.model.net, opts.exclude_residual)) {
      const SectionSelection sel = select_section(ex.model, l, opts.selection_config, ex.ber,
                                                  batch, opts.resamples, ex.cfg.seed);
      const SectionAttackReport rep = attack_section(
          ex.model, ex.dataset, sel, mu, AttackMode::ideal, ex.ber, ex.cfg.seed,
          ex.cfg.eval_subset);
      if (rep.post_accuracy < worst) {
        worst = rep.post_accuracy;
        layer = l;
      }
    }
  }

  const SectionSelection sel = select_section(ex.model, layer, opts.selection_config, ex.ber,
                                              batch, opts.resamples, ex.cfg.seed);
  const auto points =
      subsection_sweep(ex.model, ex.dataset, sel, fractions, mu, ex.ber, ex.cfg.seed,
                       ex.cfg.eval_subset);

  std::ostringstream csv;
  csv << csv_meta_line(ex.cfg);
  csv << "layer,section_index,mu,fraction,accuracy,confidence\n";
  for (const auto& p : points)
    csv << layer << "," << sel.ref.index << "," << fmt_double(mu) << "," << fmt_double(p.fraction)
        << "," << fmt_double(p.accuracy) << "," << fmt_double(p.confidence) << "\n";
  const std::string path = out_dir + "/sweep.csv";
  write_text_atomic(path, csv.str());
  std::cout << "wrote " << path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// cost
// ---------------------------------------------------------------------------

int run_cost(const std::string& config_path, const std::string& out_override,
             const std::string& table_path) {
  LoadedExperiment ex = load_experiment(config_path, !table_path.empty());
  const std::string out_dir = out_override.empty() ? ex.cfg.out_dir : out_override;

  std::vector<NoisyLayerChoice> layers;
  if (table_path.empty()) {
    // No chosen layers: a single homogeneous bank per paradigm reproduces
    // the headline comparison.
    layers.push_back({1, false, {}});
  } else {
    std::ifstream is(table_path);
    if (!is) throw ConfigError("cannot open " + table_path);
    json tj;
    try {
      tj = json::parse(is);
    } catch (const json::exception& e) {
      throw ConfigError(table_path + ": " + e.what());
    }
    if (ex.cfg.model_path.empty()) throw ConfigError("cost with a table needs the model");
    const auto shapes = ex.model.net.infer_shapes();
    const double v = tj.value("v_dd", ex.cfg.v_scaled);
    for (int l : ex.model.net.activation_mb_layers()) {
      NoisyLayerChoice c;
      c.words = Tensor::numel_of(shapes[static_cast<std::size_t>(l)]);
      for (const auto& ch : tj.at("chosen")) {
        if (ch.at("layer").get<int>() == l) {
          c.noisy = true;
          c.config = parse_ratio(ch.at("ratio").get<std::string>(), v);
        }
      }
      layers.push_back(c);
    }
  }

  const MemoryDesign energy_design =
      paradigm_config(layers, Paradigm::energy_efficient, ex.cfg.v_scaled, ex.cfg.cost);
  const MemoryDesign area_design =
      paradigm_config(layers, Paradigm::area_efficient, ex.cfg.v_scaled, ex.cfg.cost);

  json j;
  j["meta"] = report_meta(ex.cfg);
  j["v_scaled"] = ex.cfg.v_scaled;
  j["v_nominal"] = ex.cfg.cost.v_nominal;
  j["energy_efficient"] = json{{"energy", total_energy(energy_design, ex.cfg.cost)},
                               {"area", total_area(energy_design, ex.cfg.cost)}};
  j["area_efficient"] = json{{"energy", total_energy(area_design, ex.cfg.cost)},
                             {"area", total_area(area_design, ex.cfg.cost)}};
  j["energy_percent_vs_area_design"] = energy_compare(energy_design, area_design, ex.cfg.cost);
  j["area_percent_vs_area_design"] = area_compare(energy_design, area_design, ex.cfg.cost);
  const std::string path = out_dir + "/cost.json";
  write_json_report(path, j);
  std::cout << "wrote " << path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

int run_infer(const std::string& config_path, const std::string& out_override) {
  LoadedExperiment ex = load_experiment(config_path, true);
  const std::string out_dir = out_override.empty() ? ex.cfg.out_dir : out_override;

  const EvalResult clean = evaluate(ex.model, ex.dataset, NoisePlan::none(), ex.ber,
                                    ex.cfg.seed, ex.cfg.eval_subset);
  json j;
  j["meta"] = report_meta(ex.cfg);
  j["model"] = ex.model.name;
  j["reference_clean_accuracy"] = ex.model.reference_clean_accuracy;
  j["clean_accuracy"] = clean.accuracy;
  j["clean_confidence"] = clean.mean_confidence;

  const NoisePlan plan = resolve_plan(ex.cfg);
  if (!plan.empty()) {
    const EvalResult noisy = evaluate(ex.model, ex.dataset, plan, ex.ber, ex.cfg.seed,
                                      ex.cfg.eval_subset);
    j["noisy_accuracy"] = noisy.accuracy;
    j["noisy_confidence"] = noisy.mean_confidence;
    json pl = json::array();
    for (const auto& e : plan.entries)
      pl.push_back(json{{"layer", e.layer},
                        {"target", e.target == NoiseTarget::activation_mb ? "activation_mb"
                                                                          : "parameter_mb"},
                        {"config", e.config.str()}});
    j["plan"] = pl;
  }
  const std::string path = out_dir + "/infer.json";
  write_json_report(path, j);
  std::cout << "wrote " << path << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Hybrid 8T-6T SRAM bit-error noise simulator for quantized CNN inference"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  double mu = 0.01;
  int layer = -1;
  std::string mode = "ideal";
  bool grid = false;
  std::vector<double> fractions;
  std::string table_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (overrides config out_dir)");
  };

  CLI::App* characterize = app.add_subcommand(
      "characterize", "expected perturbation grid over ratios and voltages (CSV)");
  add_common(characterize);

  CLI::App* search = app.add_subcommand(
      "search", "per-layer noise scan and combination search (JSON + CSV table)");
  add_common(search);

  CLI::App* attack = app.add_subcommand(
      "attack", "gradient-aligned section attack on stored weights (JSON report)");
  add_common(attack);
  attack->add_option("--mu", mu, "perturbation magnitude")->required();
  attack->add_option("--layer", layer, "target layer (default: the hardest-hit one)");
  attack->add_option("--mode", mode, "ideal | sampled")
      ->check(CLI::IsMember({"ideal", "sampled"}));
  attack->add_flag("--grid", grid, "emit the layers x mu sensitivity grid instead (CSV)");

  CLI::App* sweep = app.add_subcommand(
      "sweep", "accuracy vs attacked sub-section fraction for one section (CSV)");
  add_common(sweep);
  sweep->add_option("--mu", mu, "perturbation magnitude")->required();
  sweep->add_option("--layer", layer, "target layer (default: the hardest-hit one)");
  sweep->add_option("--fractions", fractions, "fractions in (0,1], default 0.25 0.5 0.75 1.0");

  CLI::App* cost = app.add_subcommand(
      "cost", "energy/area comparison of the two non-noisy-layer design paradigms (JSON)");
  add_common(cost);
  cost->add_option("--table", table_path, "search_scan.json with the chosen noisy layers");

  CLI::App* infer = app.add_subcommand("infer", "clean (and planned-noise) evaluation (JSON)");
  add_common(infer);

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (characterize->parsed()) return run_characterize(config_path, out_dir);
    if (search->parsed()) return run_search(config_path, out_dir);
    if (attack->parsed()) return run_attack(config_path, out_dir, mu, layer, mode, grid);
    if (sweep->parsed()) return run_sweep(config_path, out_dir, mu, layer, fractions);
    if (cost->parsed()) return run_cost(config_path, out_dir, table_path);
    if (infer->parsed()) return run_infer(config_path, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 2;
}

}  // namespace htsim
