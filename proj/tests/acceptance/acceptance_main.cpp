// Acceptance suite: every release-gating property in one binary, one
// criterion per function, one PASS/FAIL line each. Run all criteria or a
// single one with --criterion N (the ctest entries fan out one per
// criterion). Requires the shipped desk assets.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "../gradcheck.hpp"
#include "htsim/attacks.hpp"
#include "htsim/cli.hpp"
#include "htsim/config.hpp"
#include "htsim/parallel.hpp"
#include "htsim/robustness.hpp"
#include "htsim/serialize.hpp"
#include "htsim/weight_attack.hpp"

using namespace htsim;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

std::string g_assets = HTSIM_SOURCE_DIR "/assets";

Model desk_vgg() { return load_model(g_assets + "/desk_vgg.htnn"); }
Model desk_resnet() { return load_model(g_assets + "/desk_resnet.htnn"); }
Dataset desk_test() {
  return load_dataset(g_assets + "/synth10_test_images.htsr",
                      g_assets + "/synth10_test_labels.htsr");
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    pass = false;
    if (!detail.empty()) detail += "; ";
    detail += why;
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
  return buf;
}

// --------------------------------------------------------------------------
// C1: empirical mean|N| over 1e6 words vs the exact expectation, 1% relative,
// for every (n6, p) cell.
// --------------------------------------------------------------------------
Outcome c01_sampler_analytic() {
  Outcome out;
  const std::size_t words = 1000000;
  const double scale = kDefaultCalibrationScale;
  std::vector<std::uint8_t> codes(words);
  Rng rng(424242);
  for (auto& c : codes) c = static_cast<std::uint8_t>(rng.next_u64());
  int cells = 0;
  double worst = 0.0;
  std::string worst_cell;
  for (int n6 = 0; n6 <= 8; ++n6) {
    for (double p : {1e-3, 1e-2, 1e-1, 0.5}) {
      const BitErrorModel m({{0.7, p}}, Extrapolation::clamp);
      const HybridConfig cfg{8 - n6, n6, 0.7};
      const auto s = sample_noise(codes, {Signedness::unsigned_int, scale}, cfg, m,
                                  mix_seed(424242, static_cast<std::uint64_t>(n6 * 101) +
                                                       static_cast<std::uint64_t>(p * 10007)));
      const double mu = expected_mu_at_p(n6, p, scale);
      ++cells;
      if (mu == 0.0) {
        if (s.mean_abs() != 0.0) out.fail("n6=0 cell produced nonzero noise");
        continue;
      }
      const double rel = std::fabs(s.mean_abs() - mu) / mu;
      if (rel > worst) {
        worst = rel;
        worst_cell = "n6=" + std::to_string(n6) + ",p=" + fmt(p);
      }
      if (rel > 0.01)
        out.fail("n6=" + std::to_string(n6) + " p=" + fmt(p) + " rel err " + fmt(rel));
    }
  }
  out.note(std::to_string(cells) + " cells, worst rel err " + fmt(worst) + " at " + worst_cell);
  return out;
}

// --------------------------------------------------------------------------
// C2: perturbation trends of the calibrated default table.
// --------------------------------------------------------------------------
Outcome c02_trends() {
  Outcome out;
  const auto& m = default_bit_error_model();
  std::vector<double> voltages;
  for (const auto& pt : m.points()) voltages.push_back(pt.v_dd);
  for (std::size_t i = 1; i < m.points().size(); ++i)
    voltages.push_back(0.5 * (m.points()[i - 1].v_dd + m.points()[i].v_dd));
  std::sort(voltages.begin(), voltages.end());

  for (double v : voltages) {
    double prev = -1.0;
    for (int n6 = 8; n6 >= 0; --n6) {  // n8 ascending
      const double mu = expected_mu({8 - n6, n6, v}, m, kDefaultCalibrationScale);
      if (n6 < 8 && !(mu < prev))
        out.fail("mu not strictly decreasing in n8 at v=" + fmt(v) + ", n6=" + std::to_string(n6));
      prev = mu;
    }
  }
  for (int n6 = 1; n6 <= 8; ++n6) {
    double prev = -1.0;
    for (std::size_t i = voltages.size(); i-- > 0;) {  // descending voltage
      const double mu = expected_mu({8 - n6, n6, voltages[i]}, m, kDefaultCalibrationScale);
      if (prev >= 0.0 && mu + 1e-15 < prev)
        out.fail("mu decreased as v_dd dropped at n6=" + std::to_string(n6));
      prev = mu;
    }
  }
  out.note("checked " + std::to_string(voltages.size()) + " voltages x 9 ratios");
  return out;
}

// --------------------------------------------------------------------------
// C3: the default table reproduces every reference (mu, config) anchor row
// within 10%.
// --------------------------------------------------------------------------
Outcome c03_anchor_calibration() {
  Outcome out;
  const auto& m = default_bit_error_model();
  for (const auto& pc : reference_mu_configs()) {
    const double mu = expected_mu(pc.config, m, kDefaultCalibrationScale);
    const double rel = std::fabs(mu / pc.mu - 1.0);
    if (rel > 0.10)
      out.fail("row mu=" + fmt(pc.mu) + " " + pc.config.str() + ": expected_mu=" + fmt(mu) +
               " (" + fmt(100 * rel, 3) + "% off)");
  }
  if (!out.pass)
    out.note(
        "two anchor rows share ratio and voltage with different mu; one flip rate per voltage "
        "cannot reproduce both");
  return out;
}

// --------------------------------------------------------------------------
// C4: finite-difference gradient agreement on every layer type.
// --------------------------------------------------------------------------
Outcome c04_gradients() {
  Outcome out;
  const Dataset ds = desk_test();
  int layer_types_checked = 0;
  for (const Model& model : {desk_vgg(), desk_resnet()}) {
    const Tensor x = ds.example(3);
    const int t = ds.labels[3];
    const auto gi = gradcheck::check_grad_input(model.net, model.params, x, t, 10, 97);
    if (gi.checked != 10 || gi.worst_rel_err >= 1e-4)
      out.fail(model.name + " input grad worst " + fmt(gi.worst_rel_err));
    for (std::size_t l = 0; l < model.net.layers.size(); ++l) {
      if (!model.net.layers[l].has_weights()) continue;
      const auto gp =
          gradcheck::check_grad_params_layer(model.net, model.params, x, t, l, 10, 131 + l);
      ++layer_types_checked;
      if (gp.checked != 10 || gp.worst_rel_err >= 1e-4)
        out.fail(model.name + " layer " + std::to_string(l) + " (" +
                 layer_kind_name(model.net.layers[l].kind) + ") worst " +
                 fmt(gp.worst_rel_err));
    }
  }
  out.note(std::to_string(layer_types_checked) + " weighted layers FD-checked at step 1e-3");
  return out;
}

// --------------------------------------------------------------------------
// C5: FGSM contract and monotone degradation on the desk model.
// --------------------------------------------------------------------------
Outcome c05_fgsm() {
  Outcome out;
  const Model model = desk_vgg();
  const Dataset ds = desk_test();
  const std::int64_t n = std::min<std::int64_t>(1000, ds.size());

  {
    const Tensor x = ds.example(0);
    const Tensor same = fgsm(model.net, model.params, x, ds.labels[0], 0.0);
    if (same.data != x.data) out.fail("eps=0 is not the identity");
  }
  for (std::int64_t i : {std::int64_t(1), std::int64_t(2), std::int64_t(5)}) {
    const Tensor x = ds.example(i);
    for (double eps : {0.05, 0.3}) {
      const Tensor adv = fgsm(model.net, model.params, x, ds.labels[i], eps);
      for (std::size_t j = 0; j < adv.data.size(); ++j) {
        if (adv.data[j] < 0.0 || adv.data[j] > 1.0) out.fail("output left [0,1]");
        if (std::fabs(adv.data[j] - x.data[j]) > eps + 1e-12) out.fail("sup-norm above eps");
      }
    }
  }

  auto adv_accuracy = [&](double eps) {
    Dataset adv;
    adv.images = Tensor(std::vector<std::int64_t>{n, 3, 32, 32});
    adv.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
    const std::int64_t stride = 3 * 32 * 32;
    parallel_for(n, [&](std::int64_t b, std::int64_t e) {
      for (std::int64_t i = b; i < e; ++i) {
        const Tensor a = fgsm(model.net, model.params, ds.example(i), ds.labels[i], eps);
        std::copy(a.data.begin(), a.data.end(), adv.images.data.begin() + i * stride);
      }
    });
    return evaluate(model, adv, NoisePlan::none(), default_bit_error_model(), 77).accuracy;
  };
  const double weak = adv_accuracy(0.05);
  const double strong = adv_accuracy(0.3);
  if (!(strong <= weak))
    out.fail("adv acc at eps=0.3 (" + fmt(strong) + ") above eps=0.05 (" + fmt(weak) + ")");
  out.note("adv acc " + fmt(weak) + "% at eps 0.05, " + fmt(strong) + "% at eps 0.3, n=" +
           std::to_string(n));
  return out;
}

// --------------------------------------------------------------------------
// C6: the two weight-attack formulations coincide bit for bit.
// --------------------------------------------------------------------------
Outcome c06_attack_consistency() {
  Outcome out;
  const Model model = desk_vgg();
  Rng rng(55);
  for (int l : attackable_layers(model.net, true)) {
    const Tensor& w = model.params.layers[l].weight;
    Tensor g(w.shape);
    for (auto& v : g.data) v = rng.normal();
    g.data[0] = 0.0;
    const double eps = 0.031;
    const Tensor a = weight_attack_ideal(w, g, eps);
    const Tensor b = weight_attack_sni(w, eps, noise_direction(g));
    for (std::size_t j = 0; j < w.data.size(); ++j)
      if (a.data[j] != b.data[j]) {
        out.fail("layer " + std::to_string(l) + " differs at element " + std::to_string(j));
        break;
      }
  }
  out.note("all attackable layers, sign(0) included");
  return out;
}

// --------------------------------------------------------------------------
// C7: section attacks never touch anything outside the chosen section.
// --------------------------------------------------------------------------
Outcome c07_locality() {
  Outcome out;
  const Model model = desk_vgg();
  const Dataset ds = desk_test();
  Dataset batch;
  {
    batch.images = Tensor(std::vector<std::int64_t>{32, 3, 32, 32});
    std::copy_n(ds.images.data.begin(), batch.images.numel(), batch.images.data.begin());
    batch.labels.assign(ds.labels.begin(), ds.labels.begin() + 32);
  }
  const auto layers = attackable_layers(model.net, true);
  for (int l : layers) {
    const auto sel = select_section(model, l, {7, 1, 0.72}, default_bit_error_model(), batch,
                                    8, 2024);
    for (AttackMode mode : {AttackMode::ideal, AttackMode::sampled}) {
      const Model attacked = apply_section_attack(model, sel, 0.1, mode);
      for (std::size_t ll = 0; ll < model.params.layers.size(); ++ll) {
        const auto& before = model.params.layers[ll];
        const auto& after = attacked.params.layers[ll];
        if (before.bias.data != after.bias.data) out.fail("bias moved");
        for (std::size_t j = 0; j < before.weight.data.size(); ++j) {
          const bool inside = static_cast<int>(ll) == sel.ref.layer &&
                              static_cast<std::int64_t>(j) >= sel.ref.offset &&
                              static_cast<std::int64_t>(j) < sel.ref.offset + sel.ref.size;
          if (!inside && before.weight.data[j] != after.weight.data[j]) {
            out.fail("layer " + std::to_string(ll) + " weight " + std::to_string(j) + " moved");
            break;
          }
        }
        // quantized view: codes outside the section identical too
        if (model.net.layers[ll].has_parameter_mb()) {
          const auto qa = quantize(before.weight, *model.schemes.weight[ll]);
          const auto qb = quantize(after.weight, *model.schemes.weight[ll]);
          for (std::size_t j = 0; j < qa.codes.size(); ++j) {
            const bool inside = static_cast<int>(ll) == sel.ref.layer &&
                                static_cast<std::int64_t>(j) >= sel.ref.offset &&
                                static_cast<std::int64_t>(j) < sel.ref.offset + sel.ref.size;
            if (!inside && qa.codes[j] != qb.codes[j]) {
              out.fail("quantized code moved outside section");
              break;
            }
          }
        }
      }
    }
  }
  out.note(std::to_string(layers.size()) + " layers x 2 modes checked bitwise");
  return out;
}

// --------------------------------------------------------------------------
// C8: gradient-aligned perturbation beats random signs by >= 5 accuracy
// points at mu = 0.1, averaged over 5 seeds.
// --------------------------------------------------------------------------
Outcome c08_dominance() {
  Outcome out;
  const Model model = desk_vgg();
  const Dataset ds = desk_test();
  const double mu = 0.1;
  const int attack_layer = 2;  // second convolution, the most fragile bank
  const std::int64_t subset = 1000;

  Dataset batch;
  batch.images = Tensor(std::vector<std::int64_t>{32, 3, 32, 32});
  std::copy_n(ds.images.data.begin(), batch.images.numel(), batch.images.data.begin());
  batch.labels.assign(ds.labels.begin(), ds.labels.begin() + 32);

  double aligned_sum = 0.0;
  double random_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto sel = select_section(model, attack_layer, {7, 1, 0.72},
                                    default_bit_error_model(), batch, 64, seed);
    const auto rep = attack_section(model, ds, sel, mu, AttackMode::ideal,
                                    default_bit_error_model(), seed, subset);
    aligned_sum += rep.post_accuracy;

    Model rnd = model;
    Rng rng(mix_seed(9000, seed));
    Tensor& w = rnd.params.layers[attack_layer].weight;
    for (std::int64_t j = 0; j < sel.ref.size; ++j)
      w.data[sel.ref.offset + j] += mu * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    random_sum +=
        evaluate(rnd, ds, NoisePlan::none(), default_bit_error_model(), seed, subset).accuracy;
  }
  const double aligned = aligned_sum / 5.0;
  const double random_acc = random_sum / 5.0;
  const double clean =
      evaluate(model, ds, NoisePlan::none(), default_bit_error_model(), 1, subset).accuracy;
  const double margin = random_acc - aligned;
  if (!(margin >= 5.0))
    out.fail("margin " + fmt(margin) + " points (aligned " + fmt(aligned) + "%, random " +
             fmt(random_acc) + "%)");
  out.note("clean " + fmt(clean) + "%, aligned " + fmt(aligned) + "%, random " +
           fmt(random_acc) + "%, margin " + fmt(margin) + " points (absolute drop " +
           fmt(clean - aligned) + ")");
  return out;
}

// --------------------------------------------------------------------------
// C9: selection reaches a >= 99% sign match on every attackable layer.
// --------------------------------------------------------------------------
Outcome c09_match_target() {
  Outcome out;
  const Model model = desk_vgg();
  const Dataset ds = desk_test();
  Dataset batch;
  batch.images = Tensor(std::vector<std::int64_t>{32, 3, 32, 32});
  std::copy_n(ds.images.data.begin(), batch.images.numel(), batch.images.data.begin());
  batch.labels.assign(ds.labels.begin(), ds.labels.begin() + 32);

  double worst = 100.0;
  for (int l : attackable_layers(model.net, true)) {
    const auto sel = select_section(model, l, {7, 1, 0.72}, default_bit_error_model(), batch,
                                    64, 3141);
    worst = std::min(worst, sel.match_percent);
    if (sel.match_percent < 99.0)
      out.fail("layer " + std::to_string(l) + " best match " + fmt(sel.match_percent) + "%");
  }
  out.note("worst per-layer best match " + fmt(worst) + "% (R=64, flipped-bits denominator)");
  return out;
}

// --------------------------------------------------------------------------
// C10: the search pipeline is byte-reproducible and labels obey the bands.
// --------------------------------------------------------------------------
json store_to_json(const BestConfigStore& store) {
  json j;
  j["v_dd"] = store.v_dd;
  j["epsilon"] = store.epsilon;
  j["baseline_clean_acc"] = store.baseline_clean_acc;
  j["baseline_adv_acc"] = store.baseline_adv_acc;
  json scans = json::array();
  for (const auto& s : store.scans) {
    json adv = json::array();
    for (double a : s.adv_acc_by_n6) adv.push_back(a);
    scans.push_back(json{{"layer", s.layer},
                         {"ratio", s.best_config.ratio_str()},
                         {"best", s.best_adv_acc},
                         {"label", layer_label_name(s.label)},
                         {"curve", adv}});
  }
  j["scans"] = scans;
  json chosen = json::array();
  for (const auto& c : store.chosen)
    chosen.push_back(json{{"layer", c.layer}, {"ratio", c.config.ratio_str()}});
  j["chosen"] = chosen;
  j["combined_adv_acc"] = store.combined_adv_acc;
  j["combined_clean_acc"] = store.combined_clean_acc;
  j["clean_deviation"] = store.clean_deviation;
  j["subsets_evaluated"] = store.subsets_evaluated;
  return j;
}

Outcome c10_search() {
  Outcome out;
  const Model model = desk_vgg();
  const Dataset ds = desk_test();
  SearchOptions opts;
  opts.epsilon = 0.05;
  opts.v_dd = 0.68;
  opts.seed = 20240901;
  opts.subset = 1000;
  opts.max_subset = 4;

  const BestConfigStore a = RobustnessSearch(model, ds, default_bit_error_model(), opts).run();
  const BestConfigStore b = RobustnessSearch(model, ds, default_bit_error_model(), opts).run();
  const std::string ja = store_to_json(a).dump();
  const std::string jb = store_to_json(b).dump();
  if (ja != jb) out.fail("two runs with identical seeds produced different stores");

  for (const auto& s : a.scans) {
    const double imp = s.improvement();
    const LayerLabel expect = label_for_improvement(imp);
    if (s.label != expect) out.fail("layer " + std::to_string(s.layer) + " label inconsistent");
    if (s.label == LayerLabel::strong && !(imp > 10.0)) out.fail("strong below 10 points");
    if (s.label == LayerLabel::moderate && !(imp > 5.0 && imp <= 10.0))
      out.fail("moderate outside (5,10]");
    if (s.label == LayerLabel::weak && !(imp <= 5.0)) out.fail("weak above 5 points");
  }
  int strong = 0, moderate = 0;
  for (const auto& s : a.scans) {
    strong += s.label == LayerLabel::strong;
    moderate += s.label == LayerLabel::moderate;
  }
  out.note(std::to_string(a.scans.size()) + " layers scanned, " + std::to_string(strong) +
           " strong / " + std::to_string(moderate) + " moderate, combined adv acc " +
           fmt(a.combined_adv_acc) + "% vs baseline " + fmt(a.baseline_adv_acc) + "%");
  return out;
}

// --------------------------------------------------------------------------
// C11: the cost defaults reproduce the headline percentages.
// --------------------------------------------------------------------------
Outcome c11_cost() {
  Outcome out;
  const CellCostModel m;
  MemoryDesign all8, all6;
  all8.banks.push_back({1000, 8, 0, 0.68});
  all6.banks.push_back({1000, 0, 8, 0.9});
  const double energy = energy_compare(all8, all6, m);
  const double area = area_compare(all8, all6, m);
  if (std::fabs(energy - (-35.45)) > 0.1)
    out.fail("energy percent " + fmt(energy) + " vs -35.45 +/- 0.1");
  if (std::fabs(area - 30.0) > 0.1) out.fail("area percent " + fmt(area) + " vs +30 +/- 0.1");
  out.note("energy " + fmt(energy, 6) + "%, area " + fmt(area, 6) + "%");
  return out;
}

// --------------------------------------------------------------------------
// C12: reports regenerate byte-identically from their config and seeds.
// --------------------------------------------------------------------------
Outcome c12_replay() {
  Outcome out;
  const fs::path dir = fs::temp_directory_path() / "htsim_acceptance_replay";
  fs::remove_all(dir);
  fs::create_directories(dir);

  json cfg;
  cfg["seed"] = 31415;
  cfg["model"] = g_assets + "/desk_vgg.htnn";
  cfg["dataset_images"] = g_assets + "/synth10_test_images.htsr";
  cfg["dataset_labels"] = g_assets + "/synth10_test_labels.htsr";
  cfg["eval_subset"] = 200;
  cfg["plan"] = json::array({json{{"layer", 0}, {"target", "activation_mb"}, {"ratio", "3-5"}}});
  const std::string cfg_path = (dir / "config.json").string();
  std::ofstream(cfg_path) << cfg.dump(2);

  auto run = [&](const std::string& sub, const std::string& outdir) {
    std::vector<std::string> args = {"htsim", sub, "--config", cfg_path, "--out",
                                     (dir / outdir).string()};
    if (sub == "attack") {
      args.push_back("--mu");
      args.push_back("0.01");
      args.push_back("--layer");
      args.push_back("0");
    }
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
  };
  auto slurp = [&](const std::string& rel) {
    std::ifstream is(dir / rel, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };

  for (const std::string sub : {"infer", "characterize", "attack"}) {
    if (run(sub, "a") != 0 || run(sub, "b") != 0) {
      out.fail(sub + " did not exit cleanly");
      continue;
    }
    const std::string file = sub == "infer"          ? "infer.json"
                             : sub == "characterize" ? "characterize.csv"
                                                     : "attack_report.json";
    std::string a = slurp("a/" + file);
    std::string b = slurp("b/" + file);
    if (file.ends_with(".json")) {
      json ja = json::parse(a);
      json jb = json::parse(b);
      ja.at("meta").erase("generated_at");
      jb.at("meta").erase("generated_at");
      a = ja.dump();
      b = jb.dump();
    }
    if (a != b) out.fail(sub + " bodies differ between runs");
  }
  out.note("infer, characterize and attack bodies byte-compared");
  return out;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  int criterion = 0;  // 0 = all
  app.add_option("--criterion", criterion, "run a single criterion (1-12)");
  app.add_option("--assets", g_assets, "asset directory");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "sampler-vs-analytic-expectation", c01_sampler_analytic},
      {2, "perturbation-trends", c02_trends},
      {3, "reference-anchor-calibration", c03_anchor_calibration},
      {4, "gradient-correctness", c04_gradients},
      {5, "fgsm-contract", c05_fgsm},
      {6, "weight-attack-consistency", c06_attack_consistency},
      {7, "attack-locality", c07_locality},
      {8, "adversarial-dominance", c08_dominance},
      {9, "match-target", c09_match_target},
      {10, "search-determinism-and-labels", c10_search},
      {11, "cost-model-headlines", c11_cost},
      {12, "report-replay", c12_replay},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (criterion != 0 && c.id != criterion) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.fail(std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] C%02d %s (%.1fs)%s%s\n", out.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                out.detail.empty() ? "" : " - ", out.detail.c_str());
    std::fflush(stdout);
    failures += out.pass ? 0 : 1;
  }
  return failures;
}
