#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "fixtures.hpp"
#include "htsim/cli.hpp"
#include "htsim/config.hpp"
#include "htsim/serialize.hpp"

using namespace htsim;
using namespace htsim::testfix;
using nlohmann::json;

TEST_SUITE_BEGIN("cli");

namespace {

namespace fs = std::filesystem;

struct CliFixture {
  fs::path dir;
  std::string config_path;

  CliFixture() {
    dir = fs::temp_directory_path() / "htsim_cli_tests";
    fs::remove_all(dir);
    fs::create_directories(dir);
    save_model((dir / "model.htnn").string(), tiny_conv_model());
    save_dataset((dir / "imgs.htsr").string(), (dir / "labels.htsr").string(),
                 tiny_dataset(24));
    json cfg;
    cfg["seed"] = 11;
    cfg["model"] = (dir / "model.htnn").string();
    cfg["dataset_images"] = (dir / "imgs.htsr").string();
    cfg["dataset_labels"] = (dir / "labels.htsr").string();
    cfg["eval_subset"] = 16;
    cfg["resamples"] = 4;
    cfg["batch"] = 8;
    cfg["out_dir"] = (dir / "reports").string();
    config_path = (dir / "config.json").string();
    std::ofstream os(config_path);
    os << cfg.dump(2);
  }

  int run(std::vector<std::string> args) const {
    std::vector<const char*> argv = {"htsim"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
  }

  std::string slurp(const std::string& rel) const {
    std::ifstream is(dir / rel, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }
};

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("characterize emits the 7 x |voltages| grid") {
  CliFixture fx;
  CHECK(fx.run({"characterize", "--config", fx.config_path}) == 0);
  const std::string csv = fx.slurp("reports/characterize.csv");
  // meta comment + header + 21 data rows
  CHECK(count_lines(csv) == 23);
  CHECK(csv.find("# config_hash=0x") != std::string::npos);
  CHECK(csv.find("v_dd,n8,n6,p_flip,expected_mu") != std::string::npos);
}

TEST_CASE("missing config file maps to exit code 2") {
  CliFixture fx;
  CHECK(fx.run({"characterize", "--config", (fx.dir / "nope.json").string()}) == 2);
}

TEST_CASE("config without a seed is rejected with exit code 2") {
  CliFixture fx;
  const std::string p = (fx.dir / "noseed.json").string();
  std::ofstream(p) << "{\"model\": \"x\"}";
  CHECK(fx.run({"characterize", "--config", p}) == 2);
}

TEST_CASE("corrupt model file maps to exit code 3") {
  CliFixture fx;
  std::ofstream((fx.dir / "model.htnn").string(), std::ios::binary) << "HTNN1garbage";
  CHECK(fx.run({"infer", "--config", fx.config_path}) == 3);
}

TEST_CASE("infer writes clean accuracy and echoes the reference") {
  CliFixture fx;
  REQUIRE(fx.run({"infer", "--config", fx.config_path}) == 0);
  const json j = json::parse(fx.slurp("reports/infer.json"));
  CHECK(j.contains("clean_accuracy"));
  CHECK(j.contains("reference_clean_accuracy"));
  CHECK(j.at("meta").contains("config_hash"));
  CHECK(j.at("meta").contains("seed"));
  CHECK(j.at("meta").contains("generated_at"));
}

TEST_CASE("infer honors a standing noise plan from the config") {
  CliFixture fx;
  json cfg = json::parse(fx.slurp("config.json"));
  cfg["plan"] = json::array({json{{"layer", 0}, {"target", "activation_mb"}, {"ratio", "2-6"}}});
  std::ofstream(fx.config_path) << cfg.dump(2);
  REQUIRE(fx.run({"infer", "--config", fx.config_path}) == 0);
  const json j = json::parse(fx.slurp("reports/infer.json"));
  CHECK(j.contains("noisy_accuracy"));
  CHECK(j.at("plan")[0].at("config") == "2-6 @ 0.68V");
}

TEST_CASE("attack emits a section report naming the paired configuration") {
  CliFixture fx;
  REQUIRE(fx.run({"attack", "--config", fx.config_path, "--mu", "0.01", "--layer", "0"}) == 0);
  const json j = json::parse(fx.slurp("reports/attack_report.json"));
  CHECK(j.at("config") == "3-5 @ 0.68V");
  CHECK(j.at("mu") == 0.01);
  CHECK(j.at("mode") == "ideal");
  CHECK(j.contains("pre_accuracy"));
  CHECK(j.contains("post_accuracy"));
  CHECK(j.contains("post_confidence"));
  CHECK(j.contains("match_percent"));
}

TEST_CASE("sweep writes one row per fraction") {
  CliFixture fx;
  REQUIRE(fx.run({"sweep", "--config", fx.config_path, "--mu", "0.01", "--layer", "0",
                  "--fractions", "0.25", "0.5", "1.0"}) == 0);
  const std::string csv = fx.slurp("reports/sweep.csv");
  CHECK(count_lines(csv) == 5);  // meta + header + 3 rows
}

TEST_CASE("cost without a table reproduces the headline percentages") {
  CliFixture fx;
  REQUIRE(fx.run({"cost", "--config", fx.config_path}) == 0);
  const json j = json::parse(fx.slurp("reports/cost.json"));
  CHECK(j.at("energy_percent_vs_area_design").get<double>() ==
        doctest::Approx(-35.49).epsilon(0.01));
  CHECK(j.at("area_percent_vs_area_design").get<double>() == doctest::Approx(30.0));
}

TEST_CASE("search emits the scan report and the config table") {
  CliFixture fx;
  json cfg = json::parse(fx.slurp("config.json"));
  cfg["eval_subset"] = 12;  // keep the fixture quick
  std::ofstream(fx.config_path) << cfg.dump(2);
  REQUIRE(fx.run({"search", "--config", fx.config_path}) == 0);
  const json j = json::parse(fx.slurp("reports/search_scan.json"));
  CHECK(j.at("scans").size() == 3);
  for (const auto& s : j.at("scans")) CHECK(s.at("adv_acc_by_n6").size() == 7);
  const std::string csv = fx.slurp("reports/search_table.csv");
  CHECK(csv.find("layer,kind,config,v_dd,clean_acc,clean_deviation") != std::string::npos);
  CHECK(count_lines(csv) == 6);  // meta + header + 4 bank rows
}

TEST_CASE("reports regenerate byte-identically apart from the timestamp") {
  CliFixture fx;
  REQUIRE(fx.run({"infer", "--config", fx.config_path}) == 0);
  json first = json::parse(fx.slurp("reports/infer.json"));
  REQUIRE(fx.run({"infer", "--config", fx.config_path}) == 0);
  json second = json::parse(fx.slurp("reports/infer.json"));
  first.at("meta").erase("generated_at");
  second.at("meta").erase("generated_at");
  CHECK(first.dump() == second.dump());

  REQUIRE(fx.run({"characterize", "--config", fx.config_path}) == 0);
  const std::string csv1 = fx.slurp("reports/characterize.csv");
  REQUIRE(fx.run({"characterize", "--config", fx.config_path}) == 0);
  CHECK(csv1 == fx.slurp("reports/characterize.csv"));
}

TEST_CASE("ber table and calibration target files round-trip") {
  CliFixture fx;
  const BitErrorModel m({{0.65, 0.2}, {0.72, 0.02}}, Extrapolation::clamp);
  const std::string tpath = (fx.dir / "table.json").string();
  save_ber_table(tpath, m);
  const BitErrorModel back = load_ber_table(tpath);
  REQUIRE(back.points().size() == 2);
  CHECK(back.points()[0].p_flip == 0.2);
  CHECK(back.extrapolation_mode() == Extrapolation::clamp);

  const std::string cpath = (fx.dir / "targets.json").string();
  std::ofstream(cpath) << R"({"scale": 0.0078125, "targets": [
    {"mu": 0.01, "ratio": "3-5", "v_dd": 0.68},
    {"mu": 0.1, "ratio": "2-6", "v_dd": 0.65}]})";
  double scale = 0;
  const auto targets = load_calibration_targets(cpath, &scale);
  CHECK(scale == 0.0078125);
  REQUIRE(targets.size() == 2);
  CHECK(targets[1].config.n6 == 6);

  json cfg = json::parse(fx.slurp("config.json"));
  cfg["calibration_targets"] = cpath;
  std::ofstream(fx.config_path) << cfg.dump(2);
  const ExperimentConfig loaded = load_config(fx.config_path);
  const BitErrorModel fitted = resolve_ber_model(loaded);
  CHECK(expected_mu({3, 5, 0.68}, fitted, 0.0078125) == doctest::Approx(0.01).epsilon(1e-3));
}

TEST_SUITE_END();
