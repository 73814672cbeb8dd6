#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "ridg/cli.hpp"
#include "ridg/config.hpp"
#include "ridg/errors.hpp"

using namespace ridg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run ridg_run(std::vector<std::string> args) {
  args.insert(args.begin(), "ridg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ridg_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("settings reject unknown keys and wrong types") {
  RunSettings s;
  CHECK_THROWS_AS(s.set("train.nope", 1, "test"), ConfigError);
  CHECK_THROWS_AS(s.apply_override("train.steps=1.5"), ConfigError);
  CHECK_THROWS_AS(s.apply_override("train.steps=-3"), ConfigError);
  CHECK_THROWS_AS(s.apply_override("train.alpha=abc"), ConfigError);
  CHECK_THROWS_AS(s.apply_override("novalue"), ConfigError);
  s.apply_override("train.alpha=0.5");
  s.apply_override("model.hidden=[3,2]");
  CHECK(s.get<double>("train.alpha") == 0.5);
  CHECK(s.train_config().hidden == std::vector<std::size_t>{3, 2});
  CHECK(s.composition().size() == 2);
}

TEST_CASE("result json round trip") {
  TrialResult r;
  r.method = "Ours";
  r.dataset = "toy";
  r.holdout_domain = 2;
  r.evals.push_back({10, 90, 80, 70});
  r.trace.push_back({1, 0.5, 0.25, 0.51, {1, 2, 3}, 1});
  r.trace.push_back({2, 0.5, std::nullopt, 0.5, {1, 2, 3}, 0});
  r.selected_target_acc = 70;
  const auto back = result_from_json(result_to_json(r));
  CHECK(back.method == "Ours");
  CHECK(back.holdout_domain == 2);
  CHECK(back.trace[0].loss_inv == 0.25);
  CHECK_FALSE(back.trace[1].loss_inv.has_value());
  CHECK(back.evals[0].target_acc == 70);
}

}  // TEST_SUITE

TEST_SUITE("cli") {

TEST_CASE("generate is byte-identical for a seed") {
  const auto dir = scratch("gen");
  const auto a = ridg_run({"generate", "--preset", "two_blobs", "--seed", "7",
                           "--out", (dir / "a.csv").string()});
  const auto b = ridg_run({"generate", "--preset", "two_blobs", "--seed", "7",
                           "--out", (dir / "b.csv").string()});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  const auto c = ridg_run({"generate", "--seed", "8", "--out",
                           (dir / "c.csv").string()});
  CHECK(slurp(dir / "a.csv") != slurp(dir / "c.csv"));
  fs::remove_all(dir);
}

TEST_CASE("usage and config errors exit 2 with one line") {
  auto r = ridg_run({"train", "--bogus"});
  CHECK(r.code == 2);
  r = ridg_run({"train", "--set", "train.nope=1"});
  CHECK(r.code == 2);
  CHECK(r.err.rfind("ridg: error:") != std::string::npos);
  CHECK(count_lines(r.err.substr(r.err.rfind("ridg: error:"))) == 1);
  r = ridg_run({"train", "--normalization", "weird"});
  CHECK(r.code == 2);
  r = ridg_run({});
  CHECK(r.code == 2);
  r = ridg_run({"--help"});
  CHECK(r.code == 0);
}

TEST_CASE("runtime errors exit 1") {
  const auto r = ridg_run({"train", "--data", "/nonexistent/file.csv", "--steps", "2"});
  CHECK(r.code == 1);
  CHECK(r.err.find("ridg: error:") != std::string::npos);
}

TEST_CASE("train, export and composition order") {
  const auto dir = scratch("train");
  const auto cfg = dir / "cfg.json";
  std::ofstream(cfg) << R"({"train.alpha": 0.05, "train.steps": 30, "model.hidden": [8]})";
  auto r = ridg_run({"train", "--config", cfg.string(), "--alpha", "0.02", "--set",
                     "train.alpha=0.03", "--out", (dir / "run").string()});
  REQUIRE(r.code == 0);
  for (auto f : {"manifest.json", "result.json", "trace.csv", "model.json",
                 "standardizer.json"}) {
    CHECK(fs::exists(dir / "run" / f));
  }
  const auto manifest = read_json(dir / "run" / "manifest.json");
  CHECK(manifest.at("config").at("train.alpha").get<double>() == 0.03);
  CHECK(manifest.at("config").at("train.steps").get<int>() == 30);

  r = ridg_run({"train", "--config", cfg.string(), "--alpha", "0.02", "--out",
                (dir / "run2").string()});
  REQUIRE(r.code == 0);
  CHECK(read_json(dir / "run2" / "manifest.json")
            .at("config")
            .at("train.alpha")
            .get<double>() == 0.02);

  const auto trace = slurp(dir / "run" / "trace.csv");
  CHECK(trace.rfind("step,L_cla,L_inv,L_all,scd_rationale,scd_feature,scd_logit,"
                    "val_acc,target_acc\n",
                    0) == 0);
  CHECK(count_lines(trace) == 31);

  r = ridg_run({"export-rationales", "--run", (dir / "run").string(), "--out",
                (dir / "r.csv").string()});
  REQUIRE(r.code == 0);
  const auto csv = slurp(dir / "r.csv");
  CHECK(csv.rfind("r0_0,r0_1,", 0) == 0);
  CHECK(count_lines(csv) == 2001);
  fs::remove_all(dir);
}

TEST_CASE("ablate writes eight method rows and report re-reads them") {
  const auto dir = scratch("ablate");
  auto r = ridg_run({"ablate", "--trials", "1", "--holdout-domain", "0", "--steps",
                     "20", "--set", "model.hidden=[8]", "--set",
                     "data.samples_per_domain=60", "--out", (dir / "abl").string()});
  REQUIRE(r.code == 0);
  fs::path table;
  for (const auto& e : fs::directory_iterator(dir / "abl"))
    if (e.path().filename().string().rfind("ablation_", 0) == 0) table = e.path();
  REQUIRE_FALSE(table.empty());
  const auto text = slurp(table);
  CHECK(count_lines(text) == 9);
  for (auto m : {"ERM,", "W/ fea.,", "W/ log.,", "W/ fea.&log.,", "W/ m=0,",
                 "W/ m=1,", "W/ R=0,", "Ours,"}) {
    CHECK(text.find(std::string("\n") + m) != std::string::npos);
  }

  r = ridg_run({"report", "--in", (dir / "abl").string(), "--out",
                (dir / "rep").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("Ours,two_blobs") != std::string::npos);
  r = ridg_run({"report", "--in", (dir / "missing").string()});
  CHECK(r.code == 1);
  fs::remove_all(dir);
}

}  // TEST_SUITE
