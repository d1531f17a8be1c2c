#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <toml.hpp>

#include "statwalk/serialize.hpp"

namespace fs = std::filesystem;
using statwalk::Json;

namespace {

struct Output {
  int code = -1;
  std::string out, err;
};

fs::path scratch() {
  static fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("statwalk_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

Output run(const std::string& args, const std::string& env = "") {
  auto err = scratch() / "stderr.txt";
  std::string cmd = env + (env.empty() ? "" : " ") + std::string(STATWALK_CLI) + " " + args + " 2>" + err.string();
  Output o;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) o.out.append(buf, n);
  int status = ::pclose(p);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.err = slurp(err);
  return o;
}

fs::path write_config(const std::string& name, const std::string& text) {
  auto p = scratch() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("defaults are printed as valid TOML") {
  auto o = run("--dump-defaults");
  REQUIRE(o.code == 0);
  auto tbl = toml::parse(o.out);
  CHECK(tbl["system"]["name"].value<std::string>() == "proj_line");
  CHECK(tbl["walk"]["trials"].value<std::int64_t>() == 200);
  CHECK(tbl["budgets"]["grid"].value<std::int64_t>() == 4096);
  // The dump round-trips as a config file.
  auto p = write_config("defaults.toml", o.out);
  CHECK(run("entropy --system boundary_f2 --exact --config " + p.string()).code == 0);
}

TEST_CASE("stationary two_point reports zero residual") {
  auto o = run("stationary --system two_point --tol 1e-9");
  REQUIRE(o.code == 0);
  auto j = Json::parse(o.out);
  CHECK(j["result"]["residual"] == 0.0);
  CHECK(j["result"]["converged"] == true);
  CHECK(j["status"] == "ok");
  CHECK(j["command"] == "stationary");
}

TEST_CASE("exact boundary entropy") {
  auto o = run("entropy --system boundary_f2 --exact");
  REQUIRE(o.code == 0);
  auto j = Json::parse(o.out);
  CHECK(j["result"]["entropy"]["value"].get<double>() == Catch::Approx(0.5 * std::log(3.0)).margin(1e-12));
  CHECK(j["result"]["entropy"]["method"] == "exact");
  CHECK(run("entropy --system proj_line --exact").code == 2);
}

TEST_CASE("szemeredi witness and failure report") {
  auto o = run("szemeredi --arc 0.6 --k 2 --seed 7");
  REQUIRE(o.code == 0);
  auto j = Json::parse(o.out);
  CHECK(j["result"]["success"] == true);
  auto& w = j["result"]["witness"];
  CHECK(w["h"].size() == 4);
  CHECK(w["h_norm"].get<double>() > w["q_norm"].get<double>());
  for (const auto& m : j["result"]["verified_margins"]) CHECK(m.get<double>() > 0.01);
  CHECK(j["seed"] == 7);

  auto cfg = write_config("tight.toml", "[system]\narc_lo = 1.0\n\n[budgets]\nmin_mass = 0.05\n");
  auto f = run("szemeredi --arc 0.05 --k 4 --config " + cfg.string());
  CHECK(f.code == 3);
  auto fj = Json::parse(f.out);
  CHECK(fj["status"] == "failed");
  CHECK(fj["result"]["failed_stage"] == "intersection");

  auto big = run("szemeredi --k 5");
  CHECK(big.code == 2);
  CHECK(big.err.find("k must lie") != std::string::npos);
}

TEST_CASE("output is byte-identical across runs and thread counts") {
  std::string args = "walk --trials 24 --steps 20 --seed 3";
  auto a = run(args + " --threads 1");
  auto b = run(args + " --threads 4");
  auto c = run(args + " --threads 8");
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out == c.out);
  auto d = run("walk --trials 24 --steps 20 --seed 4");
  CHECK(Json::parse(a.out)["config_hash"] != Json::parse(d.out)["config_hash"]);
}

TEST_CASE("provenance block") {
  auto j = Json::parse(run("entropy --system boundary_f2 --exact --seed 11").out);
  CHECK(j.contains("version"));
  CHECK(j["version"].get<std::string>().find("+g") != std::string::npos);
  CHECK(j["config_hash"].get<std::string>().size() == 16);
  CHECK(j["seed"] == 11);
  CHECK(j.contains("budgets"));
  CHECK(j["config"]["walk"]["seed"] == 11);
  CHECK(!j["config"]["walk"].contains("threads"));
}

TEST_CASE("seed falls back to STATWALK_SEED") {
  auto e = Json::parse(run("entropy --system boundary_f2 --exact", "STATWALK_SEED=42").out);
  CHECK(e["seed"] == 42);
  auto f = Json::parse(run("entropy --system boundary_f2 --exact --seed 5", "STATWALK_SEED=42").out);
  CHECK(f["seed"] == 5);
  auto bad = run("entropy --system boundary_f2 --exact", "STATWALK_SEED=abc");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("STATWALK_SEED") != std::string::npos);
}

TEST_CASE("artifacts in the output directory") {
  auto dir = scratch() / "out";
  auto o = run("walk --trials 4 --steps 6 --out " + dir.string());
  REQUIRE(o.code == 0);
  CHECK(slurp(dir / "result.json") == o.out);
  auto meta = Json::parse(slurp(dir / "metadata.json"));
  CHECK(meta.contains("timestamp"));
  CHECK(!Json::parse(o.out).contains("timestamp"));
  auto csv = slurp(dir / "trace.csv");
  CHECK(csv.rfind("trial,k,diagnostic,point_mass_score\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4 * 6);
}

TEST_CASE("validation errors are line-anchored") {
  auto unknown = write_config("unknown.toml", "[system]\nname = \"two_point\"\nbogus = 1\n");
  auto o = run("stationary --config " + unknown.string());
  CHECK(o.code == 2);
  CHECK(o.err.find("unknown.toml:3:") != std::string::npos);
  CHECK(o.out.empty());

  auto typed = write_config("typed.toml", "[walk]\n\ntrials = \"many\"\n");
  o = run("walk --config " + typed.string());
  CHECK(o.code == 2);
  CHECK(o.err.find("typed.toml:3:") != std::string::npos);
  CHECK(o.err.find("integer") != std::string::npos);

  auto broken = write_config("broken.toml", "[walk]\ntrials = 5\nsteps = = 3\n");
  o = run("walk --config " + broken.string());
  CHECK(o.code == 2);
  CHECK(o.err.find("broken.toml:3:") != std::string::npos);

  auto range = write_config("range.toml", "[budgets]\ngrid = 10\n");
  o = run("walk --config " + range.string());
  CHECK(o.code == 2);
  CHECK(o.err.find("range.toml:2:") != std::string::npos);

  auto sys = write_config("sys.toml", "[system]\nname = \"torus\"\n");
  o = run("walk --config " + sys.string());
  CHECK(o.code == 2);
  CHECK(o.err.find("sys.toml:2:") != std::string::npos);

  CHECK(run("walk --trials 0").err.find("--trials") != std::string::npos);
  CHECK(run("walk --trials 0").code == 2);
  CHECK(run("nonsense").code == 2);
  CHECK(run("").code == 2);
}
