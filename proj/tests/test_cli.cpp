// End-to-end checks of the installed binary: exit codes, output files, and
// determinism across reruns. The binary path comes in through NOISIM_CLI_PATH.

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "helpers.hpp"

using Catch::Approx;
using Catch::Matchers::ContainsSubstring;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string out;
  std::string err;
};

CmdResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path out_file = scratch / "stdout.txt";
  const fs::path err_file = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + NOISIM_CLI_PATH + "\" " + args + " > " +
                          out_file.string() + " 2> " + err_file.string();
  const int raw = std::system(cmd.c_str());
  CmdResult res;
  if (WIFEXITED(raw)) res.code = WEXITSTATUS(raw);
  res.out = testutil::read_text(out_file);
  res.err = testutil::read_text(err_file);
  return res;
}

std::string trajectories_config(double gamma, int n_traj) {
  json cfg;
  cfg["schema"] = 1;
  cfg["engine"] = "trajectories";
  cfg["model"] = {{"type", "ising"}, {"n_spins", 2}, {"coupling", 1.0}, {"exponent", 0.0}};
  cfg["time"] = {{"dt", 0.02}, {"n_steps", 50}, {"output_stride", 10}};
  cfg["noise"] = {{"kind", "real_white"}, {"gamma", gamma}};
  cfg["initial_state"] = "product_plus";
  cfg["trajectories"] = {{"n", n_traj}, {"workers", 2}};
  cfg["seed"] = 42;
  return cfg.dump(2);
}

}  // namespace

TEST_CASE("help text lists the subcommands", "[cli]") {
  testutil::TempDir tmp("noisim_cli_help");
  const CmdResult res = run_cli("--help", tmp.path);
  CHECK(res.code == 0);
  CHECK_THAT(res.out, ContainsSubstring("run"));
  CHECK_THAT(res.out, ContainsSubstring("compare"));
  CHECK_THAT(res.out, ContainsSubstring("scaling"));
  CHECK_THAT(res.out, ContainsSubstring("noise-check"));
}

TEST_CASE("run writes outputs and reruns are byte-identical", "[cli]") {
  testutil::TempDir tmp("noisim_cli_run");
  testutil::write_text(tmp.file("cfg.json"), trajectories_config(0.3, 8));

  const CmdResult a = run_cli("run -c " + tmp.file("cfg.json").string() + " -o " +
                                  tmp.file("a").string(),
                              tmp.path);
  REQUIRE(a.code == 0);
  CHECK_THAT(a.out, ContainsSubstring("wrote"));
  CHECK_THAT(a.out, ContainsSubstring("fidelity.csv"));
  CHECK_THAT(a.out, ContainsSubstring("manifest.json"));
  REQUIRE(fs::exists(tmp.file("a") / "fidelity.csv"));
  REQUIRE(fs::exists(tmp.file("a") / "purity.csv"));
  REQUIRE(fs::exists(tmp.file("a") / "manifest.json"));

  // Same seed, different worker count: identical sampled bytes.
  const CmdResult b = run_cli("run -c " + tmp.file("cfg.json").string() + " -o " +
                                  tmp.file("b").string() + " --workers 3",
                              tmp.path);
  REQUIRE(b.code == 0);
  CHECK(testutil::read_text(tmp.file("a") / "fidelity.csv") ==
        testutil::read_text(tmp.file("b") / "fidelity.csv"));
  CHECK(testutil::read_text(tmp.file("a") / "purity.csv") ==
        testutil::read_text(tmp.file("b") / "purity.csv"));

  // A different master seed changes the sample.
  const CmdResult c = run_cli("run -c " + tmp.file("cfg.json").string() + " -o " +
                                  tmp.file("c").string() + " --seed 43",
                              tmp.path);
  REQUIRE(c.code == 0);
  CHECK(testutil::read_text(tmp.file("a") / "fidelity.csv") !=
        testutil::read_text(tmp.file("c") / "fidelity.csv"));

  // Identical directories compare clean under the standard-error criterion.
  const CmdResult cmp = run_cli("compare -a " + tmp.file("a").string() + " -b " +
                                    tmp.file("b").string() + " --tolerance 1e-12",
                                tmp.path);
  CHECK(cmp.code == 0);
  CHECK_THAT(cmp.out, ContainsSubstring("compare: PASS"));
}

TEST_CASE("engine override reproduces a deterministic trajectory", "[cli]") {
  testutil::TempDir tmp("noisim_cli_engine");
  json cfg = json::parse(trajectories_config(0.0, 1));
  cfg["model"]["field"] = 0.6;
  testutil::write_text(tmp.file("cfg.json"), cfg.dump(2));

  REQUIRE(run_cli("run -c " + tmp.file("cfg.json").string() + " -o " + tmp.file("traj").string(),
                  tmp.path)
              .code == 0);
  REQUIRE(run_cli("run -c " + tmp.file("cfg.json").string() + " -o " +
                      tmp.file("oracle").string() + " --engine lindblad",
                  tmp.path)
              .code == 0);

  const CmdResult cmp = run_cli("compare -a " + tmp.file("traj").string() + " -b " +
                                    tmp.file("oracle").string() +
                                    " --observables fidelity,purity --tolerance 1e-6",
                                tmp.path);
  CHECK(cmp.code == 0);
  CHECK_THAT(cmp.out, ContainsSubstring("compare: PASS"));
}

TEST_CASE("comparison failures exit with code 1", "[cli]") {
  testutil::TempDir tmp("noisim_cli_fail");
  json cfg = json::parse(trajectories_config(0.3, 1));
  cfg["engine"] = "lindblad";
  testutil::write_text(tmp.file("slow.json"), cfg.dump(2));
  cfg["noise"]["gamma"] = 1.5;
  testutil::write_text(tmp.file("fast.json"), cfg.dump(2));

  REQUIRE(run_cli("run -c " + tmp.file("slow.json").string() + " -o " + tmp.file("slow").string(),
                  tmp.path)
              .code == 0);
  REQUIRE(run_cli("run -c " + tmp.file("fast.json").string() + " -o " + tmp.file("fast").string(),
                  tmp.path)
              .code == 0);

  const CmdResult cmp = run_cli("compare -a " + tmp.file("slow").string() + " -b " +
                                    tmp.file("fast").string() + " --tolerance 1e-6 --report " +
                                    tmp.file("report.json").string(),
                                tmp.path);
  CHECK(cmp.code == 1);
  CHECK_THAT(cmp.out, ContainsSubstring("compare: FAIL"));
  CHECK_THAT(cmp.out, ContainsSubstring("[FAIL]"));

  const json report = json::parse(testutil::read_text(tmp.file("report.json")));
  CHECK(report.at("kind") == "compare");
  CHECK(report.at("pass") == false);
  CHECK(report.at("series").size() == 2);

  const CmdResult missing =
      run_cli("compare -a " + tmp.file("slow").string() + " -b " + tmp.file("absent").string(),
              tmp.path);
  CHECK(missing.code == 2);
}

TEST_CASE("configuration problems exit with code 2", "[cli]") {
  testutil::TempDir tmp("noisim_cli_cfg");

  testutil::write_text(tmp.file("broken.json"), "{ this is not json\n");
  const CmdResult parse =
      run_cli("run -c " + tmp.file("broken.json").string() + " -o " + tmp.file("x").string(),
              tmp.path);
  CHECK(parse.code == 2);
  CHECK_THAT(parse.err, ContainsSubstring("config error in"));

  json cfg = json::parse(trajectories_config(0.3, 4));
  cfg["engine"] = "warp";
  testutil::write_text(tmp.file("engine.json"), cfg.dump(2));
  const CmdResult engine =
      run_cli("run -c " + tmp.file("engine.json").string() + " -o " + tmp.file("x").string(),
              tmp.path);
  CHECK(engine.code == 2);
  CHECK_THAT(engine.err, ContainsSubstring("config error at $.engine"));

  const CmdResult absent =
      run_cli("run -c " + tmp.file("absent.json").string() + " -o " + tmp.file("x").string(),
              tmp.path);
  CHECK(absent.code == 2);
  CHECK_THAT(absent.err, ContainsSubstring("cannot open"));

  const CmdResult usage = run_cli("run", tmp.path);
  CHECK(usage.code == 2);
  CHECK_THAT(usage.err, ContainsSubstring("config error"));
}

TEST_CASE("numerical blowups exit with code 3", "[cli]") {
  testutil::TempDir tmp("noisim_cli_num");
  json cfg = json::parse(trajectories_config(80.0, 1));
  // The memory-kernel integrator steps at the grid dt (the convolution
  // needs the history on grid points), so a wildly under-resolved rate
  // diverges; the transverse field couples the exploding coherences into
  // the trace so the trace guard trips while everything is still finite.
  cfg["engine"] = "nonmarkov";
  cfg["model"]["field"] = 0.6;
  cfg["noise"] = {{"kind", "real_colored"},
                  {"gamma", 80.0},
                  {"kernel", {{"form", "ou"}, {"tau_c", 0.05}}}};
  cfg["time"] = {{"dt", 0.5}, {"n_steps", 40}};
  testutil::write_text(tmp.file("stiff.json"), cfg.dump(2));

  const CmdResult res =
      run_cli("run -c " + tmp.file("stiff.json").string() + " -o " + tmp.file("x").string(),
              tmp.path);
  CHECK(res.code == 3);
  CHECK_THAT(res.err, ContainsSubstring("numerical error"));
}

TEST_CASE("scaling subcommand reports the fitted exponent", "[cli]") {
  testutil::TempDir tmp("noisim_cli_scaling");
  const CmdResult res = run_cli(
      "scaling -k 2 -n 4,6,8 --family max_decoherence --gamma 0.25 -o " + tmp.file("sc").string(),
      tmp.path);
  REQUIRE(res.code == 0);
  CHECK_THAT(res.out, ContainsSubstring("fitted exponent: "));

  const std::string tag = "fitted exponent: ";
  const double slope = std::stod(res.out.substr(res.out.find(tag) + tag.size()));
  CHECK(slope == Approx(4.0).margin(1e-9));

  REQUIRE(fs::exists(tmp.file("sc") / "scaling.csv"));
  const json man = json::parse(testutil::read_text(tmp.file("sc") / "manifest.json"));
  CHECK(man.at("kind") == "scaling");
  CHECK(man.at("family") == "max_decoherence");

  const CmdResult bad = run_cli("scaling -k 2 -n 4,6,8 --family ghz", tmp.path);
  CHECK(bad.code == 2);
  CHECK_THAT(bad.err, ContainsSubstring("expected product_plus or max_decoherence"));
}

TEST_CASE("noise-check subcommand passes and writes its report", "[cli]") {
  testutil::TempDir tmp("noisim_cli_nc");
  const CmdResult res = run_cli(
      "noise-check --seed 12345 --samples 50000 --report " + tmp.file("nc.json").string(),
      tmp.path);
  REQUIRE(res.code == 0);
  CHECK_THAT(res.out, ContainsSubstring("noise-check: PASS"));

  const json report = json::parse(testutil::read_text(tmp.file("nc.json")));
  CHECK(report.at("kind") == "noise-check");
  CHECK(report.at("pass") == true);
  CHECK(report.at("checks").size() == 6);
  CHECK(report.at("samples") == 50000);
}
