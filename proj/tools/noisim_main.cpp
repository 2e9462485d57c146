// noisim: command-line front end: config-driven runs, run comparison,
// size-scaling sweeps, and noise generator self-checks.
//
// Exit codes: 0 success (and PASS verdicts), 1 a comparison or self-check
// completed with a FAIL verdict, 2 configuration errors, 3 numerical failures.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "noisim/runner.hpp"

namespace fs = std::filesystem;
using noisim::cli::ConfigError;

namespace {

nlohmann::json load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config error: cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    // nlohmann anchors parse errors by line and column already
    throw ConfigError("config error in " + path.string() + ": " + e.what());
  }
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            const std::optional<std::uint64_t>& seed, const std::optional<int>& workers,
            const std::optional<std::string>& engine) {
  const fs::path cfg_file(config_path);
  noisim::cli::Overrides ov;
  ov.seed = seed;
  ov.workers = workers;
  ov.engine = engine;
  nlohmann::json root = load_config_file(cfg_file);
  noisim::cli::RunConfig cfg =
      noisim::cli::parse_config(root, cfg_file.has_parent_path() ? cfg_file.parent_path() : ".",
                                ov);
  noisim::cli::RunResult res = noisim::cli::run_to_memory(cfg);
  for (const std::string& w : res.warnings) std::cerr << "warning: " << w << "\n";
  noisim::cli::write_outputs(res, out_dir);
  for (const noisim::cli::Series& s : res.series)
    std::cout << "wrote " << (fs::path(out_dir) / (s.name + ".csv")).string() << "\n";
  if (res.has_rho) std::cout << "wrote " << (fs::path(out_dir) / "rho.csv").string() << "\n";
  std::cout << "wrote " << (fs::path(out_dir) / "manifest.json").string() << "\n";
  for (const auto& [name, drift] : res.tracked_drift)
    std::cout << "tracked " << name << ": max drift "
              << noisim::cli::format_double(drift) << "\n";
  return 0;
}

std::vector<std::string> discover_observables(const fs::path& a, const fs::path& b) {
  std::vector<std::string> names;
  if (!fs::is_directory(a)) throw ConfigError("compare: not a directory: " + a.string());
  for (const auto& entry : fs::directory_iterator(a)) {
    if (entry.path().extension() != ".csv") continue;
    const std::string stem = entry.path().stem().string();
    if (stem == "rho") continue;
    if (fs::exists(b / entry.path().filename())) names.push_back(stem);
  }
  std::sort(names.begin(), names.end());
  if (names.empty())
    throw ConfigError("compare: no common observable CSV files under " + a.string() + " and " +
                      b.string());
  return names;
}

int cmd_compare(const std::string& dir_a, const std::string& dir_b,
                std::vector<std::string> observables, double tolerance,
                const std::string& report_path) {
  if (observables.empty()) observables = discover_observables(dir_a, dir_b);
  const noisim::cli::CompareReport rep =
      noisim::cli::compare_runs(dir_a, dir_b, observables, tolerance);
  for (const noisim::cli::SeriesComparison& s : rep.series) {
    std::cout << s.name << ": max|dev| = " << noisim::cli::format_double(s.max_abs_dev)
              << ", rms = " << noisim::cli::format_double(s.rms_dev);
    if (s.used_z)
      std::cout << ", |z|<=3 fraction = " << noisim::cli::format_double(s.z_ok_fraction);
    std::cout << (s.pass ? "  [pass]" : "  [FAIL]") << "\n";
  }
  if (!report_path.empty())
    noisim::cli::atomic_write(report_path, rep.to_json().dump(2) + "\n");
  std::cout << "compare: " << (rep.pass ? "PASS" : "FAIL") << "\n";
  return rep.pass ? 0 : 1;
}

int cmd_scaling(int k, const std::vector<int>& sizes, const std::string& family_name,
                double gamma, const std::string& out_dir) {
  noisim::metrics::StateFamily family;
  if (family_name == "product_plus")
    family = noisim::metrics::StateFamily::product_plus;
  else if (family_name == "max_decoherence")
    family = noisim::metrics::StateFamily::max_decoherence;
  else
    throw ConfigError("config error at --family: expected product_plus or max_decoherence");
  const noisim::cli::ScalingRun run = noisim::cli::scaling_run(k, sizes, family, gamma);
  for (std::size_t i = 0; i < run.result.n_values.size(); ++i)
    std::cout << "N = " << run.result.n_values[i]
              << ": variance = " << noisim::cli::format_double(run.result.variances[i])
              << ", 1/tau = " << noisim::cli::format_double(run.result.rates[i]) << "\n";
  std::cout << "fitted exponent: " << noisim::cli::format_double(run.result.slope) << "\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    noisim::cli::atomic_write(fs::path(out_dir) / "scaling.csv", run.csv);
    noisim::cli::atomic_write(fs::path(out_dir) / "manifest.json",
                              run.manifest.dump(2) + "\n");
    std::cout << "wrote " << (fs::path(out_dir) / "scaling.csv").string() << "\n";
    std::cout << "wrote " << (fs::path(out_dir) / "manifest.json").string() << "\n";
  }
  return 0;
}

int cmd_noise_check(std::uint64_t seed, int samples, const std::string& report_path) {
  const noisim::cli::NoiseCheckReport rep = noisim::cli::noise_check(seed, samples);
  for (const noisim::cli::NoiseCheck& c : rep.checks)
    std::cout << c.name << ": " << noisim::cli::format_double(c.value) << " (bound "
              << noisim::cli::format_double(c.bound) << ")" << (c.pass ? "  [pass]" : "  [FAIL]")
              << "\n";
  if (!report_path.empty()) {
    nlohmann::json out;
    out["schema"] = 1;
    out["kind"] = "noise-check";
    out["seed"] = seed;
    out["samples"] = samples;
    out["pass"] = rep.pass;
    nlohmann::json rows = nlohmann::json::array();
    for (const noisim::cli::NoiseCheck& c : rep.checks)
      rows.push_back({{"name", c.name}, {"value", c.value}, {"bound", c.bound}, {"pass", c.pass}});
    out["checks"] = rows;
    noisim::cli::atomic_write(report_path, out.dump(2) + "\n");
  }
  std::cout << "noise-check: " << (rep.pass ? "PASS" : "FAIL") << "\n";
  return rep.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unitary stochastic simulator for noise-averaged many-body dynamics"};
  app.require_subcommand(1);

  // run
  std::string run_config, run_out = ".";
  std::optional<std::uint64_t> run_seed;
  std::optional<int> run_workers;
  std::optional<std::string> run_engine;
  CLI::App* run = app.add_subcommand("run", "execute a config-driven simulation");
  run->add_option("-c,--config", run_config, "JSON config file")->required();
  run->add_option("-o,--out", run_out, "output directory (default: current)");
  run->add_option("--seed", run_seed, "override the master seed");
  run->add_option("--workers", run_workers, "override the worker count");
  run->add_option("--engine", run_engine, "override the engine");

  // compare
  std::string cmp_a, cmp_b, cmp_report;
  std::vector<std::string> cmp_obs;
  double cmp_tol = 1e-6;
  CLI::App* cmp = app.add_subcommand("compare", "compare two completed run directories");
  cmp->add_option("-a,--a", cmp_a, "first run directory")->required();
  cmp->add_option("-b,--b", cmp_b, "second run directory")->required();
  cmp->add_option("--observables", cmp_obs, "observables to compare (default: all common)")
      ->delimiter(',');
  cmp->add_option("--tolerance", cmp_tol, "deterministic agreement tolerance (default 1e-6)");
  cmp->add_option("--report", cmp_report, "write a JSON deviation report here");

  // scaling
  int sc_k = 2;
  std::vector<int> sc_sizes;
  std::string sc_family = "product_plus", sc_out;
  double sc_gamma = 1.0;
  CLI::App* sc = app.add_subcommand("scaling", "decoherence-rate scaling across system sizes");
  sc->add_option("-k,--k", sc_k, "operator body count k (default 2)");
  sc->add_option("-n,--sizes", sc_sizes, "system sizes, e.g. 6,8,10,12")
      ->required()
      ->delimiter(',');
  sc->add_option("--family", sc_family, "initial-state family (product_plus | max_decoherence)");
  sc->add_option("--gamma", sc_gamma, "noise rate (default 1)");
  sc->add_option("-o,--out", sc_out, "output directory for scaling.csv and manifest.json");

  // noise-check
  std::uint64_t nc_seed = 0;
  int nc_samples = 1000000;
  std::string nc_report;
  CLI::App* nc = app.add_subcommand("noise-check", "distributional self-test of the generator");
  nc->add_option("--seed", nc_seed, "master seed (default 0)");
  nc->add_option("--samples", nc_samples, "white-noise sample count (default 1e6)");
  nc->add_option("--report", nc_report, "write a JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*run) return cmd_run(run_config, run_out, run_seed, run_workers, run_engine);
    if (*cmp) return cmd_compare(cmp_a, cmp_b, cmp_obs, cmp_tol, cmp_report);
    if (*sc) return cmd_scaling(sc_k, sc_sizes, sc_family, sc_gamma, sc_out);
    if (*nc) return cmd_noise_check(nc_seed, nc_samples, nc_report);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
