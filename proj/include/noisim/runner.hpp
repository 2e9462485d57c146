// runner.hpp: Config-driven runs, CSV/manifest output, and the comparison,
// scaling, and noise self-check drivers behind the command-line front end.
//
// Config files are JSON with "schema": 1. Identical config + seed produce
// byte-identical CSV files at any worker count; the manifest echoes the fully
// resolved configuration so every number in a CSV can be regenerated from the
// manifest alone.
#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "noisim/ising_exact.hpp"
#include "noisim/metrics.hpp"
#include "noisim/models.hpp"
#include "noisim/noise.hpp"
#include "noisim/propagate.hpp"
#include "noisim/qcore.hpp"

#ifndef NOISIM_GIT_REV
#define NOISIM_GIT_REV "unknown"
#endif

namespace noisim::cli {

using nlohmann::json;

// Configuration problems exit with code 2; numerical failures with code 3.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline constexpr const char* kConvention = "gamma-half-double-commutator";

// ---- JSON access with path-anchored messages ----

namespace detail {

inline const json& need(const json& j, const std::string& path, const std::string& key) {
  if (!j.is_object() || !j.contains(key))
    throw ConfigError("config error at " + path + ": missing required field '" + key + "'");
  return j.at(key);
}

template <typename T>
inline T as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config error at " + path + ": " + e.what());
  }
}

template <typename T>
inline T field(const json& j, const std::string& path, const std::string& key) {
  return as<T>(need(j, path, key), path + "." + key);
}

template <typename T>
inline T field_or(const json& j, const std::string& path, const std::string& key, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return as<T>(j.at(key), path + "." + key);
}

}  // namespace detail

// ---- shortest round-trip number formatting ----

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc())
    throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

// ---- atomic file output ----

inline void atomic_write(const std::filesystem::path& target, const std::string& content) {
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(content.data(), std::streamsize(content.size()));
    f.flush();
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

// ---- parsed configuration ----

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> engine;
};

struct RunConfig {
  std::string engine;

  std::string model_type;  // ising | bose_hubbard | digital_kbody
  models::IsingSpec ising;
  models::BoseHubbardSpec bose_hubbard;
  int kbody_k = 0;
  double kbody_g = 0.0;

  noise::NoiseSpec noise_spec;
  std::optional<std::filesystem::path> kernel_file;

  json initial_state;
  std::filesystem::path base_dir;

  TimeGrid grid;
  int output_stride = 1;

  int n_trajectories = 0;
  int workers = 1;
  std::uint64_t seed = 0;

  std::vector<std::string> observables;
  bool rho_dump = false;

  json resolved;  // fully resolved echo for the manifest
};

inline RunConfig parse_config(const json& root, const std::filesystem::path& base_dir,
                              const Overrides& ov = {}) {
  if (!root.is_object()) throw ConfigError("config error at $: config must be a JSON object");
  const int schema = detail::field<int>(root, "$", "schema");
  if (schema != 1)
    throw ConfigError("config error at $.schema: unsupported schema " + std::to_string(schema));

  RunConfig c;
  c.base_dir = base_dir;
  c.engine = ov.engine ? *ov.engine : detail::field<std::string>(root, "$", "engine");
  if (c.engine != "trajectories" && c.engine != "lindblad" && c.engine != "nonmarkov" &&
      c.engine != "ising_exact")
    throw ConfigError("config error at $.engine: unknown engine '" + c.engine + "'");

  // model
  const json& jm = detail::need(root, "$", "model");
  c.model_type = detail::field<std::string>(jm, "$.model", "type");
  if (c.model_type == "ising") {
    const int n = detail::field<int>(jm, "$.model", "n_spins");
    const double field = detail::field_or<double>(jm, "$.model", "field", 0.0);
    if (jm.contains("couplings")) {
      const auto rows = detail::field<std::vector<std::vector<double>>>(jm, "$.model", "couplings");
      models::IsingSpec spec;
      spec.n_spins = n;
      spec.field = field;
      spec.couplings = RealMatrix::Zero(n, n);
      if (static_cast<int>(rows.size()) != n)
        throw ConfigError("config error at $.model.couplings: need n_spins rows");
      for (int i = 0; i < n; ++i) {
        if (static_cast<int>(rows[i].size()) != n)
          throw ConfigError("config error at $.model.couplings: need n_spins columns per row");
        for (int j = 0; j < n; ++j) spec.couplings(i, j) = rows[i][j];
      }
      try {
        spec.validate();
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config error at $.model: ") + e.what());
      }
      c.ising = std::move(spec);
    } else {
      const double coupling = detail::field<double>(jm, "$.model", "coupling");
      const double exponent = detail::field_or<double>(jm, "$.model", "exponent", 0.0);
      try {
        c.ising = models::ising_power_law(n, coupling, exponent, field);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config error at $.model: ") + e.what());
      }
    }
  } else if (c.model_type == "bose_hubbard") {
    c.bose_hubbard.n_sites = detail::field<int>(jm, "$.model", "n_sites");
    c.bose_hubbard.n_max = detail::field<int>(jm, "$.model", "n_max");
    c.bose_hubbard.hopping = detail::field<double>(jm, "$.model", "hopping");
    c.bose_hubbard.interaction = detail::field<double>(jm, "$.model", "interaction");
    try {
      c.bose_hubbard.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config error at $.model: ") + e.what());
    }
  } else if (c.model_type == "digital_kbody") {
    c.kbody_k = detail::field<int>(jm, "$.model", "k");
    c.kbody_g = detail::field<double>(jm, "$.model", "g");
    if (c.kbody_k < 1 || c.kbody_k > 7 || c.kbody_k % 2 == 0)
      throw ConfigError("config error at $.model.k: need odd k in [1, 7]");
  } else {
    throw ConfigError("config error at $.model.type: unknown model '" + c.model_type + "'");
  }

  // time grid
  const json& jt = detail::need(root, "$", "time");
  c.grid.dt = detail::field<double>(jt, "$.time", "dt");
  c.grid.n_steps = detail::field<int>(jt, "$.time", "n_steps");
  c.output_stride = detail::field_or<int>(jt, "$.time", "output_stride", 1);
  try {
    c.grid.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config error at $.time: ") + e.what());
  }
  if (c.output_stride < 1)
    throw ConfigError("config error at $.time.output_stride: must be >= 1");

  // noise
  const json& jn = detail::need(root, "$", "noise");
  const std::string kind = detail::field<std::string>(jn, "$.noise", "kind");
  if (kind == "real_white")
    c.noise_spec.kind = noise::NoiseKind::real_white;
  else if (kind == "complex_white")
    c.noise_spec.kind = noise::NoiseKind::complex_white;
  else if (kind == "real_colored")
    c.noise_spec.kind = noise::NoiseKind::real_colored;
  else if (kind == "complex_colored")
    c.noise_spec.kind = noise::NoiseKind::complex_colored;
  else
    throw ConfigError("config error at $.noise.kind: unknown kind '" + kind + "'");
  c.noise_spec.gamma = detail::field<double>(jn, "$.noise", "gamma");
  if (jn.contains("gamma_prime"))
    c.noise_spec.gamma_prime = detail::field<double>(jn, "$.noise", "gamma_prime");
  if (jn.contains("gamma_double_prime"))
    c.noise_spec.gamma_double_prime = detail::field<double>(jn, "$.noise", "gamma_double_prime");
  if (c.noise_spec.is_colored()) {
    const json& jk = detail::need(jn, "$.noise", "kernel");
    const std::string form = detail::field<std::string>(jk, "$.noise.kernel", "form");
    if (form == "ou") {
      try {
        c.noise_spec.kernel = noise::ou_kernel(detail::field<double>(jk, "$.noise.kernel", "tau_c"));
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config error at $.noise.kernel: ") + e.what());
      }
    } else if (form == "table") {
      c.kernel_file = base_dir / detail::field<std::string>(jk, "$.noise.kernel", "file");
    } else {
      throw ConfigError("config error at $.noise.kernel.form: unknown form '" + form + "'");
    }
  } else if (jn.contains("kernel")) {
    throw ConfigError("config error at $.noise.kernel: white noise must not carry a kernel");
  }

  // initial state (resolved later, once the model dimension is known)
  c.initial_state = detail::need(root, "$", "initial_state");

  // engine-specific
  if (c.engine == "trajectories") {
    const json& jr = detail::need(root, "$", "trajectories");
    c.n_trajectories = detail::field<int>(jr, "$.trajectories", "n");
    if (c.n_trajectories < 1)
      throw ConfigError("config error at $.trajectories.n: must be >= 1");
    c.workers = detail::field_or<int>(jr, "$.trajectories", "workers", 1);
  }
  if (ov.workers) c.workers = *ov.workers;

  if (ov.seed) {
    c.seed = *ov.seed;
  } else if (root.contains("seed")) {
    c.seed = detail::field<std::uint64_t>(root, "$", "seed");
  } else if (c.engine == "trajectories") {
    throw ConfigError("config error at $.seed: trajectories engine requires a seed");
  }

  c.observables =
      detail::field_or<std::vector<std::string>>(root, "$", "observables", {"fidelity", "purity"});
  if (c.observables.empty())
    throw ConfigError("config error at $.observables: need at least one observable");
  for (const std::string& o : c.observables)
    if (o != "fidelity" && o != "purity")
      throw ConfigError("config error at $.observables: unknown observable '" + o + "'");
  c.rho_dump = detail::field_or<bool>(root, "$", "rho_dump", false);

  try {
    c.noise_spec.validate();
  } catch (const std::exception& e) {
    if (!c.kernel_file) throw ConfigError(std::string("config error at $.noise: ") + e.what());
    // tabulated kernels are validated after loading the file
  }
  return c;
}

// ---- file loaders ----

// Two-column text: absolute time and kernel value; lags are measured from the
// first row. The lag grid must match the simulation grid step exactly.
inline noise::KernelSpec load_kernel_table(const std::filesystem::path& file, double dt) {
  std::ifstream in(file);
  if (!in) throw ConfigError("config error at $.noise.kernel.file: cannot open " + file.string());
  std::vector<double> ts, ks;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    double t = 0, k = 0;
    if (!(row >> t >> k))
      throw ConfigError("config error at " + file.string() + ":" + std::to_string(line_no) +
                        ": expected two numeric columns");
    ts.push_back(t);
    ks.push_back(k);
  }
  if (ts.empty())
    throw ConfigError("config error at $.noise.kernel.file: empty kernel table " + file.string());
  Eigen::VectorXd lags(ts.size()), vals(ks.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    lags[i] = ts[i] - ts[0];
    vals[i] = ks[i];
  }
  noise::KernelSpec spec;
  try {
    spec = noise::tabulated_kernel(std::move(lags), std::move(vals));
    if (spec.table_lags.size() >= 2) {
      const double h = spec.table_step();
      if (std::abs(h - dt) > 1e-9 * dt)
        throw std::invalid_argument("kernel grid step " + std::to_string(h) +
                                    " must equal the simulation step " + std::to_string(dt));
    }
  } catch (const std::exception& e) {
    throw ConfigError("config error at $.noise.kernel.file: " + std::string(e.what()));
  }
  return spec;
}

// One amplitude per line as "re im"; must already be normalized (1e-6 slack
// is renormalized away, anything worse is rejected).
inline Vector load_amplitudes(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("config error at $.initial_state.file: cannot open " + file.string());
  std::vector<Complex> amps;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    double re = 0, im = 0;
    if (!(row >> re))
      throw ConfigError("config error at " + file.string() + ":" + std::to_string(line_no) +
                        ": expected 're' or 're im' columns");
    if (!(row >> im)) im = 0.0;
    amps.emplace_back(re, im);
  }
  if (amps.empty())
    throw ConfigError("config error at $.initial_state.file: empty state file " + file.string());
  Vector v(amps.size());
  for (std::size_t i = 0; i < amps.size(); ++i) v[i] = amps[i];
  const double n = v.norm();
  if (std::abs(n - 1.0) > 1e-6)
    throw ConfigError("config error at $.initial_state.file: state norm " + std::to_string(n) +
                      " is not 1");
  return v / n;
}

// ---- run assembly ----

struct BuiltRun {
  StochasticModel model;
  Vector psi0;
  std::vector<std::pair<std::string, Matrix>> tracked;  // conservation monitors
  int n_spins = 0;                                      // 0 for non-spin models
};

inline Vector resolve_initial_state(const json& sel, int dim, int n_spins,
                                    const std::filesystem::path& base_dir) {
  auto spin_only = [&](const char* name) {
    if (n_spins <= 0)
      throw ConfigError(std::string("config error at $.initial_state: selector '") + name +
                        "' requires a spin model");
  };
  if (sel.is_string()) {
    const std::string s = sel.get<std::string>();
    if (s == "product_plus") {
      spin_only("product_plus");
      return ising::product_plus_state(n_spins);
    }
    if (s == "max_decoherence") {
      spin_only("max_decoherence");
      return ising::max_decoherence_state(n_spins);
    }
    if (s == "cat") {
      spin_only("cat");
      return ising::cat_state(n_spins);
    }
    throw ConfigError("config error at $.initial_state: unknown selector '" + s + "'");
  }
  if (sel.is_object()) {
    if (sel.contains("dicke")) {
      spin_only("dicke");
      const int p = detail::as<int>(sel.at("dicke"), "$.initial_state.dicke");
      try {
        return ising::dicke_state(n_spins, p);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config error at $.initial_state.dicke: ") + e.what());
      }
    }
    if (sel.contains("file")) {
      const std::filesystem::path f =
          base_dir / detail::as<std::string>(sel.at("file"), "$.initial_state.file");
      Vector v = load_amplitudes(f);
      if (v.size() != dim)
        throw ConfigError("config error at $.initial_state.file: state has " +
                          std::to_string(v.size()) + " amplitudes, model dimension is " +
                          std::to_string(dim));
      return v;
    }
  }
  throw ConfigError(
      "config error at $.initial_state: expected product_plus, max_decoherence, cat, "
      "{\"dicke\": p}, or {\"file\": path}");
}

inline BuiltRun build_run(RunConfig& c) {
  if (c.kernel_file) {
    c.noise_spec.kernel = load_kernel_table(*c.kernel_file, c.grid.dt);
    c.noise_spec.validate();
    if (c.engine == "trajectories" &&
        static_cast<int>(c.noise_spec.kernel->table_lags.size()) < c.grid.n_steps)
      throw ConfigError("config error at $.noise.kernel.file: table covers " +
                        std::to_string(c.noise_spec.kernel->table_lags.size()) +
                        " lags but the run has " + std::to_string(c.grid.n_steps) + " steps");
  }

  BuiltRun b;
  if (c.model_type == "ising") {
    models::IsingOperators ops = models::build_ising(c.ising);
    b.n_spins = c.ising.n_spins;
    b.model = make_model(std::move(ops.h_target), {{c.noise_spec, std::move(ops.lindblad)}});
  } else if (c.model_type == "bose_hubbard") {
    models::BoseHubbardOperators ops = models::build_bose_hubbard(c.bose_hubbard);
    b.model = make_model(std::move(ops.h_target), {{c.noise_spec, std::move(ops.lindblad)}});
    b.tracked.emplace_back("n_total", std::move(ops.n_total));
  } else {  // digital_kbody
    const models::DigitalKBody dig = models::make_digital_kbody(c.kbody_k, c.kbody_g);
    b.n_spins = c.kbody_k;
    b.model = make_model(dig.h_target, {{c.noise_spec, dig.lindblad}});
    if (c.engine == "trajectories") {
      if (c.noise_spec.kind != noise::NoiseKind::real_white)
        throw ConfigError(
            "config error at $.noise.kind: digital_kbody trajectories drive a single real "
            "rotation angle; use real_white");
      const double g = c.kbody_g;
      const double dt = c.grid.dt;
      const double root_gamma = std::sqrt(c.noise_spec.gamma);
      auto ctx = std::make_shared<models::DigitalKBody>(dig);
      b.model.custom_step = [ctx, g, dt, root_gamma](int, const std::vector<double>& dws,
                                                     Vector& psi) {
        const double theta = g * dt + root_gamma * dws[0];
        psi = ctx->step_unitary(theta) * psi;
      };
    }
  }
  b.psi0 = resolve_initial_state(c.initial_state, b.model.dim, b.n_spins, c.base_dir);

  if (c.engine == "ising_exact") {
    if (c.model_type != "ising")
      throw ConfigError("config error at $.engine: ising_exact requires an ising model");
    if (c.ising.field != 0.0)
      throw ConfigError("config error at $.model.field: ising_exact requires zero field");
    if (c.noise_spec.kind != noise::NoiseKind::real_white)
      throw ConfigError("config error at $.noise.kind: ising_exact requires real_white noise");
  }
  if (c.engine == "nonmarkov" && !c.noise_spec.is_colored())
    throw ConfigError("config error at $.noise.kind: nonmarkov requires colored noise");
  if (c.engine == "lindblad" && c.noise_spec.is_colored())
    throw ConfigError("config error at $.noise.kind: lindblad requires white noise");
  return b;
}

// ---- run results ----

struct Series {
  std::string name;
  RealVector values;
  RealVector stderrs;  // same length when has_se
  bool has_se = false;
};

struct RunResult {
  RealVector times;
  std::vector<Series> series;
  std::vector<std::pair<std::string, double>> tracked_drift;
  std::vector<std::string> warnings;
  std::vector<Matrix> rho;  // populated when rho_dump is set
  bool has_rho = false;
  json manifest;
};

namespace detail {

inline json resolved_config_json(const RunConfig& c) {
  json m;
  m["schema"] = 1;
  m["engine"] = c.engine;
  json jm;
  jm["type"] = c.model_type;
  if (c.model_type == "ising") {
    jm["n_spins"] = c.ising.n_spins;
    jm["field"] = c.ising.field;
    std::vector<std::vector<double>> rows(c.ising.n_spins,
                                          std::vector<double>(c.ising.n_spins, 0.0));
    for (int i = 0; i < c.ising.n_spins; ++i)
      for (int j = 0; j < c.ising.n_spins; ++j) rows[i][j] = c.ising.couplings(i, j);
    jm["couplings"] = rows;
  } else if (c.model_type == "bose_hubbard") {
    jm["n_sites"] = c.bose_hubbard.n_sites;
    jm["n_max"] = c.bose_hubbard.n_max;
    jm["hopping"] = c.bose_hubbard.hopping;
    jm["interaction"] = c.bose_hubbard.interaction;
  } else {
    jm["k"] = c.kbody_k;
    jm["g"] = c.kbody_g;
  }
  m["model"] = jm;

  json jn;
  switch (c.noise_spec.kind) {
    case noise::NoiseKind::real_white: jn["kind"] = "real_white"; break;
    case noise::NoiseKind::complex_white: jn["kind"] = "complex_white"; break;
    case noise::NoiseKind::real_colored: jn["kind"] = "real_colored"; break;
    case noise::NoiseKind::complex_colored: jn["kind"] = "complex_colored"; break;
  }
  jn["gamma"] = c.noise_spec.gamma;
  if (c.noise_spec.gamma_prime) jn["gamma_prime"] = *c.noise_spec.gamma_prime;
  if (c.noise_spec.gamma_double_prime)
    jn["gamma_double_prime"] = *c.noise_spec.gamma_double_prime;
  if (c.noise_spec.kernel) {
    json jk;
    if (c.noise_spec.kernel->form == noise::KernelForm::ornstein_uhlenbeck) {
      jk["form"] = "ou";
      jk["tau_c"] = c.noise_spec.kernel->tau_c;
    } else {
      jk["form"] = "table";
      std::vector<double> lags(c.noise_spec.kernel->table_lags.begin(),
                               c.noise_spec.kernel->table_lags.end());
      std::vector<double> vals(c.noise_spec.kernel->table_values.begin(),
                               c.noise_spec.kernel->table_values.end());
      jk["lags"] = lags;
      jk["values"] = vals;
    }
    jn["kernel"] = jk;
  }
  m["noise"] = jn;
  m["initial_state"] = c.initial_state;
  m["time"] = {{"dt", c.grid.dt}, {"n_steps", c.grid.n_steps}, {"output_stride", c.output_stride}};
  if (c.engine == "trajectories")
    m["trajectories"] = {{"n", c.n_trajectories}, {"workers", c.workers}};
  m["seed"] = c.seed;
  m["observables"] = c.observables;
  m["rho_dump"] = c.rho_dump;
  return m;
}

inline bool wants(const RunConfig& c, const char* name) {
  for (const std::string& o : c.observables)
    if (o == name) return true;
  return false;
}

}  // namespace detail

inline RunResult run_to_memory(RunConfig& c) {
  const auto t_start = std::chrono::steady_clock::now();
  BuiltRun built = build_run(c);
  RunResult res;

  if (c.engine == "ising_exact") {
    const ising::IsingSpectra spectra = ising::build_spectra(c.ising);
    std::vector<double> times;
    for (int j = 0; j <= c.grid.n_steps; j += c.output_stride) times.push_back(c.grid.time(j));
    if (times.back() != c.grid.time(c.grid.n_steps)) times.push_back(c.grid.time(c.grid.n_steps));
    res.times = Eigen::Map<RealVector>(times.data(), times.size());
    if (detail::wants(c, "fidelity"))
      res.series.push_back({"fidelity",
                            ising::fidelity_curve(spectra, built.psi0, c.noise_spec.gamma, res.times),
                            {}, false});
    if (detail::wants(c, "purity"))
      res.series.push_back({"purity",
                            ising::purity_curve(spectra, built.psi0, c.noise_spec.gamma, res.times),
                            {}, false});
    if (c.rho_dump) {
      const Matrix rho0 = built.psi0 * built.psi0.adjoint();
      for (Eigen::Index i = 0; i < res.times.size(); ++i)
        res.rho.push_back(ising::exact_rho(spectra, rho0, c.noise_spec.gamma, res.times[i]));
      res.has_rho = true;
    }
  } else if (c.engine == "lindblad" || c.engine == "nonmarkov") {
    const Matrix rho0 = built.psi0 * built.psi0.adjoint();
    OracleResult orc;
    if (c.engine == "lindblad") {
      orc = lindblad_oracle(built.model, rho0, c.grid, c.output_stride);
    } else {
      orc = nonmarkov_oracle(built.model, rho0, c.grid, c.output_stride, &res.warnings);
    }
    res.times = orc.times;
    const int n_out = static_cast<int>(orc.rho.size());
    RealVector fid(n_out), pur(n_out);
    for (int i = 0; i < n_out; ++i) {
      fid[i] = metrics::fidelity(orc.rho[i], built.psi0);
      pur[i] = metrics::purity(orc.rho[i]);
    }
    if (detail::wants(c, "fidelity")) res.series.push_back({"fidelity", fid, {}, false});
    if (detail::wants(c, "purity")) res.series.push_back({"purity", pur, {}, false});
    for (const auto& [name, op] : built.tracked) {
      double drift = 0.0;
      const double base = expectation(op, orc.rho.front()).real();
      for (const Matrix& r : orc.rho)
        drift = std::max(drift, std::abs(expectation(op, r).real() - base));
      res.tracked_drift.emplace_back(name, drift);
    }
    if (c.rho_dump) {
      res.rho = std::move(orc.rho);
      res.has_rho = true;
    }
  } else {  // trajectories
    EnsembleOptions opts;
    opts.n_trajectories = c.n_trajectories;
    opts.master_seed = c.seed;
    opts.workers = c.workers;
    opts.output_stride = c.output_stride;
    for (const auto& [name, op] : built.tracked) opts.tracked_ops.push_back(op);
    EnsembleResult ens = run_ensemble(built.model, built.psi0, c.grid, opts);
    res.times = ens.times;
    if (detail::wants(c, "fidelity"))
      res.series.push_back({"fidelity", ens.fidelity, ens.fidelity_se, true});
    if (detail::wants(c, "purity"))
      res.series.push_back({"purity", ens.purity, ens.purity_se, true});
    for (std::size_t o = 0; o < built.tracked.size(); ++o)
      res.tracked_drift.emplace_back(built.tracked[o].first, ens.tracked_drift[o]);
    if (c.rho_dump) {
      res.rho = std::move(ens.rho);
      res.has_rho = true;
    }
  }

  const auto t_end = std::chrono::steady_clock::now();
  json man;
  man["schema"] = 1;
  man["kind"] = "run";
  man["config"] = detail::resolved_config_json(c);
  man["normalization_convention"] = kConvention;
  man["version"] = NOISIM_GIT_REV;
  man["wall_time_seconds"] = std::chrono::duration<double>(t_end - t_start).count();
  json outs = json::object();
  for (const Series& s : res.series) outs[s.name] = s.name + ".csv";
  if (res.has_rho) outs["rho"] = "rho.csv";
  man["outputs"] = outs;
  if (!res.tracked_drift.empty()) {
    json drift = json::object();
    for (const auto& [name, v] : res.tracked_drift) drift[name] = v;
    man["tracked_drift"] = drift;
  }
  if (!res.warnings.empty()) man["warnings"] = res.warnings;
  res.manifest = std::move(man);
  return res;
}

inline void write_outputs(const RunResult& res, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const Series& s : res.series) {
    std::string body = "t,value,stderr\n";
    for (Eigen::Index i = 0; i < res.times.size(); ++i) {
      body += format_double(res.times[i]);
      body += ',';
      body += format_double(s.values[i]);
      body += ',';
      if (s.has_se) body += format_double(s.stderrs[i]);
      body += '\n';
    }
    atomic_write(out_dir / (s.name + ".csv"), body);
  }
  if (res.has_rho) {
    std::string body = "t,row,col,re,im\n";
    for (Eigen::Index i = 0; i < res.times.size(); ++i) {
      const Matrix& r = res.rho[i];
      for (Eigen::Index a = 0; a < r.rows(); ++a)
        for (Eigen::Index b = 0; b < r.cols(); ++b) {
          body += format_double(res.times[i]);
          body += ',';
          body += std::to_string(a);
          body += ',';
          body += std::to_string(b);
          body += ',';
          body += format_double(r(a, b).real());
          body += ',';
          body += format_double(r(a, b).imag());
          body += '\n';
        }
    }
    atomic_write(out_dir / "rho.csv", body);
  }
  atomic_write(out_dir / "manifest.json", res.manifest.dump(2) + "\n");
}

// ---- comparison of completed runs ----

struct CsvColumn {
  RealVector t, value, se;
  bool any_se = false;
};

inline CsvColumn read_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("compare: cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != "t,value,stderr")
    throw ConfigError("compare: " + file.string() + " lacks the expected 't,value,stderr' header");
  std::vector<double> ts, vs, ses;
  bool any_se = false;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw ConfigError("compare: " + file.string() + ":" + std::to_string(line_no) +
                        ": expected three comma-separated fields");
    ts.push_back(std::stod(line.substr(0, c1)));
    vs.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
    const std::string se_str = line.substr(c2 + 1);
    if (se_str.empty()) {
      ses.push_back(0.0);
    } else {
      ses.push_back(std::stod(se_str));
      any_se = true;
    }
  }
  CsvColumn col;
  col.t = Eigen::Map<RealVector>(ts.data(), ts.size());
  col.value = Eigen::Map<RealVector>(vs.data(), vs.size());
  col.se = Eigen::Map<RealVector>(ses.data(), ses.size());
  col.any_se = any_se;
  return col;
}

struct SeriesComparison {
  std::string name;
  int n_points = 0;
  double max_abs_dev = 0.0;
  double rms_dev = 0.0;
  double z_ok_fraction = 1.0;  // fraction of points with |z| <= 3 (stochastic runs)
  bool used_z = false;
  bool pass = false;
};

struct CompareReport {
  std::vector<SeriesComparison> series;
  double tolerance = 0.0;
  bool pass = true;
  json to_json() const {
    json out;
    out["schema"] = 1;
    out["kind"] = "compare";
    out["tolerance"] = tolerance;
    out["pass"] = pass;
    json rows = json::array();
    for (const SeriesComparison& s : series) {
      json r;
      r["observable"] = s.name;
      r["n_points"] = s.n_points;
      r["max_abs_dev"] = s.max_abs_dev;
      r["rms_dev"] = s.rms_dev;
      r["criterion"] = s.used_z ? "z" : "tolerance";
      if (s.used_z) r["z_ok_fraction"] = s.z_ok_fraction;
      r["pass"] = s.pass;
      rows.push_back(r);
    }
    out["series"] = rows;
    return out;
  }
};

// Compares matching observable CSVs from two run directories. Deterministic
// pairs must agree within the tolerance; when either side carries standard
// errors the criterion is that at least 99% of points sit within 3 combined
// standard errors.
inline CompareReport compare_runs(const std::filesystem::path& dir_a,
                                  const std::filesystem::path& dir_b,
                                  const std::vector<std::string>& observables, double tolerance) {
  if (observables.empty()) throw ConfigError("compare: no observables requested");
  CompareReport rep;
  rep.tolerance = tolerance;
  for (const std::string& name : observables) {
    const CsvColumn a = read_csv(dir_a / (name + ".csv"));
    const CsvColumn b = read_csv(dir_b / (name + ".csv"));
    if (a.t.size() != b.t.size())
      throw ConfigError("compare: " + name + ": time grids have different lengths");
    SeriesComparison sc;
    sc.name = name;
    sc.n_points = static_cast<int>(a.t.size());
    sc.used_z = a.any_se || b.any_se;
    int z_ok = 0;
    double sq = 0.0;
    for (Eigen::Index i = 0; i < a.t.size(); ++i) {
      if (std::abs(a.t[i] - b.t[i]) > 1e-12 * std::max(1.0, std::abs(a.t[i])))
        throw ConfigError("compare: " + name + ": time grids differ at row " + std::to_string(i));
      const double dev = std::abs(a.value[i] - b.value[i]);
      sc.max_abs_dev = std::max(sc.max_abs_dev, dev);
      sq += dev * dev;
      if (sc.used_z) {
        const double se = std::hypot(a.se[i], b.se[i]);
        if (se > 0.0 ? (dev / se <= 3.0) : (dev <= tolerance)) ++z_ok;
      }
    }
    sc.rms_dev = std::sqrt(sq / double(std::max(1, sc.n_points)));
    if (sc.used_z) {
      sc.z_ok_fraction = double(z_ok) / double(std::max(1, sc.n_points));
      sc.pass = sc.z_ok_fraction >= 0.99;
    } else {
      sc.pass = sc.max_abs_dev <= tolerance;
    }
    rep.pass = rep.pass && sc.pass;
    rep.series.push_back(sc);
  }
  return rep;
}

// ---- scaling driver ----

struct ScalingRun {
  metrics::ScalingResult result;
  json manifest;
  std::string csv;
};

// Combinatorial sweep of 1/tau_D across sizes; the per-size decoherence report
// uses the exact J = 0 dephasing curve, which only involves sector weights.
inline ScalingRun scaling_run(int k, const std::vector<int>& n_values,
                              metrics::StateFamily family, double gamma) {
  ScalingRun out;
  out.result = metrics::scaling_study(k, n_values, family, gamma);

  json reports = json::array();
  for (std::size_t i = 0; i < n_values.size(); ++i) {
    const int n = n_values[i];
    json rep;
    rep["n"] = n;
    rep["variance"] = out.result.variances[i];
    rep["rate"] = out.result.rates[i];
    rep["tau_variance"] = 1.0 / out.result.rates[i];
    // spectral spread of the k-body operator across p-sectors
    double lmax = -1e300, lmin = 1e300;
    for (int p = 0; p <= n; ++p) {
      const double l = metrics::zstring_eigenvalue(n, k, p);
      lmax = std::max(lmax, l);
      lmin = std::min(lmin, l);
    }
    const double span_sq = (lmax - lmin) * (lmax - lmin);
    rep["tau_bound"] = 4.0 / (gamma * span_sq);

    // Short-time fit against the exact dephasing curve at J = 0: the fidelity
    // only depends on p-sector weights, so no state vector is needed.
    std::vector<std::pair<double, double>> sectors;  // (weight, eigenvalue)
    if (family == metrics::StateFamily::product_plus) {
      const double norm = std::pow(2.0, -double(n));
      for (int p = 0; p <= n; ++p)
        sectors.emplace_back(double(ising::binomial(n, p)) * norm,
                             metrics::zstring_eigenvalue(n, k, p));
    } else {
      sectors.emplace_back(0.5, metrics::zstring_eigenvalue(n, k, 0));
      sectors.emplace_back(0.5, metrics::zstring_eigenvalue(n, k, n - n / 2));
    }
    const double tau_var = 1.0 / out.result.rates[i];
    const int n_fit = 8;
    RealVector ts(n_fit), fs(n_fit);
    for (int s = 0; s < n_fit; ++s) {
      const double t = 0.05 * tau_var * double(s + 1) / double(n_fit);
      double f = 0.0;
      for (const auto& [wa, la] : sectors)
        for (const auto& [wb, lb] : sectors) {
          const double dl = la - lb;
          f += wa * wb * std::exp(-0.5 * gamma * dl * dl * t);
        }
      ts[s] = t;
      fs[s] = f;
    }
    const metrics::ShortTimeFit fit = metrics::short_time_fit(ts, fs);
    rep["tau_fitted"] = fit.tau;
    reports.push_back(rep);
  }

  json man;
  man["schema"] = 1;
  man["kind"] = "scaling";
  man["k"] = k;
  man["family"] =
      family == metrics::StateFamily::product_plus ? "product_plus" : "max_decoherence";
  man["gamma"] = gamma;
  man["normalization_convention"] = kConvention;
  man["version"] = NOISIM_GIT_REV;
  man["slope"] = out.result.slope;
  man["intercept"] = out.result.intercept;
  man["reports"] = reports;
  out.manifest = std::move(man);

  std::string csv = "n,variance,rate\n";
  for (std::size_t i = 0; i < n_values.size(); ++i) {
    csv += std::to_string(n_values[i]);
    csv += ',';
    csv += format_double(out.result.variances[i]);
    csv += ',';
    csv += format_double(out.result.rates[i]);
    csv += '\n';
  }
  out.csv = std::move(csv);
  return out;
}

// ---- noise self-check ----

struct NoiseCheck {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  bool pass = false;
};

struct NoiseCheckReport {
  std::vector<NoiseCheck> checks;
  bool pass = true;
  void add(const std::string& name, double value, double bound) {
    checks.push_back({name, value, bound, std::abs(value) <= bound});
    pass = pass && checks.back().pass;
  }
};

// Distributional sanity of the generator: white mean/variance at 5 sigma over
// n_samples, OU lag-1 autocorrelation at 3 sigma, stream independence, and
// exact reproducibility.
inline NoiseCheckReport noise_check(std::uint64_t master_seed, int n_samples = 1000000) {
  NoiseCheckReport rep;
  const double dt = 1e-3;
  const int chunk = 4096;

  // white increments, accumulated in chunks to keep memory flat
  double sum = 0.0, sum_sq = 0.0;
  int drawn = 0;
  std::uint64_t stream = 0;
  while (drawn < n_samples) {
    const int take = std::min(chunk, n_samples - drawn);
    const noise::NoisePath p = noise::sample_white(take, dt, master_seed, stream++);
    sum += p.increments.sum();
    sum_sq += p.increments.squaredNorm();
    drawn += take;
  }
  const double mean = sum / double(n_samples);
  const double var = sum_sq / double(n_samples) - mean * mean;
  // SD of the sample mean is sqrt(dt/n); SD of the sample variance is
  // dt * sqrt(2/n) for Gaussian increments.
  rep.add("white_mean", mean, 5.0 * std::sqrt(dt / double(n_samples)));
  rep.add("white_variance_minus_dt", var - dt, 5.0 * dt * std::sqrt(2.0 / double(n_samples)));

  // OU lag-1 autocorrelation at tau_c = 10 dt. The path length is capped at
  // 2048 because the sampler's dense Cholesky scales cubically; a factor-two
  // error in tau_c shifts the autocorrelation by ~0.05, well past the bound.
  {
    const double tau_c = 10.0 * dt;
    const int n = 2048;
    Eigen::VectorXd grid(n);
    for (int j = 0; j < n; ++j) grid[j] = double(j) * dt;
    const noise::NoisePath p =
        noise::sample_colored(noise::ou_kernel(tau_c), grid, master_seed, stream++);
    double c0 = 0.0, c1 = 0.0;
    for (int j = 0; j + 1 < n; ++j) {
      const double a = p.eta(j), b = p.eta(j + 1);
      c0 += a * a;
      c1 += a * b;
    }
    c0 /= double(n - 1);
    c1 /= double(n - 1);
    const double corr = c1 / c0;
    const double expected = std::exp(-dt / tau_c);
    // Bartlett variance of the lag-1 sample autocorrelation of an AR(1)
    const double se = std::sqrt((1.0 - expected * expected) / double(n));
    rep.add("ou_lag1_autocorr_dev", corr - expected, 3.0 * se);
  }

  // independence of distinct streams
  {
    const int n = 65536;
    const noise::NoisePath a = noise::sample_white(n, dt, master_seed, stream);
    const noise::NoisePath b = noise::sample_white(n, dt, master_seed, stream + 1);
    const double corr = a.increments.dot(b.increments) / double(n) / dt;
    rep.add("cross_stream_corr", corr, 5.0 / std::sqrt(double(n)));
    stream += 2;
  }

  // reproducibility: identical (seed, stream) must regenerate bitwise
  {
    const noise::NoisePath a = noise::sample_white(1024, dt, master_seed, 7);
    const noise::NoisePath b = noise::sample_white(1024, dt, master_seed, 7);
    const noise::NoisePath c = noise::sample_white(1024, dt, master_seed, 8);
    const bool same = (a.increments.array() == b.increments.array()).all();
    const bool differ = (a.increments.array() != c.increments.array()).any();
    rep.checks.push_back({"bitwise_reproducible", same ? 0.0 : 1.0, 0.5, same});
    rep.checks.push_back({"streams_distinct", differ ? 0.0 : 1.0, 0.5, differ});
    rep.pass = rep.pass && same && differ;
  }
  return rep;
}

}  // namespace noisim::cli
