#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qscope/common.hpp"
#include "qscope/scanctl.hpp"

namespace qscope {

/// Parsed run description: the RunConfig plus output routing.
struct ParsedConfig {
  RunConfig run;
  std::string output_path = ".";
  std::string output_format = "csv";  // csv | json_lines
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double parse_finite(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse '" + value +
                      "' as a number");
  }
  if (pos != value.size())
    throw ConfigError("key '" + key + "': trailing characters in '" + value +
                      "'");
  if (!std::isfinite(v))
    throw ConfigError("key '" + key + "': value must be finite");
  return v;
}

inline long parse_integer(const std::string& key, const std::string& value) {
  const double v = parse_finite(key, value);
  const long n = std::lround(v);
  if (double(n) != v)
    throw ConfigError("key '" + key + "': expected an integer, got '" + value +
                      "'");
  return n;
}

}  // namespace detail

/// Flat `key = value` grammar with `#` comments. Unknown keys and non-finite
/// values are rejected; regime-incompatible keys raise ConfigError.
inline ParsedConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("line " + std::to_string(lineno) +
                        ": empty key or value");
    if (kv.count(key))
      throw ConfigError("duplicate key '" + key + "'");
    kv[key] = value;
  }

  ParsedConfig out;
  RunConfig& run = out.run;
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto real_key = [&](const std::string& key, double& dst,
                      bool positive = false) {
    if (auto v = take(key)) {
      dst = detail::parse_finite(key, *v);
      if (positive && dst <= 0)
        throw ConfigError("key '" + key + "': must be positive");
      return true;
    }
    return false;
  };
  auto int_key = [&](const std::string& key, int& dst, int min_value) {
    if (auto v = take(key)) {
      const long n = detail::parse_integer(key, *v);
      if (n < min_value)
        throw ConfigError("key '" + key + "': must be >= " +
                          std::to_string(min_value));
      dst = int(n);
      return true;
    }
    return false;
  };

  if (auto v = take("regime")) {
    if (*v == "full") run.regime = Regime::full;
    else if (*v == "bad_cavity") run.regime = Regime::bad_cavity;
    else if (*v == "good_cavity") run.regime = Regime::good_cavity;
    else if (*v == "sre") run.regime = Regime::sre;
    else if (*v == "manybody") run.regime = Regime::manybody;
    else
      throw ConfigError("key 'regime': unknown regime '" + *v + "'");
  }

  real_key("gamma", run.gamma, true);
  real_key("kappa", run.kappa, true);
  real_key("omega", run.omega, true);
  real_key("sigma", run.sigma, true);
  real_key("drive", run.drive);
  real_key("delta", run.delta);
  real_key("phi", run.phi);
  real_key("dt", run.dt);
  real_key("tau", run.tau);
  int_key("trajectories", run.n_trajectories, 1);
  int_key("dim", run.dim, 2);
  int_key("cavity_dim", run.cavity_dim, 2);
  if (auto v = take("seed"))
    run.seed = std::stoull(*v);

  // initial state: explicit kind, or inferred from whichever of alpha /
  // fock_n / n_th is present
  std::optional<std::string> init_kind = take("initial");
  const bool has_alpha = kv.count("alpha") > 0;
  const bool has_fock = kv.count("fock_n") > 0;
  const bool has_nth = kv.count("n_th") > 0;
  if (int(has_alpha) + int(has_fock) + int(has_nth) > 1)
    throw ConfigError("at most one of alpha, fock_n, n_th may be given");
  real_key("alpha", run.initial.alpha);
  int_key("fock_n", run.initial.fock_n, 0);
  real_key("n_th", run.initial.n_th);
  if (run.initial.n_th < 0)
    throw ConfigError("key 'n_th': must be >= 0");
  if (init_kind) {
    if (*init_kind == "coherent") run.initial.kind = InitialState::Kind::coherent;
    else if (*init_kind == "fock") run.initial.kind = InitialState::Kind::fock;
    else if (*init_kind == "thermal") run.initial.kind = InitialState::Kind::thermal;
    else if (*init_kind == "fermi_ground")
      run.initial.kind = InitialState::Kind::fermi_ground;
    else
      throw ConfigError("key 'initial': unknown state '" + *init_kind + "'");
  } else if (has_fock) {
    run.initial.kind = InitialState::Kind::fock;
  } else if (has_nth) {
    run.initial.kind = InitialState::Kind::thermal;
  } else if (has_alpha) {
    run.initial.kind = InitialState::Kind::coherent;
  } else if (run.regime == Regime::manybody) {
    run.initial.kind = InitialState::Kind::fermi_ground;
  }

  if (run.regime == Regime::manybody) {
    if (has_alpha || has_fock || has_nth ||
        run.initial.kind != InitialState::Kind::fermi_ground)
      throw ConfigError(
          "manybody runs start from fermi_ground; alpha/fock_n/n_th are "
          "incompatible");
  } else if (run.initial.kind == InitialState::Kind::fermi_ground) {
    throw ConfigError("fermi_ground requires regime = manybody");
  }

  bool explicit_mode = false;
  if (auto v = take("scan.mode")) {
    explicit_mode = true;
    if (*v == "fixed_point") run.schedule.mode = ScanMode::fixed_point;
    else if (*v == "linear_scan") run.schedule.mode = ScanMode::linear_scan;
    else
      throw ConfigError("key 'scan.mode': unknown mode '" + *v + "'");
  }
  const bool has_scan_span =
      kv.count("scan.z0_start") && kv.count("scan.z0_end");
  real_key("scan.z0_start", run.schedule.z0_start);
  real_key("scan.z0_end", run.schedule.z0_end);
  real_key("scan.T", run.schedule.duration, true);
  int_key("scan.n_scans", run.schedule.n_scans, 1);
  if (!explicit_mode && has_scan_span &&
      run.schedule.z0_end != run.schedule.z0_start)
    run.schedule.mode = ScanMode::linear_scan;

  if (auto v = take("probe")) {
    if (*v == "gaussian") run.probe_kind = ProbeKind::gaussian;
    else if (*v == "dark_periodic") run.probe_kind = ProbeKind::dark_periodic;
    else if (*v == "dark_single") run.probe_kind = ProbeKind::dark_single;
    else
      throw ConfigError("key 'probe': unknown probe '" + *v + "'");
  }
  real_key("probe.period", run.probe_period, true);
  real_key("probe.norm", run.probe_norm, true);

  const bool has_mb_keys = kv.count("n_fermions") || kv.count("box_length") ||
                           kv.count("orbital_window") ||
                           kv.count("excitation_cutoff");
  int_key("n_fermions", run.n_fermions, 2);
  real_key("box_length", run.box_length, true);
  int_key("orbital_window", run.orbital_window, 1);
  int_key("excitation_cutoff", run.excitation_cutoff, 1);
  if (run.regime != Regime::manybody && has_mb_keys)
    throw ConfigError(
        "n_fermions/box_length/orbital_window/excitation_cutoff require "
        "regime = manybody");

  if (auto v = take("output.path")) out.output_path = *v;
  if (auto v = take("output.format")) {
    if (*v != "csv" && *v != "json_lines")
      throw ConfigError("key 'output.format': expected csv or json_lines");
    out.output_format = *v;
  }

  if (!kv.empty())
    throw ConfigError("unknown key '" + kv.begin()->first + "'");

  for (const GuardReport& g : evaluate_guards(run))
    if (!g.ok) out.warnings.push_back(g.name + ": " + g.message);
  return out;
}

inline ParsedConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace qscope
