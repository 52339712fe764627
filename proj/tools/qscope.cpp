// Command-line driver: configuration in, data tables + manifest out. All
// numerics live in the headers; this file only routes.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>

#include "qscope/config.hpp"
#include "qscope/focusing.hpp"
#include "qscope/output.hpp"
#include "qscope/scanctl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qscope;

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string format;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
  auto* c = cmd->add_option("--config", opts.config_path, "config file path");
  if (config_required) c->required();
  cmd->add_option("--seed", opts.seed, "override the config seed");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--format", opts.format, "csv or json_lines")
      ->check(CLI::IsMember({"csv", "json_lines"}));
}

json guards_to_json(const std::vector<GuardReport>& guards) {
  json arr = json::array();
  for (const auto& g : guards)
    arr.push_back({{"name", g.name},
                   {"value", g.value},
                   {"ok", g.ok},
                   {"message", g.message}});
  return arr;
}

json run_config_to_json(const RunConfig& c) {
  static const char* regimes[] = {"full", "bad_cavity", "good_cavity", "sre",
                                  "manybody"};
  static const char* initials[] = {"coherent", "fock", "thermal",
                                   "fermi_ground"};
  static const char* probes[] = {"dark_periodic", "dark_single", "gaussian"};
  json j;
  j["regime"] = regimes[int(c.regime)];
  j["gamma"] = c.gamma;
  j["kappa"] = c.kappa;
  j["omega"] = c.omega;
  j["sigma"] = c.sigma;
  j["drive"] = c.drive;
  j["delta"] = c.delta;
  j["phi"] = c.phi;
  j["initial"] = initials[int(c.initial.kind)];
  j["alpha"] = c.initial.alpha;
  j["fock_n"] = c.initial.fock_n;
  j["n_th"] = c.initial.n_th;
  j["scan.mode"] = c.schedule.mode == ScanMode::fixed_point ? "fixed_point"
                                                            : "linear_scan";
  j["scan.z0_start"] = c.schedule.z0_start;
  j["scan.z0_end"] = c.schedule.z0_end;
  j["scan.T"] = c.schedule.duration;
  j["scan.n_scans"] = c.schedule.n_scans;
  j["dt"] = c.effective_dt();
  j["tau"] = c.effective_tau();
  j["trajectories"] = c.n_trajectories;
  j["seed"] = c.seed;
  j["dim"] = c.dim;
  j["cavity_dim"] = c.cavity_dim;
  j["probe"] = probes[int(c.effective_probe_kind())];
  j["probe.period"] = c.probe_period;
  j["probe.norm"] = c.probe_norm;
  if (c.regime == Regime::manybody) {
    j["n_fermions"] = c.n_fermions;
    j["box_length"] = c.box_length;
    j["orbital_window"] = c.orbital_window;
    j["excitation_cutoff"] = c.excitation_cutoff;
  }
  return j;
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const RunConfig& run, const std::string& format,
                    const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["version"] = version;
  m["seed"] = run.seed;
  m["config"] = run_config_to_json(run);
  m["config_hash"] = run.hash();
  m["guards"] = guards_to_json(evaluate_guards(run));
  m["format"] = format;
  m["outputs"] = outputs;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write manifest");
  out << m.dump(2) << '\n';
}

ParsedConfig load_config(const CommonOpts& opts) {
  ParsedConfig cfg = parse_config(opts.config_path);
  if (opts.seed) cfg.run.seed = *opts.seed;
  if (!opts.format.empty()) cfg.output_format = opts.format;
  if (!opts.out_dir.empty()) cfg.output_path = opts.out_dir;
  for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << '\n';
  return cfg;
}

fs::path prepare_dir(const std::string& path) {
  fs::path dir(path.empty() ? "." : path);
  fs::create_directories(dir);
  return dir;
}

/// Current + filtered signal on the rows where the full filter window exists.
OutputTable current_table(const TrajectoryRecord& rec, double tau,
                          int stride) {
  FilteredSignal sig = lowpass_filter(rec.current, tau);
  OutputTable t;
  t.header = {"t", "dX", "I_tau"};
  for (std::size_t i = 0; i < sig.values.size(); i += stride)
    t.add_row({sig.times[i], rec.current.increments[i], sig.values[i]});
  return t;
}

OutputTable population_table(const TrajectoryRecord& rec) {
  OutputTable t;
  t.header = {"t"};
  const int d = rec.populations.empty() ? 0 : int(rec.populations[0].size());
  for (int n = 0; n < d; ++n) t.header.push_back("p" + std::to_string(n));
  t.header.push_back("energy");
  t.header.push_back("purity");
  for (std::size_t i = 0; i < rec.sample_times.size(); ++i) {
    std::vector<double> row{rec.sample_times[i]};
    for (int n = 0; n < d; ++n) row.push_back(rec.populations[i](n));
    row.push_back(rec.mean_energy[i]);
    row.push_back(rec.purity_series[i]);
    t.add_row(std::move(row));
  }
  return t;
}

int run_trajectory_command(const std::string& name, const CommonOpts& opts,
                           ScanMode expected_mode) {
  ParsedConfig cfg = load_config(opts);
  if (cfg.run.schedule.mode != expected_mode)
    std::cerr << "warning: scan.mode does not match the '" << name
              << "' subcommand default\n";
  const fs::path dir = prepare_dir(cfg.output_path);
  const OutputFormat fmt = output_format_from_string(cfg.output_format);
  const std::string ext = output_extension(fmt);

  TrajectoryRecord rec = run_trajectory(cfg.run, 0);
  const double tau = cfg.run.effective_tau();
  const int stride =
      std::max<int>(1, int(rec.current.increments.size()) / 20000);
  current_table(rec, tau, stride).write_file((dir / ("current" + ext)).string(), fmt);
  population_table(rec).write_file((dir / ("populations" + ext)).string(), fmt);

  OutputTable jumps;
  jumps.header = {"time", "from_n", "to_n"};
  for (const auto& e : rec.jump_events)
    jumps.add_row({e.time, double(e.from_n), double(e.to_n)});
  jumps.write_file((dir / ("jumps" + ext)).string(), fmt);

  write_manifest(dir, name, cfg.run, cfg.output_format,
                 {"current" + ext, "populations" + ext, "jumps" + ext});
  std::cout << name << ": " << rec.current.increments.size() << " steps, "
            << rec.jump_events.size() << " jumps, max trace drift "
            << rec.max_trace_drift << ", output in " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cavity-backed scanning-probe simulator"};
  app.require_subcommand(1);

  // focus -------------------------------------------------------------------
  auto* focus = app.add_subcommand(
      "focus", "dark-state focal profile and resolution summary");
  double epsilon = 0.1, beta = 0.0, k1 = 2.0 * pi, z0 = 0.0;
  int grid_points = 2001;
  CommonOpts focus_opts;
  focus->add_option("--epsilon", epsilon, "Omega_0 / Omega_c ratio");
  focus->add_option("--beta", beta, "Omega_1 offset parameter");
  focus->add_option("--k1", k1, "probe lattice wave number");
  focus->add_option("--z0", z0, "focal position");
  focus->add_option("--grid-points", grid_points, "output grid size")
      ->check(CLI::PositiveNumber);
  add_common(focus, focus_opts, false);

  // movie / scan / ensemble -------------------------------------------------
  CommonOpts movie_opts, scan_opts, ens_opts;
  auto* movie = app.add_subcommand(
      "movie", "fixed-focus time-resolved trajectory");
  add_common(movie, movie_opts, true);
  auto* scan = app.add_subcommand(
      "scan", "scanned-focus trajectory (QND mode)");
  add_common(scan, scan_opts, true);
  auto* ens = app.add_subcommand(
      "ensemble", "trajectory ensemble with master-equation oracle");
  add_common(ens, ens_opts, true);

  // friedel -----------------------------------------------------------------
  auto* friedel = app.add_subcommand(
      "friedel", "impurity-pinned Fermi-gas density scan");
  int n_fermions = 16, fr_traj = 8;
  double box_length = 1.0, fr_sigma = 0.01, fr_kappa = 4.0 * pi * pi;
  double gammaT = 400.0, tau_frac = 0.01;
  CommonOpts fr_opts;
  friedel->add_option("--n-fermions", n_fermions, "fermion number (even)");
  friedel->add_option("--box-length", box_length, "box length L");
  friedel->add_option("--sigma", fr_sigma, "probe resolution (units of L)");
  friedel->add_option("--kappa", fr_kappa, "cavity linewidth");
  friedel->add_option("--gammaT", gammaT, "scan time in units of 1/gamma");
  friedel->add_option("--tau-frac", tau_frac, "filter time as fraction of T");
  friedel->add_option("--trajectories", fr_traj,
                      "seeds for the noise-band estimate");
  add_common(friedel, fr_opts, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (focus->parsed()) {
      LambdaConfig cfg;
      cfg.epsilon = epsilon;
      cfg.beta = beta;
      cfg.k1 = k1;
      cfg.z0 = z0;
      for (const auto& w : cfg.validate()) std::cerr << "warning: " << w << '\n';
      const fs::path dir = prepare_dir(focus_opts.out_dir);
      const OutputFormat fmt = output_format_from_string(
          focus_opts.format.empty() ? "csv" : focus_opts.format);
      const std::string ext = output_extension(fmt);
      FwhmResult fwhm = fwhm_resolution(cfg);
      OutputTable t;
      t.header = {"z", "f"};
      const double lam = cfg.lambda1();
      double max_overlap = 0.0, max_vna = 0.0;
      for (int i = 0; i < grid_points; ++i) {
        const double z = z0 - 0.5 * lam + lam * i / double(grid_points - 1);
        t.add_row({z, cfg.overlap(z)});
        max_overlap = std::max(max_overlap, cfg.overlap(z));
        max_vna = std::max(max_vna, nonadiabatic_potential(cfg, 1.0, z));
      }
      t.write_file((dir / ("focus_profile" + ext)).string(), fmt);
      // V_na in recoil units E_r = hbar^2 k1^2 / 2m
      const double recoil = 0.5 * k1 * k1;
      std::printf(
          "focus: sigma_analytic=%.6g sigma_numeric=%.6g max_overlap=%.6g "
          "max_Vna=%.6g E_r\n",
          fwhm.analytic, fwhm.numeric, max_overlap, max_vna / recoil);
      return 0;
    }
    if (movie->parsed())
      return run_trajectory_command("movie", movie_opts,
                                    ScanMode::fixed_point);
    if (scan->parsed())
      return run_trajectory_command("scan", scan_opts, ScanMode::linear_scan);
    if (ens->parsed()) {
      ParsedConfig cfg = load_config(ens_opts);
      const fs::path dir = prepare_dir(cfg.output_path);
      const OutputFormat fmt = output_format_from_string(cfg.output_format);
      const std::string ext = output_extension(fmt);
      EnsembleResult res = run_ensemble(cfg.run, cfg.run.n_trajectories);
      OutputTable stats;
      stats.header = {"t", "mean", "std_error"};
      for (std::size_t i = 0; i < res.filtered_times.size(); ++i)
        stats.add_row({res.filtered_times[i], res.filtered_stats.mean(i),
                       res.filtered_stats.std_error(i)});
      stats.write_file((dir / ("ensemble" + ext)).string(), fmt);
      OutputTable oracle;
      oracle.header = {"t", "f_me"};
      for (std::size_t i = 0; i < res.oracle_times.size(); ++i)
        oracle.add_row({res.oracle_times[i], res.oracle_f_trace[i]});
      oracle.write_file((dir / ("oracle" + ext)).string(), fmt);
      write_manifest(dir, "ensemble", cfg.run, cfg.output_format,
                     {"ensemble" + ext, "oracle" + ext});
      std::cout << "ensemble: " << res.filtered_stats.n_traj
                << " trajectories, output in " << dir.string() << '\n';
      return 0;
    }
    if (friedel->parsed()) {
      RunConfig run;
      run.regime = Regime::manybody;
      run.initial.kind = InitialState::Kind::fermi_ground;
      run.n_fermions = n_fermions;
      run.box_length = box_length;
      run.gamma = 1.0;
      run.kappa = fr_kappa;
      run.sigma = fr_sigma * box_length;
      run.schedule.mode = ScanMode::linear_scan;
      run.schedule.z0_start = -0.2 * box_length;
      run.schedule.z0_end = 0.2 * box_length;
      run.schedule.duration = gammaT;
      run.tau = tau_frac * gammaT;
      run.probe_kind = ProbeKind::gaussian;
      run.probe_norm = box_length / n_fermions;
      if (fr_opts.seed) run.seed = *fr_opts.seed;
      if (!fr_opts.config_path.empty()) {
        ParsedConfig pc = parse_config(fr_opts.config_path);
        run = pc.run;
        if (fr_opts.seed) run.seed = *fr_opts.seed;
      }
      const fs::path dir = prepare_dir(fr_opts.out_dir);
      const OutputFormat fmt = output_format_from_string(
          fr_opts.format.empty() ? "csv" : fr_opts.format);
      const std::string ext = output_extension(fmt);
      for (const auto& g : evaluate_guards(run))
        if (!g.ok) std::cerr << "warning: " << g.name << ": " << g.message << '\n';

      std::vector<FriedelScanResult> runs;
      for (int s = 0; s < std::max(1, fr_traj); ++s)
        runs.push_back(run_friedel_trajectory(run, s));
      const FriedelScanResult& first = runs.front();
      // per-point ensemble std for the noise band
      const std::size_t np = first.z0.size();
      std::vector<double> stddev(np, 0.0);
      if (runs.size() > 1) {
        for (std::size_t i = 0; i < np; ++i) {
          double m = 0.0;
          for (const auto& r : runs) m += r.signal[i];
          m /= double(runs.size());
          double v = 0.0;
          for (const auto& r : runs) v += std::pow(r.signal[i] - m, 2);
          stddev[i] = std::sqrt(v / double(runs.size() - 1));
        }
      }
      OutputTable t;
      t.header = {"z0", "I_tau", "theory_n", "band_std"};
      int covered = 0;
      for (std::size_t i = 0; i < np; ++i) {
        t.add_row({first.z0[i], first.signal[i], first.theory[i], stddev[i]});
        if (stddev[i] > 0 &&
            std::abs(first.signal[i] - first.theory[i]) <= stddev[i])
          ++covered;
      }
      t.write_file((dir / ("friedel" + ext)).string(), fmt);
      write_manifest(dir, "friedel", run, fr_opts.format.empty()
                                              ? "csv"
                                              : fr_opts.format,
                     {"friedel" + ext});
      std::printf(
          "friedel: %zu grid points, coverage %.1f%% within +-1 ensemble std "
          "(%zu seeds), max excited-state probability %.3g\n",
          np, np ? 100.0 * covered / double(np) : 0.0, runs.size(),
          first.excited_probability);
      return 0;
    }
  } catch (const std::exception& err) {
    json e;
    e["error"] = err.what();
    std::cerr << e.dump() << '\n';
    return 1;
  }
  return 1;
}
