#include "prevalid/harness.hpp"

#include "prevalid/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>

namespace prevalid {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kAnalyticStream = 0xa2a1f7c3d5b9e011ULL;

void write_num(std::ofstream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

}  // namespace

const char* to_string(NullMode mode) {
  return mode == NullMode::AnalyticNull ? "analytic" : "bootstrap";
}

void SimGrid::validate() const {
  require(n_sim >= 1, "grid needs n_sim ≥ 1");
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
  require(e >= 2 && p >= 1 && n > e + 2, "grid needs e ≥ 2 (with intercept), p ≥ 1, n > e + 2");
  require(!snr_levels.empty() && !gamma_levels.empty() && !phi_scales.empty(), "grid axes must be nonempty");
  for (double v : snr_levels) require(v >= 0.0, "SNR levels must be nonnegative");
  for (double v : phi_scales) require(v >= 0.0, "phi scales must be nonnegative");
  require(sigma_x > 0.0 && sigma_z > 0.0, "noise scales must be positive");
  require(analytic_draws >= 1 && boot_reps >= 1, "draw counts must be positive");
  // λ = 0 on an L1 learner means "choose λ by CV on each dataset"
  if (!(learner.is_penalized_l1() && learner.lambda == 0.0)) learner.validate();
}

GridStructure grid_structure(const SimGrid& grid) {
  Rng rng(grid.structure_seed);
  GridStructure s;
  const Index ext = grid.e - 1;
  s.gamma_base = rng.normal_matrix(ext, grid.p, 1.0 / std::sqrt(static_cast<double>(ext)));
  s.beta_direction = rng.normal_vector(ext);
  s.phi_direction = rng.normal_vector(grid.p);
  return s;
}

NullSpec cell_spec(const SimGrid& grid, const GridStructure& s, double snr, double gamma) {
  NullSpec spec;
  spec.n = grid.n;
  spec.p = grid.p;
  spec.e = grid.e - 1;
  spec.Gamma = gamma * s.gamma_base;
  spec.beta0 = Vec::Zero(grid.e);
  spec.beta0.tail(spec.e) = beta_for_snr(s.beta_direction, snr, grid.sigma_x);
  spec.sigma_x = grid.sigma_x;
  spec.sigma_z = grid.sigma_z;
  return spec;
}

LimitParams known_limit_params(const NullSpec& spec, const Learner& learner) {
  const Index k = spec.e + 1;
  LimitParams params;
  params.Sigma = Mat::Identity(k, k);
  params.Theta = RowVec::Zero(k);
  params.Theta(0) = 1.0;
  params.Gamma = Mat::Zero(k, spec.p);
  params.Gamma.bottomRows(spec.e) = spec.Gamma;
  params.alpha0 = std::sqrt(static_cast<double>(spec.n)) * spec.full_beta0();
  params.sigma2_x = spec.sigma_x * spec.sigma_x;
  params.sigma2_z = spec.sigma_z * spec.sigma_z;
  params.kappa = learner.kind == LearnerKind::Ridge ? learner.lambda / static_cast<double>(spec.n) : 0.0;
  return params;
}

double simulate_t(const NullSpec& spec, const Vec& phi, const Learner& learner, std::uint64_t seed) {
  AltSpec alt{spec, phi, true};
  const Dataset data = gen_alt(alt, seed);
  return second_stage(data.y, data.X, prevalidate(data, learner, false)).t;
}

GridReport run_sim_grid(const SimGrid& grid, NullMode mode, std::uint64_t seed) {
  grid.validate();
  if (mode == NullMode::AnalyticNull || grid.learner.lambda > 0.0) grid.learner.validate();
  if (mode == NullMode::AnalyticNull)
    require(grid.learner.kind == LearnerKind::OLS || grid.learner.kind == LearnerKind::Ridge,
            "the analytic null covers OLS and ridge first stages only");
  const GridStructure structure = grid_structure(grid);

  struct CellSetup {
    NullSpec spec;
    Vec phi;
    double snr, gamma, phi_scale;
  };
  std::vector<CellSetup> setups;
  for (double snr : grid.snr_levels)
    for (double gamma : grid.gamma_levels)
      for (double phi_scale : grid.phi_scales) {
        CellSetup c{cell_spec(grid, structure, snr, gamma), Vec::Zero(grid.p), snr, gamma, phi_scale};
        if (phi_scale > 0.0) c.phi = phi_for_signal(c.spec, structure.phi_direction, phi_scale);
        setups.push_back(std::move(c));
      }

  const std::size_t n_cells = setups.size();
  const std::size_t n_sim = static_cast<std::size_t>(grid.n_sim);

  // per (cell, replicate): t and, in bootstrap mode, the bootstrap p-value
  std::vector<double> t_all(n_cells * n_sim, kNaN), p_all(n_cells * n_sim, kNaN);
  parallel_for(n_cells * n_sim, grid.threads, [&](std::size_t job) {
    const std::size_t c = job / n_sim, s = job % n_sim;
    const std::uint64_t sim_seed = derive_seed(derive_seed(seed, c), s);
    try {
      if (mode == NullMode::AnalyticNull) {
        t_all[job] = simulate_t(setups[c].spec, setups[c].phi, grid.learner, sim_seed);
      } else {
        const Dataset data = gen_alt(AltSpec{setups[c].spec, setups[c].phi, true}, sim_seed);
        BootConfig boot;
        boot.n_reps = grid.boot_reps;
        boot.seed = derive_seed(sim_seed, 1);
        boot.mode = BootMode::Parametric;
        boot.learner = grid.learner;
        boot.pretrain = grid.learner.is_penalized_l1() && grid.learner.lambda == 0.0;
        boot.use_alo = grid.boot_alo;
        boot.margin = grid.boot_margin;
        boot.pvalue_mode = grid.boot_pvalue;
        boot.threads = 1;
        const BootResult r = parametric_bootstrap(data, boot);
        t_all[job] = r.t_obs;
        p_all[job] = r.p_value;
      }
    } catch (const Error&) {
      // counted as a cell failure below
    }
  });

  GridReport report;
  report.mode = mode;
  for (std::size_t c = 0; c < n_cells; ++c) {
    CellReport cell;
    cell.learner = to_string(grid.learner.kind);
    cell.snr = setups[c].snr;
    cell.gamma = setups[c].gamma;
    cell.phi = setups[c].phi_scale;
    std::size_t boot_reject = 0;
    for (std::size_t s = 0; s < n_sim; ++s) {
      const double t = t_all[c * n_sim + s];
      if (!std::isfinite(t)) {
        ++cell.failures;
        continue;
      }
      cell.t_sample.push_back(t);
      if (p_all[c * n_sim + s] < grid.alpha) ++boot_reject;
    }
    cell.ks_analytic = kNaN;
    cell.miscoverage_analytic = kNaN;
    if (cell.t_sample.empty()) {
      cell.ks_normal = cell.reject_normal = cell.reject_rate = kNaN;
      report.cells.push_back(std::move(cell));
      continue;
    }
    const double m = static_cast<double>(cell.t_sample.size());
    std::size_t normal_reject = 0;
    for (double t : cell.t_sample)
      if (2.0 * (1.0 - stats::normal_cdf(std::abs(t))) < grid.alpha) ++normal_reject;
    cell.reject_normal = static_cast<double>(normal_reject) / m;
    cell.ks_normal = stats::ks_vs_normal(cell.t_sample);

    if (mode == NullMode::AnalyticNull) {
      const LimitParams params = known_limit_params(setups[c].spec, grid.learner);
      const LimitDraws draws = sample_limit_statistic(params, grid.analytic_draws,
                                                      derive_seed(seed ^ kAnalyticStream, c), grid.threads);
      cell.reference = stats::finite_only(draws.values);
      std::vector<double> sorted = cell.reference;
      std::sort(sorted.begin(), sorted.end());
      const double lo = stats::quantile_sorted(sorted, 0.5 * grid.alpha);
      const double hi = stats::quantile_sorted(sorted, 1.0 - 0.5 * grid.alpha);
      std::size_t outside = 0;
      for (double t : cell.t_sample)
        if (t < lo || t > hi) ++outside;
      cell.miscoverage_analytic = static_cast<double>(outside) / m;
      cell.reject_rate = cell.miscoverage_analytic;
      cell.ks_analytic = stats::ks_two_sample(cell.t_sample, cell.reference);
    } else {
      cell.reject_rate = static_cast<double>(boot_reject) / m;
    }
    report.cells.push_back(std::move(cell));
  }
  return report;
}

void emit_qq(const std::vector<double>& t_sample, const std::vector<double>& reference,
             const std::string& path) {
  require(!t_sample.empty() && !reference.empty(), "QQ data needs two nonempty samples");
  std::vector<double> a = t_sample, b = reference;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out << "percentile,theoretical_quantile,sample_quantile\n";
  for (int k = 1; k <= 199; ++k) {
    const double prob = 0.005 * k;
    write_num(out, 100.0 * prob);
    out << ',';
    write_num(out, stats::quantile_sorted(b, prob));
    out << ',';
    write_num(out, stats::quantile_sorted(a, prob));
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

void write_grid_csv(const GridReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out << "mode,learner,snr,gamma,phi,n_ok,failures,mean_t,sd_t,ks_normal,ks_analytic,"
         "miscoverage_analytic,reject_normal,reject_rate\n";
  for (const auto& c : report.cells) {
    const double mean_t = c.t_sample.empty() ? kNaN : stats::mean(c.t_sample);
    const double sd_t = c.t_sample.size() > 1 ? std::sqrt(stats::variance(c.t_sample)) : kNaN;
    out << to_string(report.mode) << ',' << c.learner << ',';
    for (double v : {c.snr, c.gamma, c.phi}) {
      write_num(out, v);
      out << ',';
    }
    out << c.t_sample.size() << ',' << c.failures;
    for (double v : {mean_t, sd_t, c.ks_normal, c.ks_analytic, c.miscoverage_analytic, c.reject_normal,
                     c.reject_rate}) {
      out << ',';
      write_num(out, v);
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

SimGrid named_grid(const std::string& name) {
  SimGrid grid;
  if (name == "default") return grid;
  if (name == "smoke") {
    grid.n = 40;
    grid.p = 5;
    grid.e = 3;
    grid.n_sim = 1;
    grid.snr_levels = {0.1};
    grid.gamma_levels = {1.0};
    grid.analytic_draws = 2000;
    grid.boot_reps = 20;
    return grid;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown grid '" + name + "' (expected default or smoke)");
}

}  // namespace prevalid
