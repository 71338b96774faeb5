#pragma once

// Simulation grids over (SNR, Γ scale, φ scale) cells: simulate pre-validated
// t-statistics and compare them with the Normal, the analytic limit law, or
// a per-dataset parametric bootstrap.

#include "prevalid/bootstrap.hpp"
#include "prevalid/common.hpp"
#include "prevalid/datagen.hpp"
#include "prevalid/nulldist.hpp"
#include "prevalid/preval.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace prevalid {

enum class NullMode { AnalyticNull, BootstrapNull };

const char* to_string(NullMode mode);

struct SimGrid {
  Index n = 100;
  Index p = 30;
  Index e = 5;  // columns of X, intercept included
  Index n_sim = 300;
  std::vector<double> snr_levels{0.05, 0.2, 0.5};
  std::vector<double> gamma_levels{0.5, 1.0, 1.5};
  // Var(Zφ)/σ²ₓ of the alternative; 0 is the null.
  std::vector<double> phi_scales{0.0};
  Learner learner{};  // L1 with λ = 0 (BootstrapNull): CV once per dataset
  double alpha = 0.05;
  double sigma_x = 1.0;
  double sigma_z = 1.0;
  std::uint64_t structure_seed = 5;  // fixes the base Γ and the β₀, φ directions
  Index analytic_draws = 100000;
  // BootstrapNull only
  Index boot_reps = 200;
  bool boot_alo = true;
  double boot_margin = 0.10;
  PValueMode boot_pvalue = PValueMode::EqualTail;
  int threads = 1;

  void validate() const;
};

struct CellReport {
  std::string learner;
  double snr = 0.0;
  double gamma = 0.0;
  double phi = 0.0;
  std::vector<double> t_sample;   // successful replicates in replicate order
  std::vector<double> reference;  // analytic draws (AnalyticNull only)
  Index failures = 0;
  double ks_normal = 0.0;
  double ks_analytic = 0.0;           // NaN unless AnalyticNull
  double miscoverage_analytic = 0.0;  // NaN unless AnalyticNull
  double reject_normal = 0.0;
  double reject_rate = 0.0;  // analytic or bootstrap test, per mode
};

struct GridReport {
  NullMode mode = NullMode::AnalyticNull;
  std::vector<CellReport> cells;  // snr-major, then gamma, then phi
};

/// Fixed ingredients of the grid: base Γ (e−1 × p, entries N(0,1)/√(e−1)),
/// the β₀ direction over the non-intercept columns, and the φ direction.
struct GridStructure {
  Mat gamma_base;
  Vec beta_direction;
  Vec phi_direction;
};

GridStructure grid_structure(const SimGrid& grid);

/// The generator spec of one cell.
NullSpec cell_spec(const SimGrid& grid, const GridStructure& s, double snr, double gamma);

/// Population limit-law parameters of the generator with the intercept
/// carried as the first external column: Σ = I, Θ = (1, 0, …), Γ with a
/// zero intercept row, α₀ = √n β₀, κ = λ/n.
LimitParams known_limit_params(const NullSpec& spec, const Learner& learner);

/// One pre-validated t from a freshly generated dataset.
double simulate_t(const NullSpec& spec, const Vec& phi, const Learner& learner, std::uint64_t seed);

GridReport run_sim_grid(const SimGrid& grid, NullMode mode, std::uint64_t seed);

/// Theoretical vs sample quantiles at percentiles 0.5, 1.0, …, 99.5.
void emit_qq(const std::vector<double>& t_sample, const std::vector<double>& reference,
             const std::string& path);

/// Per-cell summary table.
void write_grid_csv(const GridReport& report, const std::string& path);

/// Named grids: "default" (the full 3×3 grid), "smoke" (one small cell).
SimGrid named_grid(const std::string& name);

}  // namespace prevalid
