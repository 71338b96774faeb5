#pragma once

// Seeded synthetic data: the null and alternative two-feature-set models,
// a GWAS-style linear mixed model, and the train/test sets of the error
// estimation study. Every generator is a pure function of (spec, seed).

#include "prevalid/common.hpp"
#include "prevalid/preval.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <utility>

namespace prevalid {

/// y = Xβ₀ + ε, Z = X_eΓ + E. X = [1 X_e] with X_e iid N(0,1) (e columns).
struct NullSpec {
  Index n = 100;
  Index p = 30;
  Index e = 4;
  Mat Gamma;     // e×p, acts on the non-intercept columns
  Vec beta0;     // length e+1 (intercept first) or e (zero intercept)
  double sigma_x = 1.0;
  double sigma_z = 1.0;

  void validate() const;
  Vec full_beta0() const;
};

/// Null model plus Zφ in the response.
struct AltSpec {
  NullSpec base;
  Vec phi;  // length p, nonzero unless allow_zero_phi
  bool allow_zero_phi = false;

  void validate() const;
};

Dataset gen_null(const NullSpec& spec, std::uint64_t seed);
Dataset gen_alt(const AltSpec& spec, std::uint64_t seed);

/// Population Var(Xβ₀)/σ²ₓ for the standard-normal external columns.
double null_snr(const NullSpec& spec);
/// Scales `beta_direction` (length e, no intercept) to reach the given SNR.
Vec beta_for_snr(const Vec& beta_direction, double snr, double sigma_x);
/// Population Var(Zφ) = ‖Γφ‖² + σ²_z‖φ‖².
double signal_variance(const NullSpec& spec, const Vec& phi);
/// Scales `direction` so that Var(Zφ)/σ²ₓ equals `ratio`.
Vec phi_for_signal(const NullSpec& spec, const Vec& direction, double ratio);

struct GwasSpec {
  Index n = 300;
  Index p = 500;
  Index e = 4;  // non-intercept fixed-effect covariates
  double maf_lo = 0.15;
  double maf_hi = 0.85;
  double sigma2_b = 0.0032;  // per-SNP effect variance; mean σ²_g ≈ 0.4 after rescaling at p = 500
  double sigma2_eps = 0.6;
  double spike_prob = 0.1;        // Γ entry is nonzero with this probability
  double gamma_slab_var = 0.1;
  double beta_var = 0.3;
  bool normalize_y = true;

  void validate() const;
};

struct GwasTruth {
  Vec b;             // per-SNP effects, on the returned y scale
  Vec beta;          // fixed effects, intercept first, on the returned y scale
  Mat Gamma;         // p×e
  Vec maf;
  double sigma2_g = 0.0;  // p·σ²_b on the returned y scale
  double y_scale = 1.0;   // raw y was divided by this
};

/// Genotype probabilities ((1−m)², 2m(1−m), m²) for allele frequency m.
std::array<double, 3> hardy_weinberg(double maf);

std::pair<Dataset, GwasTruth> gen_gwas(const GwasSpec& spec, std::uint64_t seed);

enum class ErrorModel { NoExternals, WithExternals };

const char* to_string(ErrorModel model);

struct ErrorStudySpec {
  Index n = 100;
  Index p = 24;
  Index e = 2;          // WithExternals only
  double sigma_x = 1.0;
  double sigma_z = 1.0;
  double gamma_scale = 0.5;    // Γ entries iid N(0, gamma_scale²), fixed per seed
  double beta0_scale = 1.0;    // external effects, WithExternals only
  double beta_int_scale = 0.3; // internal effects β entries iid N(0, scale²)
  std::uint64_t structure_seed = 20240611;  // fixes β and Γ across replicates

  void validate() const;
};

struct ErrorStudyData {
  Dataset train;
  Vec in_sample_y;   // E[y] of the training rows plus fresh noise
  Dataset out_sample;
  Vec train_mean;    // E[y] of the training rows
};

/// NoExternals: y = Zβ + ε with Z iid N(0,σ²_z) and X the intercept column.
/// WithExternals: y = Xβ₀ + Zβ₁ + ε, Z = X_eΓ + E.
ErrorStudyData gen_error_study(ErrorModel model, const ErrorStudySpec& spec, std::uint64_t seed);

/// Reads/writes the dataset CSV: header y,x1..xe,z1..zp, 17 significant
/// digits. The intercept column is implicit.
void write_dataset_csv(const Dataset& data, const std::string& path);
Dataset read_dataset_csv(const std::string& path);

}  // namespace prevalid
