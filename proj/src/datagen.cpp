#include "prevalid/datagen.hpp"

#include <cmath>

namespace prevalid {

void NullSpec::validate() const {
  require(n >= 2 && p >= 1 && e >= 0, "NullSpec needs n ≥ 2, p ≥ 1, e ≥ 0");
  require(Gamma.rows() == e && Gamma.cols() == p, "Gamma must be e×p");
  require(beta0.size() == e || beta0.size() == e + 1, "beta0 must have length e or e+1");
  require(sigma_x >= 0.0 && sigma_z >= 0.0, "noise scales must be nonnegative");
}

Vec NullSpec::full_beta0() const {
  if (beta0.size() == e + 1) return beta0;
  Vec full = Vec::Zero(e + 1);
  full.tail(e) = beta0;
  return full;
}

void AltSpec::validate() const {
  base.validate();
  require(phi.size() == base.p, "phi must have length p");
  if (!allow_zero_phi) require(phi.norm() > 0.0, "alternative needs phi ≠ 0");
}

namespace {

struct Draws {
  Mat X;
  Mat Z;
  Vec eps;
};

Draws draw_null_parts(const NullSpec& spec, Rng& rng) {
  Draws d;
  d.X.resize(spec.n, spec.e + 1);
  d.X.col(0).setOnes();
  d.X.rightCols(spec.e) = rng.normal_matrix(spec.n, spec.e);
  const Mat noise = rng.normal_matrix(spec.n, spec.p, spec.sigma_z);
  d.Z = d.X.rightCols(spec.e) * spec.Gamma + noise;
  d.eps = rng.normal_vector(spec.n, spec.sigma_x);
  return d;
}

}  // namespace

Dataset gen_null(const NullSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Draws d = draw_null_parts(spec, rng);
  Dataset out;
  out.y = d.X * spec.full_beta0() + d.eps;
  out.X = std::move(d.X);
  out.Z = std::move(d.Z);
  return out;
}

Dataset gen_alt(const AltSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Draws d = draw_null_parts(spec.base, rng);
  Dataset out;
  out.y = d.X * spec.base.full_beta0() + d.eps;
  out.y += d.Z * spec.phi;
  out.X = std::move(d.X);
  out.Z = std::move(d.Z);
  return out;
}

double null_snr(const NullSpec& spec) {
  const Vec b = spec.full_beta0().tail(spec.e);
  return b.squaredNorm() / (spec.sigma_x * spec.sigma_x);
}

Vec beta_for_snr(const Vec& beta_direction, double snr, double sigma_x) {
  require(snr >= 0.0, "SNR must be nonnegative");
  const double norm = beta_direction.norm();
  if (snr == 0.0 || norm == 0.0) return Vec::Zero(beta_direction.size());
  return beta_direction * (std::sqrt(snr) * sigma_x / norm);
}

double signal_variance(const NullSpec& spec, const Vec& phi) {
  return (spec.Gamma * phi).squaredNorm() + spec.sigma_z * spec.sigma_z * phi.squaredNorm();
}

Vec phi_for_signal(const NullSpec& spec, const Vec& direction, double ratio) {
  require(ratio >= 0.0, "signal ratio must be nonnegative");
  const double v = signal_variance(spec, direction);
  require(v > 0.0, "direction carries no signal");
  return direction * std::sqrt(ratio * spec.sigma_x * spec.sigma_x / v);
}

void GwasSpec::validate() const {
  require(n >= 3 && p >= 1 && e >= 0, "GwasSpec needs n ≥ 3, p ≥ 1");
  require(0.0 < maf_lo && maf_lo <= maf_hi && maf_hi < 1.0, "MAF range must lie in (0,1)");
  require(spike_prob >= 0.0 && spike_prob <= 1.0, "spike probability outside [0,1]");
  require(sigma2_b >= 0.0 && sigma2_eps >= 0.0 && gamma_slab_var >= 0.0 && beta_var >= 0.0,
          "variances must be nonnegative");
}

std::array<double, 3> hardy_weinberg(double maf) {
  return {(1.0 - maf) * (1.0 - maf), 2.0 * maf * (1.0 - maf), maf * maf};
}

std::pair<Dataset, GwasTruth> gen_gwas(const GwasSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  GwasTruth truth;
  const Index n = spec.n, p = spec.p, e = spec.e;

  truth.maf.resize(p);
  for (Index j = 0; j < p; ++j) truth.maf(j) = spec.maf_lo + (spec.maf_hi - spec.maf_lo) * rng.uniform();

  Mat Z(n, p);
  for (Index j = 0; j < p; ++j) {
    const auto probs = hardy_weinberg(truth.maf(j));
    for (Index i = 0; i < n; ++i) {
      const double u = rng.uniform();
      Z(i, j) = u < probs[0] ? 0.0 : (u < probs[0] + probs[1] ? 1.0 : 2.0);
    }
  }

  truth.Gamma = Mat::Zero(p, e);
  const double slab_sd = std::sqrt(spec.gamma_slab_var);
  for (Index c = 0; c < e; ++c)
    for (Index j = 0; j < p; ++j)
      if (rng.bernoulli(spec.spike_prob)) truth.Gamma(j, c) = slab_sd * rng.normal();

  Mat X(n, e + 1);
  X.col(0).setOnes();
  X.rightCols(e) = Z * truth.Gamma + rng.normal_matrix(n, e);

  truth.beta = rng.normal_vector(e + 1, std::sqrt(spec.beta_var));
  truth.b = rng.normal_vector(p, std::sqrt(spec.sigma2_b));
  const Vec eps = rng.normal_vector(n, std::sqrt(spec.sigma2_eps));
  Vec y = X * truth.beta + Z * truth.b + eps;

  double scale = 1.0;
  if (spec.normalize_y) {
    const double mean = y.mean();
    scale = std::sqrt((y.array() - mean).square().sum() / static_cast<double>(n - 1));
    require(scale > 0.0, "generated phenotype is constant");
    y /= scale;
    truth.beta /= scale;
    truth.b /= scale;
  }
  truth.y_scale = scale;
  truth.sigma2_g = static_cast<double>(p) * spec.sigma2_b / (scale * scale);

  Dataset data{std::move(y), std::move(X), std::move(Z)};
  return {std::move(data), std::move(truth)};
}

const char* to_string(ErrorModel model) {
  return model == ErrorModel::NoExternals ? "no_externals" : "with_externals";
}

void ErrorStudySpec::validate() const {
  require(n >= 3 && p >= 1 && e >= 0, "ErrorStudySpec needs n ≥ 3, p ≥ 1");
  require(sigma_x >= 0.0 && sigma_z >= 0.0, "noise scales must be nonnegative");
}

ErrorStudyData gen_error_study(ErrorModel model, const ErrorStudySpec& spec, std::uint64_t seed) {
  spec.validate();
  const Index n = spec.n, p = spec.p;
  const Index e = model == ErrorModel::WithExternals ? spec.e : 0;

  Rng structure(derive_seed(spec.structure_seed, static_cast<std::uint64_t>(model)));
  Mat gamma = Mat::Zero(e, p);
  Vec beta0 = Vec::Zero(e + 1);
  if (model == ErrorModel::WithExternals) {
    gamma = structure.normal_matrix(e, p, spec.gamma_scale);
    beta0 = structure.normal_vector(e + 1, spec.beta0_scale);
  }
  const Vec beta1 = structure.normal_vector(p, spec.beta_int_scale);

  Rng rng(seed);
  auto covariates = [&](Mat& X, Mat& Z) {
    X.resize(n, e + 1);
    X.col(0).setOnes();
    X.rightCols(e) = rng.normal_matrix(n, e);
    Z = X.rightCols(e) * gamma + rng.normal_matrix(n, p, spec.sigma_z);
  };

  ErrorStudyData out;
  covariates(out.train.X, out.train.Z);
  out.train_mean = out.train.X * beta0 + out.train.Z * beta1;
  out.train.y = out.train_mean + rng.normal_vector(n, spec.sigma_x);
  out.in_sample_y = out.train_mean + rng.normal_vector(n, spec.sigma_x);
  covariates(out.out_sample.X, out.out_sample.Z);
  out.out_sample.y = out.out_sample.X * beta0 + out.out_sample.Z * beta1 + rng.normal_vector(n, spec.sigma_x);
  return out;
}

}  // namespace prevalid
