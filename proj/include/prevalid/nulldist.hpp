#pragma once

// Limiting null law of the pre-validated t-statistic for OLS and ridge
// first stages, plug-in parameter estimation, and Monte Carlo p-values.

#include "prevalid/common.hpp"
#include "prevalid/preval.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace prevalid {

/// Parameters of the limit law. Dimensions: e = columns of the second-stage
/// external design, p = internal features.
struct LimitParams {
  Vec alpha0;   // e, limit of √n·β₀
  Mat Sigma;    // e×e, limit of XᵀX/n, symmetric PD
  RowVec Theta; // 1×e, limit of 1ᵀX/n
  Mat Gamma;    // e×p
  double sigma2_x = 1.0;
  double sigma2_z = 1.0;
  double kappa = 0.0;  // limit of λ/n
  // The ridge learner here leaves its intercept unpenalized; set this to
  // model a first stage that shrinks the intercept too.
  bool penalize_intercept = false;
  // With κ > 0 the score P₀ = lim Z̃ᵀε/√n has covariance σ²ₓ(B − κJ), and the
  // denominator sandwiches B − κJ − DΣ⁻¹Dᵀ. `uncorrected_ridge_form` instead uses
  // σ²ₓB and B − DΣ⁻¹Dᵀ in those two places, which agrees only at κ = 0.
  bool uncorrected_ridge_form = false;

  Index p() const { return Gamma.cols(); }
  Index e() const { return Gamma.rows(); }
  void validate() const;
};

struct LimitMatrices {
  Mat B;          // (p+1)×(p+1)
  Mat D;          // (p+1)×e
  Mat M;          // B − κJ, the limit of Z̃ᵀZ̃/n (equal to B in the uncorrected form)
  Mat joint_cov;  // σ²ₓ [[M, D], [Dᵀ, Σ]]
};

LimitMatrices build_limit_matrices(const LimitParams& params);

struct LimitDraws {
  std::vector<double> values;  // NaN where the denominator was not positive
  std::uint64_t seed = 0;
  Index n_draws = 0;
  Index nonpositive = 0;
};

/// Draws of (P₀, Q₀) ~ N(0, joint_cov) via a symmetric square-root factor.
class JointNormalSampler {
 public:
  explicit JointNormalSampler(const Mat& cov);
  Vec draw(Rng& rng) const;
  const Mat& factor() const { return factor_; }

 private:
  Mat factor_;
};

/// Evaluates L for given (P₀, Q₀), with the κ·Tr(B⁻¹J) ridge correction.
class LimitStatistic {
 public:
  explicit LimitStatistic(const LimitParams& params);
  /// Returns NaN when the quadratic form under the root is not positive.
  double operator()(const Vec& P0, const Vec& Q0) const;
  const LimitMatrices& matrices() const { return mats_; }

 private:
  LimitParams params_;
  LimitMatrices mats_;
  Mat b_inv_;
  Mat denom_form_;
  Mat d_sigma_inv_;
  Vec shift_;
  double offset_ = 0.0;
};

/// Least-squares (κ = 0) form of L, evaluated with its own B and no trace
/// term. Used as the reference the ridge form must collapse to.
double ols_limit_statistic(const LimitParams& params, const Vec& P0, const Vec& Q0);

/// (P₀, Q₀) stream shared by both evaluators: column b holds draw b.
Mat draw_joint_normal(const LimitParams& params, Index n_draws, std::uint64_t seed);

/// Default for inference; 300 matches the simulation replicate count.
inline constexpr Index kDefaultLimitDraws = 100000;

/// Monte Carlo sample of L. Draws are generated in fixed blocks keyed by
/// (seed, block), so the result does not depend on `threads`.
LimitDraws sample_limit_statistic(const LimitParams& params, Index n_draws, std::uint64_t seed,
                                  int threads = 1);

enum class SigmaXSource { XOnly, SecondStage };

struct PlugInOptions {
  // Use the full design (with its intercept column) as the external block.
  // This is the form that matches a second stage fitted with an intercept.
  bool include_intercept = true;
  SigmaXSource sigma_source = SigmaXSource::XOnly;
  Learner learner{};  // first stage, only for SigmaXSource::SecondStage
};

/// α₀ = √n·β̂, Σ = XᵀX/n, Θ = 1ᵀX/n, Γ̂ = (XᵀX)⁻¹XᵀZ, σ̂²_z from the
/// residuals of Z on X, σ̂²_x from y on X (or the second stage), κ = λ/n.
LimitParams estimate_params_from_data(const Dataset& data, double lambda,
                                      const PlugInOptions& opt = {});

/// (1 + #{|L_b| ≥ |t|}) / (m + 1) over the m finite draws.
double pvalue_from_draws(const LimitDraws& draws, double t_obs);

/// One value per line under a "limit_draw" header.
void write_draws_csv(const LimitDraws& draws, const std::string& path);

}  // namespace prevalid
