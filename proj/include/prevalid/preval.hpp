#pragma once

// Leave-one-out pre-validation: first-stage LOO predictions of y from the
// internal features Z, then a second-stage regression of y on the
// pre-validated predictor and the external design X.

#include "prevalid/common.hpp"
#include "prevalid/regress.hpp"

#include <optional>
#include <string>

namespace prevalid {

/// y, external design X (first column all ones), internal features Z.
struct Dataset {
  Vec y;
  Mat X;
  Mat Z;

  Index n() const { return y.size(); }
  /// Number of external columns excluding the intercept.
  Index e() const { return X.cols() - 1; }
  Index p() const { return Z.cols(); }

  /// Throws InvalidArgument when dimensions disagree or X lacks the
  /// leading column of ones.
  void validate() const;
};

enum class LearnerKind { OLS, Ridge, Lasso, LogisticLasso, RelaxedLasso };

const char* to_string(LearnerKind kind);
LearnerKind learner_from_string(const std::string& name);

struct Learner {
  LearnerKind kind = LearnerKind::OLS;
  double lambda = 0.0;

  void validate() const;
  bool is_penalized_l1() const {
    return kind == LearnerKind::Lasso || kind == LearnerKind::LogisticLasso ||
           kind == LearnerKind::RelaxedLasso;
  }
};

/// Fitted first-stage model: prediction = intercept + z·coef (logit scale
/// for LogisticLasso).
struct LinearPredictor {
  double intercept = 0.0;
  Vec coef;

  Vec predict(const Mat& Z) const { return (Z * coef).array() + intercept; }
};

LinearPredictor fit_first_stage(const Mat& Z, const Vec& y, const Learner& learner);
LinearPredictor fit_first_stage(const Mat& Z, const Vec& y, const Learner& learner,
                                const Vec& weights);

/// LOO pre-validated predictions. OLS/Ridge use the hat-matrix shortcut
/// unless `exact`; Lasso and RelaxedLasso use n refits when `exact` and the
/// active-set approximation otherwise; LogisticLasso yields LOO logits.
Vec prevalidate(const Dataset& data, const Learner& learner, bool exact);

/// Weighted variant used by the nonparametric bootstrap: each held-out row
/// is removed together with its whole weight.
Vec prevalidate(const Mat& Z, const Vec& y, const Learner& learner, bool exact,
                const Vec& weights);

/// Full-data first-stage fitted values (the data-reuse baseline).
Vec data_reuse_predictions(const Dataset& data, const Learner& learner);

enum class SigmaMode {
  ResidualDf,  // σ̂² = RSS / (n − e − 2)
  Known,       // caller-supplied σ²
};

struct SecondStageOptions {
  SigmaMode sigma_mode = SigmaMode::ResidualDf;
  double known_sigma2 = 1.0;
};

struct SecondStageFit {
  double beta_pv = 0.0;
  Vec beta_ext;  // intercept first
  double se_pv = 0.0;
  double t = 0.0;
  double sigma2_hat = 0.0;
  Vec fitted;

  /// Two-sided p-value against the standard Normal.
  double normal_pvalue() const;
};

/// OLS of y on [y_pv X].
SecondStageFit second_stage(const Vec& y, const Mat& X, const Vec& y_pv,
                            const SecondStageOptions& opt = {});

/// Weighted second stage with frequency weights (bootstrap occurrence
/// counts); σ̂² = Σ wᵢrᵢ² / (Σ wᵢ − e − 2).
SecondStageFit second_stage(const Vec& y, const Mat& X, const Vec& y_pv, const Vec& weights,
                            const SecondStageOptions& opt = {});

/// Logistic regression of binary y on [y_pv X]; t is the Wald z-score.
SecondStageFit second_stage_logistic(const Vec& y, const Mat& X, const Vec& y_pv);

struct AloDiagnostics {
  bool regularized = false;  // 1e-8·I added to a singular active-set Gram
  Index active_size = 0;
};

/// Approximate LOO for the Lasso from a single full fit:
/// (ŷᵢ − Hᵢᵢyᵢ)/(1 − Hᵢᵢ) with H the projection onto [1 Z_S].
Vec alo_lasso(const Mat& Z, const Vec& y, double lambda, AloDiagnostics* diag = nullptr);
Vec alo_lasso(const Mat& Z, const Vec& y, double lambda, const Vec& weights,
              AloDiagnostics* diag = nullptr);

/// Same correction applied to the relaxed-Lasso refit.
Vec alo_relaxed_lasso(const Mat& Z, const Vec& y, double lambda, const Vec& weights,
                      AloDiagnostics* diag = nullptr);

/// Approximate LOO logits for logistic Lasso:
/// ηᵢ − (yᵢ − pᵢ)/(pᵢ(1 − pᵢ)) · Hᵢᵢ/(1 − Hᵢᵢ), H = Z_S(Z_SᵀWZ_S)⁻¹Z_SᵀW.
Vec alo_logistic(const Mat& Z, const Vec& y, double lambda, AloDiagnostics* diag = nullptr);

/// Leverages of the weighted projection onto `design`, falling back to a
/// 1e-8 ridge when the Gram matrix is singular.
Vec projection_leverage(const Mat& design, const Vec& weights, AloDiagnostics* diag);

}  // namespace prevalid
