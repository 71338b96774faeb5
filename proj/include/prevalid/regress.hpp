#pragma once

// Dense regression primitives: weighted least squares, ridge hat matrices,
// the closed-form leave-one-out shortcut, coordinate-descent Lasso (linear
// and logistic), relaxed Lasso, and cross-validated penalty selection.

#include "prevalid/common.hpp"

#include <optional>
#include <vector>

namespace prevalid {

inline constexpr double kSingularRcond = 1e-12;
inline constexpr double kLeverageTol = 1e-10;

struct LinearFit {
  Vec coef;
  Vec fitted;
  Vec residuals;
  Index dof = 0;  // rows minus fitted columns
};

struct LassoFit {
  Vec coef;  // original (unstandardized) scale
  double intercept = 0.0;
  std::vector<Index> active_set;
  double lambda = 0.0;
  int sweeps = 0;
};

struct LassoOptions {
  double tol = 1e-9;  // max coordinate change on the standardized scale
  int max_iter = 100000;
};

/// Ordinary or weighted least squares. Rows with zero weight do not
/// contribute. Throws SingularDesign when rcond(XᵀWX) < 1e-12.
LinearFit fit_least_squares(const Mat& design, const Vec& response);
LinearFit fit_least_squares(const Mat& design, const Vec& response, const Vec& weights);

/// Z (ZᵀZ + λI)⁻¹ Zᵀ.
Mat hat_matrix(const Mat& Z, double lambda);

/// General penalized smoother Z (ZᵀWZ + diag(penalty))⁻¹ ZᵀW. With W = I the
/// result is symmetric; `penalty` may hold zeros (unpenalized columns).
Mat hat_matrix(const Mat& Z, const Vec& penalty, const Vec* weights = nullptr);

/// ((H y)_i − H_ii y_i) / (1 − H_ii). Throws LeverageOne if any
/// H_ii ≥ 1 − 1e-10.
Vec loo_predictions(const Mat& H, const Vec& y);

/// Diagonal-only variant for when H is never formed explicitly.
Vec loo_from_leverage(const Vec& fitted, const Vec& leverage, const Vec& y);

/// Largest λ for which some slope enters, on the standardized scale.
double lasso_lambda_max(const Mat& Z, const Vec& y);
double lasso_lambda_max(const Mat& Z, const Vec& y, const Vec& weights);

/// Minimizes ½ Σ w̃ᵢ (yᵢ − β₀ − zᵢᵀβ)² + λ Σ sd_j |β_j| with w̃ = w / Σw,
/// i.e. the usual ½n⁻¹ RSS + λ‖·‖₁ on internally standardized columns.
/// Coefficients are reported on the original scale.
LassoFit lasso_fit(const Mat& Z, const Vec& y, double lambda,
                   const LassoOptions& opt = {});
LassoFit lasso_fit(const Mat& Z, const Vec& y, double lambda, const Vec& weights,
                   const LassoOptions& opt = {}, const LassoFit* warm = nullptr);

/// L1-penalized logistic regression, minimizing
/// −Σ w̃ᵢ [yᵢηᵢ − log(1 + e^{ηᵢ})] + λ Σ sd_j |β_j| by proximal Newton.
LassoFit logistic_lasso_fit(const Mat& Z, const Vec& y, double lambda,
                            const LassoOptions& opt = {});
LassoFit logistic_lasso_fit(const Mat& Z, const Vec& y, double lambda, const Vec& weights,
                            const LassoOptions& opt = {}, const LassoFit* warm = nullptr);

/// Objective minimized by logistic_lasso_fit (unit weights).
double logistic_lasso_objective(const Mat& Z, const Vec& y, double lambda,
                                double intercept, const Vec& coef);

/// Lasso selection followed by an unpenalized least-squares refit on the
/// active set. coef has length p+1: intercept first, zeros off the active set.
LinearFit relaxed_lasso_fit(const Mat& Z, const Vec& y, double lambda,
                            const LassoOptions& opt = {});
LinearFit relaxed_lasso_fit(const Mat& Z, const Vec& y, double lambda, const Vec& weights,
                            const LassoOptions& opt = {});

/// Ridge with an unpenalized intercept; coef = (intercept, slopes).
Vec ridge_coef(const Mat& Z, const Vec& y, double lambda);
Vec ridge_coef(const Mat& Z, const Vec& y, double lambda, const Vec& weights);

/// [1 Z]
Mat with_intercept(const Mat& Z);

enum class CvLearner { Lasso, RelaxedLasso, Ridge };

/// 100 log-spaced values from λ_max down to 1e-3·λ_max (descending).
std::vector<double> default_lambda_grid(const Mat& Z, const Vec& y, int count = 100,
                                        double ratio = 1e-3);

/// Mean held-out squared error per grid value. Fold of row i is i mod folds.
/// L1 paths stop once a training fit saturates (R² ≥ 0.999, support ≥
/// n_train − 1, or 10⁴ sweeps without convergence); the smaller λ get
/// infinite error.
std::vector<double> cv_mse_curve(const Mat& Z, const Vec& y, const std::vector<double>& grid,
                                 int folds, CvLearner learner = CvLearner::Lasso);

/// Smallest λ in grid with mse(λ) ≤ (1 + margin)·min mse.
double select_lambda(const std::vector<double>& grid, const std::vector<double>& mse,
                     double margin);

double cv_lambda_select(const Mat& Z, const Vec& y, const std::vector<double>& grid,
                        int folds, double margin = 0.10,
                        CvLearner learner = CvLearner::Lasso);

}  // namespace prevalid
