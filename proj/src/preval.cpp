#include "prevalid/preval.hpp"

#include <algorithm>
#include <cmath>

namespace prevalid {

void Dataset::validate() const {
  require(X.rows() == y.size() && Z.rows() == y.size(), "y, X and Z must have the same rows");
  require(X.cols() >= 1, "X needs at least the intercept column");
  require((X.col(0).array() == 1.0).all(), "first column of X must be all ones");
  require(y.allFinite() && X.allFinite() && Z.allFinite(), "dataset has non-finite entries");
}

const char* to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::OLS: return "ols";
    case LearnerKind::Ridge: return "ridge";
    case LearnerKind::Lasso: return "lasso";
    case LearnerKind::LogisticLasso: return "logistic_lasso";
    case LearnerKind::RelaxedLasso: return "relaxed_lasso";
  }
  return "unknown";
}

LearnerKind learner_from_string(const std::string& name) {
  if (name == "ols") return LearnerKind::OLS;
  if (name == "ridge") return LearnerKind::Ridge;
  if (name == "lasso") return LearnerKind::Lasso;
  if (name == "logistic_lasso" || name == "logistic") return LearnerKind::LogisticLasso;
  if (name == "relaxed_lasso" || name == "relaxed") return LearnerKind::RelaxedLasso;
  throw Error(ErrorCode::InvalidArgument, "unknown learner '" + name + "'");
}

void Learner::validate() const {
  require(std::isfinite(lambda) && lambda >= 0.0, "lambda must be finite and nonnegative");
  if (is_penalized_l1()) require(lambda > 0.0, "L1 learners need lambda > 0");
}

LinearPredictor fit_first_stage(const Mat& Z, const Vec& y, const Learner& learner) {
  return fit_first_stage(Z, y, learner, Vec::Ones(Z.rows()));
}

LinearPredictor fit_first_stage(const Mat& Z, const Vec& y, const Learner& learner,
                                const Vec& weights) {
  learner.validate();
  LinearPredictor out;
  switch (learner.kind) {
    case LearnerKind::OLS:
    case LearnerKind::Ridge: {
      const double lambda = learner.kind == LearnerKind::OLS ? 0.0 : learner.lambda;
      const Vec c = ridge_coef(Z, y, lambda, weights);
      out.intercept = c(0);
      out.coef = c.tail(Z.cols());
      break;
    }
    case LearnerKind::Lasso: {
      const LassoFit fit = lasso_fit(Z, y, learner.lambda, weights);
      out.intercept = fit.intercept;
      out.coef = fit.coef;
      break;
    }
    case LearnerKind::LogisticLasso: {
      const LassoFit fit = logistic_lasso_fit(Z, y, learner.lambda, weights);
      out.intercept = fit.intercept;
      out.coef = fit.coef;
      break;
    }
    case LearnerKind::RelaxedLasso: {
      const LinearFit fit = relaxed_lasso_fit(Z, y, learner.lambda, weights);
      out.intercept = fit.coef(0);
      out.coef = fit.coef.tail(Z.cols());
      break;
    }
  }
  return out;
}

namespace {

// n explicit refits, each dropping one row by zeroing its weight.
Vec exact_loo(const Mat& Z, const Vec& y, const Learner& learner, const Vec& weights) {
  const Index n = Z.rows();
  Vec out = Vec::Zero(n);
  Vec w = weights;
  std::optional<LassoFit> warm;
  if (learner.kind == LearnerKind::Lasso) warm = lasso_fit(Z, y, learner.lambda, weights);
  if (learner.kind == LearnerKind::LogisticLasso)
    warm = logistic_lasso_fit(Z, y, learner.lambda, weights);

  for (Index i = 0; i < n; ++i) {
    if (weights(i) == 0.0) continue;
    w(i) = 0.0;
    if (learner.kind == LearnerKind::Lasso) {
      const LassoFit fit = lasso_fit(Z, y, learner.lambda, w, {}, &*warm);
      out(i) = fit.intercept + Z.row(i).dot(fit.coef);
    } else if (learner.kind == LearnerKind::LogisticLasso) {
      const LassoFit fit = logistic_lasso_fit(Z, y, learner.lambda, w, {}, &*warm);
      out(i) = fit.intercept + Z.row(i).dot(fit.coef);
    } else {
      out(i) = fit_first_stage(Z, y, learner, w).predict(Z.row(i))(0);
    }
    w(i) = weights(i);
  }
  return out;
}

}  // namespace

Vec prevalidate(const Dataset& data, const Learner& learner, bool exact) {
  data.validate();
  return prevalidate(data.Z, data.y, learner, exact, Vec::Ones(data.n()));
}

Vec prevalidate(const Mat& Z, const Vec& y, const Learner& learner, bool exact,
                const Vec& weights) {
  learner.validate();
  require(Z.rows() == y.size() && weights.size() == y.size(), "length mismatch in prevalidate");
  if (exact) return exact_loo(Z, y, learner, weights);

  switch (learner.kind) {
    case LearnerKind::OLS:
    case LearnerKind::Ridge: {
      Vec penalty = Vec::Constant(Z.cols() + 1, learner.kind == LearnerKind::OLS ? 0.0 : learner.lambda);
      penalty(0) = 0.0;
      const Mat H = hat_matrix(with_intercept(Z), penalty, &weights);
      return loo_from_leverage(H * y, H.diagonal(), y);
    }
    case LearnerKind::Lasso:
      return alo_lasso(Z, y, learner.lambda, weights);
    case LearnerKind::RelaxedLasso:
      return alo_relaxed_lasso(Z, y, learner.lambda, weights);
    case LearnerKind::LogisticLasso:
      require((weights.array() == 1.0).all(), "logistic ALO supports unit weights only");
      return alo_logistic(Z, y, learner.lambda);
  }
  return {};
}

Vec data_reuse_predictions(const Dataset& data, const Learner& learner) {
  data.validate();
  return fit_first_stage(data.Z, data.y, learner).predict(data.Z);
}

double SecondStageFit::normal_pvalue() const { return std::erfc(std::abs(t) / std::sqrt(2.0)); }

SecondStageFit second_stage(const Vec& y, const Mat& X, const Vec& y_pv,
                            const SecondStageOptions& opt) {
  return second_stage(y, X, y_pv, Vec::Ones(y.size()), opt);
}

SecondStageFit second_stage(const Vec& y, const Mat& X, const Vec& y_pv, const Vec& weights,
                            const SecondStageOptions& opt) {
  const Index n = y.size();
  require(X.rows() == n && y_pv.size() == n && weights.size() == n,
          "second stage inputs must share rows");

  // Part of y_pv not explained by X; its weighted squared norm is the
  // reciprocal of the top-left entry of ([y_pv X]ᵀW[y_pv X])⁻¹.
  const LinearFit pv_on_x = fit_least_squares(X, y_pv, weights);
  const double pv_norm = weights.dot(y_pv.cwiseAbs2());
  const double pv_resid = weights.dot(pv_on_x.residuals.cwiseAbs2());
  if (!(pv_norm > 0.0) || pv_resid <= 1e-20 * pv_norm) {
    throw Error(ErrorCode::CollinearPV, "pre-validated predictor lies in the column space of X");
  }

  Mat design(n, X.cols() + 1);
  design.col(0) = y_pv;
  design.rightCols(X.cols()) = X;
  const LinearFit fit = fit_least_squares(design, y, weights);
  const double rss = weights.dot(fit.residuals.cwiseAbs2());
  const double scale = weights.dot(y.cwiseAbs2());
  if (!(rss > 1e-24 * std::max(scale, 1e-300))) {
    throw Error(ErrorCode::ZeroResidual, "second-stage residuals are identically zero");
  }

  SecondStageFit out;
  out.beta_pv = fit.coef(0);
  out.beta_ext = fit.coef.tail(X.cols());
  const double dof = weights.sum() - static_cast<double>(design.cols());
  require(dof > 0.0, "second stage has no residual degrees of freedom");
  out.sigma2_hat = opt.sigma_mode == SigmaMode::Known ? opt.known_sigma2 : rss / dof;
  out.se_pv = std::sqrt(out.sigma2_hat / pv_resid);
  out.t = out.se_pv > 0.0 ? out.beta_pv / out.se_pv : 0.0;
  out.fitted = fit.fitted;
  return out;
}

namespace {

double sigmoid(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double bernoulli_loglik(const Vec& y, const Vec& eta) {
  double ll = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double a = eta(i);
    const double log1pexp = a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
    ll += y(i) * a - log1pexp;
  }
  return ll;
}

}  // namespace

SecondStageFit second_stage_logistic(const Vec& y, const Mat& X, const Vec& y_pv) {
  const Index n = y.size();
  require(X.rows() == n && y_pv.size() == n, "second stage inputs must share rows");
  double pos = 0.0;
  for (Index i = 0; i < n; ++i) {
    require(y(i) == 0.0 || y(i) == 1.0, "logistic second stage needs a 0/1 response");
    pos += y(i);
  }
  if (pos == 0.0 || pos == static_cast<double>(n))
    throw Error(ErrorCode::DegenerateResponse, "binary response is constant");

  const LinearFit pv_on_x = fit_least_squares(X, y_pv);
  if (!(y_pv.squaredNorm() > 0.0) || pv_on_x.residuals.squaredNorm() <= 1e-20 * y_pv.squaredNorm())
    throw Error(ErrorCode::CollinearPV, "pre-validated predictor lies in the column space of X");

  Mat design(n, X.cols() + 1);
  design.col(0) = y_pv;
  design.rightCols(X.cols()) = X;
  const Index k = design.cols();

  Vec beta = Vec::Zero(k);
  const double ybar = pos / static_cast<double>(n);
  beta(1) = std::log(ybar / (1.0 - ybar));
  Vec eta = design * beta;
  double ll = bernoulli_loglik(y, eta);
  bool converged = false;
  Mat info(k, k);
  for (int iter = 0; iter < 200; ++iter) {
    Vec prob(n), w(n);
    for (Index i = 0; i < n; ++i) {
      prob(i) = sigmoid(eta(i));
      w(i) = prob(i) * (1.0 - prob(i));
    }
    info = design.transpose() * w.asDiagonal() * design;
    Eigen::LDLT<Mat> ldlt(info);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-14))
      throw Error(ErrorCode::Separation, "logistic information matrix is singular (separation)");
    const Vec step = ldlt.solve(design.transpose() * (y - prob));
    double scale = 1.0;
    Vec next = beta + step;
    Vec eta_next = design * next;
    double ll_next = bernoulli_loglik(y, eta_next);
    while (ll_next < ll - 1e-12 && scale > 1e-10) {
      scale *= 0.5;
      next = beta + scale * step;
      eta_next = design * next;
      ll_next = bernoulli_loglik(y, eta_next);
    }
    beta = next;
    eta = eta_next;
    ll = ll_next;
    if (!beta.allFinite() || eta.cwiseAbs().maxCoeff() > 40.0)
      throw Error(ErrorCode::Separation, "logistic likelihood diverges (separation)");
    if ((scale * step).cwiseAbs().maxCoeff() < 1e-10) {
      converged = true;
      break;
    }
  }
  if (!converged) throw Error(ErrorCode::Separation, "logistic fit did not converge");

  Vec w(n);
  for (Index i = 0; i < n; ++i) {
    const double p = sigmoid(eta(i));
    w(i) = p * (1.0 - p);
  }
  info = design.transpose() * w.asDiagonal() * design;
  const Mat cov = info.ldlt().solve(Mat::Identity(k, k));

  SecondStageFit out;
  out.beta_pv = beta(0);
  out.beta_ext = beta.tail(X.cols());
  out.se_pv = std::sqrt(cov(0, 0));
  out.t = out.beta_pv / out.se_pv;
  out.sigma2_hat = 1.0;
  out.fitted = eta;
  return out;
}

Vec projection_leverage(const Mat& design, const Vec& weights, AloDiagnostics* diag) {
  Mat gram = design.transpose() * weights.asDiagonal() * design;
  Eigen::LLT<Mat> llt(gram);
  if (llt.info() != Eigen::Success || !(llt.rcond() >= kSingularRcond)) {
    gram.diagonal().array() += 1e-8;
    llt.compute(gram);
    if (diag) diag->regularized = true;
    if (llt.info() != Eigen::Success)
      throw Error(ErrorCode::SingularActiveSet, "active-set Gram matrix cannot be factored");
  }
  const Mat m = llt.matrixL().solve(design.transpose());
  return weights.cwiseProduct(m.colwise().squaredNorm().transpose());
}

namespace {

Mat active_design(const Mat& Z, const std::vector<Index>& active) {
  Mat design(Z.rows(), static_cast<Index>(active.size()) + 1);
  design.col(0).setOnes();
  for (std::size_t c = 0; c < active.size(); ++c) design.col(c + 1) = Z.col(active[c]);
  return design;
}

void check_active_size(std::size_t active, const Vec& weights) {
  const Index rows = (weights.array() > 0.0).count();
  if (static_cast<Index>(active) + 1 >= rows) {
    throw Error(ErrorCode::SingularActiveSet,
                "active set of size " + std::to_string(active) + " leaves no residual rows");
  }
}

}  // namespace

Vec alo_lasso(const Mat& Z, const Vec& y, double lambda, AloDiagnostics* diag) {
  return alo_lasso(Z, y, lambda, Vec::Ones(Z.rows()), diag);
}

Vec alo_lasso(const Mat& Z, const Vec& y, double lambda, const Vec& weights,
              AloDiagnostics* diag) {
  const LassoFit fit = lasso_fit(Z, y, lambda, weights);
  check_active_size(fit.active_set.size(), weights);
  if (diag) diag->active_size = static_cast<Index>(fit.active_set.size());
  const Vec fitted = (Z * fit.coef).array() + fit.intercept;
  const Vec h = projection_leverage(active_design(Z, fit.active_set), weights, diag);
  return loo_from_leverage(fitted, h, y);
}

Vec alo_relaxed_lasso(const Mat& Z, const Vec& y, double lambda, const Vec& weights,
                      AloDiagnostics* diag) {
  const LassoFit sel = lasso_fit(Z, y, lambda, weights);
  check_active_size(sel.active_set.size(), weights);
  if (diag) diag->active_size = static_cast<Index>(sel.active_set.size());
  const Mat design = active_design(Z, sel.active_set);
  const LinearFit refit = fit_least_squares(design, y, weights);
  const Vec h = projection_leverage(design, weights, diag);
  return loo_from_leverage(refit.fitted, h, y);
}

Vec alo_logistic(const Mat& Z, const Vec& y, double lambda, AloDiagnostics* diag) {
  const Index n = Z.rows();
  const LassoFit fit = logistic_lasso_fit(Z, y, lambda);
  check_active_size(fit.active_set.size(), Vec::Ones(n));
  if (diag) diag->active_size = static_cast<Index>(fit.active_set.size());
  const Vec eta = (Z * fit.coef).array() + fit.intercept;
  Vec prob(n), w(n);
  for (Index i = 0; i < n; ++i) {
    prob(i) = sigmoid(eta(i));
    w(i) = prob(i) * (1.0 - prob(i));
    if (!(w(i) > 1e-12))
      throw Error(ErrorCode::DegenerateProbability,
                  "fitted probability of row " + std::to_string(i) + " is 0 or 1");
  }
  const Vec h = projection_leverage(active_design(Z, fit.active_set), w, diag);
  Vec out(n);
  for (Index i = 0; i < n; ++i) {
    if (!(h(i) < 1.0 - kLeverageTol))
      throw Error(ErrorCode::LeverageOne, "row " + std::to_string(i) + " has leverage one");
    out(i) = eta(i) - (y(i) - prob(i)) / w(i) * h(i) / (1.0 - h(i));
  }
  return out;
}

}  // namespace prevalid
