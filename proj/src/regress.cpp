#include "prevalid/regress.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace prevalid {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::LeverageOne: return "LeverageOne";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::DegenerateResponse: return "DegenerateResponse";
    case ErrorCode::CollinearPV: return "CollinearPV";
    case ErrorCode::ZeroResidual: return "ZeroResidual";
    case ErrorCode::Separation: return "Separation";
    case ErrorCode::SingularActiveSet: return "SingularActiveSet";
    case ErrorCode::DegenerateProbability: return "DegenerateProbability";
    case ErrorCode::NotPD: return "NotPD";
    case ErrorCode::DegenerateG: return "DegenerateG";
    case ErrorCode::TooManyFailures: return "TooManyFailures";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

namespace {

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

void check_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) throw Error(ErrorCode::InvalidArgument, std::string(what) + " has non-finite entries");
}

void check_weights(const Vec& w, Index n) {
  require(w.size() == n, "weights length does not match rows");
  require((w.array() >= 0.0).all() && w.allFinite(), "weights must be finite and nonnegative");
  require(w.sum() > 0.0, "weights sum to zero");
}

Eigen::LLT<Mat> factor_gram(const Mat& gram, ErrorCode code, const char* what) {
  Eigen::LLT<Mat> llt(gram);
  if (llt.info() != Eigen::Success || !(llt.rcond() >= kSingularRcond)) {
    throw Error(code, std::string(what) + ": Gram matrix is singular or ill-conditioned");
  }
  return llt;
}

// Columns centered and scaled to unit variance under normalized weights.
struct Standardized {
  Mat xs;
  Mat xw;  // xs with rows scaled by normalized weight
  Vec mean;
  Vec sd;
  Vec wn;
  std::vector<char> usable;
};

Standardized standardize(const Mat& Z, const Vec& w) {
  Standardized s;
  const Index n = Z.rows(), p = Z.cols();
  s.wn = w / w.sum();
  s.mean = Z.transpose() * s.wn;
  s.xs = Z.rowwise() - s.mean.transpose();
  s.sd.resize(p);
  s.usable.assign(p, 0);
  for (Index j = 0; j < p; ++j) {
    const double var = s.wn.dot(s.xs.col(j).cwiseAbs2());
    const double sd = std::sqrt(std::max(var, 0.0));
    const double scale = std::max(1.0, std::abs(s.mean(j)));
    if (sd > 1e-12 * scale) {
      s.sd(j) = sd;
      s.xs.col(j) /= sd;
      s.usable[j] = 1;
    } else {
      s.sd(j) = 1.0;
      s.xs.col(j).setZero();
    }
  }
  s.xw = s.xs.array().colwise() * s.wn.array();
  (void)n;
  return s;
}

LassoFit finish_fit(const Standardized& s, const Vec& beta_std, double intercept_std_space,
                    double lambda, int sweeps) {
  LassoFit fit;
  const Index p = beta_std.size();
  fit.coef.resize(p);
  for (Index j = 0; j < p; ++j) fit.coef(j) = s.usable[j] ? beta_std(j) / s.sd(j) : 0.0;
  fit.intercept = intercept_std_space - fit.coef.dot(s.mean);
  for (Index j = 0; j < p; ++j)
    if (fit.coef(j) != 0.0) fit.active_set.push_back(j);
  fit.lambda = lambda;
  fit.sweeps = sweeps;
  return fit;
}

}  // namespace

Mat with_intercept(const Mat& Z) {
  Mat out(Z.rows(), Z.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(Z.cols()) = Z;
  return out;
}

LinearFit fit_least_squares(const Mat& design, const Vec& response) {
  return fit_least_squares(design, response, Vec::Ones(design.rows()));
}

LinearFit fit_least_squares(const Mat& design, const Vec& response, const Vec& weights) {
  const Index n = design.rows(), k = design.cols();
  require(response.size() == n, "response length does not match design rows");
  require(k >= 1, "design has no columns");
  check_weights(weights, n);
  check_finite(design, "design");
  check_finite(response, "response");
  const Index effective = (weights.array() > 0.0).count();
  if (effective < k) {
    throw Error(ErrorCode::SingularDesign, "fewer weighted rows than design columns");
  }

  const Mat gram = design.transpose() * weights.asDiagonal() * design;
  factor_gram(gram, ErrorCode::SingularDesign, "least squares");

  const Vec root_w = weights.cwiseSqrt();
  const Mat scaled = root_w.asDiagonal() * design;
  const Vec scaled_y = root_w.cwiseProduct(response);

  LinearFit fit;
  fit.coef = scaled.colPivHouseholderQr().solve(scaled_y);
  fit.fitted = design * fit.coef;
  fit.residuals = response - fit.fitted;
  fit.dof = effective - k;
  return fit;
}

Mat hat_matrix(const Mat& Z, double lambda) {
  require(lambda >= 0.0, "lambda must be nonnegative");
  return hat_matrix(Z, Vec::Constant(Z.cols(), lambda));
}

Mat hat_matrix(const Mat& Z, const Vec& penalty, const Vec* weights) {
  require(penalty.size() == Z.cols(), "penalty length must equal columns");
  check_finite(Z, "Z");
  Mat gram;
  if (weights) {
    check_weights(*weights, Z.rows());
    gram = Z.transpose() * weights->asDiagonal() * Z;
  } else {
    gram = Z.transpose() * Z;
  }
  gram.diagonal() += penalty;
  const auto llt = factor_gram(gram, ErrorCode::SingularDesign, "hat matrix");
  // H = Mᵀ M with M = L⁻¹ Zᵀ keeps the unweighted result exactly symmetric.
  const Mat m = llt.matrixL().solve(Z.transpose());
  Mat h = m.transpose() * m;
  if (weights) h = h * weights->asDiagonal();
  return h;
}

Vec loo_from_leverage(const Vec& fitted, const Vec& leverage, const Vec& y) {
  const Index n = y.size();
  require(fitted.size() == n && leverage.size() == n, "length mismatch in LOO shortcut");
  Vec out(n);
  for (Index i = 0; i < n; ++i) {
    const double h = leverage(i);
    if (!(h < 1.0 - kLeverageTol)) {
      throw Error(ErrorCode::LeverageOne,
                  "row " + std::to_string(i) + " has leverage " + std::to_string(h));
    }
    out(i) = (fitted(i) - h * y(i)) / (1.0 - h);
  }
  return out;
}

Vec loo_predictions(const Mat& H, const Vec& y) {
  require(H.rows() == H.cols() && H.rows() == y.size(), "H must be n×n with n = len(y)");
  return loo_from_leverage(H * y, H.diagonal(), y);
}

double lasso_lambda_max(const Mat& Z, const Vec& y) {
  return lasso_lambda_max(Z, y, Vec::Ones(Z.rows()));
}

double lasso_lambda_max(const Mat& Z, const Vec& y, const Vec& weights) {
  check_weights(weights, Z.rows());
  const Standardized s = standardize(Z, weights);
  const double ybar = s.wn.dot(y);
  const Vec r = y.array() - ybar;
  return (s.xw.transpose() * r).cwiseAbs().maxCoeff();
}

LassoFit lasso_fit(const Mat& Z, const Vec& y, double lambda, const LassoOptions& opt) {
  return lasso_fit(Z, y, lambda, Vec::Ones(Z.rows()), opt, nullptr);
}

LassoFit lasso_fit(const Mat& Z, const Vec& y, double lambda, const Vec& weights,
                   const LassoOptions& opt, const LassoFit* warm) {
  const Index n = Z.rows(), p = Z.cols();
  require(y.size() == n, "response length does not match Z rows");
  require(lambda > 0.0, "lasso lambda must be positive");
  check_weights(weights, n);
  check_finite(Z, "Z");
  check_finite(y, "y");

  const Standardized s = standardize(Z, weights);
  const double ybar = s.wn.dot(y);
  Vec beta = Vec::Zero(p);
  if (warm && warm->coef.size() == p) {
    for (Index j = 0; j < p; ++j) beta(j) = s.usable[j] ? warm->coef(j) * s.sd(j) : 0.0;
  }
  Vec r = (y.array() - ybar).matrix() - s.xs * beta;
  Vec denom(p);
  for (Index j = 0; j < p; ++j) denom(j) = s.usable[j] ? s.xw.col(j).dot(s.xs.col(j)) : 1.0;

  auto update = [&](Index j) {
    if (!s.usable[j]) return 0.0;
    const double old = beta(j);
    const double g = s.xw.col(j).dot(r) + denom(j) * old;
    const double next = soft_threshold(g, lambda) / denom(j);
    if (next != old) {
      r.noalias() -= (next - old) * s.xs.col(j);
      beta(j) = next;
    }
    return std::abs(next - old);
  };

  int sweeps = 0;
  std::vector<Index> active;
  for (;;) {
    double delta = 0.0;
    for (Index j = 0; j < p; ++j) delta = std::max(delta, update(j));
    ++sweeps;
    if (delta < opt.tol) break;
    active.clear();
    for (Index j = 0; j < p; ++j)
      if (beta(j) != 0.0) active.push_back(j);
    for (;;) {
      if (sweeps >= opt.max_iter) {
        throw Error(ErrorCode::NoConvergence,
                    "lasso did not converge in " + std::to_string(opt.max_iter) + " sweeps");
      }
      double inner = 0.0;
      for (Index j : active) inner = std::max(inner, update(j));
      ++sweeps;
      if (inner < opt.tol) break;
    }
    if (sweeps >= opt.max_iter) {
      throw Error(ErrorCode::NoConvergence,
                  "lasso did not converge in " + std::to_string(opt.max_iter) + " sweeps");
    }
  }
  return finish_fit(s, beta, ybar, lambda, sweeps);
}

namespace {

double sigmoid(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

// log(1 + e^η) without overflow
double log1pexp(double eta) {
  return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

void check_binary(const Vec& y, const Vec& w) {
  double lo = 1.0, hi = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    require(y(i) == 0.0 || y(i) == 1.0, "logistic response must be 0/1");
    if (w(i) > 0) {
      lo = std::min(lo, y(i));
      hi = std::max(hi, y(i));
    }
  }
  if (lo == hi) throw Error(ErrorCode::DegenerateResponse, "binary response is constant");
}

}  // namespace

double logistic_lasso_objective(const Mat& Z, const Vec& y, double lambda, double intercept,
                                const Vec& coef) {
  const Standardized s = standardize(Z, Vec::Ones(Z.rows()));
  const Vec eta = (Z * coef).array() + intercept;
  double loss = 0.0;
  for (Index i = 0; i < y.size(); ++i) loss += log1pexp(eta(i)) - y(i) * eta(i);
  loss /= static_cast<double>(y.size());
  double pen = 0.0;
  for (Index j = 0; j < coef.size(); ++j) pen += s.sd(j) * std::abs(coef(j));
  return loss + lambda * pen;
}

LassoFit logistic_lasso_fit(const Mat& Z, const Vec& y, double lambda, const LassoOptions& opt) {
  return logistic_lasso_fit(Z, y, lambda, Vec::Ones(Z.rows()), opt, nullptr);
}

LassoFit logistic_lasso_fit(const Mat& Z, const Vec& y, double lambda, const Vec& weights,
                            const LassoOptions& opt, const LassoFit* warm) {
  const Index n = Z.rows(), p = Z.cols();
  require(y.size() == n, "response length does not match Z rows");
  require(lambda > 0.0, "lasso lambda must be positive");
  check_weights(weights, n);
  check_finite(Z, "Z");
  check_binary(y, weights);

  const Standardized s = standardize(Z, weights);
  const double ybar = s.wn.dot(y);
  double b0 = std::log(ybar / (1.0 - ybar));
  Vec beta = Vec::Zero(p);
  if (warm && warm->coef.size() == p) {
    for (Index j = 0; j < p; ++j) beta(j) = s.usable[j] ? warm->coef(j) * s.sd(j) : 0.0;
    b0 = warm->intercept + warm->coef.dot(s.mean);
  }

  auto objective = [&](const Vec& b, const Vec& eta) {
    double loss = 0.0;
    for (Index i = 0; i < n; ++i)
      if (s.wn(i) > 0) loss += s.wn(i) * (log1pexp(eta(i)) - y(i) * eta(i));
    return loss + lambda * b.cwiseAbs().sum();
  };

  Vec eta = (s.xs * beta).array() + b0;
  double obj = objective(beta, eta);
  int sweeps = 0;
  constexpr int kMaxOuter = 500;
  constexpr double kMinCurvature = 1e-5;

  for (int outer = 0;; ++outer) {
    if (outer >= kMaxOuter || sweeps >= opt.max_iter) {
      throw Error(ErrorCode::NoConvergence, "logistic lasso did not converge");
    }
    Vec wq(n), rr(n);
    for (Index i = 0; i < n; ++i) {
      const double pi = sigmoid(eta(i));
      const double v = std::max(pi * (1.0 - pi), kMinCurvature);
      wq(i) = s.wn(i) * v;
      rr(i) = (y(i) - pi) / v;  // working residual z − η
    }
    Vec d(p);
    for (Index j = 0; j < p; ++j) d(j) = s.usable[j] ? wq.dot(s.xs.col(j).cwiseAbs2()) : 1.0;
    const double wsum = wq.sum();

    double c0 = b0;
    Vec b = beta;
    for (int inner = 0;; ++inner) {
      double delta = 0.0;
      const double shift = wq.dot(rr) / wsum;
      c0 += shift;
      rr.array() -= shift;
      delta = std::abs(shift);
      for (Index j = 0; j < p; ++j) {
        if (!s.usable[j] || d(j) <= 0) continue;
        const double old = b(j);
        const double g = rr.dot(wq.cwiseProduct(s.xs.col(j))) + d(j) * old;
        const double next = soft_threshold(g, lambda) / d(j);
        if (next != old) {
          rr.noalias() -= (next - old) * s.xs.col(j);
          b(j) = next;
          delta = std::max(delta, std::abs(next - old));
        }
      }
      ++sweeps;
      if (delta < 0.1 * opt.tol || inner > 10000) break;
    }

    // Backtracking on the true objective keeps every accepted step a descent.
    double step = 1.0;
    double c_try = c0;
    Vec b_try = b;
    Vec eta_try = (s.xs * b_try).array() + c_try;
    double obj_try = objective(b_try, eta_try);
    while (obj_try > obj + 1e-14 * std::abs(obj) && step > 1e-12) {
      step *= 0.5;
      c_try = b0 + step * (c0 - b0);
      b_try = beta + step * (b - beta);
      eta_try = (s.xs * b_try).array() + c_try;
      obj_try = objective(b_try, eta_try);
    }
    const double change = std::max(std::abs(c_try - b0), (b_try - beta).cwiseAbs().maxCoeff());
    const bool stalled = obj_try > obj + 1e-14 * std::abs(obj);
    if (!stalled) {
      b0 = c_try;
      beta = b_try;
      eta = eta_try;
      obj = obj_try;
    }
    if (change < opt.tol || stalled) break;
    if (!std::isfinite(b0)) throw Error(ErrorCode::NoConvergence, "logistic lasso diverged");
  }
  return finish_fit(s, beta, b0, lambda, sweeps);
}

LinearFit relaxed_lasso_fit(const Mat& Z, const Vec& y, double lambda, const LassoOptions& opt) {
  return relaxed_lasso_fit(Z, y, lambda, Vec::Ones(Z.rows()), opt);
}

LinearFit relaxed_lasso_fit(const Mat& Z, const Vec& y, double lambda, const Vec& weights,
                            const LassoOptions& opt) {
  const LassoFit sel = lasso_fit(Z, y, lambda, weights, opt);
  const Index n = Z.rows(), k = static_cast<Index>(sel.active_set.size());
  Mat design(n, k + 1);
  design.col(0).setOnes();
  for (Index c = 0; c < k; ++c) design.col(c + 1) = Z.col(sel.active_set[c]);
  LinearFit refit = fit_least_squares(design, y, weights);
  Vec full = Vec::Zero(Z.cols() + 1);
  full(0) = refit.coef(0);
  for (Index c = 0; c < k; ++c) full(sel.active_set[c] + 1) = refit.coef(c + 1);
  refit.coef = std::move(full);
  return refit;
}

Vec ridge_coef(const Mat& Z, const Vec& y, double lambda) {
  return ridge_coef(Z, y, lambda, Vec::Ones(Z.rows()));
}

Vec ridge_coef(const Mat& Z, const Vec& y, double lambda, const Vec& weights) {
  require(lambda >= 0.0, "ridge lambda must be nonnegative");
  require(y.size() == Z.rows(), "response length does not match Z rows");
  check_weights(weights, Z.rows());
  const Mat design = with_intercept(Z);
  Mat gram = design.transpose() * weights.asDiagonal() * design;
  gram.diagonal().tail(Z.cols()).array() += lambda;
  const auto llt = factor_gram(gram, ErrorCode::SingularDesign, "ridge");
  return llt.solve(design.transpose() * weights.cwiseProduct(y));
}

std::vector<double> default_lambda_grid(const Mat& Z, const Vec& y, int count, double ratio) {
  require(count >= 1, "grid needs at least one value");
  const double top = lasso_lambda_max(Z, y);
  require(top > 0.0, "response is constant; no lambda grid");
  std::vector<double> grid(count);
  for (int k = 0; k < count; ++k) {
    const double frac = count == 1 ? 0.0 : static_cast<double>(k) / (count - 1);
    grid[k] = top * std::pow(ratio, frac);
  }
  return grid;
}

namespace {

Mat take_rows(const Mat& m, const std::vector<Index>& rows) {
  Mat out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(r) = m.row(rows[r]);
  return out;
}

Vec take_rows(const Vec& v, const std::vector<Index>& rows) {
  Vec out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out(r) = v(rows[r]);
  return out;
}

}  // namespace

std::vector<double> cv_mse_curve(const Mat& Z, const Vec& y, const std::vector<double>& grid,
                                 int folds, CvLearner learner) {
  const Index n = Z.rows();
  require(!grid.empty(), "lambda grid is empty");
  require(folds >= 2 && folds <= n, "folds must be in [2, n]");

  // Visit λ from largest to smallest so each Lasso fit warm-starts the next.
  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return grid[a] > grid[b]; });

  std::vector<double> sse(grid.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) (i % folds == f ? test : train).push_back(i);
    const Mat zt = take_rows(Z, train), zv = take_rows(Z, test);
    const Vec yt = take_rows(y, train), yv = take_rows(y, test);
    const Vec ones = Vec::Ones(zt.rows());

    // As in glmnet, the path stops once a training fit saturates (R² ≥ 0.999,
    // a support as large as the centered rank, or no convergence within the
    // path's sweep budget); smaller λ are then unavailable for every fold.
    const double tss = (yt.array() - yt.mean()).square().sum();
    bool saturated = false;
    std::optional<LassoFit> warm;
    for (std::size_t k : order) {
      const double lambda = grid[k];
      if (saturated) {
        sse[k] = std::numeric_limits<double>::infinity();
        continue;
      }
      Vec pred;
      try {
        if (learner == CvLearner::Ridge) {
          const Vec c = ridge_coef(zt, yt, lambda);
          pred = (zv * c.tail(c.size() - 1)).array() + c(0);
        } else {
          LassoOptions path_opt;
          path_opt.max_iter = 10000;
          std::optional<LassoFit> attempt;
          try {
            attempt = lasso_fit(zt, yt, lambda, ones, path_opt, warm ? &*warm : nullptr);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::NoConvergence) throw;
          }
          if (!attempt) {
            saturated = true;
            sse[k] = std::numeric_limits<double>::infinity();
            continue;
          }
          LassoFit fit = std::move(*attempt);
          const double rss = (yt - (zt * fit.coef).array().matrix() - Vec::Constant(yt.size(), fit.intercept)).squaredNorm();
          if (rss <= 1e-3 * tss || static_cast<Index>(fit.active_set.size()) >= zt.rows() - 1) saturated = true;
          if (learner == CvLearner::Lasso) {
            pred = (zv * fit.coef).array() + fit.intercept;
          } else {
            const Index k_act = static_cast<Index>(fit.active_set.size());
            Mat design(zt.rows(), k_act + 1), design_v(zv.rows(), k_act + 1);
            design.col(0).setOnes();
            design_v.col(0).setOnes();
            for (Index c = 0; c < k_act; ++c) {
              design.col(c + 1) = zt.col(fit.active_set[c]);
              design_v.col(c + 1) = zv.col(fit.active_set[c]);
            }
            pred = design_v * fit_least_squares(design, yt).coef;
          }
          warm = std::move(fit);
        }
        sse[k] += (yv - pred).squaredNorm();
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingularDesign) throw;
        sse[k] = std::numeric_limits<double>::infinity();
      }
    }
  }
  for (double& v : sse) v /= static_cast<double>(n);
  return sse;
}

double select_lambda(const std::vector<double>& grid, const std::vector<double>& mse,
                     double margin) {
  require(!grid.empty() && grid.size() == mse.size(), "grid and mse must be nonempty and aligned");
  require(margin >= 0.0, "margin must be nonnegative");
  const double best = *std::min_element(mse.begin(), mse.end());
  require(std::isfinite(best), "no grid value produced a finite CV error");
  const double bound = (1.0 + margin) * best;
  double chosen = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (mse[k] <= bound) chosen = std::min(chosen, grid[k]);
  return chosen;
}

double cv_lambda_select(const Mat& Z, const Vec& y, const std::vector<double>& grid, int folds,
                        double margin, CvLearner learner) {
  return select_lambda(grid, cv_mse_curve(Z, y, grid, folds, learner), margin);
}

}  // namespace prevalid
