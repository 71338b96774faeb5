#include "prevalid/nulldist.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>

namespace prevalid {

namespace {

constexpr double kPsdTol = 1e-10;
constexpr Index kDrawBlock = 1024;

}  // namespace

void LimitParams::validate() const {
  const Index ne = e(), np = p();
  require(ne >= 1 && np >= 1, "limit params need e ≥ 1 and p ≥ 1");
  require(alpha0.size() == ne, "alpha0 length must equal e");
  require(Sigma.rows() == ne && Sigma.cols() == ne, "Sigma must be e×e");
  require(Theta.size() == ne, "Theta length must equal e");
  require(sigma2_x > 0.0 && sigma2_z > 0.0, "variances must be positive");
  require(kappa >= 0.0, "kappa must be nonnegative");
  require((Sigma - Sigma.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + Sigma.cwiseAbs().maxCoeff()),
          "Sigma must be symmetric");
  Eigen::LLT<Mat> llt(Sigma);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPD, "Sigma is not positive definite");
}

LimitMatrices build_limit_matrices(const LimitParams& params) {
  params.validate();
  const Index p = params.p(), e = params.e();
  LimitMatrices m;
  m.B.resize(p + 1, p + 1);
  m.B(0, 0) = 1.0 + (params.penalize_intercept ? params.kappa : 0.0);
  const RowVec theta_gamma = params.Theta * params.Gamma;
  m.B.block(0, 1, 1, p) = theta_gamma;
  m.B.block(1, 0, p, 1) = theta_gamma.transpose();
  m.B.block(1, 1, p, p) = params.Gamma.transpose() * params.Sigma * params.Gamma;
  m.B.block(1, 1, p, p).diagonal().array() += params.sigma2_z + params.kappa;
  m.B = (0.5 * (m.B + m.B.transpose())).eval();

  m.D.resize(p + 1, e);
  m.D.row(0) = params.Theta;
  m.D.bottomRows(p) = params.Gamma.transpose() * params.Sigma;

  m.M = m.B;
  if (!params.uncorrected_ridge_form) {
    m.M.diagonal().tail(p).array() -= params.kappa;
    if (params.penalize_intercept) m.M(0, 0) -= params.kappa;
  }

  m.joint_cov.resize(p + 1 + e, p + 1 + e);
  m.joint_cov.topLeftCorner(p + 1, p + 1) = m.M;
  m.joint_cov.topRightCorner(p + 1, e) = m.D;
  m.joint_cov.bottomLeftCorner(e, p + 1) = m.D.transpose();
  m.joint_cov.bottomRightCorner(e, e) = params.Sigma;
  m.joint_cov *= params.sigma2_x;
  m.joint_cov = 0.5 * (m.joint_cov + m.joint_cov.transpose());

  JointNormalSampler check(m.joint_cov);  // throws NotPD
  (void)check;
  return m;
}

JointNormalSampler::JointNormalSampler(const Mat& cov) {
  // Eigen-decomposition rather than LDLT: the joint covariance is singular
  // whenever the intercept sits in both blocks, and a symmetric eigensolver
  // handles exact rank deficiency without pivot blow-up.
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  if (eig.info() != Eigen::Success) throw Error(ErrorCode::NotPD, "joint covariance factorization failed");
  const Vec& d = eig.eigenvalues();
  const double scale = std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
  if (d.minCoeff() < -kPsdTol * scale)
    throw Error(ErrorCode::NotPD, "joint covariance is not positive semidefinite");
  factor_ = eig.eigenvectors() * d.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Vec JointNormalSampler::draw(Rng& rng) const {
  return factor_ * rng.normal_vector(factor_.cols());
}

LimitStatistic::LimitStatistic(const LimitParams& params)
    : params_(params), mats_(build_limit_matrices(params)) {
  const Index p = params.p();
  Eigen::LLT<Mat> b_llt(mats_.B);
  if (b_llt.info() != Eigen::Success) throw Error(ErrorCode::NotPD, "B is not positive definite");
  b_inv_ = b_llt.solve(Mat::Identity(p + 1, p + 1));
  const Mat sigma_inv = params.Sigma.llt().solve(Mat::Identity(params.e(), params.e()));
  d_sigma_inv_ = mats_.D * sigma_inv;
  // J: the penalty pattern, intercept entry off unless penalized
  Vec j_diag = Vec::Ones(p + 1);
  if (!params.penalize_intercept) j_diag(0) = 0.0;
  const Mat inner = mats_.M - d_sigma_inv_ * mats_.D.transpose();
  denom_form_ = b_inv_ * inner * b_inv_;
  denom_form_ = 0.5 * (denom_form_ + denom_form_.transpose());
  shift_ = mats_.D * params.alpha0;
  const double trace = b_inv_.diagonal().dot(j_diag);
  offset_ = -params.sigma2_x * static_cast<double>(p + 1) + params.sigma2_x * params.kappa * trace;
}

double LimitStatistic::operator()(const Vec& P0, const Vec& Q0) const {
  const Vec shifted = P0 + shift_;
  const double quad = shifted.dot(denom_form_ * shifted);
  if (!(quad > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double num = shifted.dot(b_inv_ * (P0 - d_sigma_inv_ * Q0)) + offset_;
  return num / (std::sqrt(params_.sigma2_x) * std::sqrt(quad));
}

double ols_limit_statistic(const LimitParams& params, const Vec& P0, const Vec& Q0) {
  const Index p = params.p();
  Mat B(p + 1, p + 1);
  B(0, 0) = 1.0;
  B.block(0, 1, 1, p) = params.Theta * params.Gamma;
  B.block(1, 0, p, 1) = B.block(0, 1, 1, p).transpose();
  B.block(1, 1, p, p) = params.Gamma.transpose() * params.Sigma * params.Gamma +
                        params.sigma2_z * Mat::Identity(p, p);
  Mat D(p + 1, params.e());
  D.row(0) = params.Theta;
  D.bottomRows(p) = params.Gamma.transpose() * params.Sigma;

  const auto b_lu = B.partialPivLu();
  const auto s_lu = params.Sigma.partialPivLu();
  const Vec a = P0 + D * params.alpha0;
  const Vec b_inv_a = b_lu.solve(a);
  const Vec rhs = P0 - D * s_lu.solve(Q0);
  const double num = b_inv_a.dot(rhs) - params.sigma2_x * static_cast<double>(p + 1);
  const Vec dt_b_inv_a = D.transpose() * b_inv_a;
  const double quad = a.dot(b_inv_a) - dt_b_inv_a.dot(s_lu.solve(dt_b_inv_a));
  if (!(quad > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return num / (std::sqrt(params.sigma2_x) * std::sqrt(quad));
}

Mat draw_joint_normal(const LimitParams& params, Index n_draws, std::uint64_t seed) {
  const LimitMatrices m = build_limit_matrices(params);
  const JointNormalSampler sampler(m.joint_cov);
  Mat out(m.joint_cov.rows(), n_draws);
  const Index blocks = (n_draws + kDrawBlock - 1) / kDrawBlock;
  for (Index b = 0; b < blocks; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    const Index end = std::min(n_draws, (b + 1) * kDrawBlock);
    for (Index k = b * kDrawBlock; k < end; ++k) out.col(k) = sampler.draw(rng);
  }
  return out;
}

LimitDraws sample_limit_statistic(const LimitParams& params, Index n_draws, std::uint64_t seed,
                                  int threads) {
  require(n_draws >= 1, "need at least one draw");
  const LimitStatistic stat(params);
  const JointNormalSampler sampler(stat.matrices().joint_cov);
  const Index p1 = params.p() + 1, e = params.e();

  LimitDraws out;
  out.seed = seed;
  out.n_draws = n_draws;
  out.values.assign(static_cast<std::size_t>(n_draws), 0.0);
  const Index blocks = (n_draws + kDrawBlock - 1) / kDrawBlock;
  parallel_for(static_cast<std::size_t>(blocks), threads, [&](std::size_t b) {
    Rng rng(derive_seed(seed, b));
    const Index end = std::min(n_draws, static_cast<Index>(b + 1) * kDrawBlock);
    for (Index k = static_cast<Index>(b) * kDrawBlock; k < end; ++k) {
      const Vec v = sampler.draw(rng);
      out.values[k] = stat(v.head(p1), v.tail(e));
    }
  });
  for (double v : out.values)
    if (std::isnan(v)) ++out.nonpositive;
  return out;
}

LimitParams estimate_params_from_data(const Dataset& data, double lambda,
                                      const PlugInOptions& opt) {
  data.validate();
  require(lambda >= 0.0, "lambda must be nonnegative");
  const Index n = data.n(), k = data.X.cols(), p = data.p();
  require(n > k, "plug-in estimation needs more rows than external columns");
  const double nd = static_cast<double>(n);
  const LinearFit y_on_x = fit_least_squares(data.X, data.y);

  const Mat gram = data.X.transpose() * data.X;
  const auto llt = gram.llt();
  const Mat gamma_full = llt.solve(data.X.transpose() * data.Z);
  const Mat z_resid = data.Z - data.X * gamma_full;

  LimitParams out;
  const Index skip = opt.include_intercept ? 0 : 1;
  require(k - skip >= 1, "no external columns besides the intercept");
  const Mat ext = data.X.rightCols(k - skip);
  out.Sigma = ext.transpose() * ext / nd;
  out.Theta = ext.colwise().sum() / nd;
  out.Gamma = gamma_full.bottomRows(k - skip);
  out.alpha0 = std::sqrt(nd) * y_on_x.coef.tail(k - skip);
  out.sigma2_z = z_resid.squaredNorm() / (static_cast<double>(n - k) * static_cast<double>(p));
  out.kappa = lambda / nd;

  if (opt.sigma_source == SigmaXSource::XOnly) {
    out.sigma2_x = y_on_x.residuals.squaredNorm() / static_cast<double>(y_on_x.dof);
  } else {
    const Vec y_pv = prevalidate(data, opt.learner, false);
    out.sigma2_x = second_stage(data.y, data.X, y_pv).sigma2_hat;
  }
  return out;
}

double pvalue_from_draws(const LimitDraws& draws, double t_obs) {
  std::size_t finite = 0, extreme = 0;
  const double a = std::abs(t_obs);
  for (double v : draws.values) {
    if (std::isnan(v)) continue;
    ++finite;
    if (std::abs(v) >= a) ++extreme;
  }
  require(finite >= 1, "no finite draws");
  return (1.0 + static_cast<double>(extreme)) / (static_cast<double>(finite) + 1.0);
}

void write_draws_csv(const LimitDraws& draws, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out << "limit_draw\n";
  char buf[64];
  for (double v : draws.values) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

}  // namespace prevalid
