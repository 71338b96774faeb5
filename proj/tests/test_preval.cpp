#include <doctest.h>

#include "prevalid/preval.hpp"
#include "prevalid/stats.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace prevalid;
using prevalid::test::random_matrix;

namespace {

Dataset random_dataset(Rng& rng, Index n, Index p, Index e) {
  Dataset d;
  d.X = with_intercept(random_matrix(rng, n, e));
  d.Z = random_matrix(rng, n, p);
  d.y = d.X * rng.normal_vector(e + 1) + rng.normal_vector(n);
  return d;
}

Mat drop_row(const Mat& m, Index i) {
  Mat out(m.rows() - 1, m.cols());
  out << m.topRows(i), m.bottomRows(m.rows() - i - 1);
  return out;
}

Vec drop_row(const Vec& v, Index i) {
  Vec out(v.size() - 1);
  out << v.head(i), v.tail(v.size() - i - 1);
  return out;
}

// Newton-Raphson logistic regression, returning the Wald z of column 0.
double irls_wald_z(const Mat& design, const Vec& y) {
  Vec b = Vec::Zero(design.cols());
  Mat info;
  for (int it = 0; it < 100; ++it) {
    const Vec eta = design * b;
    Vec mu(eta.size()), w(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      mu(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      w(i) = mu(i) * (1.0 - mu(i));
    }
    info = design.transpose() * w.asDiagonal() * design;
    const Vec step = info.ldlt().solve(design.transpose() * (y - mu));
    b += step;
    if (step.cwiseAbs().maxCoeff() < 1e-13) break;
  }
  return b(0) / std::sqrt(info.inverse()(0, 0));
}

}  // namespace

TEST_CASE("dataset validation") {
  Rng rng(1);
  Dataset d = random_dataset(rng, 10, 3, 2);
  CHECK_NOTHROW(d.validate());
  d.X(4, 0) = 2.0;
  CHECK_THROWS_AS(d.validate(), Error);
}

TEST_CASE("learner names round-trip") {
  for (LearnerKind k : {LearnerKind::OLS, LearnerKind::Ridge, LearnerKind::Lasso, LearnerKind::LogisticLasso,
                        LearnerKind::RelaxedLasso})
    CHECK(learner_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(learner_from_string("elastic"), Error);
}

TEST_CASE("prevalidate: zero features give the leave-one-out mean") {
  Rng rng(2);
  Dataset d = random_dataset(rng, 12, 3, 1);
  d.Z.setZero();
  const Vec pv = prevalidate(d, {LearnerKind::Ridge, 1.0}, false);
  const double total = d.y.sum();
  for (Index i = 0; i < 12; ++i) CHECK(pv(i) == doctest::Approx((total - d.y(i)) / 11.0).epsilon(1e-12));
}

TEST_CASE("prevalidate: OLS shortcut equals explicit refits") {
  Rng rng(3);
  const Dataset d = random_dataset(rng, 12, 4, 1);
  const Vec pv = prevalidate(d, {LearnerKind::OLS, 0.0}, false);
  const Vec exact = prevalidate(d, {LearnerKind::OLS, 0.0}, true);
  const Mat D = with_intercept(d.Z);
  for (Index i = 0; i < 12; ++i) {
    const Mat Di = drop_row(D, i);
    const Vec b = Di.completeOrthogonalDecomposition().solve(drop_row(d.y, i));
    CHECK(std::abs(pv(i) - D.row(i).dot(b)) < 1e-10);
    CHECK(std::abs(exact(i) - D.row(i).dot(b)) < 1e-10);
  }
}

TEST_CASE("prevalidate: ridge shortcut equals explicit refits with unpenalized intercept") {
  Rng rng(4);
  const Dataset d = random_dataset(rng, 15, 5, 2);
  const double lambda = 3.0;
  const Vec pv = prevalidate(d, {LearnerKind::Ridge, lambda}, false);
  for (Index i = 0; i < 15; ++i) {
    const Mat Di = with_intercept(drop_row(d.Z, i));
    Mat gram = Di.transpose() * Di;
    gram.diagonal().tail(5).array() += lambda;
    const Vec b = gram.ldlt().solve(Di.transpose() * drop_row(d.y, i));
    CHECK(std::abs(pv(i) - (b(0) + d.Z.row(i).dot(b.tail(5)))) < 1e-10);
  }
}

TEST_CASE("prevalidate: exact lasso equals n independent fits") {
  Rng rng(5);
  const Dataset d = random_dataset(rng, 25, 10, 1);
  const double lambda = 0.15;
  const Vec pv = prevalidate(d, {LearnerKind::Lasso, lambda}, true);
  for (Index i = 0; i < 25; ++i) {
    const LassoFit f = lasso_fit(drop_row(d.Z, i), drop_row(d.y, i), lambda);
    CHECK(std::abs(pv(i) - (f.intercept + d.Z.row(i).dot(f.coef))) < 1e-8);
  }
}

TEST_CASE("prevalidate: weighted rows leave with their whole weight") {
  Rng rng(6);
  const Mat Z = random_matrix(rng, 10, 2);
  const Vec y = rng.normal_vector(10);
  Vec w = Vec::Ones(10);
  w(2) = 3.0;
  w(5) = 2.0;
  const Vec pv = prevalidate(Z, y, {LearnerKind::OLS, 0.0}, false, w);
  const Mat D = with_intercept(Z);
  for (Index i = 0; i < 10; ++i) {
    Vec wi = w;
    wi(i) = 0.0;
    const Vec b = (D.transpose() * wi.asDiagonal() * D).ldlt().solve(D.transpose() * wi.cwiseProduct(y));
    CHECK(std::abs(pv(i) - D.row(i).dot(b)) < 1e-10);
  }
}

TEST_CASE("data reuse predictions") {
  Rng rng(7);
  Dataset d = random_dataset(rng, 20, 4, 1);
  const Vec ols = data_reuse_predictions(d, {LearnerKind::OLS, 0.0});
  CHECK((ols - hat_matrix(with_intercept(d.Z), Vec{{0.0, 0.0, 0.0, 0.0, 0.0}}) * d.y).cwiseAbs().maxCoeff() <
        1e-10);

  const Dataset lasso_data = random_dataset(rng, 25, 10, 1);
  const LassoFit f = lasso_fit(lasso_data.Z, lasso_data.y, 0.2);
  const Vec lasso = data_reuse_predictions(lasso_data, {LearnerKind::Lasso, 0.2});
  CHECK((lasso - ((lasso_data.Z * f.coef).array() + f.intercept).matrix()).cwiseAbs().maxCoeff() < 1e-12);

  Dataset sat = random_dataset(rng, 6, 5, 1);
  CHECK((data_reuse_predictions(sat, {LearnerKind::OLS, 0.0}) - sat.y).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("second stage: orthogonal predictor gives zero coefficient") {
  Rng rng(8);
  const Index n = 30;
  const Mat X = with_intercept(random_matrix(rng, n, 2));
  const Vec y = rng.normal_vector(n);
  const Mat Q = Mat::Identity(n, n) - X * (X.transpose() * X).inverse() * X.transpose();
  const Vec qy = Q * y;
  Vec v = Q * rng.normal_vector(n);
  v -= (v.dot(qy) / qy.squaredNorm()) * qy;
  const SecondStageFit fit = second_stage(y, X, v + X * rng.normal_vector(3));
  CHECK(std::abs(fit.beta_pv) < 1e-12);
  CHECK(std::abs(fit.t) < 1e-10);
}

TEST_CASE("second stage: t is scale equivariant") {
  Rng rng(9);
  const Dataset d = random_dataset(rng, 40, 5, 2);
  const Vec pv = prevalidate(d, {LearnerKind::Ridge, 2.0}, false);
  const double t = second_stage(d.y, d.X, pv).t;
  CHECK(second_stage(d.y, d.X, 3.5 * pv).t == doctest::Approx(t).epsilon(1e-12));
  CHECK(second_stage(d.y, d.X, -0.2 * pv).t == doctest::Approx(-t).epsilon(1e-12));
}

TEST_CASE("second stage matches the block-inverse identity") {
  Rng rng(10);
  const Index n = 50;
  const Dataset d = random_dataset(rng, n, 6, 3);
  const Vec pv = prevalidate(d, {LearnerKind::OLS, 0.0}, false);
  const double nd = static_cast<double>(n);
  const Mat XtX = d.X.transpose() * d.X;
  const Vec V = d.X.transpose() * pv / nd;
  const double r = 1.0 / (pv.squaredNorm() / nd - V.dot((XtX / nd).ldlt().solve(V)));
  const Mat Q = Mat::Identity(n, n) - d.X * XtX.ldlt().solve(d.X.transpose());
  const double beta = r * pv.dot(Q * d.y) / nd;
  const SecondStageFit fit = second_stage(d.y, d.X, pv);
  CHECK(fit.beta_pv == doctest::Approx(beta).epsilon(1e-10));
  CHECK(fit.se_pv == doctest::Approx(std::sqrt(fit.sigma2_hat * r / nd)).epsilon(1e-10));
  const double dof = static_cast<double>(n - d.X.cols() - 1);
  CHECK(fit.sigma2_hat == doctest::Approx((d.y - fit.fitted).squaredNorm() / dof).epsilon(1e-10));
}

TEST_CASE("second stage with a known σ²") {
  Rng rng(11);
  const Dataset d = random_dataset(rng, 30, 4, 1);
  const Vec pv = prevalidate(d, {LearnerKind::OLS, 0.0}, false);
  SecondStageOptions opt;
  opt.sigma_mode = SigmaMode::Known;
  opt.known_sigma2 = 4.0;
  const SecondStageFit a = second_stage(d.y, d.X, pv);
  const SecondStageFit b = second_stage(d.y, d.X, pv, opt);
  CHECK(b.beta_pv == doctest::Approx(a.beta_pv));
  CHECK(b.se_pv == doctest::Approx(a.se_pv * std::sqrt(4.0 / a.sigma2_hat)));
}

TEST_CASE("second stage: frequency weights equal replicated rows") {
  Rng rng(12);
  const Dataset d = random_dataset(rng, 12, 3, 1);
  const Vec pv = rng.normal_vector(12);
  Vec w = Vec::Ones(12);
  w(0) = 2.0;
  w(9) = 3.0;
  Vec yr(15), pvr(15);
  Mat Xr(15, 2);
  Index r = 0;
  for (Index i = 0; i < 12; ++i)
    for (int c = 0; c < static_cast<int>(w(i)); ++c, ++r) {
      yr(r) = d.y(i);
      pvr(r) = pv(i);
      Xr.row(r) = d.X.row(i);
    }
  const SecondStageFit a = second_stage(d.y, d.X, pv, w);
  const SecondStageFit b = second_stage(yr, Xr, pvr);
  CHECK(a.t == doctest::Approx(b.t).epsilon(1e-10));
  CHECK(a.beta_pv == doctest::Approx(b.beta_pv).epsilon(1e-10));
}

TEST_CASE("second stage rejects a predictor absorbed by the intercept") {
  Rng rng(13);
  const Dataset d = random_dataset(rng, 20, 2, 1);
  try {
    second_stage(d.y, d.X, Vec::Constant(20, 1.3));
    FAIL("expected CollinearPV");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CollinearPV);
  }
}

TEST_CASE("logistic second stage") {
  Rng rng(14);
  const Index n = 80;
  const Mat X = with_intercept(random_matrix(rng, n, 2));
  const Vec pv = rng.normal_vector(n);
  Vec y(n);
  for (Index i = 0; i < n; ++i) y(i) = rng.uniform() < 1.0 / (1.0 + std::exp(-(0.8 * pv(i) + 0.3 * X(i, 1)))) ? 1.0 : 0.0;
  Mat design(n, 4);
  design << pv, X;
  CHECK(second_stage_logistic(y, X, pv).t == doctest::Approx(irls_wald_z(design, y)).epsilon(1e-6));

  try {
    second_stage_logistic(y, X, Vec::Constant(n, 0.5));
    FAIL("expected CollinearPV");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CollinearPV);
  }

  // balanced antisymmetric design: intercept zero by symmetry
  Mat Xs(40, 2);
  Vec ys(40), ps(40);
  const Vec half = rng.normal_vector(20), hp = rng.normal_vector(20);
  for (Index i = 0; i < 20; ++i) {
    Xs.row(i) << 1.0, half(i);
    Xs.row(i + 20) << 1.0, -half(i);
    ps(i) = hp(i);
    ps(i + 20) = -hp(i);
    ys(i) = 0.3 * (hp(i) + half(i)) + rng.normal() > 0.0 ? 1.0 : 0.0;
    ys(i + 20) = 1.0 - ys(i);
  }
  CHECK(std::abs(second_stage_logistic(ys, Xs, ps).beta_ext(0)) < 1e-8);
}

TEST_CASE("ALO: empty active set gives the leave-one-out mean") {
  Rng rng(15);
  const Mat Z = random_matrix(rng, 20, 5);
  const Vec y = rng.normal_vector(20);
  const Vec alo = alo_lasso(Z, y, 2.0 * lasso_lambda_max(Z, y));
  const double total = y.sum();
  for (Index i = 0; i < 20; ++i) CHECK(alo(i) == doctest::Approx((total - y(i)) / 19.0).epsilon(1e-10));
}

TEST_CASE("ALO: full active set at tiny λ is the OLS LOO identity") {
  Rng rng(16);
  const Mat Z = random_matrix(rng, 30, 4);
  const Vec y = Z * Vec{{1.0, -1.0, 2.0, 0.5}} + rng.normal_vector(30);
  AloDiagnostics diag;
  const Vec alo = alo_lasso(Z, y, 1e-9, &diag);
  CHECK(diag.active_size == 4);
  const Vec oracle = loo_predictions(hat_matrix(with_intercept(Z), Vec::Zero(5)), y);
  CHECK((alo - oracle).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("ALO tracks exact lasso LOO") {
  Rng rng(17);
  const Index n = 50, p = 20;
  const Mat Z = random_matrix(rng, n, p);
  Vec beta = Vec::Zero(p);
  for (Index j = 0; j < 5; ++j) beta(j) = 1.0;
  const Vec y = Z * beta + rng.normal_vector(n);
  const double lambda = 0.1;
  Dataset d{y, Mat::Ones(n, 1), Z};
  const Vec exact = prevalidate(d, {LearnerKind::Lasso, lambda}, true);
  const Vec alo = alo_lasso(Z, y, lambda);
  CHECK(stats::pearson(exact, alo) > 0.99);
}

TEST_CASE("logistic ALO: null fit correction is the direct formula") {
  Rng rng(18);
  const Index n = 24;
  const Mat Z = random_matrix(rng, n, 3);
  Vec y(n);
  for (Index i = 0; i < n; ++i) y(i) = i % 2 == 0 ? 1.0 : 0.0;
  const Vec alo = alo_logistic(Z, y, 1e3);
  const double h = 1.0 / static_cast<double>(n);
  for (Index i = 0; i < n; ++i) CHECK(alo(i) == doctest::Approx(-(y(i) - 0.5) * 4.0 * h / (1.0 - h)).epsilon(1e-8));
}

TEST_CASE("logistic ALO tracks brute-force refits") {
  Rng rng(19);
  const Index n = 30, p = 6;
  const Mat Z = random_matrix(rng, n, p);
  Vec y(n);
  for (Index i = 0; i < n; ++i) y(i) = Z(i, 0) - 0.7 * Z(i, 1) + 0.8 * rng.normal() > 0.0 ? 1.0 : 0.0;
  const double lambda = 0.05;
  const Vec alo = alo_logistic(Z, y, lambda);
  Vec brute(n);
  for (Index i = 0; i < n; ++i) {
    const LassoFit f = logistic_lasso_fit(drop_row(Z, i), drop_row(y, i), lambda);
    brute(i) = f.intercept + Z.row(i).dot(f.coef);
  }
  CHECK(stats::pearson(alo, brute) > 0.98);
}
