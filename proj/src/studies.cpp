#include "prevalid/studies.hpp"

#include "prevalid/bootstrap.hpp"
#include "prevalid/stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace prevalid {

namespace {

constexpr double kRatioTol = 1e-8;

double sample_variance(const Vec& v) { return stats::variance(v); }

HeritabilityEstimate ratio_estimate(HeritabilityMethod method, const Vec& fitted, const Vec& y_tilde) {
  const double denom = sample_variance(y_tilde);
  if (!(denom > 0.0)) throw Error(ErrorCode::DegenerateResponse, "residualized phenotype is constant");
  HeritabilityEstimate out;
  out.method = method;
  out.value = sample_variance(fitted) / denom;
  out.flagged = out.value > 1.0 + kRatioTol;
  return out;
}

Mat standardized_columns(const Mat& Z) {
  Mat out = Z;
  const double n = static_cast<double>(Z.rows());
  for (Index j = 0; j < Z.cols(); ++j) {
    const double mean = Z.col(j).mean();
    out.col(j).array() -= mean;
    const double sd = std::sqrt(out.col(j).squaredNorm() / (n - 1.0));
    if (sd > 0.0) out.col(j) /= sd;
  }
  return out;
}

void write_cell(std::ofstream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

}  // namespace

const char* to_string(HeritabilityMethod method) {
  switch (method) {
    case HeritabilityMethod::REML: return "reml";
    case HeritabilityMethod::PreValidation: return "prevalidation";
    case HeritabilityMethod::DataReuse: return "data_reuse";
  }
  return "unknown";
}

Vec residualize(const Vec& y, const Mat& X) { return fit_least_squares(X, y).residuals; }

HeritabilityEstimate reml_pairwise(const Vec& y, const Mat& X, const Mat& Z) {
  const Index n = y.size();
  require(n >= 3, "pairwise REML needs n ≥ 3");
  require(X.rows() == n && Z.rows() == n && Z.cols() >= 1, "dimension mismatch in reml_pairwise");
  const Vec r = residualize(y, X);
  // Genotypes are centered per SNP: with an intercept in the model the
  // uncentered ZZᵀ/p carries per-individual mean offsets that bias the slope.
  const Mat zc = Z.rowwise() - Z.colwise().mean();
  const Mat G = zc * zc.transpose() / static_cast<double>(Z.cols());

  // two passes over j < k: means, then centered cross-products
  double sum_g = 0.0, sum_d = 0.0;
  for (Index k = 1; k < n; ++k)
    for (Index j = 0; j < k; ++j) {
      const double diff = r(j) - r(k);
      sum_g += G(j, k);
      sum_d += diff * diff;
    }
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  const double mean_g = sum_g / pairs, mean_d = sum_d / pairs;
  double sxx = 0.0, sxy = 0.0;
  for (Index k = 1; k < n; ++k)
    for (Index j = 0; j < k; ++j) {
      const double diff = r(j) - r(k);
      const double dg = G(j, k) - mean_g;
      sxx += dg * dg;
      sxy += dg * (diff * diff - mean_d);
    }
  if (!(sxx > 1e-24 * pairs * (1.0 + mean_g * mean_g)))
    throw Error(ErrorCode::DegenerateG, "G is constant over pairs; slope undefined");

  HeritabilityEstimate out;
  out.method = HeritabilityMethod::REML;
  out.value = sxy == 0.0 ? 0.0 : -0.5 * sxy / sxx;
  out.flagged = out.value < 0.0;
  return out;
}

HeritabilityEstimate pv_heritability(const Vec& y, const Mat& X, const Mat& Z, double lambda,
                                     bool approximate) {
  const Vec r = residualize(y, X);
  const Learner learner{LearnerKind::RelaxedLasso, lambda};
  const Vec y_pv = prevalidate(Z, r, learner, !approximate, Vec::Ones(r.size()));
  return ratio_estimate(HeritabilityMethod::PreValidation, y_pv, r);
}

HeritabilityEstimate reuse_heritability(const Vec& y, const Mat& X, const Mat& Z, double lambda) {
  const Vec r = residualize(y, X);
  const LinearFit fit = relaxed_lasso_fit(Z, r, lambda);
  return ratio_estimate(HeritabilityMethod::DataReuse, fit.fitted, r);
}

double heritability_lambda(const Vec& y, const Mat& X, const Mat& Z, double margin) {
  const Vec r = residualize(y, X);
  const auto grid = default_lambda_grid(Z, r);
  return cv_lambda_select(Z, r, grid, 10, margin, CvLearner::RelaxedLasso);
}

HeritabilityStudy run_heritability_study(const HeritabilityStudyConfig& config) {
  require(config.n_reps >= 1, "heritability study needs at least one replicate");
  HeritabilityStudy study;
  const std::size_t reps = static_cast<std::size_t>(config.n_reps);

  auto generate = [&](std::size_t r) {
    auto gen = gen_gwas(config.spec, derive_seed(config.seed, r));
    if (config.standardize_z) gen.first.Z = standardized_columns(gen.first.Z);
    return gen;
  };

  study.lambda = config.lambda;
  if (study.lambda <= 0.0) {
    const auto first = generate(0);
    study.lambda = heritability_lambda(first.first.y, first.first.X, first.first.Z, config.margin);
  }

  study.estimates.resize(3 * reps);
  study.truth.resize(reps);
  parallel_for(reps, config.threads, [&](std::size_t r) {
    const auto [data, truth] = generate(r);
    HeritabilityEstimate est[3] = {
        reml_pairwise(data.y, data.X, data.Z),
        pv_heritability(data.y, data.X, data.Z, study.lambda, config.approximate),
        reuse_heritability(data.y, data.X, data.Z, study.lambda),
    };
    for (int m = 0; m < 3; ++m) {
      est[m].replicate_id = static_cast<Index>(r);
      study.estimates[3 * r + m] = est[m];
    }
    study.truth[r] = truth.sigma2_g;
  });

  const double mean_truth = stats::mean(study.truth);
  for (auto method : {HeritabilityMethod::REML, HeritabilityMethod::PreValidation,
                      HeritabilityMethod::DataReuse}) {
    std::vector<double> values;
    HeritabilitySummary s;
    s.method = method;
    for (const auto& e : study.estimates)
      if (e.method == method) {
        values.push_back(e.value);
        if (e.flagged) ++s.flagged;
      }
    s.mean = stats::mean(values);
    s.sd = values.size() > 1 ? std::sqrt(stats::variance(values)) : 0.0;
    s.bias = s.mean - mean_truth;
    study.summary.push_back(s);
  }
  return study;
}

void write_heritability_csv(const HeritabilityStudy& study, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out << "replicate_id,method,value,truth,flagged\n";
  for (const auto& e : study.estimates) {
    out << e.replicate_id << ',' << to_string(e.method) << ',';
    write_cell(out, e.value);
    out << ',';
    write_cell(out, study.truth[static_cast<std::size_t>(e.replicate_id)]);
    out << ',' << (e.flagged ? 1 : 0) << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

GwasAnalysis analyze_gwas(const GwasAnalysisConfig& config) {
  // Train and held-out rows come from one draw so they share b, β and Γ.
  GwasSpec joint = config.spec;
  joint.n = 2 * config.spec.n;
  auto [all, truth] = gen_gwas(joint, config.seed);
  if (config.standardize_z) all.Z = standardized_columns(all.Z);
  const Index n = config.spec.n;
  const Dataset train{all.y.head(n), all.X.topRows(n), all.Z.topRows(n)};
  const Dataset test{all.y.tail(n), all.X.bottomRows(n), all.Z.bottomRows(n)};

  GwasAnalysis out;
  out.truth_sigma2_g = truth.sigma2_g;

  BootConfig boot;
  boot.n_reps = config.boot_reps;
  boot.seed = derive_seed(config.seed, 1);
  boot.mode = BootMode::Parametric;
  boot.learner = {LearnerKind::Lasso, 0.0};
  boot.margin = config.margin;
  boot.threads = config.threads;
  out.lambda = bootstrap_lambda(train, boot);
  const Learner learner{LearnerKind::Lasso, out.lambda};

  const Vec y_pv = prevalidate(train, learner, false);
  const Vec y_reuse = data_reuse_predictions(train, learner);
  out.pv = second_stage(train.y, train.X, y_pv);
  out.reuse = second_stage(train.y, train.X, y_reuse);
  out.pv_normal_p = out.pv.normal_pvalue();
  out.reuse_normal_p = out.reuse.normal_pvalue();

  boot.pretrain = false;
  boot.learner.lambda = out.lambda;
  const BootResult br = parametric_bootstrap(train, boot);
  out.boot_p = br.p_value;
  out.boot_failures = br.failures;

  const LinearPredictor first = fit_first_stage(train.Z, train.y, learner);
  const Vec z_test = first.predict(test.Z);
  const double ss_tot = (test.y.array() - test.y.mean()).square().sum();
  auto r2 = [&](const SecondStageFit& fit) {
    const Vec pred = fit.beta_pv * z_test + test.X * fit.beta_ext;
    return 1.0 - (test.y - pred).squaredNorm() / ss_tot;
  };
  out.test_r2_pv = r2(out.pv);
  out.test_r2_reuse = r2(out.reuse);

  double sel = 0.0, unsel = 0.0;
  Index n_sel = 0;
  for (Index j = 0; j < train.p(); ++j) {
    if (first.coef(j) != 0.0) {
      sel += std::abs(truth.b(j));
      ++n_sel;
    } else {
      unsel += std::abs(truth.b(j));
    }
  }
  out.active_size = n_sel;
  out.mean_abs_b_selected = n_sel > 0 ? sel / static_cast<double>(n_sel) : 0.0;
  out.mean_abs_b_unselected =
      n_sel < train.p() ? unsel / static_cast<double>(train.p() - n_sel) : 0.0;

  const double h_lambda = heritability_lambda(train.y, train.X, train.Z, config.margin);
  out.reml = reml_pairwise(train.y, train.X, train.Z);
  out.pv_h2 = pv_heritability(train.y, train.X, train.Z, h_lambda);
  out.reuse_h2 = reuse_heritability(train.y, train.X, train.Z, h_lambda);
  return out;
}

std::string to_json(const GwasAnalysis& a) {
  nlohmann::ordered_json j;
  j["lambda"] = a.lambda;
  auto fit_json = [](const SecondStageFit& f, double p) {
    return nlohmann::ordered_json{{"beta", f.beta_pv}, {"se", f.se_pv}, {"t", f.t}, {"normal_p", p}};
  };
  j["prevalidation"] = fit_json(a.pv, a.pv_normal_p);
  j["prevalidation"]["bootstrap_p"] = a.boot_p;
  j["prevalidation"]["bootstrap_failures"] = a.boot_failures;
  j["prevalidation"]["test_r2"] = a.test_r2_pv;
  j["data_reuse"] = fit_json(a.reuse, a.reuse_normal_p);
  j["data_reuse"]["test_r2"] = a.test_r2_reuse;
  j["active_size"] = a.active_size;
  j["mean_abs_b_selected"] = a.mean_abs_b_selected;
  j["mean_abs_b_unselected"] = a.mean_abs_b_unselected;
  j["heritability"] = {{"truth", a.truth_sigma2_g},
                       {"reml", a.reml.value},
                       {"prevalidation", a.pv_h2.value},
                       {"data_reuse", a.reuse_h2.value}};
  return j.dump(2);
}

const char* to_string(ErrorMethod method) { return method == ErrorMethod::LOO ? "loo" : "non_loo"; }

std::vector<ErrorReport> error_replicate(ErrorModel model, const ErrorStudyData& data,
                                         const Learner& learner, Index replicate_id) {
  const Dataset& train = data.train;
  const LinearPredictor first = fit_first_stage(train.Z, train.y, learner);
  const Vec full_fit = first.predict(train.Z);
  const Vec out_first = first.predict(data.out_sample.Z);
  const double n = static_cast<double>(train.n());

  std::vector<ErrorReport> out;
  for (ErrorMethod method : {ErrorMethod::LOO, ErrorMethod::NonLOO}) {
    const Vec stage1 = method == ErrorMethod::LOO ? prevalidate(train, learner, false) : full_fit;
    Vec pred, out_pred;
    if (model == ErrorModel::NoExternals) {
      pred = stage1;
      out_pred = out_first;
    } else {
      const SecondStageFit fit = second_stage(train.y, train.X, stage1);
      pred = fit.fitted;
      out_pred = fit.beta_pv * out_first + data.out_sample.X * fit.beta_ext;
    }
    ErrorReport r;
    r.method = method;
    r.model = model;
    r.replicate_id = replicate_id;
    r.train_err = (train.y - pred).squaredNorm() / n;
    r.in_sample_err = (data.in_sample_y - pred).squaredNorm() / n;
    r.out_sample_err = (data.out_sample.y - out_pred).squaredNorm() / static_cast<double>(data.out_sample.n());
    out.push_back(r);
  }
  return out;
}

ErrorStudy run_error_study(ErrorModel model, const ErrorStudySpec& spec, Index n_reps,
                           std::uint64_t seed, const Learner& learner, int threads) {
  require(n_reps >= 1, "error study needs at least one replicate");
  ErrorStudy study;
  study.reports.resize(2 * static_cast<std::size_t>(n_reps));
  parallel_for(static_cast<std::size_t>(n_reps), threads, [&](std::size_t r) {
    const ErrorStudyData data = gen_error_study(model, spec, derive_seed(seed, r));
    const auto reports = error_replicate(model, data, learner, static_cast<Index>(r));
    study.reports[2 * r] = reports[0];
    study.reports[2 * r + 1] = reports[1];
  });
  study.summary = summarize_errors(study.reports);
  return study;
}

std::vector<ErrorSummary> summarize_errors(const std::vector<ErrorReport>& reports) {
  std::vector<ErrorSummary> out;
  for (ErrorModel model : {ErrorModel::NoExternals, ErrorModel::WithExternals})
    for (ErrorMethod method : {ErrorMethod::LOO, ErrorMethod::NonLOO}) {
      ErrorSummary s;
      s.model = model;
      s.method = method;
      double count = 0.0;
      for (const auto& r : reports) {
        if (r.model != model || r.method != method) continue;
        s.train_err += r.train_err;
        s.in_sample_err += r.in_sample_err;
        s.out_sample_err += r.out_sample_err;
        count += 1.0;
      }
      if (count == 0.0) continue;
      s.train_err /= count;
      s.in_sample_err /= count;
      s.out_sample_err /= count;
      s.rel_bias_in = (s.train_err - s.in_sample_err) / s.in_sample_err;
      s.rel_bias_out = (s.train_err - s.out_sample_err) / s.out_sample_err;
      out.push_back(s);
    }
  return out;
}

void write_error_csv(const ErrorStudy& study, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out << "replicate_id,model,method,train_err,in_sample_err,out_sample_err\n";
  for (const auto& r : study.reports) {
    out << r.replicate_id << ',' << to_string(r.model) << ',' << to_string(r.method) << ',';
    write_cell(out, r.train_err);
    out << ',';
    write_cell(out, r.in_sample_err);
    out << ',';
    write_cell(out, r.out_sample_err);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

}  // namespace prevalid
