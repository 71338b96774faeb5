#pragma once

// Applied analyses: heritability estimators for the GWAS-style mixed model
// and the training-error versus test-error comparison of LOO and data-reuse
// first stages.

#include "prevalid/common.hpp"
#include "prevalid/datagen.hpp"
#include "prevalid/preval.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace prevalid {

enum class HeritabilityMethod { REML, PreValidation, DataReuse };

const char* to_string(HeritabilityMethod method);

struct HeritabilityEstimate {
  HeritabilityMethod method = HeritabilityMethod::REML;
  double value = 0.0;
  Index replicate_id = 0;
  bool flagged = false;  // REML below 0, or a variance ratio above 1 + 1e-8
};

/// ỹ = y − Xβ̂, G = Z_cZ_cᵀ/p with Z_c the column-centered genotypes, then the OLS slope of (ỹ_j − ỹ_k)² on G_jk over
/// all pairs j < k (with intercept). Returns −slope/2.
HeritabilityEstimate reml_pairwise(const Vec& y, const Mat& X, const Mat& Z);

/// Var(ŷ)/Var(ỹ) where ŷ is the relaxed-Lasso fit of ỹ on Z: leave-one-out
/// for the pre-validation estimator (exact refits unless `approximate`),
/// full data for the reuse estimator.
HeritabilityEstimate pv_heritability(const Vec& y, const Mat& X, const Mat& Z, double lambda,
                                     bool approximate = false);
HeritabilityEstimate reuse_heritability(const Vec& y, const Mat& X, const Mat& Z, double lambda);

/// Residuals of y on X.
Vec residualize(const Vec& y, const Mat& X);

/// Relaxed-Lasso λ for ỹ on Z by 10-fold CV with the given margin.
double heritability_lambda(const Vec& y, const Mat& X, const Mat& Z, double margin = 0.10);

struct HeritabilityStudyConfig {
  GwasSpec spec;
  Index n_reps = 100;
  std::uint64_t seed = 0;
  double lambda = 0.0;      // 0: chosen by CV on the first replicate, then fixed
  double margin = 0.10;
  bool approximate = false;  // ALO instead of exact LOO refits
  bool standardize_z = false;  // center and scale genotype columns before analysis
  int threads = 1;
};

struct HeritabilitySummary {
  HeritabilityMethod method = HeritabilityMethod::REML;
  double mean = 0.0;
  double sd = 0.0;
  double bias = 0.0;  // mean − mean truth
  Index flagged = 0;
};

struct HeritabilityStudy {
  std::vector<HeritabilityEstimate> estimates;  // replicate-major, REML/PV/reuse
  std::vector<double> truth;                    // σ²_g per replicate
  std::vector<HeritabilitySummary> summary;
  double lambda = 0.0;
};

HeritabilityStudy run_heritability_study(const HeritabilityStudyConfig& config);

void write_heritability_csv(const HeritabilityStudy& study, const std::string& path);

/// One synthetic GWAS analysed end to end: pre-validated and data-reuse
/// second stages, a parametric-bootstrap p-value, held-out R², and the
/// three heritability estimates.
struct GwasAnalysis {
  double lambda = 0.0;
  SecondStageFit pv;
  SecondStageFit reuse;
  double pv_normal_p = 1.0;
  double reuse_normal_p = 1.0;
  double boot_p = 1.0;
  Index boot_failures = 0;
  double test_r2_pv = 0.0;
  double test_r2_reuse = 0.0;
  Index active_size = 0;
  double mean_abs_b_selected = 0.0;
  double mean_abs_b_unselected = 0.0;
  HeritabilityEstimate reml, pv_h2, reuse_h2;
  double truth_sigma2_g = 0.0;
};

struct GwasAnalysisConfig {
  GwasSpec spec;
  std::uint64_t seed = 0;
  Index boot_reps = 200;
  double margin = 0.10;
  bool standardize_z = false;
  int threads = 1;
};

GwasAnalysis analyze_gwas(const GwasAnalysisConfig& config);

std::string to_json(const GwasAnalysis& analysis);

enum class ErrorMethod { LOO, NonLOO };

const char* to_string(ErrorMethod method);

struct ErrorReport {
  ErrorMethod method = ErrorMethod::LOO;
  ErrorModel model = ErrorModel::NoExternals;
  Index replicate_id = 0;
  double train_err = 0.0;
  double in_sample_err = 0.0;
  double out_sample_err = 0.0;
};

struct ErrorSummary {
  ErrorMethod method = ErrorMethod::LOO;
  ErrorModel model = ErrorModel::NoExternals;
  double train_err = 0.0;
  double in_sample_err = 0.0;
  double out_sample_err = 0.0;
  /// (train − test) / test on the replicate means; negative = underestimate.
  double rel_bias_in = 0.0;
  double rel_bias_out = 0.0;
};

struct ErrorStudy {
  std::vector<ErrorReport> reports;  // replicate-major, LOO then NonLOO
  std::vector<ErrorSummary> summary;
};

/// Errors of one replicate for both methods. First stage is `learner`;
/// with externals the second stage is OLS of y on [ỹ X].
std::vector<ErrorReport> error_replicate(ErrorModel model, const ErrorStudyData& data,
                                         const Learner& learner, Index replicate_id);

ErrorStudy run_error_study(ErrorModel model, const ErrorStudySpec& spec, Index n_reps,
                           std::uint64_t seed, const Learner& learner = {}, int threads = 1);

std::vector<ErrorSummary> summarize_errors(const std::vector<ErrorReport>& reports);

void write_error_csv(const ErrorStudy& study, const std::string& path);

}  // namespace prevalid
