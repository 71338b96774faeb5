#pragma once

// Bootstrap inference for the pre-validated t-statistic: the weighted
// nonparametric bootstrap and the parametric residual bootstrap that keeps
// (X, Z) fixed and regenerates y under the null.

#include "prevalid/common.hpp"
#include "prevalid/preval.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace prevalid {

enum class BootMode { Nonparametric, Parametric };

const char* to_string(BootMode mode);

enum class PValueMode {
  Tail,       // (1 + #{|t*| ≥ |t_obs|}) / (B + 1)
  EqualTail,  // default; 2 · min over sides of (1 + #{t* beyond t_obs}) / (B + 1), capped at 1
  Literal,    // (1/B) Σ 1{|t_obs − t*| > α}
};

const char* to_string(PValueMode mode);
PValueMode pvalue_mode_from_string(const std::string& name);

struct BootConfig {
  Index n_reps = 200;
  std::uint64_t seed = 0;
  BootMode mode = BootMode::Parametric;
  Learner learner{LearnerKind::Lasso, 0.0};
  bool use_alo = true;
  // Select λ once by cross-validation on the observed data and reuse it in
  // every replicate. Applies to Lasso and RelaxedLasso; when false the
  // learner's own λ is used.
  bool pretrain = true;
  double margin = 0.10;
  int cv_folds = 10;
  double ci_level = 0.95;
  PValueMode pvalue_mode = PValueMode::EqualTail;
  double literal_alpha = 0.05;
  int threads = 1;

  void validate() const;
};

struct ReplicateFailure {
  Index replicate = 0;
  ErrorCode code = ErrorCode::InvalidArgument;
  std::string message;
};

struct BootResult {
  double t_obs = 0.0;
  double beta_obs = 0.0;
  std::vector<double> t_star;     // successful replicates, in replicate order
  std::vector<double> beta_star;
  double p_value = 1.0;
  std::pair<double, double> ci{0.0, 0.0};
  Index n_reps = 0;
  Index failures = 0;
  std::vector<ReplicateFailure> failure_log;
  double lambda = 0.0;  // first-stage λ used in every replicate
};

/// count_i / n for n draws with replacement from n rows.
Vec multinomial_weights(Index n, Rng& rng);

/// The first-stage λ the bootstrap will use for this data and config.
double bootstrap_lambda(const Dataset& data, const BootConfig& config);

BootResult nonparametric_bootstrap(const Dataset& data, const BootConfig& config);
BootResult parametric_bootstrap(const Dataset& data, const BootConfig& config);
/// Dispatches on config.mode.
BootResult run_bootstrap(const Dataset& data, const BootConfig& config);

double bootstrap_pvalue(double t_obs, const std::vector<double>& t_star,
                        PValueMode mode = PValueMode::EqualTail, double alpha = 0.05);

/// Percentile interval at the (1 ∓ level)/2 empirical quantiles.
std::pair<double, double> bootstrap_ci(const std::vector<double>& beta_star, double level);

/// {t_obs, p_value, ci, B, failures[, t_star]}
std::string to_json(const BootResult& result, bool include_t_star = false);

}  // namespace prevalid
