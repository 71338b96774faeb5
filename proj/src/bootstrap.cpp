#include "prevalid/bootstrap.hpp"

#include "prevalid/stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>

namespace prevalid {

const char* to_string(BootMode mode) {
  return mode == BootMode::Parametric ? "parametric" : "nonparametric";
}

void BootConfig::validate() const {
  require(n_reps >= 1, "bootstrap needs B ≥ 1");
  require(margin >= 0.0, "lambda margin must be nonnegative");
  require(cv_folds >= 2, "cross-validation needs at least 2 folds");
  require(ci_level >= 0.0 && ci_level < 1.0, "ci level must lie in [0,1)");
  require(literal_alpha > 0.0, "literal-mode alpha must be positive");
}

Vec multinomial_weights(Index n, Rng& rng) {
  require(n >= 1, "need at least one row");
  Vec w = Vec::Zero(n);
  for (Index k = 0; k < n; ++k) w(static_cast<Index>(rng.index(static_cast<std::size_t>(n)))) += 1.0;
  return w / static_cast<double>(n);
}

double bootstrap_lambda(const Dataset& data, const BootConfig& config) {
  const LearnerKind kind = config.learner.kind;
  const bool cv_capable = kind == LearnerKind::Lasso || kind == LearnerKind::RelaxedLasso;
  if (!config.pretrain || !cv_capable) return config.learner.lambda;
  const auto grid = default_lambda_grid(data.Z, data.y);
  const CvLearner cv = kind == LearnerKind::Lasso ? CvLearner::Lasso : CvLearner::RelaxedLasso;
  return cv_lambda_select(data.Z, data.y, grid, config.cv_folds, config.margin, cv);
}

namespace {

struct Replicate {
  bool ok = false;
  double t = 0.0;
  double beta = 0.0;
  ErrorCode code = ErrorCode::InvalidArgument;
  std::string message;
};

template <class Draw>
BootResult run_replicates(const Dataset& data, const BootConfig& config, const Learner& learner,
                          Draw&& draw) {
  BootResult out;
  out.lambda = learner.lambda;
  out.n_reps = config.n_reps;

  const SecondStageFit observed = second_stage(data.y, data.X, prevalidate(data, learner, !config.use_alo));
  out.t_obs = observed.t;
  out.beta_obs = observed.beta_pv;

  std::vector<Replicate> reps(static_cast<std::size_t>(config.n_reps));
  parallel_for(reps.size(), config.threads, [&](std::size_t b) {
    Rng rng(derive_seed(config.seed, b));
    try {
      const SecondStageFit fit = draw(rng);
      if (!std::isfinite(fit.t)) throw Error(ErrorCode::SingularDesign, "non-finite replicate statistic");
      reps[b].ok = true;
      reps[b].t = fit.t;
      reps[b].beta = fit.beta_pv;
    } catch (const Error& err) {
      reps[b].code = err.code();
      reps[b].message = err.what();
    }
  });

  for (std::size_t b = 0; b < reps.size(); ++b) {
    if (reps[b].ok) {
      out.t_star.push_back(reps[b].t);
      out.beta_star.push_back(reps[b].beta);
    } else {
      out.failure_log.push_back({static_cast<Index>(b), reps[b].code, reps[b].message});
    }
  }
  out.failures = static_cast<Index>(out.failure_log.size());
  if (out.failures * 10 > config.n_reps) {
    const auto& first = out.failure_log.front();
    throw Error(ErrorCode::TooManyFailures,
                std::to_string(out.failures) + " of " + std::to_string(config.n_reps) +
                    " bootstrap replicates failed; first: " + to_string(first.code) + ": " + first.message);
  }
  if (out.t_star.empty()) throw Error(ErrorCode::TooManyFailures, "no bootstrap replicate succeeded");
  out.p_value = bootstrap_pvalue(out.t_obs, out.t_star, config.pvalue_mode, config.literal_alpha);
  out.ci = bootstrap_ci(out.beta_star, config.ci_level);
  return out;
}

Learner resolved_learner(const Dataset& data, const BootConfig& config) {
  Learner learner = config.learner;
  learner.lambda = bootstrap_lambda(data, config);
  learner.validate();
  return learner;
}

}  // namespace

BootResult nonparametric_bootstrap(const Dataset& data, const BootConfig& config) {
  require(config.mode == BootMode::Nonparametric, "nonparametric_bootstrap needs mode Nonparametric");
  config.validate();
  data.validate();
  const Learner learner = resolved_learner(data, config);
  const Index n = data.n();

  return run_replicates(data, config, learner, [&](Rng& rng) {
    const Vec w = multinomial_weights(n, rng);
    std::vector<Index> rows;
    for (Index i = 0; i < n; ++i)
      if (w(i) > 0.0) rows.push_back(i);
    const Index m = static_cast<Index>(rows.size());
    Mat Z(m, data.p());
    Mat X(m, data.X.cols());
    Vec y(m), counts(m);
    for (Index r = 0; r < m; ++r) {
      Z.row(r) = data.Z.row(rows[r]);
      X.row(r) = data.X.row(rows[r]);
      y(r) = data.y(rows[r]);
      counts(r) = std::round(w(rows[r]) * static_cast<double>(n));
    }
    const Vec y_pv = prevalidate(Z, y, learner, !config.use_alo, counts);
    return second_stage(y, X, y_pv, counts);
  });
}

BootResult parametric_bootstrap(const Dataset& data, const BootConfig& config) {
  require(config.mode == BootMode::Parametric, "parametric_bootstrap needs mode Parametric");
  config.validate();
  data.validate();
  const LinearFit null_fit = fit_least_squares(data.X, data.y);
  const Vec& xi = null_fit.residuals;
  if (xi.norm() <= 1e-12 * std::max(1.0, data.y.norm()))
    throw Error(ErrorCode::ZeroResidual, "y lies in the column space of X; nothing to resample");
  const Learner learner = resolved_learner(data, config);
  const Index n = data.n();

  return run_replicates(data, config, learner, [&](Rng& rng) {
    Dataset star{null_fit.fitted, data.X, data.Z};
    for (Index i = 0; i < n; ++i) star.y(i) += xi(static_cast<Index>(rng.index(static_cast<std::size_t>(n))));
    const Vec y_pv = prevalidate(star.Z, star.y, learner, !config.use_alo, Vec::Ones(n));
    return second_stage(star.y, star.X, y_pv);
  });
}

BootResult run_bootstrap(const Dataset& data, const BootConfig& config) {
  return config.mode == BootMode::Parametric ? parametric_bootstrap(data, config)
                                             : nonparametric_bootstrap(data, config);
}

double bootstrap_pvalue(double t_obs, const std::vector<double>& t_star, PValueMode mode, double alpha) {
  require(!t_star.empty(), "bootstrap p-value needs at least one replicate");
  const double b = static_cast<double>(t_star.size());
  std::size_t count = 0;
  if (mode == PValueMode::Tail) {
    const double a = std::abs(t_obs);
    for (double t : t_star)
      if (std::abs(t) >= a) ++count;
    return (1.0 + static_cast<double>(count)) / (b + 1.0);
  }
  if (mode == PValueMode::EqualTail) {
    std::size_t upper = 0, lower = 0;
    for (double t : t_star) {
      if (t >= t_obs) ++upper;
      if (t <= t_obs) ++lower;
    }
    const double side = (1.0 + static_cast<double>(std::min(upper, lower))) / (b + 1.0);
    return std::min(1.0, 2.0 * side);
  }
  for (double t : t_star)
    if (std::abs(t_obs - t) > alpha) ++count;
  return static_cast<double>(count) / b;
}

const char* to_string(PValueMode mode) {
  switch (mode) {
    case PValueMode::Tail: return "tail";
    case PValueMode::EqualTail: return "equal_tail";
    case PValueMode::Literal: return "literal";
  }
  return "unknown";
}

PValueMode pvalue_mode_from_string(const std::string& name) {
  if (name == "tail") return PValueMode::Tail;
  if (name == "equal_tail") return PValueMode::EqualTail;
  if (name == "literal") return PValueMode::Literal;
  throw Error(ErrorCode::InvalidArgument, "unknown p-value mode '" + name + "' (tail, equal_tail, literal)");
}

std::pair<double, double> bootstrap_ci(const std::vector<double>& beta_star, double level) {
  require(!beta_star.empty(), "confidence interval needs at least one replicate");
  require(level >= 0.0 && level < 1.0, "ci level must lie in [0,1)");
  std::vector<double> sorted = beta_star;
  std::sort(sorted.begin(), sorted.end());
  return {stats::quantile_sorted(sorted, 0.5 * (1.0 - level)),
          stats::quantile_sorted(sorted, 0.5 * (1.0 + level))};
}

std::string to_json(const BootResult& result, bool include_t_star) {
  nlohmann::ordered_json j;
  j["t_obs"] = result.t_obs;
  j["beta_obs"] = result.beta_obs;
  j["p_value"] = result.p_value;
  j["ci"] = {result.ci.first, result.ci.second};
  j["B"] = result.n_reps;
  j["failures"] = result.failures;
  j["lambda"] = result.lambda;
  if (include_t_star) j["t_star"] = result.t_star;
  return j.dump(2);
}

}  // namespace prevalid
