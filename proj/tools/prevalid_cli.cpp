#include "prevalid/bootstrap.hpp"
#include "prevalid/datagen.hpp"
#include "prevalid/harness.hpp"
#include "prevalid/nulldist.hpp"
#include "prevalid/preval.hpp"
#include "prevalid/studies.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using namespace prevalid;
using json = nlohmann::ordered_json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
};

// Writes to --out when given, otherwise to stdout.
void emit(const Globals& g, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text << '\n';
    return;
  }
  std::ofstream f(g.out);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + g.out + " for writing");
  f << text << '\n';
  if (!f) throw Error(ErrorCode::Io, "write failed for " + g.out);
}

std::string require_out(const Globals& g, const char* what) {
  if (g.out.empty()) throw CLI::ValidationError("--out", std::string(what) + " needs --out PATH");
  return g.out;
}

json fit_json(const SecondStageFit& fit) {
  json j;
  j["beta_pv"] = fit.beta_pv;
  j["se"] = fit.se_pv;
  j["t"] = fit.t;
  j["p"] = fit.normal_pvalue();
  j["sigma2_hat"] = fit.sigma2_hat;
  j["beta_ext"] = std::vector<double>(fit.beta_ext.data(), fit.beta_ext.data() + fit.beta_ext.size());
  return j;
}

Learner make_learner(const std::string& name, double lambda) {
  Learner l{learner_from_string(name), lambda};
  return l;
}

double cv_lambda_for(const Dataset& data, LearnerKind kind, double margin) {
  const auto grid = default_lambda_grid(data.Z, data.y);
  const CvLearner cv = kind == LearnerKind::RelaxedLasso ? CvLearner::RelaxedLasso : CvLearner::Lasso;
  return cv_lambda_select(data.Z, data.y, grid, 10, margin, cv);
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find(',', start);
    const std::string item = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!item.empty()) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size()) throw CLI::ValidationError("list", "bad number '" + item + "'");
      out.push_back(v);
    }
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Leave-one-out pre-validation: fitting, null distributions, bootstrap tests, studies"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0: all cores)")->capture_default_str();
  app.add_option("--out", g.out, "Output file (stdout when omitted for JSON results)");

  // preval
  auto* preval_cmd = app.add_subcommand("preval", "Pre-validate a CSV dataset and fit the second stage");
  std::string pv_data, pv_learner = "ols";
  double pv_lambda = 0.0, pv_margin = 0.10;
  bool pv_exact = false, pv_reuse = false, pv_cv = false;
  preval_cmd->add_option("--data", pv_data, "Dataset CSV (y,x1..xe,z1..zp)")->required();
  preval_cmd->add_option("--learner", pv_learner, "ols|ridge|lasso|relaxed_lasso|logistic_lasso")->capture_default_str();
  preval_cmd->add_option("--lambda", pv_lambda, "First-stage penalty")->capture_default_str();
  preval_cmd->add_flag("--cv", pv_cv, "Choose lambda by 10-fold CV (lasso, relaxed_lasso)");
  preval_cmd->add_option("--margin", pv_margin, "CV margin over the minimum error")->capture_default_str();
  preval_cmd->add_flag("--exact", pv_exact, "Explicit n refits instead of the shortcut or ALO");
  preval_cmd->add_flag("--reuse", pv_reuse, "Also report the data-reuse second stage");

  // nulldist
  auto* null_cmd = app.add_subcommand("nulldist", "Sample the limiting null law and compute a p-value");
  std::string nd_data, nd_learner = "ols", nd_draws_csv, nd_sigma = "x";
  double nd_lambda = 0.0;
  std::optional<double> nd_t;
  Index nd_draws = kDefaultLimitDraws;
  bool nd_no_intercept = false;
  null_cmd->add_option("--from-data", nd_data, "Dataset CSV for the plug-in parameters")->required();
  null_cmd->add_option("--learner", nd_learner, "ols|ridge")->capture_default_str();
  null_cmd->add_option("--lambda", nd_lambda, "Ridge penalty")->capture_default_str();
  null_cmd->add_option("--draws", nd_draws, "Monte Carlo draws")->capture_default_str();
  null_cmd->add_option("--t-obs", nd_t, "Observed statistic (default: computed from the data)");
  null_cmd->add_option("--draws-csv", nd_draws_csv, "Also write the draws to this CSV");
  null_cmd->add_option("--sigma-source", nd_sigma, "x (y on X) or second_stage")->capture_default_str();
  null_cmd->add_flag("--no-intercept-block", nd_no_intercept,
                     "Exclude the intercept column from the external block");

  // boot
  auto* boot_cmd = app.add_subcommand("boot", "Bootstrap test for the pre-validated statistic");
  std::string bt_data, bt_mode = "parametric", bt_learner = "lasso", bt_pmode = "equal_tail";
  BootConfig bt;
  std::optional<double> bt_lambda;
  bool bt_exact = false, bt_tstar = false;
  boot_cmd->add_option("--data", bt_data, "Dataset CSV")->required();
  boot_cmd->add_option("--mode", bt_mode, "parametric|nonparametric")->capture_default_str();
  boot_cmd->add_option("--learner", bt_learner, "First-stage learner")->capture_default_str();
  boot_cmd->add_option("--lambda", bt_lambda, "Fixed penalty (default: CV once on the data)");
  boot_cmd->add_option("-B,--reps", bt.n_reps, "Replicates")->capture_default_str();
  boot_cmd->add_option("--margin", bt.margin, "CV margin")->capture_default_str();
  boot_cmd->add_option("--ci-level", bt.ci_level, "Percentile interval level")->capture_default_str();
  boot_cmd->add_option("--pvalue", bt_pmode, "tail|equal_tail|literal")->capture_default_str();
  boot_cmd->add_option("--alpha", bt.literal_alpha, "Threshold for the literal p-value")->capture_default_str();
  boot_cmd->add_flag("--exact", bt_exact, "Exact LOO refits instead of ALO");
  boot_cmd->add_flag("--t-star", bt_tstar, "Include replicate statistics in the output");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Run a simulation grid and write the cell table CSV");
  std::string sim_grid = "default", sim_mode = "analytic", sim_learner = "ols", sim_qq;
  std::string sim_snr, sim_gamma, sim_phi;
  double sim_lambda = 0.0;
  std::string sim_pmode = "equal_tail";
  std::optional<Index> sim_nsim, sim_boot_reps, sim_draws;
  sim_cmd->add_option("--grid", sim_grid, "default|smoke")->capture_default_str();
  sim_cmd->add_option("--mode", sim_mode, "analytic|bootstrap")->capture_default_str();
  sim_cmd->add_option("--learner", sim_learner, "First-stage learner")->capture_default_str();
  sim_cmd->add_option("--lambda", sim_lambda, "First-stage penalty")->capture_default_str();
  sim_cmd->add_option("--n-sim", sim_nsim, "Datasets per cell");
  sim_cmd->add_option("--snr", sim_snr, "Comma-separated SNR levels");
  sim_cmd->add_option("--gamma", sim_gamma, "Comma-separated Γ scales");
  sim_cmd->add_option("--phi", sim_phi, "Comma-separated Var(Zφ)/σ² levels (0 = null)");
  sim_cmd->add_option("--boot-reps", sim_boot_reps, "Bootstrap replicates per dataset");
  sim_cmd->add_option("--pvalue", sim_pmode, "Bootstrap p-value: tail|equal_tail|literal")->capture_default_str();
  sim_cmd->add_option("--draws", sim_draws, "Analytic draws per cell");
  sim_cmd->add_option("--qq-dir", sim_qq, "Write one QQ CSV per cell into this directory");

  // gwas
  auto* gwas_cmd = app.add_subcommand("gwas", "Synthetic GWAS analysis, or a heritability replicate study");
  GwasSpec gw;
  Index gw_boot = 200, gw_study = 0;
  bool gw_std = false, gw_alo = false;
  gwas_cmd->add_option("--n", gw.n, "Individuals")->capture_default_str();
  gwas_cmd->add_option("--p", gw.p, "SNPs")->capture_default_str();
  gwas_cmd->add_option("--e", gw.e, "Fixed-effect covariates besides the intercept")->capture_default_str();
  gwas_cmd->add_option("--sigma2-b", gw.sigma2_b, "Per-SNP effect variance")->capture_default_str();
  gwas_cmd->add_option("--sigma2-eps", gw.sigma2_eps, "Noise variance")->capture_default_str();
  gwas_cmd->add_option("--boot-reps", gw_boot, "Bootstrap replicates")->capture_default_str();
  gwas_cmd->add_option("--study", gw_study, "Run this many heritability replicates instead (CSV to --out)");
  gwas_cmd->add_flag("--standardize", gw_std, "Center and scale genotype columns");
  gwas_cmd->add_flag("--alo", gw_alo, "Approximate LOO in the heritability study");

  // errstudy
  auto* err_cmd = app.add_subcommand("errstudy", "Training vs test error of LOO and data-reuse fits");
  std::string er_model = "both", er_learner = "ols";
  double er_lambda = 0.0;
  Index er_reps = 200;
  ErrorStudySpec er;
  err_cmd->add_option("--model", er_model, "no_externals|with_externals|both")->capture_default_str();
  err_cmd->add_option("--reps", er_reps, "Replicates")->capture_default_str();
  err_cmd->add_option("--learner", er_learner, "First-stage learner")->capture_default_str();
  err_cmd->add_option("--lambda", er_lambda, "First-stage penalty")->capture_default_str();
  err_cmd->add_option("--n", er.n, "Training rows")->capture_default_str();
  err_cmd->add_option("--p", er.p, "Internal features")->capture_default_str();
  err_cmd->add_option("--e", er.e, "External covariates (with_externals)")->capture_default_str();

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "Write a synthetic dataset CSV");
  std::string gn_kind = "null";
  Index gn_n = 100, gn_p = 30, gn_e = 4;
  double gn_snr = 0.2, gn_gamma = 1.0, gn_phi = 1.0;
  gen_cmd->add_option("--kind", gn_kind, "null|alt|gwas")->capture_default_str();
  gen_cmd->add_option("--n", gn_n, "Rows")->capture_default_str();
  gen_cmd->add_option("--p", gn_p, "Internal features")->capture_default_str();
  gen_cmd->add_option("--e", gn_e, "External columns besides the intercept")->capture_default_str();
  gen_cmd->add_option("--snr", gn_snr, "Var(Xβ)/σ²")->capture_default_str();
  gen_cmd->add_option("--gamma", gn_gamma, "Γ scale")->capture_default_str();
  gen_cmd->add_option("--phi", gn_phi, "Var(Zφ)/σ² (alt)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (preval_cmd->parsed()) {
      const Dataset data = read_dataset_csv(pv_data);
      Learner learner = make_learner(pv_learner, pv_lambda);
      if (pv_cv) learner.lambda = cv_lambda_for(data, learner.kind, pv_margin);
      const Vec y_pv = prevalidate(data, learner, pv_exact);
      const bool logistic = learner.kind == LearnerKind::LogisticLasso;
      const SecondStageFit fit =
          logistic ? second_stage_logistic(data.y, data.X, y_pv) : second_stage(data.y, data.X, y_pv);
      json j;
      j["learner"] = to_string(learner.kind);
      j["lambda"] = learner.lambda;
      j["n"] = data.n();
      j["prevalidation"] = fit_json(fit);
      if (pv_reuse) {
        const Vec y_re = data_reuse_predictions(data, learner);
        j["data_reuse"] = fit_json(logistic ? second_stage_logistic(data.y, data.X, y_re)
                                            : second_stage(data.y, data.X, y_re));
      }
      emit(g, j.dump(2));
    } else if (null_cmd->parsed()) {
      const Dataset data = read_dataset_csv(nd_data);
      const Learner learner = make_learner(nd_learner, nd_lambda);
      if (learner.kind != LearnerKind::OLS && learner.kind != LearnerKind::Ridge)
        throw CLI::ValidationError("--learner", "the limit law covers ols and ridge only");
      PlugInOptions opt;
      opt.include_intercept = !nd_no_intercept;
      opt.learner = learner;
      if (nd_sigma == "second_stage") opt.sigma_source = SigmaXSource::SecondStage;
      else if (nd_sigma != "x") throw CLI::ValidationError("--sigma-source", "expected x or second_stage");
      const double lambda = learner.kind == LearnerKind::Ridge ? learner.lambda : 0.0;
      const LimitParams params = estimate_params_from_data(data, lambda, opt);
      const double t_obs =
          nd_t ? *nd_t : second_stage(data.y, data.X, prevalidate(data, learner, false)).t;
      const LimitDraws draws = sample_limit_statistic(params, nd_draws, g.seed, g.threads);
      if (!nd_draws_csv.empty()) write_draws_csv(draws, nd_draws_csv);
      json j;
      j["t_obs"] = t_obs;
      j["p_value"] = pvalue_from_draws(draws, t_obs);
      j["draws"] = draws.n_draws;
      j["nonpositive"] = draws.nonpositive;
      j["kappa"] = params.kappa;
      j["sigma2_x"] = params.sigma2_x;
      j["sigma2_z"] = params.sigma2_z;
      emit(g, j.dump(2));
    } else if (boot_cmd->parsed()) {
      const Dataset data = read_dataset_csv(bt_data);
      if (bt_mode == "parametric") bt.mode = BootMode::Parametric;
      else if (bt_mode == "nonparametric") bt.mode = BootMode::Nonparametric;
      else throw CLI::ValidationError("--mode", "expected parametric or nonparametric");
      bt.pvalue_mode = pvalue_mode_from_string(bt_pmode);
      bt.learner = make_learner(bt_learner, bt_lambda.value_or(0.0));
      bt.pretrain = !bt_lambda.has_value();
      bt.use_alo = !bt_exact;
      bt.seed = g.seed;
      bt.threads = g.threads;
      emit(g, to_json(run_bootstrap(data, bt), bt_tstar));
    } else if (sim_cmd->parsed()) {
      const std::string out = require_out(g, "simulate");
      SimGrid grid = named_grid(sim_grid);
      grid.learner = make_learner(sim_learner, sim_lambda);
      if (sim_nsim) grid.n_sim = *sim_nsim;
      if (sim_boot_reps) grid.boot_reps = *sim_boot_reps;
      if (sim_draws) grid.analytic_draws = *sim_draws;
      if (!sim_snr.empty()) grid.snr_levels = parse_list(sim_snr);
      if (!sim_gamma.empty()) grid.gamma_levels = parse_list(sim_gamma);
      if (!sim_phi.empty()) grid.phi_scales = parse_list(sim_phi);
      grid.boot_pvalue = pvalue_mode_from_string(sim_pmode);
      grid.threads = g.threads;
      NullMode mode;
      if (sim_mode == "analytic") mode = NullMode::AnalyticNull;
      else if (sim_mode == "bootstrap") mode = NullMode::BootstrapNull;
      else throw CLI::ValidationError("--mode", "expected analytic or bootstrap");
      const GridReport report = run_sim_grid(grid, mode, g.seed);
      write_grid_csv(report, out);
      if (!sim_qq.empty()) {
        std::filesystem::create_directories(sim_qq);
        for (std::size_t c = 0; c < report.cells.size(); ++c) {
          const auto& cell = report.cells[c];
          if (cell.t_sample.empty()) continue;
          std::vector<double> ref = cell.reference;
          if (ref.empty()) {
            // Normal reference quantiles for bootstrap-mode cells
            Rng rng(derive_seed(g.seed, 0xcafe + c));
            ref.resize(20000);
            for (double& v : ref) v = rng.normal();
          }
          emit_qq(cell.t_sample, ref, (std::filesystem::path(sim_qq) / ("cell_" + std::to_string(c) + ".csv")).string());
        }
      }
    } else if (gwas_cmd->parsed()) {
      if (gw_study > 0) {
        const std::string out = require_out(g, "gwas --study");
        HeritabilityStudyConfig hc;
        hc.spec = gw;
        hc.n_reps = gw_study;
        hc.seed = g.seed;
        hc.standardize_z = gw_std;
        hc.approximate = gw_alo;
        hc.threads = g.threads;
        const HeritabilityStudy study = run_heritability_study(hc);
        write_heritability_csv(study, out);
        json j;
        j["lambda"] = study.lambda;
        for (const auto& s : study.summary)
          j[to_string(s.method)] = {{"mean", s.mean}, {"sd", s.sd}, {"bias", s.bias}, {"flagged", s.flagged}};
        std::cout << j.dump(2) << '\n';
      } else {
        GwasAnalysisConfig ac;
        ac.spec = gw;
        ac.seed = g.seed;
        ac.boot_reps = gw_boot;
        ac.standardize_z = gw_std;
        ac.threads = g.threads;
        emit(g, to_json(analyze_gwas(ac)));
      }
    } else if (err_cmd->parsed()) {
      const std::string out = require_out(g, "errstudy");
      const Learner learner = make_learner(er_learner, er_lambda);
      std::vector<ErrorModel> models;
      if (er_model == "no_externals" || er_model == "both") models.push_back(ErrorModel::NoExternals);
      if (er_model == "with_externals" || er_model == "both") models.push_back(ErrorModel::WithExternals);
      if (models.empty()) throw CLI::ValidationError("--model", "expected no_externals, with_externals or both");
      ErrorStudy all;
      for (ErrorModel m : models) {
        ErrorStudy s = run_error_study(m, er, er_reps, derive_seed(g.seed, static_cast<std::uint64_t>(m)),
                                       learner, g.threads);
        all.reports.insert(all.reports.end(), s.reports.begin(), s.reports.end());
      }
      all.summary = summarize_errors(all.reports);
      write_error_csv(all, out);
      json j = json::array();
      for (const auto& s : all.summary)
        j.push_back({{"model", to_string(s.model)},
                     {"method", to_string(s.method)},
                     {"train_err", s.train_err},
                     {"in_sample_err", s.in_sample_err},
                     {"out_sample_err", s.out_sample_err},
                     {"rel_bias_in", s.rel_bias_in},
                     {"rel_bias_out", s.rel_bias_out}});
      std::cout << j.dump(2) << '\n';
    } else if (gen_cmd->parsed()) {
      const std::string out = require_out(g, "generate");
      Dataset data;
      if (gn_kind == "gwas") {
        GwasSpec spec;
        spec.n = gn_n;
        spec.p = gn_p;
        spec.e = gn_e;
        data = gen_gwas(spec, g.seed).first;
      } else {
        SimGrid grid;
        grid.n = gn_n;
        grid.p = gn_p;
        grid.e = gn_e + 1;
        const GridStructure s = grid_structure(grid);
        AltSpec alt{cell_spec(grid, s, gn_snr, gn_gamma), Vec::Zero(gn_p), true};
        if (gn_kind == "alt") alt.phi = phi_for_signal(alt.base, s.phi_direction, gn_phi);
        else if (gn_kind != "null") throw CLI::ValidationError("--kind", "expected null, alt or gwas");
        data = gen_alt(alt, g.seed);
      }
      write_dataset_csv(data, out);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    json err{{"error", to_string(e.code())}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    json err{{"error", "Internal"}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 1;
  }
  return 0;
}
