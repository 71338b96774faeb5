// Acceptance checks: one PASS/FAIL line per criterion. Optional arguments
// select a subset, e.g. `acceptance 1 3`.

#include "prevalid/bootstrap.hpp"
#include "prevalid/datagen.hpp"
#include "prevalid/harness.hpp"
#include "prevalid/nulldist.hpp"
#include "prevalid/preval.hpp"
#include "prevalid/stats.hpp"
#include "prevalid/studies.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace prevalid;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
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

// Shortcut LOO for OLS and ridge against n explicit refits.
Outcome loo_oracle() {
  Rng rng(101);
  double worst = 0.0;
  int fits = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const Index p = 1 + static_cast<Index>(rng.index(8));
    const Index n = p + 8 + static_cast<Index>(rng.index(static_cast<std::uint64_t>(30 - p - 7)));
    Dataset d;
    d.X = with_intercept(rng.normal_matrix(n, 2));
    d.Z = rng.normal_matrix(n, p);
    d.y = d.X * rng.normal_vector(3) + d.Z * rng.normal_vector(p, 0.5) + rng.normal_vector(n);
    const Mat D = with_intercept(d.Z);
    std::vector<Learner> learners{{LearnerKind::OLS, 0.0}};
    for (double lambda : {0.0, 0.5, 5.0}) learners.push_back({LearnerKind::Ridge, lambda});
    for (const Learner& learner : learners) {
      const Vec pv = prevalidate(d, learner, false);
      for (Index i = 0; i < n; ++i) {
        const Mat Di = drop_row(D, i);
        Mat gram = Di.transpose() * Di;
        gram.diagonal().tail(p).array() += learner.lambda;
        const Vec b = gram.colPivHouseholderQr().solve(Di.transpose() * drop_row(d.y, i));
        worst = std::max(worst, std::abs(pv(i) - D.row(i).dot(b)));
      }
      ++fits;
    }
  }
  return {worst < 1e-8, fmt("max |shortcut - refit| = %.2e over %.0f instance-learner pairs", worst, fits)};
}

// Limit law without external structure vs (C − (p+1))/√C, C ~ χ²(p+1).
Outcome chi_square_reduction() {
  const Index p = 30;
  LimitParams params;
  params.Sigma = Mat::Identity(1, 1);
  params.Theta = RowVec::Zero(1);
  params.Gamma = Mat::Zero(1, p);
  params.alpha0 = Vec::Zero(1);
  const LimitDraws draws = sample_limit_statistic(params, 100000, 2024);
  std::mt19937_64 engine(7);
  std::chi_squared_distribution<double> chi(static_cast<double>(p + 1));
  std::vector<double> direct(100000);
  for (double& v : direct) {
    const double c = chi(engine);
    v = (c - static_cast<double>(p + 1)) / std::sqrt(c);
  }
  const double ks = stats::ks_two_sample(draws.values, direct);
  return {ks < 0.01 && draws.nonpositive == 0, fmt("KS = %.4f", ks)};
}

// The ridge evaluator at κ = 0 against the OLS evaluator on shared draws.
Outcome kappa_zero() {
  Rng rng(303);
  const Index e = 3, p = 12;
  LimitParams params;
  const Mat a = rng.normal_matrix(e, e);
  // intercept first: unit mean, centred remaining columns
  params.Theta = RowVec::Zero(e);
  params.Theta(0) = 1.0;
  params.Sigma = Mat::Zero(e, e);
  params.Sigma(0, 0) = 1.0;
  params.Sigma.bottomRightCorner(e - 1, e - 1) =
      a.bottomRows(e - 1) * a.bottomRows(e - 1).transpose() / static_cast<double>(e) + Mat::Identity(e - 1, e - 1);
  params.Gamma = rng.normal_matrix(e, p, 0.6);
  params.Gamma.row(0).setZero();
  params.alpha0 = rng.normal_vector(e);
  params.sigma2_x = 1.3;
  params.sigma2_z = 0.7;
  const LimitStatistic stat(params);
  const Mat joint = draw_joint_normal(params, 10000, 55);
  double worst = 0.0;
  for (Index b = 0; b < joint.cols(); ++b) {
    const Vec p0 = joint.col(b).head(p + 1), q0 = joint.col(b).tail(e);
    worst = std::max(worst, std::abs(stat(p0, q0) - ols_limit_statistic(params, p0, q0)));
  }
  return {worst < 1e-10, fmt("max per-draw |diff| = %.2e over 1e4 draws", worst)};
}

// Analytic reference vs Normal on the 3×3 (SNR, Γ) grid for OLS and ridge.
Outcome analytic_grid() {
  SimGrid grid = named_grid("default");
  grid.n = 100;
  grid.p = 30;
  grid.e = 5;
  grid.n_sim = 300;
  bool pass = true;
  std::ostringstream detail;
  for (const Learner& learner : {Learner{LearnerKind::OLS, 0.0}, Learner{LearnerKind::Ridge, 10.0}}) {
    grid.learner = learner;
    const GridReport r = run_sim_grid(grid, NullMode::AnalyticNull, 4040);
    int better = 0;
    double lo = 1.0, hi = 0.0;
    for (const auto& c : r.cells) {
      if (c.ks_analytic < c.ks_normal) ++better;
      lo = std::min(lo, c.miscoverage_analytic);
      hi = std::max(hi, c.miscoverage_analytic);
    }
    const bool ok = better >= 7 && lo >= 0.01 && hi <= 0.12;
    pass = pass && ok;
    detail << to_string(learner.kind) << ": KS(analytic) < KS(normal) in " << better << "/" << r.cells.size()
           << " cells, miscoverage in " << fmt("[%.3f, %.3f]", lo, hi) << "; ";
  }
  std::string text = detail.str();
  text.resize(text.size() - 2);
  return {pass, text};
}

// ALO vs exact LOO predictions for the Lasso.
Outcome alo_fidelity() {
  Rng rng(505);
  double worst = 1.0, total = 0.0;
  std::vector<double> all_alo, all_exact;
  for (int inst = 0; inst < 20; ++inst) {
    NullSpec spec;
    spec.n = 50;
    spec.p = 20;
    spec.e = 2;
    spec.Gamma = rng.normal_matrix(2, 20, 0.5);
    spec.beta0 = Vec{{0.2, 0.5, -0.3}};
    Vec phi = Vec::Zero(20);
    phi.head(5) = rng.normal_vector(5);
    const Dataset d = gen_alt(AltSpec{spec, phi_for_signal(spec, phi, 0.5)}, 600 + inst);
    const double lambda =
        cv_lambda_select(d.Z, d.y, default_lambda_grid(d.Z, d.y), 10, 0.10, CvLearner::Lasso);
    const Learner lasso{LearnerKind::Lasso, lambda};
    const Vec alo = prevalidate(d, lasso, false), exact = prevalidate(d, lasso, true);
    const double r = stats::pearson(alo, exact);
    all_alo.insert(all_alo.end(), alo.data(), alo.data() + alo.size());
    all_exact.insert(all_exact.end(), exact.data(), exact.data() + exact.size());
    worst = std::min(worst, r);
    total += r / 20.0;
  }
  const double pooled = stats::pearson(Eigen::Map<const Vec>(all_alo.data(), static_cast<Index>(all_alo.size())),
                                       Eigen::Map<const Vec>(all_exact.data(), static_cast<Index>(all_exact.size())));
  // every instance must clear the bar on its own
  return {worst > 0.99, fmt("min r = %.4f, mean r = %.4f, pooled r = %.4f over 20 instances (CV-chosen λ)", worst,
                            total, pooled)};
}

// Parametric bootstrap size and power with the ALO fast path.
Outcome bootstrap_calibration() {
  SimGrid grid = named_grid("default");
  grid.n = 100;
  grid.p = 30;
  grid.e = 5;
  grid.n_sim = 300;
  grid.snr_levels = {0.2};
  grid.gamma_levels = {1.0};
  grid.phi_scales = {0.0, 1.0};
  grid.learner = {LearnerKind::Lasso, 0.0};
  grid.boot_reps = 200;
  grid.boot_alo = true;
  const GridReport r = run_sim_grid(grid, NullMode::BootstrapNull, 6060);
  const double size = r.cells[0].reject_rate, power = r.cells[1].reject_rate;
  const bool pass = size >= 0.02 && size <= 0.08 && power > 0.5;
  return {pass, fmt("null rejection %.3f (failures %.0f), alternative rejection %.3f (failures %.0f)", size,
                    static_cast<double>(r.cells[0].failures), power, static_cast<double>(r.cells[1].failures))};
}

// Training vs test error directions for LOO and data-reuse fits.
Outcome error_study() {
  bool pass = true;
  std::ostringstream detail;
  for (ErrorModel model : {ErrorModel::NoExternals, ErrorModel::WithExternals}) {
    const ErrorStudy s = run_error_study(model, ErrorStudySpec{}, 200, 7070 + static_cast<int>(model));
    const ErrorSummary& loo = s.summary[0];
    const ErrorSummary& reuse = s.summary[1];
    const bool ok = reuse.rel_bias_in < -0.20 && std::abs(loo.rel_bias_in) < 0.10 &&
                    reuse.rel_bias_out < reuse.rel_bias_in;
    pass = pass && ok;
    detail << to_string(model)
           << fmt(": non-LOO in %.1f%% out %.1f%%, LOO in %.1f%%; ", 100.0 * reuse.rel_bias_in,
                  100.0 * reuse.rel_bias_out, 100.0 * loo.rel_bias_in);
  }
  std::string text = detail.str();
  text.resize(text.size() - 2);
  return {pass, text};
}

// Heritability estimators over 100 replicates.
Outcome heritability() {
  HeritabilityStudyConfig config;
  config.spec.n = 300;
  config.spec.p = 500;
  config.n_reps = 100;
  config.seed = 8080;
  const HeritabilityStudy s = run_heritability_study(config);
  const auto find = [&](HeritabilityMethod m) {
    return *std::find_if(s.summary.begin(), s.summary.end(), [m](const auto& x) { return x.method == m; });
  };
  const HeritabilitySummary reml = find(HeritabilityMethod::REML);
  const HeritabilitySummary pv = find(HeritabilityMethod::PreValidation);
  const HeritabilitySummary reuse = find(HeritabilityMethod::DataReuse);
  const bool sd_ok = pv.sd < reml.sd;
  const bool bias_ok = std::abs(reuse.bias) > std::abs(pv.bias);
  std::ostringstream detail;
  detail << fmt("λ = %.4f; sd PV %.3f vs REML %.3f", s.lambda, pv.sd, reml.sd) << (sd_ok ? " (ok)" : " (fails)")
         << fmt("; |bias| reuse %.3f vs PV %.3f", std::abs(reuse.bias), std::abs(pv.bias))
         << (bias_ok ? " (ok)" : " (fails)") << fmt("; means REML %.3f PV %.3f reuse %.3f", reml.mean, pv.mean, reuse.mean);
  return {sd_ok && bias_ok, detail.str()};
}

// Data reuse inflates |t| on null data.
Outcome anti_cheating() {
  SimGrid grid = named_grid("default");
  grid.n = 100;
  grid.p = 30;
  grid.e = 5;
  const GridStructure structure = grid_structure(grid);
  const NullSpec spec = cell_spec(grid, structure, 0.2, 1.0);
  double sum_pv = 0.0, sum_reuse = 0.0;
  for (int s = 0; s < 100; ++s) {
    const Dataset d = gen_null(spec, derive_seed(9090, s));
    const double lambda =
        cv_lambda_select(d.Z, d.y, default_lambda_grid(d.Z, d.y), 10, 0.10, CvLearner::Lasso);
    const Learner lasso{LearnerKind::Lasso, lambda};
    sum_pv += std::abs(second_stage(d.y, d.X, prevalidate(d, lasso, true)).t);
    sum_reuse += std::abs(second_stage(d.y, d.X, data_reuse_predictions(d, lasso)).t);
  }
  const double ratio = sum_reuse / sum_pv;
  return {ratio > 1.5, fmt("mean |t| reuse %.3f vs PV %.3f, ratio %.2f", sum_reuse / 100.0, sum_pv / 100.0, ratio)};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every CLI command twice, with 1 and 8 threads, compared byte for byte.
Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "prevalid_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cli = PREVALID_CLI;
  const auto run = [&](const std::string& args) {
    return std::system((cli + " " + args).c_str());
  };
  const std::string null_csv = (root / "null.csv").string();
  const std::string alt_csv = (root / "alt.csv").string();
  if (run("--seed 1 --out " + null_csv + " generate --kind null --n 80 --p 12") != 0 ||
      run("--seed 2 --out " + alt_csv + " generate --kind alt --n 80 --p 12 --phi 0.8") != 0)
    return {false, "dataset generation failed"};

  struct Command {
    std::string name, args;
    bool dir_output = false;
  };
  const std::vector<Command> commands{
      {"generate_null", "generate --kind null --n 60 --p 10"},
      {"generate_alt", "generate --kind alt --n 60 --p 10 --phi 0.5"},
      {"generate_gwas", "generate --kind gwas --n 60 --p 40"},
      {"preval_ridge", "preval --data " + alt_csv + " --learner ridge --lambda 3 --reuse"},
      {"preval_lasso_cv", "preval --data " + alt_csv + " --learner lasso --cv --reuse"},
      {"preval_relaxed_exact", "preval --data " + alt_csv + " --learner relaxed_lasso --lambda 0.1 --exact"},
      {"nulldist", "nulldist --from-data " + null_csv + " --learner ridge --lambda 2 --draws 20000"},
      {"boot_parametric", "boot --data " + alt_csv + " -B 60 --t-star"},
      {"boot_nonparametric", "boot --data " + alt_csv + " --mode nonparametric --lambda 0.1 -B 60 --t-star"},
      {"simulate_analytic", "simulate --grid smoke --n-sim 20 --snr 0.1,0.4", true},
      {"simulate_bootstrap", "simulate --grid smoke --mode bootstrap --learner lasso --n-sim 4", true},
      {"gwas", "gwas --n 80 --p 60 --boot-reps 20"},
      {"gwas_study", "gwas --n 60 --p 50 --study 3 --alo"},
      {"errstudy", "errstudy --reps 10 --learner ridge --lambda 1"},
  };
  int identical = 0;
  std::vector<std::string> mismatched;
  for (const Command& c : commands) {
    std::vector<std::string> outputs;
    bool ran = true;
    for (int threads : {1, 8}) {
      const fs::path dir = root / (c.name + "_t" + std::to_string(threads));
      fs::create_directories(dir);
      std::string args = "--seed 42 --threads " + std::to_string(threads) + " --out " + (dir / "out").string() +
                         " " + c.args;
      if (c.dir_output) args += " --qq-dir " + (dir / "qq").string();
      if (c.name == "nulldist") args += " --draws-csv " + (dir / "draws.csv").string();
      if (run(args + " >" + (dir / "stdout").string() + " 2>" + (dir / "stderr").string()) != 0) ran = false;
      std::string all;
      std::vector<fs::path> files;
      for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + slurp(f) + "\n";
      outputs.push_back(all);
    }
    if (ran && outputs[0] == outputs[1]) ++identical;
    else mismatched.push_back(c.name + (ran ? "" : " (failed to run)"));
  }
  fs::remove_all(root);
  std::string detail = std::to_string(identical) + "/" + std::to_string(commands.size()) +
                       " commands byte-identical across --threads 1 and 8";
  for (const auto& m : mismatched) detail += "; differs: " + m;
  return {mismatched.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"LOO shortcut vs brute-force refits", loo_oracle},
      {"limit law reduces to the chi-square transform", chi_square_reduction},
      {"ridge evaluator at κ=0 equals the OLS evaluator", kappa_zero},
      {"analytic reference fits the simulated grid", analytic_grid},
      {"ALO fidelity for the Lasso", alo_fidelity},
      {"parametric bootstrap calibration", bootstrap_calibration},
      {"error study directions", error_study},
      {"heritability study directions", heritability},
      {"data reuse inflates |t| under the null", anti_cheating},
      {"CLI determinism across thread counts", cli_determinism},
  };
  std::vector<bool> selected(criteria.size(), argc == 1);
  for (int a = 1; a < argc; ++a) {
    const int k = std::atoi(argv[a]);
    if (k < 1 || k > static_cast<int>(criteria.size())) {
      std::cerr << "unknown criterion '" << argv[a] << "'\n";
      return 2;
    }
    selected[static_cast<std::size_t>(k - 1)] = true;
  }
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!selected[k]) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::printf("criterion %zu: %s  %s: %s [%.1f s]\n", k + 1, o.pass ? "PASS" : "FAIL", criteria[k].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
