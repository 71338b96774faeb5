#pragma once

#include "prevalid/common.hpp"

#include <vector>

namespace prevalid::stats {

double mean(const std::vector<double>& x);
/// Unbiased sample variance.
double variance(const std::vector<double>& x);
double variance(const Vec& x);
double pearson(const Vec& a, const Vec& b);

/// Linear-interpolation quantile (type 7) of unsorted data.
double quantile(std::vector<double> x, double prob);
double quantile_sorted(const std::vector<double>& sorted, double prob);

double normal_cdf(double x);

/// sup |F_a − F_b| between two empirical CDFs.
double ks_two_sample(std::vector<double> a, std::vector<double> b);
/// sup |F_n − Φ|.
double ks_vs_normal(std::vector<double> a);

/// Drops NaNs.
std::vector<double> finite_only(const std::vector<double>& x);

}  // namespace prevalid::stats
