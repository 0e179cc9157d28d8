#pragma once

// One-way ANOVA and Kruskal-Wallis omnibus tests with p-values computed
// in-house via the regularized incomplete beta/gamma functions (series
// plus continued fractions, tolerance 1e-14, no external statistics
// dependency).

#include <cstdint>
#include <vector>

namespace glifuse {

struct AnovaResult {
  double f = 0.0;
  double p = 1.0;
  std::uint64_t df_between = 0;
  std::uint64_t df_within = 0;
};

// F = MS_between / MS_within with df (k-1, N-k). Requires >= 2 groups
// of >= 2 samples each and nonzero within-group variance.
AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups);

struct KruskalWallisResult {
  double h = 0.0;
  double p = 1.0;
  std::uint64_t df = 0;
};

// Rank-based test with average ranks for ties and the tie correction
// H' = H / (1 - sum(t^3 - t)/(N^3 - N)). Requires >= 2 groups, N >= 3,
// and at least two distinct observations overall.
KruskalWallisResult kruskal_wallis(const std::vector<std::vector<double>>& groups);

// ---- special functions (exposed for direct verification) ----

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);

// Regularized lower incomplete gamma P(s, x); Q(s, x) = 1 - P(s, x).
double regularized_gamma_lower(double s, double x);
double regularized_gamma_upper(double s, double x);

// Survival functions built on the above.
double f_survival(double f, double df1, double df2);
double chi_squared_survival(double x, double df);

}  // namespace glifuse
