#include "glifuse/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace glifuse {

namespace {

constexpr double kEps = 1e-14;
constexpr int kMaxIter = 500;

// Continued fraction for the incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < 1e-300) d = 1e-300;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = 1.0 + aa / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = 1.0 + aa / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw std::invalid_argument("incomplete beta: a and b must be positive");
  }
  if (x < 0.0 || x > 1.0) {
    throw std::invalid_argument("incomplete beta: x must be in [0,1]");
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double regularized_gamma_lower(double s, double x) {
  if (!(s > 0.0)) {
    throw std::invalid_argument("incomplete gamma: s must be positive");
  }
  if (x < 0.0) {
    throw std::invalid_argument("incomplete gamma: x must be >= 0");
  }
  if (x == 0.0) return 0.0;
  if (x < s + 1.0) {
    // Series representation.
    double ap = s;
    double sum = 1.0 / s;
    double del = sum;
    for (int n = 0; n < kMaxIter; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    return sum * std::exp(-x + s * std::log(x) - std::lgamma(s));
  }
  // Continued fraction for Q, then P = 1 - Q.
  double b = x + 1.0 - s;
  double c = 1e300;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= kMaxIter; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - s);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  const double q = std::exp(-x + s * std::log(x) - std::lgamma(s)) * h;
  return 1.0 - q;
}

double regularized_gamma_upper(double s, double x) {
  return 1.0 - regularized_gamma_lower(s, x);
}

double f_survival(double f, double df1, double df2) {
  if (f < 0.0) return 1.0;
  // P(F > f) = I_{df2/(df2 + df1 f)}(df2/2, df1/2).
  const double x = df2 / (df2 + df1 * f);
  return regularized_incomplete_beta(df2 / 2.0, df1 / 2.0, x);
}

double chi_squared_survival(double x, double df) {
  if (x <= 0.0) return 1.0;
  return regularized_gamma_upper(df / 2.0, x / 2.0);
}

AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) {
    throw std::invalid_argument("one_way_anova: need at least 2 groups");
  }
  std::size_t n_total = 0;
  double grand_sum = 0.0;
  for (const auto& g : groups) {
    if (g.size() < 2) {
      throw std::invalid_argument(
          "one_way_anova: every group needs at least 2 samples");
    }
    n_total += g.size();
    for (double v : g) grand_sum += v;
  }
  const double grand_mean = grand_sum / static_cast<double>(n_total);

  double ss_between = 0.0;
  double ss_within = 0.0;
  for (const auto& g : groups) {
    double mean = 0.0;
    for (double v : g) mean += v;
    mean /= static_cast<double>(g.size());
    ss_between += static_cast<double>(g.size()) * (mean - grand_mean) *
                  (mean - grand_mean);
    for (double v : g) {
      ss_within += (v - mean) * (v - mean);
    }
  }
  AnovaResult r;
  r.df_between = groups.size() - 1;
  r.df_within = n_total - groups.size();
  if (ss_within == 0.0) {
    throw std::invalid_argument(
        "one_way_anova: zero within-group variance, F undefined");
  }
  const double ms_between = ss_between / static_cast<double>(r.df_between);
  const double ms_within = ss_within / static_cast<double>(r.df_within);
  r.f = ms_between / ms_within;
  r.p = f_survival(r.f, static_cast<double>(r.df_between),
                   static_cast<double>(r.df_within));
  return r;
}

KruskalWallisResult kruskal_wallis(
    const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) {
    throw std::invalid_argument("kruskal_wallis: need at least 2 groups");
  }
  std::size_t n_total = 0;
  for (const auto& g : groups) {
    if (g.empty()) {
      throw std::invalid_argument("kruskal_wallis: empty group");
    }
    n_total += g.size();
  }
  if (n_total < 3) {
    throw std::invalid_argument("kruskal_wallis: need at least 3 observations");
  }

  // Pool, sort, assign average ranks to ties.
  struct Obs {
    double value;
    std::size_t group;
  };
  std::vector<Obs> pooled;
  pooled.reserve(n_total);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (double v : groups[g]) pooled.push_back({v, g});
  }
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const Obs& a, const Obs& b) { return a.value < b.value; });

  std::vector<double> rank_sum(groups.size(), 0.0);
  double tie_term = 0.0;
  std::size_t i = 0;
  while (i < pooled.size()) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].value == pooled[i].value) ++j;
    const double t = static_cast<double>(j - i);
    const double avg_rank = (static_cast<double>(i + 1) +
                             static_cast<double>(j)) /
                            2.0;
    for (std::size_t q = i; q < j; ++q) {
      rank_sum[pooled[q].group] += avg_rank;
    }
    tie_term += t * t * t - t;
    i = j;
  }

  const double n = static_cast<double>(n_total);
  double h = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    h += rank_sum[g] * rank_sum[g] / static_cast<double>(groups[g].size());
  }
  h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);

  const double correction = 1.0 - tie_term / (n * n * n - n);
  if (correction == 0.0) {
    throw std::invalid_argument(
        "kruskal_wallis: all observations identical, H undefined");
  }
  KruskalWallisResult r;
  r.h = h / correction;
  r.df = groups.size() - 1;
  r.p = chi_squared_survival(r.h, static_cast<double>(r.df));
  return r;
}

}  // namespace glifuse
