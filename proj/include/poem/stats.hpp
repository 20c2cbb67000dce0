#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace poem {

class undefined_test_error : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean: empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// ddof = 0 gives the population variance, ddof = 1 the sample variance.
inline double variance(std::span<const double> xs, int ddof = 1) {
  if (xs.size() <= static_cast<std::size_t>(ddof)) throw std::invalid_argument("variance: sample too small");
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / static_cast<double>(xs.size() - static_cast<std::size_t>(ddof));
}

namespace detail {

// Continued fraction for I_x(a, b), modified Lentz.
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw std::runtime_error("incomplete_beta: continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("incomplete_beta: a and b must be > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::betacf(a, b, x) / a;
  return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
inline double student_t_two_tailed_p(double t, double dof) {
  if (!(dof > 0.0)) throw std::invalid_argument("student_t: dof must be > 0");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

struct TTestResult {
  double t_statistic = 0.0;
  double p_value = 1.0;
  double dof = 0.0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
};

// Welch's unequal-variance two-sample t-test, two-tailed.
inline TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_t_test: each sample needs n >= 2");
  TTestResult r;
  r.n_a = a.size();
  r.n_b = b.size();
  r.mean_a = mean(a);
  r.mean_b = mean(b);
  const double va = variance(a) / static_cast<double>(r.n_a);
  const double vb = variance(b) / static_cast<double>(r.n_b);
  if (va == 0.0 && vb == 0.0) throw undefined_test_error("welch_t_test: both samples have zero variance");
  const double se2 = va + vb;
  r.t_statistic = (r.mean_a - r.mean_b) / std::sqrt(se2);
  r.dof = se2 * se2 / (va * va / static_cast<double>(r.n_a - 1) + vb * vb / static_cast<double>(r.n_b - 1));
  r.p_value = student_t_two_tailed_p(r.t_statistic, r.dof);
  return r;
}

struct ComparisonRow {
  TTestResult test;  // welch_t_test(ppo, poem): t < 0 when POEM scores higher
  double mean_poem = 0.0;
  double mean_ppo = 0.0;
  bool poem_significantly_better = false;
};

inline ComparisonRow compare_runs(std::span<const double> rewards_poem, std::span<const double> rewards_ppo,
                                  double alpha) {
  ComparisonRow row;
  row.test = welch_t_test(rewards_ppo, rewards_poem);
  row.mean_ppo = row.test.mean_a;
  row.mean_poem = row.test.mean_b;
  row.poem_significantly_better = row.test.p_value < alpha && row.mean_poem > row.mean_ppo;
  return row;
}

}  // namespace poem
