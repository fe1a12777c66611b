#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"

#include "topogen/datagen.hpp"
#include "topogen/errors.hpp"
#include "topogen/image.hpp"
#include "topogen/metrics.hpp"
#include "topogen/rng.hpp"

using namespace topogen;
using doctest::Approx;

namespace {

/// Student-t two-sided tail probability by direct numerical integration of
/// the density -- an oracle independent of the incomplete-beta route used
/// by the library.  Integrates the pdf over [-|t|, |t|] with Simpson's rule
/// and returns 1 - that mass.
double t_two_sided_oracle(double t, double dof) {
  const double logc = std::lgamma((dof + 1.0) / 2.0) - std::lgamma(dof / 2.0) -
                      0.5 * std::log(dof * M_PI);
  auto pdf = [&](double x) {
    return std::exp(logc - (dof + 1.0) / 2.0 * std::log1p(x * x / dof));
  };
  const double hi = std::fabs(t);
  const int n = 20000;  // even
  const double h = 2.0 * hi / n;
  double s = pdf(-hi) + pdf(hi);
  for (int i = 1; i < n; ++i) s += pdf(-hi + i * h) * (i % 2 ? 4.0 : 2.0);
  return 1.0 - s * h / 3.0;
}

/// I_x(a, b) by quadrature.  For a < 1 the integrand has an integrable
/// singularity at 0; substituting u = v^(1/a) removes it:
///   int_0^x u^(a-1)(1-u)^(b-1) du = a^-1? ... we instead integrate
///   t in [0, x^a], u = t^(1/a), du = (1/a) t^(1/a - 1) dt
///   => integral = (1/a) int_0^{x^a} (1 - t^(1/a))^{b-1} dt ... times a
/// Simpler: u = v^2 substitution handles a >= 1/2 smoothly, which covers
/// every call the library makes (a = dof/2 with dof >= 1, or b = 1/2 after
/// the symmetry flip -- the flip keeps x away from 1 so (1-u)^(b-1) stays
/// mild).  We integrate with the same symmetry flip the library uses so the
/// quadrature only ever sees the well-behaved side.
double inc_beta_oracle(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - inc_beta_oracle(b, a, 1.0 - x);
  const double logB = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  // u = v^2: integrand becomes 2 v^(2a-1) (1-v^2)^(b-1), smooth at 0 for
  // a >= 1/2.
  auto f = [&](double v) {
    if (v == 0.0) return 2.0 * a >= 1.0 ? (2.0 * a == 1.0 ? 2.0 : 0.0) : 0.0;
    return 2.0 * std::exp((2.0 * a - 1.0) * std::log(v) + (b - 1.0) * std::log1p(-v * v));
  };
  const double hi = std::sqrt(x);
  const int n = 200000;  // even
  const double h = hi / n;
  double s = f(0.0) + f(hi);
  for (int i = 1; i < n; ++i) s += f(i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0 / std::exp(logB);
}

}  // namespace

TEST_CASE("measured_count: components, holes, threshold, speckle filter") {
  // Two blobs, one of them a single pixel.
  ImageGrid g(8, 8, -1.0);
  g.at(1, 1) = g.at(1, 2) = g.at(2, 1) = g.at(2, 2) = 1.0;
  g.at(5, 5) = 1.0;
  CHECK(measured_count(g, 0) == 2);
  CHECK(measured_count(g, 0, 0.0, 2) == 1);  // speckle dropped
  CHECK(measured_count(g, 0, 0.0, 5) == 0);

  // Threshold selects the super-level set.
  ImageGrid t(4, 4, -1.0);
  t.at(0, 0) = 0.2;
  t.at(3, 3) = 0.8;
  CHECK(measured_count(t, 0, 0.0) == 2);
  CHECK(measured_count(t, 0, 0.5) == 1);

  // One room: hole counting ignores border-touching background.
  ImageGrid ring(7, 7, -1.0);
  for (int r = 1; r <= 5; ++r)
    for (int c = 1; c <= 5; ++c) ring.at(r, c) = 1.0;
  for (int r = 2; r <= 4; ++r)
    for (int c = 2; c <= 4; ++c) ring.at(r, c) = -1.0;
  CHECK(measured_count(ring, 1) == 1);
  CHECK(measured_count(ring, 1, 0.0, 10) == 0);  // 3x3 room < min_area 10
  CHECK(measured_count(ring, 0) == 1);

  // Agreement with the generators' exact labels.
  Rng rng(31);
  for (int c = 1; c <= 6; ++c) {
    CHECK(measured_count(gen_shapes(c, ShapeClass::mixed, 48, rng), 0) == c);
    CHECK(measured_count(gen_regions(c, 64, rng), 1) == c);
  }
}

TEST_CASE("counting metrics: frozen four-record example") {
  // targets 1,1,2,2; measured 1,2,2,2.
  std::vector<EvalRecord> rec = {
      {1, 1, 0, 0, ""}, {1, 2, 0, 1, ""}, {2, 2, 0, 2, ""}, {2, 2, 0, 3, ""}};
  const MetricsReport m = counting_metrics(rec);
  CHECK(m.n_records == 4);
  CHECK(m.accuracy == Approx(0.75).epsilon(1e-12));
  CHECK(m.per_c_accuracy.at(1) == Approx(0.5).epsilon(1e-12));
  CHECK(m.per_c_accuracy.at(2) == Approx(1.0).epsilon(1e-12));
  CHECK(m.per_c_count.at(1) == 2);
  CHECK(m.per_c_count.at(2) == 2);
  CHECK(m.per_c_accuracy_mean == Approx(0.75).epsilon(1e-12));
  // Sample std over {0.5, 1.0}: sqrt(((0.25)^2 + (0.25)^2) / 1) = sqrt(0.125).
  CHECK(m.per_c_accuracy_std == Approx(std::sqrt(0.125)).epsilon(1e-12));
  // Precision: class 1 -> 1/1; class 2 -> 2/3.  Macro: (1 + 2/3)/2 = 5/6.
  CHECK(m.macro_precision == Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(m.macro_recall == Approx(0.75).epsilon(1e-12));
  // F1: class 1 -> 2*1*.5/1.5 = 2/3; class 2 -> 2*(2/3)*1/(5/3) = 4/5.
  CHECK(m.macro_f1 == Approx((2.0 / 3.0 + 4.0 / 5.0) / 2.0).epsilon(1e-12));
  CHECK(m.confusion.at({1, 1}) == 1);
  CHECK(m.confusion.at({1, 2}) == 1);
  CHECK(m.confusion.at({2, 2}) == 2);
  CHECK(m.confusion.count({2, 1}) == 0);

  // Output renders without blowing up and mentions the headline number.
  CHECK(m.to_json().find("\"accuracy\"") != std::string::npos);
  CHECK(m.to_text().find("accuracy") != std::string::npos);
}

TEST_CASE("counting metrics: invariances and edge behavior") {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> cd(1, 5), md(0, 6);
  std::vector<EvalRecord> rec;
  for (int i = 0; i < 60; ++i)
    rec.push_back({cd(gen), md(gen), 0, static_cast<std::uint64_t>(i), ""});

  const MetricsReport base = counting_metrics(rec);
  std::shuffle(rec.begin(), rec.end(), gen);
  const MetricsReport shuf = counting_metrics(rec);
  CHECK(base.accuracy == shuf.accuracy);
  CHECK(base.macro_f1 == shuf.macro_f1);
  CHECK(base.per_c_accuracy == shuf.per_c_accuracy);

  // accuracy is the record-weighted mean of per-class accuracies.
  double acc = 0.0;
  for (const auto& [c, a] : base.per_c_accuracy) acc += a * base.per_c_count.at(c);
  CHECK(base.accuracy == Approx(acc / base.n_records).epsilon(1e-12));

  // Single class: std defined as 0.
  std::vector<EvalRecord> one = {{3, 3, 0, 0, ""}, {3, 2, 0, 1, ""}};
  CHECK(counting_metrics(one).per_c_accuracy_std == 0.0);

  CHECK_THROWS_AS(counting_metrics({}), ValidationError);
  std::vector<EvalRecord> mixed = {{1, 1, 0, 0, ""}, {1, 1, 1, 1, ""}};
  CHECK_THROWS_AS(counting_metrics(mixed), ValidationError);
}

TEST_CASE("incomplete beta agrees with quadrature oracle") {
  for (double a : {0.5, 1.0, 2.0, 4.5, 10.0})
    for (double b : {0.5, 1.0, 3.0, 8.0})
      for (double x : {0.05, 0.2, 0.5, 0.8, 0.9}) {
        const double lib = regularized_incomplete_beta(a, b, x);
        const double ora = inc_beta_oracle(a, b, x);
        CHECK(lib == Approx(ora).epsilon(1e-7));
      }
  CHECK(regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0);
  // I_x(1,1) = x exactly.
  CHECK(regularized_incomplete_beta(1.0, 1.0, 0.37) == Approx(0.37).epsilon(1e-12));
}

TEST_CASE("Welch t-test: frozen hand-checked case") {
  // a = 1..5, b = 2..6: means 3 and 4, both variances 2.5, n = 5.
  // t = (3-4)/sqrt(2.5/5 + 2.5/5) = -1, dof = (1)^2 / (2 * (0.5)^2 / 4) = 8.
  const std::vector<double> a = {1, 2, 3, 4, 5};
  const std::vector<double> b = {2, 3, 4, 5, 6};
  const WelchResult r = welch_ttest(a, b);
  CHECK(r.t == Approx(-1.0).epsilon(1e-12));
  CHECK(r.dof == Approx(8.0).epsilon(1e-12));
  CHECK(r.p_two_sided == Approx(t_two_sided_oracle(-1.0, 8.0)).epsilon(1e-6));
  CHECK(r.p_two_sided == Approx(0.34659).epsilon(1e-4));  // table value
  CHECK_FALSE(r.significant_at_95);

  // Swapping the samples flips the sign of t and keeps p.
  const WelchResult s = welch_ttest(b, a);
  CHECK(s.t == Approx(1.0).epsilon(1e-12));
  CHECK(s.p_two_sided == Approx(r.p_two_sided).epsilon(1e-12));
}

TEST_CASE("Welch t-test: oracle sweep, monotonicity, degenerate input") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> na(0.0, 1.0), nb(0.8, 1.7);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> a(8 + trial), b(5 + 2 * trial);
    for (double& v : a) v = na(gen);
    for (double& v : b) v = nb(gen);
    const WelchResult r = welch_ttest(a, b);
    CHECK(r.p_two_sided == Approx(t_two_sided_oracle(r.t, r.dof)).epsilon(1e-5));
    CHECK(r.significant_at_95 == (r.p_two_sided < 0.05));
  }

  // Identical samples: t = 0, p = 1.
  const std::vector<double> same = {1.0, 2.0, 3.0, 4.0};
  const WelchResult z = welch_ttest(same, same);
  CHECK(z.t == 0.0);
  CHECK(z.p_two_sided == Approx(1.0).epsilon(1e-12));

  // Larger |t| at fixed dof means smaller p.
  const double dof = 6.0;
  double prev = 1.0;
  for (double t : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double p = regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
    CHECK(p < prev);
    prev = p;
  }

  // A clearly separated pair is significant.
  const std::vector<double> lo = {0.1, 0.2, 0.15, 0.12, 0.18, 0.11};
  const std::vector<double> hi = {0.9, 0.95, 0.88, 0.92, 0.91, 0.94};
  const WelchResult sig = welch_ttest(hi, lo);
  CHECK(sig.t > 0.0);
  CHECK(sig.significant_at_95);

  CHECK_THROWS_AS(welch_ttest({1.0}, {1.0, 2.0}), ValidationError);
  CHECK_THROWS_AS(welch_ttest({1.0, 1.0}, {2.0, 2.0}), ValidationError);
}
