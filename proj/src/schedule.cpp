#include "topogen/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "topogen/errors.hpp"

namespace topogen {

double NoiseSchedule::ab(int t) const {
  if (t < 0 || t > T) throw ValidationError("NoiseSchedule: t out of range [0, T]");
  return t == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(t) - 1];
}

double NoiseSchedule::snr(int t) const {
  const double a = ab(t);
  if (t < 1) throw ValidationError("NoiseSchedule: snr needs t >= 1");
  return a / (1.0 - a);
}

NoiseSchedule cosine_schedule(int T, double s) {
  if (T < 1) throw ValidationError("cosine_schedule: T must be >= 1");
  if (!(s > 0.0)) throw ValidationError("cosine_schedule: s must be > 0");
  constexpr double kPi = 3.14159265358979323846;

  const auto f = [&](double t) {
    const double x = ((t / T + s) / (1.0 + s)) * kPi / 2.0;
    const double c = std::cos(x);
    return c * c;
  };
  const double f0 = f(0.0);

  NoiseSchedule ns;
  ns.T = T;
  ns.s = s;
  ns.beta.resize(T);
  ns.alpha.resize(T);
  ns.alpha_bar.resize(T);

  double prev = 1.0;  // alpha_bar at t-1 before clipping
  for (int t = 1; t <= T; ++t) {
    const double ab_t = f(static_cast<double>(t)) / f0;
    double beta = 1.0 - ab_t / prev;
    beta = std::clamp(beta, 0.0, 0.999);
    ns.beta[t - 1] = beta;
    prev = ab_t;
  }
  // Recompute alpha_bar from the clipped betas so that
  // alpha_bar[t] == prod(alpha[1..t]) holds exactly.
  double run = 1.0;
  for (int t = 1; t <= T; ++t) {
    ns.alpha[t - 1] = 1.0 - ns.beta[t - 1];
    run *= ns.alpha[t - 1];
    ns.alpha_bar[t - 1] = run;
  }
  if (ns.alpha_bar.back() <= 0.0)
    throw NumericalError("cosine_schedule: alpha_bar underflowed to 0");
  return ns;
}

namespace {

void check_same_shape(const ImageGrid& a, const ImageGrid& b, const char* what) {
  if (a.h != b.h || a.w != b.w)
    throw ValidationError(std::string(what) + ": image shapes differ");
}

}  // namespace

ImageGrid forward_sample(const ImageGrid& x0, const ImageGrid& eps, const NoiseSchedule& ns,
                         int t) {
  check_same_shape(x0, eps, "forward_sample");
  if (t < 1 || t > ns.T) throw ValidationError("forward_sample: t out of range [1, T]");
  const double a = std::sqrt(ns.ab(t));
  const double b = std::sqrt(1.0 - ns.ab(t));
  ImageGrid out(x0.h, x0.w);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = a * x0.v[i] + b * eps.v[i];
  return out;
}

ImageGrid predict_x0(const ImageGrid& xt, const ImageGrid& eps, const NoiseSchedule& ns, int t) {
  check_same_shape(xt, eps, "predict_x0");
  if (t < 1 || t > ns.T) throw ValidationError("predict_x0: t out of range [1, T]");
  const double a = std::sqrt(ns.ab(t));
  const double b = std::sqrt(1.0 - ns.ab(t));
  ImageGrid out(xt.h, xt.w);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = (xt.v[i] - b * eps.v[i]) / a;
  return out;
}

double lambda_at(int t, const LossConfig& cfg, const NoiseSchedule& ns) {
  if (cfg.weighting == TopoWeighting::constant) return cfg.lambda;
  const double snr = ns.snr(t);
  return cfg.lambda * std::min(snr, cfg.gamma) / snr;
}

std::vector<int> ddim_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) throw ValidationError("ddim_timesteps: need 1 <= steps <= T");
  std::vector<int> ts(steps);
  if (steps == 1) {
    ts[0] = T;
    return ts;
  }
  for (int k = 0; k < steps; ++k)
    ts[k] = 1 + static_cast<int>(std::llround(static_cast<double>(T - 1) * k / (steps - 1)));
  return ts;
}

}  // namespace topogen
