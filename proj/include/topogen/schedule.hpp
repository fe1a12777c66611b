#pragma once

#include <vector>

#include "topogen/image.hpp"
#include "topogen/topo_loss.hpp"

namespace topogen {

/// Discrete-time noise schedule.  Index convention: arrays are 0-based over
/// t = 1..T, i.e. beta[t-1] is the step-t noise rate; alpha_bar(0) == 1.
struct NoiseSchedule {
  int T = 0;
  double s = 0.008;
  std::vector<double> beta;       // (0, 0.999], size T
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product, strictly decreasing, > 0

  double ab(int t) const;  // alpha_bar at t in [0, T], ab(0) == 1
  double snr(int t) const; // ab(t) / (1 - ab(t)), t in [1, T]
};

/// Cosine schedule: f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), alpha_bar_t =
/// f(t)/f(0), betas derived from consecutive ratios and clipped to 0.999,
/// then alpha_bar recomputed from the clipped betas so the invariants hold
/// exactly.
NoiseSchedule cosine_schedule(int T = 1000, double s = 0.008);

/// Forward diffusion: x_t = sqrt(ab)*x0 + sqrt(1-ab)*eps, elementwise.
ImageGrid forward_sample(const ImageGrid& x0, const ImageGrid& eps, const NoiseSchedule& ns,
                         int t);

/// Invert the forward map from a noise prediction:
/// x0_hat = (x_t - sqrt(1-ab)*eps) / sqrt(ab).
ImageGrid predict_x0(const ImageGrid& xt, const ImageGrid& eps, const NoiseSchedule& ns, int t);

/// Per-timestep weight of the topology loss: cfg.lambda for constant
/// weighting, cfg.lambda * min(SNR_t, gamma)/SNR_t for min_snr.
double lambda_at(int t, const LossConfig& cfg, const NoiseSchedule& ns);

/// The ascending sub-sequence of timesteps used for strided deterministic
/// sampling: `steps` values from 1 to T inclusive, uniformly spaced
/// (steps == 1 gives {T}; steps == T gives 1..T).
std::vector<int> ddim_timesteps(int T, int steps);

}  // namespace topogen
