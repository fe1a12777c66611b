#include "topogen/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "topogen/errors.hpp"
#include "topogen/rng.hpp"

namespace topogen {

ImageGrid ddim_sample(const Denoiser<float>& model, const NoiseSchedule& ns,
                      const SampleConfig& cfg, std::vector<ImageGrid>* trajectory) {
  const DenoiserConfig& mc = model.config();
  if (mc.T != ns.T) throw ValidationError("ddim_sample: schedule does not match the model");
  if (mc.in_channels != 1)
    throw ValidationError("ddim_sample: only single-channel models are supported");
  if (cfg.c < 1 || cfg.c > mc.c_max)
    throw ValidationError("ddim_sample: c out of range [1, c_max]");
  if (cfg.class_id >= 0 && mc.num_classes == 0)
    throw ValidationError("ddim_sample: class id given but the model has no class condition");
  if (mc.num_classes > 0 && cfg.class_id < 0)
    throw ValidationError("ddim_sample: the model expects a class id");

  const std::vector<int> taus = ddim_timesteps(ns.T, cfg.steps);
  const int S = mc.image_size;
  const std::size_t d = static_cast<std::size_t>(S) * S;

  Rng rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<float> x(d);
  for (float& v : x) v = static_cast<float>(gauss(rng));

  const std::vector<int> cs = {cfg.c};
  const std::vector<int> cls =
      cfg.class_id >= 0 ? std::vector<int>{cfg.class_id} : std::vector<int>{};

  std::vector<float> x0hat(d);
  for (int k = cfg.steps - 1; k >= 0; --k) {
    const int t = taus[k];
    const int t_prev = k > 0 ? taus[k - 1] : 0;
    const std::vector<float> eps = model.predict_eps(x, 1, {t}, cs, cls);

    const float sa = static_cast<float>(std::sqrt(ns.ab(t)));
    const float sb = static_cast<float>(std::sqrt(1.0 - ns.ab(t)));
    for (std::size_t i = 0; i < d; ++i) x0hat[i] = (x[i] - sb * eps[i]) / sa;

    const float pa = static_cast<float>(std::sqrt(ns.ab(t_prev)));
    const float pb = static_cast<float>(std::sqrt(1.0 - ns.ab(t_prev)));
    if (k > 0) {
      // Clamp the clean-image estimate to the data range and step with the
      // noise it implies.  Without this the 1/sqrt(ab) factor at large t
      // amplifies prediction error and the trajectory leaves the data
      // manifold entirely.  The raw estimate is kept for the trajectory
      // dump and the final return.
      for (std::size_t i = 0; i < d; ++i) {
        const float x0c = std::clamp(x0hat[i], -1.0f, 1.0f);
        const float ec = (x[i] - sa * x0c) / sb;
        x[i] = pa * x0c + pb * ec;
      }
    } else {
      // Final solver step: t_prev == 0, so pa == 1 and pb == 0.  Report the
      // estimate unclamped (clamping happens only at PNG export).
      for (std::size_t i = 0; i < d; ++i) x[i] = x0hat[i];
    }

    if (trajectory && cfg.trajectory_every > 0) {
      const int done = cfg.steps - k;  // solver steps completed
      if (done % cfg.trajectory_every == 0 || k == 0) {
        ImageGrid g(S, S);
        for (std::size_t i = 0; i < d; ++i) g.v[i] = x0hat[i];
        trajectory->push_back(std::move(g));
      }
    }
  }

  ImageGrid out(S, S);
  for (std::size_t i = 0; i < d; ++i) out.v[i] = x[i];
  return out;
}

}  // namespace topogen
