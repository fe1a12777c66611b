#pragma once

#include <cstdint>
#include <vector>

#include "topogen/denoiser.hpp"
#include "topogen/image.hpp"
#include "topogen/schedule.hpp"

namespace topogen {

struct SampleConfig {
  int steps = 50;            // solver steps (uniform stride over 1..T)
  std::uint64_t seed = 0;    // seeds the initial Gaussian x_T
  int c = 1;                 // structure-count condition
  int class_id = -1;         // -1 = unconditioned on class
  int trajectory_every = 0;  // record predicted x0 every k solver steps (0 = off)
};

/// Deterministic (eta = 0) strided sampling: start from seeded Gaussian
/// noise, then repeatedly predict the noise, recover x0_hat, and jump to
/// the previous timestep on the subsequence:
///     x_prev = sqrt(ab_prev) * clamp(x0_hat) + sqrt(1 - ab_prev) * eps'
/// where eps' is the noise implied by the clamped estimate.  Clamping the
/// intermediate estimate to [-1, 1] keeps the trajectory on the data
/// manifold; the final iteration targets t = 0 (ab = 1) and returns the
/// raw, unclamped x0_hat.  Bit-reproducible in (model, ns, cfg).
ImageGrid ddim_sample(const Denoiser<float>& model, const NoiseSchedule& ns,
                      const SampleConfig& cfg, std::vector<ImageGrid>* trajectory = nullptr);

}  // namespace topogen
