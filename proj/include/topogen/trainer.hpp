#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "topogen/datagen.hpp"
#include "topogen/denoiser.hpp"
#include "topogen/optim.hpp"
#include "topogen/schedule.hpp"
#include "topogen/topo_loss.hpp"

namespace topogen {

struct TrainConfig {
  int steps = 20000;
  int batch = 16;
  AdamConfig adam;       // lr 1e-4 by default
  LossConfig loss;       // lambda and term switches for the topology loss
  bool use_topo = true;  // false removes the topology path entirely
  int t_threshold = 0;   // if > 0, apply the topology loss only when t <= this
  bool class_cond = false;
  std::uint64_t seed = 0;
  int checkpoint_every = 5000;  // 0 disables intermediate checkpoints
  std::string out_dir;          // "" = keep everything in memory, write nothing
};

/// Per-step training telemetry, passed to the report callback every step.
struct TrainReport {
  int step = 0;        // 1-based
  double l_simple = 0.0;
  double l_topo = 0.0;       // mean raw topology loss over the samples it applied to
  double lambda_mean = 0.0;  // mean effective per-sample weight this step
  double grad_norm = 0.0;
  bool skipped = false;  // non-finite gradients; optimizer update skipped
};

struct TrainStats {
  int steps_done = 0;
  int skipped_steps = 0;
};

using TrainReportFn = std::function<void(const TrainReport&)>;

/// Train the noise predictor on a mask dataset.
///
/// Each step draws `batch` (image, c) pairs and per-sample timesteps and
/// noise, forms x_t, and minimizes
///     L_simple + (1/batch) * sum_i lambda(t_i) * L_top(x0_hat_i, c_i)
/// where x0_hat is recovered from the noise prediction inside the graph and
/// the topology gradient is injected there.  All randomness comes from
/// cfg.seed; training is single-threaded and bit-reproducible.
///
/// A non-finite loss aborts with NumericalError after dumping the offending
/// batch to out_dir/diagnostics (when out_dir is set); non-finite gradients
/// skip the optimizer step and are reported.
TrainStats train_denoiser(Denoiser<float>& model, const LoadedDataset& data,
                          const NoiseSchedule& ns, const TrainConfig& cfg,
                          const TrainReportFn& report = {});

}  // namespace topogen
