#pragma once

#include <cstdint>
#include <vector>

#include "topogen/image.hpp"
#include "topogen/topo_loss.hpp"

namespace topogen {

/// Direct pixel-space steering: gradient-descend the topology loss on a
/// noise image, with no neural network involved.  This isolates the loss as
/// a steering signal and is what the `optimize` CLI subcommand runs.
struct OptimizeConfig {
  TopoConstraint constraint;
  int size = 64;
  int steps = 500;
  double lr = 0.1;
  std::uint64_t seed = 0;
  bool enable_preserve = true;
  bool enable_denoise = true;
};

struct OptimizeTraceRow {
  int step = 0;           // 0-based step index, recorded before the update
  double value = 0.0;
  double preserve_term = 0.0;
  double denoise_term = 0.0;
};

struct OptimizeResult {
  ImageGrid image;                     // final image after all steps
  std::vector<OptimizeTraceRow> trace; // one row per step
  int measured = 0;                    // structures measured on the final image
};

/// Start from seeded uniform noise in [-0.5, 0.5], take cfg.steps plain
/// gradient steps img -= lr * grad(topo_loss), and measure the achieved
/// structure count (binarize at 0, no area filter).
OptimizeResult optimize_topology(const OptimizeConfig& cfg);

}  // namespace topogen
