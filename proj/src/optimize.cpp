#include "topogen/optimize.hpp"

#include <cmath>
#include <random>

#include "topogen/errors.hpp"
#include "topogen/metrics.hpp"
#include "topogen/rng.hpp"

namespace topogen {

OptimizeResult optimize_topology(const OptimizeConfig& cfg) {
  if (cfg.size < 2) throw UsageError("optimize: size must be >= 2");
  if (cfg.steps < 1) throw UsageError("optimize: steps must be >= 1");
  if (!(cfg.lr > 0.0)) throw UsageError("optimize: lr must be > 0");

  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> noise(-0.5, 0.5);
  ImageGrid img(cfg.size, cfg.size);
  for (double& v : img.v) v = noise(rng);

  LossConfig loss;
  loss.enable_preserve = cfg.enable_preserve;
  loss.enable_denoise = cfg.enable_denoise;

  OptimizeResult out;
  out.trace.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    const TopoLossResult res = topo_loss(img, cfg.constraint, loss);
    if (!std::isfinite(res.value))
      throw NumericalError("optimize: loss diverged at step " + std::to_string(step) +
                           " (reduce lr)");
    out.trace.push_back({step, res.value, res.preserve_term, res.denoise_term});
    for (const PixelGrad& pg : res.grad) {
      double& v = img.at(pg.px.row, pg.px.col);
      v -= cfg.lr * pg.g;
      if (!std::isfinite(v))
        throw NumericalError("optimize: image diverged at step " + std::to_string(step) +
                             " (reduce lr)");
    }
  }
  out.image = std::move(img);
  out.measured = measured_count(out.image, cfg.constraint.dim, 0.0, 0);
  return out;
}

}  // namespace topogen
