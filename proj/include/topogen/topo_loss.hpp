#pragma once

#include <cstdint>
#include <vector>

#include "topogen/image.hpp"
#include "topogen/persistence.hpp"

namespace topogen {

/// "Generate exactly c structures of dimension dim" (0 = components,
/// 1 = holes).
struct TopoConstraint {
  int c = 1;
  int dim = 0;
};

/// How to weight the per-timestep topology loss during training.
enum class TopoWeighting {
  constant,  // lambda at every timestep
  min_snr,   // lambda * min(SNR_t, gamma) / SNR_t
};

struct LossConfig {
  double lambda = 1e-5;         // weight of the topology loss in the total
  bool enable_preserve = true;  // keep the top-c dots (drive them to persistence 1)
  bool enable_denoise = true;   // kill all remaining dots (drive them to 0)
  TopoWeighting weighting = TopoWeighting::constant;
  double gamma = 5.0;           // SNR clamp for min_snr weighting
  int c_max = 10;               // largest supported constraint value
  std::size_t max_dots = 50000; // cap on dots processed per image (see topo_loss)
};

/// Diagram split under a constraint: the top-c dots in diagram order are
/// preserved, everything else is noise to denoise.
struct DiagramPartition {
  std::vector<PersistentDot> preserve;  // P: first min(c, |dots|) dots
  std::vector<PersistentDot> denoise;   // Q: the rest
};

DiagramPartition partition(const PersistenceDiagram& d, const TopoConstraint& tc);

struct PixelGrad {
  PixelCoord px;
  double g = 0.0;
};

/// Loss value and its sparse gradient with respect to the input image.
/// value == preserve_term + denoise_term always holds; a disabled term is
/// reported as 0 and contributes no gradient.
struct TopoLossResult {
  double value = 0.0;
  double preserve_term = 0.0;  // -sum over P of (J[m]-J[s])^2, <= 0
  double denoise_term = 0.0;   // +sum over Q of (J[m]-J[s])^2, >= 0
  std::vector<PixelGrad> grad; // sorted by row-major pixel index; shared pixels summed
};

/// Topology loss of an image in native [-1, 1] range under a constraint.
///
/// The image is first mapped to J = (img + 1) / 2 (no clamping, so the
/// gradient chain factor is exactly 1/2 everywhere).  The persistence
/// diagram of J in dimension tc.dim is partitioned into P (top tc.c dots)
/// and Q (rest); the loss is
///     - sum_P (J[m]-J[s])^2  +  sum_Q (J[m]-J[s])^2
/// where m is the dot's birth pixel and s its death pixel.  The gradient
/// treats the critical pixels as locally constant:
///     P: d/dJ[m] = -2(J[m]-J[s]), d/dJ[s] = +2(J[m]-J[s])
///     Q: signs reversed
/// then the 1/2 chain factor maps these back to the input image.  An
/// essential dot has no movable death pixel and contributes gradient only
/// at its birth pixel.
///
/// For ideal masks (values exactly {-1, +1}) with exactly c structures the
/// value is exactly -c.
///
/// If the diagram holds more than cfg.max_dots dots, Q is truncated to the
/// first (max_dots - |P|) dots in diagram order, deterministically dropping
/// the lowest-persistence noise.
TopoLossResult topo_loss(const ImageGrid& img, const TopoConstraint& tc, const LossConfig& cfg);

struct FdCheckResult {
  double max_rel_error = 0.0;
  int probes_evaluated = 0;
  int probes_flagged = 0;  // skipped because the critical structure flipped
};

/// Central-difference check of the analytic gradient at randomly chosen
/// pixels of the gradient support.  A probe is flagged (and excluded) when
/// the +/-h perturbation changes the critical-pixel structure of the
/// diagram, because the loss is only piecewise smooth there.  The pixel
/// where the essential dot dies is excluded from probing: it is pinned by
/// design and carries no gradient, yet perturbing it moves the essential
/// death value.  Relative error uses max(|analytic|, |fd|, 1e-6) as the
/// denominator so that agreeing near-zero gradients compare as equal.
FdCheckResult finite_diff_check(const ImageGrid& img, const TopoConstraint& tc,
                                const LossConfig& cfg, int probes, double h, std::uint64_t seed);

}  // namespace topogen
