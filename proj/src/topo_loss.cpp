#include "topogen/topo_loss.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "topogen/errors.hpp"
#include "topogen/rng.hpp"

namespace topogen {

namespace {

void validate_constraint(const TopoConstraint& tc, const LossConfig& cfg) {
  if (tc.dim != 0 && tc.dim != 1) throw ValidationError("TopoConstraint: dim must be 0 or 1");
  if (tc.c < 1 || tc.c > cfg.c_max)
    throw ValidationError("TopoConstraint: c out of range [1, c_max]");
}

ImageGrid to_unit_range(const ImageGrid& img) {
  ImageGrid j(img.h, img.w);
  for (std::size_t i = 0; i < img.size(); ++i) j.v[i] = (img.v[i] + 1.0) * 0.5;
  return j;
}

}  // namespace

DiagramPartition partition(const PersistenceDiagram& d, const TopoConstraint& tc) {
  if (d.dim != tc.dim)
    throw ValidationError("partition: diagram dimension does not match the constraint");
  if (tc.c < 1) throw ValidationError("partition: c must be >= 1");
  DiagramPartition out;
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(tc.c), d.dots.size());
  out.preserve.assign(d.dots.begin(), d.dots.begin() + keep);
  out.denoise.assign(d.dots.begin() + keep, d.dots.end());
  return out;
}

TopoLossResult topo_loss(const ImageGrid& img, const TopoConstraint& tc, const LossConfig& cfg) {
  img.validate();
  validate_constraint(tc, cfg);

  const ImageGrid j = to_unit_range(img);
  const PersistenceDiagram diag = (tc.dim == 0) ? diagram_0d(j) : diagram_1d(j);
  DiagramPartition part = partition(diag, tc);
  if (part.preserve.size() + part.denoise.size() > cfg.max_dots) {
    const std::size_t q_keep = cfg.max_dots > part.preserve.size()
                                   ? cfg.max_dots - part.preserve.size()
                                   : 0;
    part.denoise.resize(std::min(part.denoise.size(), q_keep));
  }

  TopoLossResult out;
  // Accumulate gradients per pixel in row-major order; shared critical
  // pixels sum their contributions.
  std::map<std::int64_t, double> grad;
  const auto add_grad = [&](const PixelCoord& px, double g) {
    grad[static_cast<std::int64_t>(px.row) * img.w + px.col] += g;
  };

  for (const PersistentDot& dot : part.preserve) {
    const double gap = j.at(dot.birth_px.row, dot.birth_px.col) -
                       j.at(dot.death_px.row, dot.death_px.col);
    out.preserve_term -= gap * gap;
    if (!cfg.enable_preserve) continue;
    // d(loss)/dJ chained through J = (img+1)/2, i.e. an extra factor 1/2.
    add_grad(dot.birth_px, -gap);
    if (!dot.essential) add_grad(dot.death_px, gap);
  }
  for (const PersistentDot& dot : part.denoise) {
    const double gap = j.at(dot.birth_px.row, dot.birth_px.col) -
                       j.at(dot.death_px.row, dot.death_px.col);
    out.denoise_term += gap * gap;
    if (!cfg.enable_denoise) continue;
    add_grad(dot.birth_px, gap);
    if (!dot.essential) add_grad(dot.death_px, -gap);
  }

  if (!cfg.enable_preserve) out.preserve_term = 0.0;
  if (!cfg.enable_denoise) out.denoise_term = 0.0;
  out.value = out.preserve_term + out.denoise_term;

  out.grad.reserve(grad.size());
  for (const auto& [idx, g] : grad)
    out.grad.push_back({{static_cast<int>(idx / img.w), static_cast<int>(idx % img.w)}, g});
  return out;
}

namespace {

/// The critical-pixel structure the loss differentiates through: for every
/// dot used by the loss, its partition side, essential flag and critical
/// pixel indices.  If a perturbation changes this, the loss jumped to a
/// different smooth piece and finite differences are meaningless.
std::vector<std::int64_t> structure_signature(const ImageGrid& img, const TopoConstraint& tc,
                                              const LossConfig& cfg) {
  const ImageGrid j = to_unit_range(img);
  const PersistenceDiagram diag = (tc.dim == 0) ? diagram_0d(j) : diagram_1d(j);
  const DiagramPartition part = partition(diag, tc);
  std::vector<std::int64_t> sig;
  const auto push = [&](const PersistentDot& d, int side) {
    sig.push_back(side);
    sig.push_back(d.essential ? 1 : 0);
    sig.push_back(static_cast<std::int64_t>(d.birth_px.row) * img.w + d.birth_px.col);
    sig.push_back(static_cast<std::int64_t>(d.death_px.row) * img.w + d.death_px.col);
  };
  for (const PersistentDot& d : part.preserve) push(d, 0);
  for (const PersistentDot& d : part.denoise) push(d, 1);
  return sig;
}

}  // namespace

FdCheckResult finite_diff_check(const ImageGrid& img, const TopoConstraint& tc,
                                const LossConfig& cfg, int probes, double h, std::uint64_t seed) {
  if (probes < 1) throw UsageError("finite_diff_check: probes must be >= 1");
  if (!(h > 0.0)) throw UsageError("finite_diff_check: step h must be > 0");

  const TopoLossResult base = topo_loss(img, tc, cfg);
  const std::vector<std::int64_t> base_sig = structure_signature(img, tc, cfg);

  // Pixels pinned as essential deaths: no gradient by design, but the loss
  // value still moves when they move, so they are not probeable.
  const ImageGrid j = to_unit_range(img);
  const PersistenceDiagram diag = (tc.dim == 0) ? diagram_0d(j) : diagram_1d(j);
  std::vector<std::int64_t> pinned;
  for (const PersistentDot& d : diag.dots)
    if (d.essential)
      pinned.push_back(static_cast<std::int64_t>(d.death_px.row) * img.w + d.death_px.col);

  std::vector<std::int64_t> support;
  std::vector<double> analytic;
  for (const PixelGrad& pg : base.grad) {
    const std::int64_t idx = static_cast<std::int64_t>(pg.px.row) * img.w + pg.px.col;
    if (std::find(pinned.begin(), pinned.end(), idx) != pinned.end()) continue;
    support.push_back(idx);
    analytic.push_back(pg.g);
  }

  FdCheckResult out;
  if (support.empty()) return out;

  std::vector<std::size_t> order(support.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  if (order.size() > static_cast<std::size_t>(probes)) order.resize(probes);

  ImageGrid work = img;
  for (std::size_t oi : order) {
    const std::int64_t idx = support[oi];
    const double saved = work.v[static_cast<std::size_t>(idx)];

    work.v[static_cast<std::size_t>(idx)] = saved + h;
    const bool plus_ok = structure_signature(work, tc, cfg) == base_sig;
    const double f_plus = topo_loss(work, tc, cfg).value;

    work.v[static_cast<std::size_t>(idx)] = saved - h;
    const bool minus_ok = structure_signature(work, tc, cfg) == base_sig;
    const double f_minus = topo_loss(work, tc, cfg).value;

    work.v[static_cast<std::size_t>(idx)] = saved;

    if (!plus_ok || !minus_ok) {
      ++out.probes_flagged;
      continue;
    }
    const double fd = (f_plus - f_minus) / (2.0 * h);
    const double g = analytic[oi];
    const double denom = std::max({std::abs(g), std::abs(fd), 1e-6});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(fd - g) / denom);
    ++out.probes_evaluated;
  }
  return out;
}

}  // namespace topogen
