#include "topogen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "topogen/errors.hpp"
#include "topogen/rng.hpp"

namespace topogen {

namespace {

/// Write the offending batch next to the run outputs so a numerical blowup
/// can be inspected after the abort.
void dump_diagnostics(const std::string& out_dir, int step, const std::vector<int>& idx,
                      const std::vector<int>& ts, const std::vector<int>& cs,
                      const std::vector<float>& xt, const LoadedDataset& data,
                      double l_simple, double l_topo) {
  if (out_dir.empty()) return;
  const auto dir = std::filesystem::path(out_dir) / "diagnostics";
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["step"] = step;
  j["l_simple"] = l_simple;
  j["l_topo"] = l_topo;
  j["dataset_indices"] = idx;
  j["t"] = ts;
  j["c"] = cs;
  std::ofstream meta(dir / "batch.json");
  meta << j.dump(2) << "\n";
  const int S = data.image_size;
  const std::size_t d = static_cast<std::size_t>(S) * S;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    ImageGrid g(S, S);
    for (std::size_t k = 0; k < d; ++k) g.v[k] = xt[i * d + k];
    // Raw floats, not PNG: the whole point is to preserve the bad values.
    try {
      save_raw(g, (dir / ("xt_" + std::to_string(i) + ".tdnf")).string());
    } catch (const ValidationError&) {
      // non-finite pixels fail validation; skip that sample's dump
    }
  }
}

}  // namespace

TrainStats train_denoiser(Denoiser<float>& model, const LoadedDataset& data,
                          const NoiseSchedule& ns, const TrainConfig& cfg,
                          const TrainReportFn& report) {
  if (cfg.steps < 1) throw UsageError("train: steps must be >= 1");
  if (cfg.batch < 1) throw UsageError("train: batch must be >= 1");
  if (data.images.empty()) throw ValidationError("train: dataset is empty");
  const DenoiserConfig& mc = model.config();
  if (data.image_size != mc.image_size)
    throw ValidationError("train: dataset image size does not match the model");
  if (mc.T != ns.T) throw ValidationError("train: schedule length does not match the model");
  for (int c : data.c)
    if (c < 1 || c > mc.c_max)
      throw ValidationError("train: dataset label c outside the model's [1, c_max]");
  if (cfg.class_cond && mc.num_classes == 0)
    throw ValidationError("train: class conditioning requested but the model has none");

  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  const int S = mc.image_size;
  const std::size_t d = static_cast<std::size_t>(S) * S;
  const int B = cfg.batch;

  Rng rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.images.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, ns.T);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Adam<float> opt(cfg.adam, model.params());
  TrainStats stats;

  std::vector<int> idx(B), ts(B), cs(B), cls(B);
  std::vector<float> x0(static_cast<std::size_t>(B) * d), eps(x0.size()), xt(x0.size());
  ImageGrid x0hat_grid(S, S);

  for (int step = 1; step <= cfg.steps; ++step) {
    // Assemble the batch.
    for (int i = 0; i < B; ++i) {
      const std::size_t k = pick(rng);
      idx[i] = static_cast<int>(k);
      ts[i] = pick_t(rng);
      cs[i] = data.c[k];
      cls[i] = data.class_id[k];
      const ImageGrid& img = data.images[k];
      for (std::size_t p = 0; p < d; ++p) {
        x0[i * d + p] = static_cast<float>(img.v[p]);
        eps[i * d + p] = static_cast<float>(gauss(rng));
      }
      const double sa = std::sqrt(ns.ab(ts[i]));
      const double sb = std::sqrt(1.0 - ns.ab(ts[i]));
      for (std::size_t p = 0; p < d; ++p)
        xt[i * d + p] = static_cast<float>(sa * x0[i * d + p] + sb * eps[i * d + p]);
    }

    // Forward graph, noise-prediction objective.
    nn::Tape<float> tape;
    const auto xt_node = tape.input({B, 1, S, S}, xt);
    const auto eps_pred =
        model.forward(tape, xt_node, ts, cs, cfg.class_cond ? cls : std::vector<int>{});
    const auto eps_node = tape.input({B, 1, S, S}, eps);
    const auto l_simple_node = tape.mse(eps_pred, eps_node);
    const double l_simple = static_cast<double>(tape.value(l_simple_node)[0]);

    // Topology loss on the predicted clean image, injected as an external
    // gradient at the x0_hat node.
    double l_topo = 0.0, lambda_sum = 0.0;
    int topo_n = 0;
    std::vector<std::pair<nn::Tape<float>::Ref, std::vector<float>>> injections;
    if (cfg.use_topo) {
      std::vector<float> ca(B), cb(B);
      for (int i = 0; i < B; ++i) {
        const double sa = std::sqrt(ns.ab(ts[i]));
        ca[i] = static_cast<float>(1.0 / sa);
        cb[i] = static_cast<float>(-std::sqrt(1.0 - ns.ab(ts[i])) / sa);
      }
      const auto x0hat = tape.affine_per_sample(xt_node, eps_pred, ca, cb);
      std::vector<float> inj(x0.size(), 0.0f);
      bool any = false;
      const auto& hv = tape.value(x0hat);
      for (int i = 0; i < B; ++i) {
        if (cfg.t_threshold > 0 && ts[i] > cfg.t_threshold) continue;
        for (std::size_t p = 0; p < d; ++p) x0hat_grid.v[p] = hv[i * d + p];
        if (!std::all_of(x0hat_grid.v.begin(), x0hat_grid.v.end(),
                         [](double v) { return std::isfinite(v); })) {
          dump_diagnostics(cfg.out_dir, step, idx, ts, cs, xt, data, l_simple, l_topo);
          throw NumericalError("train: non-finite predicted x0 at step " +
                               std::to_string(step));
        }
        const TopoLossResult res = topo_loss(x0hat_grid, {cs[i], data.dim}, cfg.loss);
        const double lam = lambda_at(ts[i], cfg.loss, ns);
        l_topo += res.value;
        lambda_sum += lam;
        ++topo_n;
        const double scale = lam / B;
        for (const PixelGrad& pg : res.grad)
          inj[i * d + static_cast<std::size_t>(pg.px.row) * S + pg.px.col] +=
              static_cast<float>(scale * pg.g);
        any = true;
      }
      if (any) injections.emplace_back(x0hat, std::move(inj));
      if (topo_n > 0) l_topo /= topo_n;
    }

    if (!std::isfinite(l_simple) || !std::isfinite(l_topo)) {
      dump_diagnostics(cfg.out_dir, step, idx, ts, cs, xt, data, l_simple, l_topo);
      throw NumericalError("train: non-finite loss at step " + std::to_string(step));
    }

    model.params().zero_grads();
    tape.backward(l_simple_node, injections);

    const double gnorm = model.params().grad_norm();
    const bool ok = opt.step(model.params());
    if (!ok) ++stats.skipped_steps;
    ++stats.steps_done;

    if (report) {
      TrainReport r;
      r.step = step;
      r.l_simple = l_simple;
      r.l_topo = l_topo;
      r.lambda_mean = topo_n > 0 ? lambda_sum / topo_n : 0.0;
      r.grad_norm = gnorm;
      r.skipped = !ok;
      report(r);
    }

    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
        step != cfg.steps) {
      save_checkpoint(model,
                      (std::filesystem::path(cfg.out_dir) / ("ckpt_" + std::to_string(step) +
                                                             ".tdnc")).string());
    }
  }

  if (!cfg.out_dir.empty())
    save_checkpoint(model, (std::filesystem::path(cfg.out_dir) / "model.tdnc").string());
  return stats;
}

}  // namespace topogen
