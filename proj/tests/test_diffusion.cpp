#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "doctest.h"

#include "topogen/denoiser.hpp"
#include "topogen/errors.hpp"
#include "topogen/optim.hpp"
#include "topogen/rng.hpp"
#include "topogen/sampler.hpp"
#include "topogen/schedule.hpp"

using namespace topogen;

namespace {

ImageGrid random_image(int h, int w, Rng& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  ImageGrid g(h, w);
  for (double& v : g.v) v = d(rng);
  return g;
}

DenoiserConfig small_config() {
  DenoiserConfig cfg;
  cfg.image_size = 8;
  cfg.base_channels = 8;
  cfg.channel_mult = {1, 2};
  cfg.emb_dim = 16;
  cfg.c_max = 3;
  cfg.T = 10;
  return cfg;
}

// A freshly initialized model has a zeroed output head (so it predicts no
// noise at all); give every zero tensor small random values when a test
// needs the output to actually depend on the inputs.
void randomize_zero_params(Denoiser<float>& model, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> d(-0.05f, 0.05f);
  for (std::size_t i = 0; i < model.params().count(); ++i) {
    auto& p = model.params().at(i);
    if (std::all_of(p.value.begin(), p.value.end(), [](float v) { return v == 0.0f; }))
      for (float& v : p.value) v = d(rng);
  }
}

}  // namespace

TEST_CASE("cosine schedule matches its closed form where betas are unclipped") {
  const NoiseSchedule ns = cosine_schedule(1000, 0.008);
  REQUIRE(ns.T == 1000);
  CHECK(ns.ab(0) == 1.0);

  const auto f = [&](double t) {
    const double x = ((t / 1000.0 + 0.008) / 1.008) * 3.14159265358979323846 / 2.0;
    return std::cos(x) * std::cos(x);
  };
  // Early and middle timesteps never trigger the 0.999 beta clip.
  for (int t : {1, 2, 10, 100, 500, 900}) {
    CHECK(ns.ab(t) == doctest::Approx(f(t) / f(0)).epsilon(1e-12));
  }
  // Invariants: strictly decreasing, in (0, 1); betas in (0, 0.999].
  for (int t = 1; t <= 1000; ++t) {
    CHECK(ns.ab(t) > 0.0);
    CHECK(ns.ab(t) < ns.ab(t - 1));
    CHECK(ns.beta[t - 1] > 0.0);
    CHECK(ns.beta[t - 1] <= 0.999);
  }
  // alpha_bar is exactly the running product of the clipped alphas.
  double run = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    run *= ns.alpha[t - 1];
    CHECK(ns.alpha_bar[t - 1] == run);
  }
}

TEST_CASE("forward noising and clean-image recovery are inverse maps") {
  const NoiseSchedule ns = cosine_schedule(100);
  Rng rng(5);
  const ImageGrid x0 = random_image(6, 6, rng);
  const ImageGrid eps = random_image(6, 6, rng);
  for (int t : {1, 17, 50, 100}) {
    const ImageGrid xt = forward_sample(x0, eps, ns, t);
    const ImageGrid rec = predict_x0(xt, eps, ns, t);
    for (std::size_t i = 0; i < x0.size(); ++i)
      CHECK(rec.v[i] == doctest::Approx(x0.v[i]).epsilon(1e-10));
  }
}

TEST_CASE("per-timestep topology weight: constant and SNR-clamped modes") {
  const NoiseSchedule ns = cosine_schedule(1000);
  LossConfig cfg;
  cfg.lambda = 1e-5;

  cfg.weighting = TopoWeighting::constant;
  CHECK(lambda_at(1, cfg, ns) == 1e-5);
  CHECK(lambda_at(1000, cfg, ns) == 1e-5);

  cfg.weighting = TopoWeighting::min_snr;
  // SNR decreases with t; early steps (SNR > gamma) are downweighted by
  // exactly gamma/SNR, late steps (SNR < gamma) keep the full weight.
  CHECK(ns.snr(1) > cfg.gamma);
  CHECK(lambda_at(1, cfg, ns) ==
        doctest::Approx(1e-5 * cfg.gamma / ns.snr(1)).epsilon(1e-12));
  CHECK(ns.snr(1000) < cfg.gamma);
  CHECK(lambda_at(1000, cfg, ns) == doctest::Approx(1e-5).epsilon(1e-12));
  for (int t = 2; t <= 1000; ++t) CHECK(ns.snr(t) < ns.snr(t - 1));
}

TEST_CASE("solver timestep subsequence: endpoints and uniform stride") {
  CHECK(ddim_timesteps(1000, 1) == std::vector<int>{1000});
  const auto two = ddim_timesteps(1000, 2);
  CHECK(two == std::vector<int>{1, 1000});

  const auto fifty = ddim_timesteps(1000, 50);
  REQUIRE(fifty.size() == 50);
  CHECK(fifty.front() == 1);
  CHECK(fifty.back() == 1000);
  for (std::size_t k = 0; k < fifty.size(); ++k) {
    const int expect = 1 + static_cast<int>(std::llround(999.0 * k / 49.0));
    CHECK(fifty[k] == expect);
  }
  for (std::size_t k = 1; k < fifty.size(); ++k) CHECK(fifty[k] > fifty[k - 1]);

  const auto all = ddim_timesteps(10, 10);
  for (int k = 0; k < 10; ++k) CHECK(all[k] == k + 1);

  CHECK_THROWS_AS(ddim_timesteps(10, 11), ValidationError);
  CHECK_THROWS_AS(ddim_timesteps(10, 0), ValidationError);
}

TEST_CASE("denoiser: frozen parameter budget and conditioning table sizes") {
  DenoiserConfig cfg;  // defaults: 32x32, base 32, mult {1,2,4}, emb 128
  Denoiser<float> model(cfg);
  CHECK(model.params().total_size() == 587873);
  CHECK(model.params().get("cemb.table").shape == nn::Shape{10, 128, 1, 1});

  // Zero-initialized model predicts exactly zero noise (zeroed head).
  Denoiser<float> small(small_config());
  auto eps = small.predict_eps(std::vector<float>(64, 0.3f), 1, {5}, {2});
  for (float v : eps) CHECK(v == 0.0f);
}

TEST_CASE("denoiser: deterministic initialization") {
  const DenoiserConfig cfg = small_config();
  Denoiser<float> a = Denoiser<float>::random_init(cfg, 7);
  Denoiser<float> b = Denoiser<float>::random_init(cfg, 7);
  Denoiser<float> c = Denoiser<float>::random_init(cfg, 8);

  bool same = true, differ = false;
  for (std::size_t i = 0; i < a.params().count(); ++i) {
    if (a.params().at(i).value != b.params().at(i).value) same = false;
    if (a.params().at(i).value != c.params().at(i).value) differ = true;
  }
  CHECK(same);
  CHECK(differ);

  // GroupNorm scales start at one, shifts at zero, output head all zero.
  const auto& gamma = a.params().get("head.gn.gamma").value;
  CHECK(std::all_of(gamma.begin(), gamma.end(), [](float v) { return v == 1.0f; }));
  const auto& head_w = a.params().get("head.conv.w").value;
  CHECK(std::all_of(head_w.begin(), head_w.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("denoiser config validation rejects bad shapes") {
  DenoiserConfig bad = small_config();
  bad.base_channels = 12;  // 12 not divisible by 8 groups
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = small_config();
  bad.image_size = 7;  // odd: cannot be pooled down to the next level
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = small_config();
  bad.emb_dim = 15;  // sinusoidal features need an even width
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("checkpoint: bit-exact roundtrip, mismatch and corruption rejected") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "topogen_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "m.tdnc").string();

  Denoiser<float> model = Denoiser<float>::random_init(small_config(), 99);
  save_checkpoint(model, path);
  Denoiser<float> loaded = load_checkpoint<float>(path);

  CHECK(loaded.config() == model.config());
  for (std::size_t i = 0; i < model.params().count(); ++i) {
    CHECK(loaded.params().at(i).name == model.params().at(i).name);
    CHECK(loaded.params().at(i).value == model.params().at(i).value);
  }

  // Same architecture, same bytes: saving the loaded model reproduces the file.
  const std::string path2 = (dir / "m2.tdnc").string();
  save_checkpoint(loaded, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), {});
  const std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);

  // Corrupted magic.
  std::string bad = b1;
  bad[0] = 'X';
  const std::string badpath = (dir / "bad.tdnc").string();
  std::ofstream(badpath, std::ios::binary).write(bad.data(), bad.size());
  CHECK_THROWS_AS(load_checkpoint<float>(badpath), ValidationError);

  // Truncated blob section.
  const std::string shortpath = (dir / "short.tdnc").string();
  std::ofstream(shortpath, std::ios::binary).write(b1.data(), b1.size() - 64);
  CHECK_THROWS_AS(load_checkpoint<float>(shortpath), ValidationError);

  CHECK_THROWS_AS(load_checkpoint<float>((dir / "missing.tdnc").string()), ValidationError);
  fs::remove_all(dir);
}

TEST_CASE("deterministic sampling: same seed, same bits; conditions validated") {
  const DenoiserConfig cfg = small_config();
  Denoiser<float> model = Denoiser<float>::random_init(cfg, 31337);
  randomize_zero_params(model, 999);
  const NoiseSchedule ns = cosine_schedule(cfg.T);

  SampleConfig sc;
  sc.steps = 5;
  sc.seed = 11;
  sc.c = 2;
  const ImageGrid a = ddim_sample(model, ns, sc);
  const ImageGrid b = ddim_sample(model, ns, sc);
  CHECK(a.v == b.v);  // bitwise

  sc.seed = 12;
  const ImageGrid c = ddim_sample(model, ns, sc);
  CHECK(a.v != c.v);

  sc.seed = 11;
  sc.c = 1;
  const ImageGrid d = ddim_sample(model, ns, sc);
  CHECK(a.v != d.v);  // the condition feeds the network

  for (double v : a.v) CHECK(std::isfinite(v));

  SampleConfig bad = sc;
  bad.c = 99;
  CHECK_THROWS_AS(ddim_sample(model, ns, bad), ValidationError);
  bad = sc;
  bad.class_id = 1;  // model has no class table
  CHECK_THROWS_AS(ddim_sample(model, ns, bad), ValidationError);
  const NoiseSchedule wrong = cosine_schedule(cfg.T + 1);
  CHECK_THROWS_AS(ddim_sample(model, wrong, sc), ValidationError);
}

TEST_CASE("trajectory dump records the predicted clean image") {
  const DenoiserConfig cfg = small_config();
  Denoiser<float> model = Denoiser<float>::random_init(cfg, 1);
  randomize_zero_params(model, 2);
  const NoiseSchedule ns = cosine_schedule(cfg.T);

  SampleConfig sc;
  sc.steps = 6;
  sc.c = 1;
  sc.trajectory_every = 2;
  std::vector<ImageGrid> traj;
  const ImageGrid out = ddim_sample(model, ns, sc, &traj);
  CHECK(traj.size() == 3);  // after steps 2, 4, 6
  // The final solver step targets t=0, so its x0_hat is the output itself.
  CHECK(traj.back().v == out.v);
}

TEST_CASE("Adam: first-step size is exactly lr, bias correction applied") {
  ParamStore<double> ps;
  ps.add("w", {1, 2, 1, 1});
  ps.get("w").value = {0.0, 0.0};

  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam<double> opt(cfg, ps);

  ps.get("w").grad = {1.0, -2.0};
  REQUIRE(opt.step(ps));
  // m_hat = g, v_hat = g^2 regardless of betas on the first step, so the
  // update is lr * sign(g) / (1 + eps/|g|).
  const double e0 = 0.1 * 1.0 / (1.0 + 1e-8);
  const double e1 = 0.1 * (-2.0) / (2.0 + 1e-8);
  CHECK(ps.get("w").value[0] == doctest::Approx(-e0).epsilon(1e-15));
  CHECK(ps.get("w").value[1] == doctest::Approx(-e1).epsilon(1e-15));
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("Adam: non-finite gradients skip the update and leave state intact") {
  ParamStore<double> ps;
  ps.add("w", {1, 1, 1, 1});
  ps.get("w").value = {1.0};
  AdamConfig cfg;
  Adam<double> opt(cfg, ps);

  ps.get("w").grad = {std::numeric_limits<double>::quiet_NaN()};
  CHECK_FALSE(opt.step(ps));
  CHECK(ps.get("w").value[0] == 1.0);
  CHECK(opt.skipped() == 1);
  CHECK(opt.steps_taken() == 0);

  ps.get("w").grad = {0.5};
  CHECK(opt.step(ps));
  CHECK(opt.steps_taken() == 1);
}
