#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "doctest.h"

#include "topogen/denoiser.hpp"
#include "topogen/errors.hpp"
#include "topogen/rng.hpp"
#include "topogen/tensor.hpp"

using namespace topogen;
using nn::Shape;
using DTape = nn::Tape<double>;
using DParam = nn::Parameter<double>;
using DRef = DTape::Ref;

namespace {

std::vector<double> randvec(std::size_t n, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Central-difference check of d(root)/d(param) for every listed parameter
// entry.  `build` must construct the whole graph from scratch on the given
// tape (binding the same Parameter objects), returning a scalar root.
double max_grad_rel_error(const std::vector<DParam*>& params,
                          const std::function<DRef(DTape&)>& build, double h = 1e-5) {
  for (DParam* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  DTape tape;
  tape.backward(build(tape));

  double worst = 0.0;
  for (DParam* p : params) {
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const double orig = p->value[k];
      p->value[k] = orig + h;
      DTape up_tape;
      const double up = up_tape.value(build(up_tape))[0];
      p->value[k] = orig - h;
      DTape dn_tape;
      const double dn = dn_tape.value(build(dn_tape))[0];
      p->value[k] = orig;
      worst = std::max(worst, rel_err((up - dn) / (2.0 * h), p->grad[k]));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("forward values: elementwise and shape ops") {
  DTape tape;

  // silu
  auto s = tape.silu(tape.input({1, 1, 1, 3}, {0.0, 1.0, -1.0}));
  CHECK(tape.value(s)[0] == doctest::Approx(0.0));
  CHECK(tape.value(s)[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(tape.value(s)[2] == doctest::Approx(-1.0 * (1.0 / (1.0 + std::exp(1.0)))));

  // avg_pool2 of a 2x2 block
  auto p = tape.avg_pool2(tape.input({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));
  CHECK(tape.shape(p) == Shape{1, 1, 1, 1});
  CHECK(tape.value(p)[0] == doctest::Approx(2.5));

  // upsample duplicates each pixel into a 2x2 block
  auto u = tape.upsample_nearest2(tape.input({1, 1, 1, 2}, {5.0, 7.0}));
  CHECK(tape.shape(u) == Shape{1, 1, 2, 4});
  CHECK(tape.value(u) == std::vector<double>{5, 5, 7, 7, 5, 5, 7, 7});

  // per-sample affine mix
  auto a = tape.affine_per_sample(tape.input({2, 1, 1, 2}, {1, 2, 3, 4}),
                                  tape.input({2, 1, 1, 2}, {10, 20, 30, 40}), {2.0, -1.0},
                                  {0.5, 1.0});
  CHECK(tape.value(a) == std::vector<double>{2 + 5, 4 + 10, -3 + 30, -4 + 40});

  // mse
  auto m = tape.mse(tape.input({1, 1, 1, 2}, {1.0, 3.0}), tape.input({1, 1, 1, 2}, {0.0, 1.0}));
  CHECK(tape.value(m)[0] == doctest::Approx((1.0 + 4.0) / 2.0));

  // embedding picks rows
  auto e = tape.embedding(tape.input({3, 2, 1, 1}, {0, 1, 10, 11, 20, 21}), {2, 0});
  CHECK(tape.value(e) == std::vector<double>{20, 21, 0, 1});
}

TEST_CASE("forward values: conv2d and group_norm") {
  DTape tape;

  // 1x1 convolution with unit weight and a bias is an affine copy.
  auto x = tape.input({1, 1, 2, 2}, {1, 2, 3, 4});
  auto c = tape.conv2d(x, tape.input({1, 1, 1, 1}, {2.0}), tape.input({1, 1, 1, 1}, {0.5}), 0);
  CHECK(tape.value(c) == std::vector<double>{2.5, 4.5, 6.5, 8.5});

  // 3x3 averaging kernel, zero padding: center of a 3x3 image sums all.
  std::vector<double> ones(9, 1.0);
  auto x3 = tape.input({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto c3 = tape.conv2d(x3, tape.input({1, 1, 3, 3}, ones), tape.input({1, 1, 1, 1}, {0.0}), 1);
  CHECK(tape.value(c3)[4] == doctest::Approx(45.0));
  CHECK(tape.value(c3)[0] == doctest::Approx(1 + 2 + 4 + 5));  // corner sees 4 pixels

  // group_norm with unit gamma, zero beta: per-group mean 0, variance ~1.
  Rng rng(7);
  auto gx = tape.input({2, 4, 2, 2}, randvec(32, rng));
  auto gn = tape.group_norm(gx, tape.input({1, 4, 1, 1}, {1, 1, 1, 1}),
                            tape.input({1, 4, 1, 1}, {0, 0, 0, 0}), 2);
  const auto& v = tape.value(gn);
  for (int n = 0; n < 2; ++n) {
    for (int g = 0; g < 2; ++g) {
      double mean = 0.0, var = 0.0;
      for (int i = 0; i < 8; ++i) mean += v[n * 16 + g * 8 + i];
      mean /= 8;
      for (int i = 0; i < 8; ++i) {
        const double d = v[n * 16 + g * 8 + i] - mean;
        var += d * d;
      }
      var /= 8;
      CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shifts it slightly
    }
  }
}

TEST_CASE("gradcheck: every op against central differences") {
  Rng rng(20240101);
  double worst = 0.0;
  const auto check = [&](const std::vector<DParam*>& ps,
                         const std::function<DRef(DTape&)>& build) {
    const double e = max_grad_rel_error(ps, build);
    worst = std::max(worst, e);
    CHECK(e < 1e-4);
  };

  // conv2d, pad 1
  {
    DParam x("x", {2, 2, 4, 4}), w("w", {3, 2, 3, 3}), b("b", {1, 3, 1, 1});
    x.value = randvec(x.value.size(), rng);
    w.value = randvec(w.value.size(), rng);
    b.value = randvec(b.value.size(), rng);
    const auto mix = randvec(2 * 3 * 4 * 4, rng);
    check({&x, &w, &b}, [&](DTape& t) {
      return t.weighted_sum(t.conv2d(t.param(x), t.param(w), t.param(b), 1), mix);
    });
  }
  // conv2d, 1x1 kernel, no padding
  {
    DParam x("x", {1, 3, 3, 3}), w("w", {2, 3, 1, 1}), b("b", {1, 2, 1, 1});
    x.value = randvec(x.value.size(), rng);
    w.value = randvec(w.value.size(), rng);
    b.value = randvec(b.value.size(), rng);
    const auto mix = randvec(2 * 9, rng);
    check({&x, &w, &b}, [&](DTape& t) {
      return t.weighted_sum(t.conv2d(t.param(x), t.param(w), t.param(b), 0), mix);
    });
  }
  // group_norm
  {
    DParam x("x", {2, 8, 3, 3}), g("g", {1, 8, 1, 1}), be("be", {1, 8, 1, 1});
    x.value = randvec(x.value.size(), rng);
    g.value = randvec(g.value.size(), rng);
    be.value = randvec(be.value.size(), rng);
    const auto mix = randvec(x.value.size(), rng);
    check({&x, &g, &be}, [&](DTape& t) {
      return t.weighted_sum(t.group_norm(t.param(x), t.param(g), t.param(be), 4), mix);
    });
  }
  // silu
  {
    DParam x("x", {2, 3, 2, 2});
    x.value = randvec(x.value.size(), rng, 2.0);
    const auto mix = randvec(x.value.size(), rng);
    check({&x}, [&](DTape& t) { return t.weighted_sum(t.silu(t.param(x)), mix); });
  }
  // linear
  {
    DParam x("x", {3, 5, 1, 1}), w("w", {4, 5, 1, 1}), b("b", {1, 4, 1, 1});
    x.value = randvec(x.value.size(), rng);
    w.value = randvec(w.value.size(), rng);
    b.value = randvec(b.value.size(), rng);
    const auto mix = randvec(12, rng);
    check({&x, &w, &b}, [&](DTape& t) {
      return t.weighted_sum(t.linear(t.param(x), t.param(w), t.param(b)), mix);
    });
  }
  // embedding (repeated rows accumulate)
  {
    DParam tab("tab", {5, 3, 1, 1});
    tab.value = randvec(tab.value.size(), rng);
    const auto mix = randvec(4 * 3, rng);
    check({&tab}, [&](DTape& t) {
      return t.weighted_sum(t.embedding(t.param(tab), {1, 4, 1, 0}), mix);
    });
  }
  // add + add_channel_bias
  {
    DParam x("x", {2, 3, 2, 2}), y("y", {2, 3, 2, 2}), e("e", {2, 3, 1, 1});
    x.value = randvec(x.value.size(), rng);
    y.value = randvec(y.value.size(), rng);
    e.value = randvec(e.value.size(), rng);
    const auto mix = randvec(x.value.size(), rng);
    check({&x, &y, &e}, [&](DTape& t) {
      return t.weighted_sum(
          t.add_channel_bias(t.add(t.param(x), t.param(y)), t.param(e)), mix);
    });
  }
  // avg_pool2 + upsample_nearest2
  {
    DParam x("x", {1, 2, 4, 4});
    x.value = randvec(x.value.size(), rng);
    const auto mix = randvec(x.value.size(), rng);
    check({&x}, [&](DTape& t) {
      return t.weighted_sum(t.upsample_nearest2(t.avg_pool2(t.param(x))), mix);
    });
  }
  // affine_per_sample + mse + scale + sum
  {
    DParam x("x", {2, 2, 2, 2}), y("y", {2, 2, 2, 2});
    x.value = randvec(x.value.size(), rng);
    y.value = randvec(y.value.size(), rng);
    const auto target = randvec(x.value.size(), rng);
    check({&x, &y}, [&](DTape& t) {
      auto a = t.affine_per_sample(t.param(x), t.param(y), {0.5, 2.0}, {-1.5, 0.3});
      auto m = t.mse(a, t.input({2, 2, 2, 2}, target));
      return t.add(t.scale(m, 0.7), t.scale(t.sum(t.param(y)), 0.01));
    });
  }
  MESSAGE("worst op gradcheck relative error: ", worst);
}

TEST_CASE("gradient injection equals adding a linear probe to the loss") {
  Rng rng(99);
  // Two identical parameter sets, one per formulation.
  DParam x1("x", {1, 2, 4, 4}), w1("w", {2, 2, 3, 3}), b1("b", {1, 2, 1, 1});
  x1.value = randvec(x1.value.size(), rng);
  w1.value = randvec(w1.value.size(), rng);
  b1.value = randvec(b1.value.size(), rng);
  DParam x2 = x1, w2 = w1, b2 = b1;

  const auto target = randvec(2 * 16, rng);
  const auto probe = randvec(2 * 16, rng);  // injected dL/dz

  // Formulation A: backward with an injection at the conv node.
  DTape ta;
  auto za = ta.conv2d(ta.param(x1), ta.param(w1), ta.param(b1), 1);
  auto roota = ta.mse(ta.silu(za), ta.input({1, 2, 4, 4}, target));
  ta.backward(roota, {{za, probe}});

  // Formulation B: the same quantity as an explicit extra loss term.
  DTape tb;
  auto zb = tb.conv2d(tb.param(x2), tb.param(w2), tb.param(b2), 1);
  auto rootb = tb.add(tb.mse(tb.silu(zb), tb.input({1, 2, 4, 4}, target)),
                      tb.weighted_sum(zb, probe));
  tb.backward(rootb);

  for (std::size_t k = 0; k < x1.grad.size(); ++k)
    CHECK(x1.grad[k] == doctest::Approx(x2.grad[k]).epsilon(1e-12));
  for (std::size_t k = 0; k < w1.grad.size(); ++k)
    CHECK(w1.grad[k] == doctest::Approx(w2.grad[k]).epsilon(1e-12));
  for (std::size_t k = 0; k < b1.grad.size(); ++k)
    CHECK(b1.grad[k] == doctest::Approx(b2.grad[k]).epsilon(1e-12));
}

TEST_CASE("tape misuse and numerical failure raise typed errors") {
  DTape tape;
  DParam x("x", {1, 1, 1, 2});
  x.value = {1.0, 2.0};
  auto root = tape.sum(tape.param(x));
  tape.backward(root);
  CHECK_THROWS_AS(tape.backward(root), UsageError);

  DTape t2;
  auto bad = t2.sum(t2.input({1, 1, 1, 2}, {1.0, std::numeric_limits<double>::infinity()}));
  CHECK_THROWS_AS(t2.backward(bad), NumericalError);

  DTape t3;
  auto vec = t3.input({1, 1, 1, 2}, {1.0, 2.0});  // non-scalar root
  CHECK_THROWS_AS(t3.backward(vec), UsageError);
}

TEST_CASE("whole denoiser gradcheck in double") {
  DenoiserConfig cfg;
  cfg.image_size = 8;
  cfg.base_channels = 8;
  cfg.channel_mult = {1, 2};
  cfg.blocks_per_level = 1;
  cfg.emb_dim = 16;
  cfg.c_max = 3;
  cfg.T = 10;

  Denoiser<double> model = Denoiser<double>::random_init(cfg, 42);
  // Zero-initialized tensors (the output head) would block every upstream
  // gradient; give them small random values so the whole graph is exercised.
  Rng rng(4711);
  for (std::size_t i = 0; i < model.params().count(); ++i) {
    DParam& p = model.params().at(i);
    if (std::all_of(p.value.begin(), p.value.end(), [](double v) { return v == 0.0; }))
      p.value = randvec(p.value.size(), rng, 0.05);
  }

  const int n = 2;
  const auto x = randvec(static_cast<std::size_t>(n) * 8 * 8, rng);
  const auto target = randvec(x.size(), rng);
  const std::vector<int> ts = {3, 7}, cs = {1, 3};

  const auto build = [&](DTape& t) -> DRef {
    auto out = model.forward(t, t.input({n, 1, 8, 8}, x), ts, cs);
    return t.mse(out, t.input({n, 1, 8, 8}, target));
  };

  model.params().zero_grads();
  DTape tape;
  tape.backward(build(tape));

  // Probe a spread of entries in every parameter tensor.
  double worst = 0.0;
  int probes = 0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < model.params().count(); ++i) {
    DParam& p = model.params().at(i);
    for (std::size_t k : {std::size_t(0), p.value.size() / 2}) {
      if (k >= p.value.size()) continue;
      const double orig = p.value[k];
      p.value[k] = orig + h;
      DTape t1;
      const double up = t1.value(build(t1))[0];
      p.value[k] = orig - h;
      DTape t2;
      const double dn = t2.value(build(t2))[0];
      p.value[k] = orig;
      worst = std::max(worst, rel_err((up - dn) / (2.0 * h), p.grad[k]));
      ++probes;
    }
  }
  MESSAGE("denoiser gradcheck: ", probes, " probes, worst rel err ", worst);
  CHECK(probes > 60);
  CHECK(worst < 2e-3);
}

TEST_CASE("ParamStore bookkeeping") {
  ParamStore<double> store;
  store.add("a", {2, 3, 1, 1});
  store.add("b", {1, 4, 1, 1});
  CHECK(store.count() == 2);
  CHECK(store.total_size() == 10);
  CHECK(store.has("a"));
  CHECK_FALSE(store.has("c"));
  CHECK(store.at(0).name == "a");  // creation order is stable

  store.get("a").grad.assign(6, 1.0);
  CHECK(store.grads_finite());
  CHECK(store.grad_norm() == doctest::Approx(std::sqrt(6.0)));
  store.get("b").grad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(store.grads_finite());
  store.zero_grads();
  CHECK(store.grads_finite());
  CHECK(store.grad_norm() == 0.0);
}
