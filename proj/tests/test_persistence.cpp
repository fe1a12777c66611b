#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"

#include <nlohmann/json.hpp>

#include "topogen/image.hpp"
#include "topogen/persistence.hpp"
#include "topogen/rng.hpp"

using namespace topogen;

namespace {

ImageGrid make(int h, int w, std::vector<double> v) {
  ImageGrid g(h, w);
  g.v = std::move(v);
  return g;
}

ImageGrid random_levels(int h, int w, int levels, Rng& rng) {
  std::uniform_int_distribution<int> d(0, levels - 1);
  ImageGrid g(h, w);
  for (double& v : g.v) v = -1.0 + 2.0 * d(rng) / (levels - 1);
  return g;
}

std::set<double> distinct_values(const ImageGrid& g) {
  return std::set<double>(g.v.begin(), g.v.end());
}

}  // namespace

TEST_CASE("0-dim diagram of [1,0,1]: two unit-persistence dots") {
  const ImageGrid img = make(1, 3, {1.0, 0.0, 1.0});
  const PersistenceDiagram d = diagram_0d(img);

  REQUIRE(d.dots.size() == 2);
  // Equal persistence and birth; the tie breaks on birth pixel index.
  CHECK(d.dots[0].birth == 1.0);
  CHECK(d.dots[0].death == 0.0);
  CHECK(d.dots[0].birth_px == PixelCoord{0, 0});
  CHECK(d.dots[0].death_px == PixelCoord{0, 1});  // last pixel in sweep order
  CHECK(d.dots[0].essential);

  CHECK(d.dots[1].birth == 1.0);
  CHECK(d.dots[1].death == 0.0);
  CHECK(d.dots[1].birth_px == PixelCoord{0, 2});
  CHECK(d.dots[1].death_px == PixelCoord{0, 1});  // the merge pixel
  CHECK_FALSE(d.dots[1].essential);
}

TEST_CASE("0-dim diagram of [1,0,1,0,1]: elder rule keeps the first peak") {
  const ImageGrid img = make(1, 5, {1.0, 0.0, 1.0, 0.0, 1.0});
  const PersistenceDiagram d = diagram_0d(img);

  REQUIRE(d.dots.size() == 3);
  CHECK(d.dots[0].essential);
  CHECK(d.dots[0].birth_px == PixelCoord{0, 0});
  CHECK(d.dots[0].death_px == PixelCoord{0, 3});  // global minimum, last in sweep

  CHECK(d.dots[1].birth_px == PixelCoord{0, 2});
  CHECK(d.dots[1].death_px == PixelCoord{0, 1});
  CHECK(d.dots[2].birth_px == PixelCoord{0, 4});
  CHECK(d.dots[2].death_px == PixelCoord{0, 3});
  for (const auto& dot : d.dots) {
    CHECK(dot.birth == 1.0);
    CHECK(dot.death == 0.0);
  }
}

TEST_CASE("0-dim diagram of a single bump: one essential dot") {
  ImageGrid img(3, 3, 0.0);
  img.at(1, 1) = 1.0;
  const PersistenceDiagram d = diagram_0d(img);

  REQUIRE(d.dots.size() == 1);
  CHECK(d.dots[0].essential);
  CHECK(d.dots[0].birth == 1.0);
  CHECK(d.dots[0].death == 0.0);
  CHECK(d.dots[0].birth_px == PixelCoord{1, 1});
  CHECK(d.dots[0].death_px == PixelCoord{2, 2});  // last pixel of the sweep
}

TEST_CASE("1-dim diagram of a ring: exactly one hole") {
  ImageGrid img(5, 5, 0.0);
  for (int r = 1; r <= 3; ++r)
    for (int c = 1; c <= 3; ++c)
      if (r == 1 || r == 3 || c == 1 || c == 3) img.at(r, c) = 1.0;

  const PersistenceDiagram d1 = diagram_1d(img);
  REQUIRE(d1.dots.size() == 1);
  CHECK(d1.dots[0].dim == 1);
  CHECK(d1.dots[0].birth == 1.0);
  CHECK(d1.dots[0].death == 0.0);
  // The wall closes at the first ring pixel whose addition separates the
  // interior from the border (complement sweep, ascending index).
  CHECK(d1.dots[0].birth_px == PixelCoord{1, 2});
  CHECK(d1.dots[0].death_px == PixelCoord{2, 2});  // the hole's minimum
  CHECK_FALSE(d1.dots[0].essential);

  // The ring itself is one component; the background creates no merges.
  const PersistenceDiagram d0 = diagram_0d(img);
  REQUIRE(d0.dots.size() == 1);
  CHECK(d0.dots[0].essential);
}

TEST_CASE("1-dim diagram of a constant image is empty") {
  const ImageGrid img(4, 4, 0.5);
  CHECK(diagram_1d(img).dots.empty());
}

TEST_CASE("betti_at agrees with hand counts on fixtures") {
  // Two pixels touching only diagonally: 8-connectivity joins them.
  ImageGrid diag(2, 2, 0.0);
  diag.at(0, 0) = 1.0;
  diag.at(1, 1) = 1.0;
  CHECK(betti_at(diag, 1.0, 0) == 1);
  CHECK(betti_at(diag, 0.0, 0) == 1);

  // The 5x5 ring: one hole at thresholds in (0, 1].
  ImageGrid ring(5, 5, 0.0);
  for (int r = 1; r <= 3; ++r)
    for (int c = 1; c <= 3; ++c)
      if (r == 1 || r == 3 || c == 1 || c == 3) ring.at(r, c) = 1.0;
  CHECK(betti_at(ring, 1.0, 1) == 1);
  CHECK(betti_at(ring, 0.5, 1) == 1);
  CHECK(betti_at(ring, 0.0, 1) == 0);  // background joins the set, hole fills
  CHECK(betti_at(ring, 1.5, 0) == 0);  // empty super-level set
}

TEST_CASE("label_components: connectivity conventions") {
  // X .
  // . X   -> one 8-connected component, two 4-connected ones.
  const std::vector<char> mask = {1, 0, 0, 1};
  std::vector<int> labels;
  CHECK(label_components(mask, 2, 2, 8, &labels) == 1);
  CHECK(labels[0] == labels[3]);
  CHECK(labels[1] == -1);
  CHECK(label_components(mask, 2, 2, 4, &labels) == 2);
  CHECK(labels[0] != labels[3]);
}

TEST_CASE("diagram serialization carries every field in diagram order") {
  const ImageGrid img = make(1, 3, {1.0, 0.0, 1.0});
  const auto j = nlohmann::json::parse(diagram_to_json(diagram_0d(img)));

  REQUIRE(j.is_array());
  REQUIRE(j.size() == 2);
  CHECK(j[0]["dim"] == 0);
  CHECK(j[0]["birth"] == 1.0);
  CHECK(j[0]["death"] == 0.0);
  CHECK(j[0]["birth_px"] == nlohmann::json::array({0, 0}));
  CHECK(j[0]["death_px"] == nlohmann::json::array({0, 1}));
  CHECK(j[0]["essential"] == true);
  CHECK(j[1]["essential"] == false);
}

TEST_CASE("property: diagram counts match the flood-fill oracle everywhere") {
  Rng rng(20240513);
  for (int trial = 0; trial < 300; ++trial) {
    const ImageGrid img = random_levels(8, 8, 16, rng);
    for (int dim = 0; dim <= 1; ++dim) {
      const PersistenceDiagram d = (dim == 0) ? diagram_0d(img) : diagram_1d(img);
      std::set<double> thresholds = distinct_values(img);
      // Also probe between levels, where no pixel value sits.
      std::vector<double> vs(thresholds.begin(), thresholds.end());
      for (std::size_t i = 0; i + 1 < vs.size(); ++i)
        thresholds.insert(0.5 * (vs[i] + vs[i + 1]));
      for (double u : thresholds) {
        INFO("trial ", trial, " dim ", dim, " u ", u);
        REQUIRE(betti_from_diagram(d, u) == betti_at(img, u, dim));
      }
    }
  }
}

TEST_CASE("property: critical pixels realize their dot's birth and death") {
  Rng rng(77001);
  for (int trial = 0; trial < 300; ++trial) {
    const ImageGrid img = random_levels(8, 8, 16, rng);
    for (int dim = 0; dim <= 1; ++dim) {
      const PersistenceDiagram d = (dim == 0) ? diagram_0d(img) : diagram_1d(img);
      double global_min = *std::min_element(img.v.begin(), img.v.end());
      for (const PersistentDot& dot : d.dots) {
        REQUIRE(img.at(dot.birth_px.row, dot.birth_px.col) == dot.birth);
        if (dot.essential) {
          REQUIRE(dim == 0);
          REQUIRE(dot.death == global_min);
        } else {
          REQUIRE(img.at(dot.death_px.row, dot.death_px.col) == dot.death);
        }
      }
    }
  }
}

TEST_CASE("property: diagram order is persistence desc, birth desc, pixel asc") {
  Rng rng(90210);
  for (int trial = 0; trial < 100; ++trial) {
    const ImageGrid img = random_levels(8, 8, 8, rng);
    for (int dim = 0; dim <= 1; ++dim) {
      const PersistenceDiagram d = (dim == 0) ? diagram_0d(img) : diagram_1d(img);
      for (std::size_t i = 0; i + 1 < d.dots.size(); ++i) {
        const PersistentDot& a = d.dots[i];
        const PersistentDot& b = d.dots[i + 1];
        const double pa = a.persistence(), pb = b.persistence();
        const long ia = static_cast<long>(a.birth_px.row) * img.w + a.birth_px.col;
        const long ib = static_cast<long>(b.birth_px.row) * img.w + b.birth_px.col;
        // Distinct holes may share a birth pixel (one wall pixel can close
        // two rooms); the death pixel then breaks the tie.
        const long da = static_cast<long>(a.death_px.row) * img.w + a.death_px.col;
        const long db = static_cast<long>(b.death_px.row) * img.w + b.death_px.col;
        const bool ordered =
            pa > pb ||
            (pa == pb &&
             (a.birth > b.birth ||
              (a.birth == b.birth && (ia < ib || (ia == ib && da < db)))));
        REQUIRE(ordered);
      }
    }
  }
}

TEST_CASE("property: exactly one essential dot in dim 0, none in dim 1") {
  Rng rng(555);
  for (int trial = 0; trial < 100; ++trial) {
    const ImageGrid img = random_levels(6, 7, 5, rng);
    int ess0 = 0;
    for (const auto& dot : diagram_0d(img).dots) ess0 += dot.essential ? 1 : 0;
    CHECK(ess0 == 1);
    for (const auto& dot : diagram_1d(img).dots) CHECK_FALSE(dot.essential);
  }
}

TEST_CASE("property: diagrams are invariant under monotone value maps") {
  const auto phi = [](double v) { return v * v * v + 2.0 * v; };  // strictly increasing
  Rng rng(31415);
  for (int trial = 0; trial < 100; ++trial) {
    const ImageGrid img = random_levels(8, 8, 16, rng);
    ImageGrid mapped = img;
    for (double& v : mapped.v) v = phi(v);

    for (int dim = 0; dim <= 1; ++dim) {
      auto a = (dim == 0) ? diagram_0d(img).dots : diagram_1d(img).dots;
      auto b = (dim == 0) ? diagram_0d(mapped).dots : diagram_1d(mapped).dots;
      REQUIRE(a.size() == b.size());
      // Birth pixels are unique per dot; sort both sides by them and match.
      const auto by_birth_px = [&](const PersistentDot& x, const PersistentDot& y) {
        return std::pair(x.birth_px.row, x.birth_px.col) <
               std::pair(y.birth_px.row, y.birth_px.col);
      };
      std::sort(a.begin(), a.end(), by_birth_px);
      std::sort(b.begin(), b.end(), by_birth_px);
      for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].birth_px == b[i].birth_px);
        REQUIRE(a[i].death_px == b[i].death_px);
        REQUIRE(a[i].essential == b[i].essential);
        REQUIRE(b[i].birth == doctest::Approx(phi(a[i].birth)).epsilon(1e-12));
        REQUIRE(b[i].death == doctest::Approx(phi(a[i].death)).epsilon(1e-12));
      }
    }
  }
}
