#include "topogen/persistence.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "topogen/errors.hpp"

namespace topogen {

namespace {

/// Union-find over pixel indices with path halving.
struct UnionFind {
  std::vector<std::int32_t> parent;

  explicit UnionFind(std::size_t n) : parent(n, -1) {}

  void make_set(std::int32_t x) { parent[x] = x; }
  bool exists(std::int32_t x) const { return parent[x] >= 0; }

  std::int32_t find(std::int32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }

  /// Attach root `child` under root `keep`.
  void link(std::int32_t keep, std::int32_t child) { parent[child] = keep; }
};

/// Per-component bookkeeping, valid at union-find roots only.
struct CompInfo {
  double birth_value = 0.0;   // extremal value at creation
  std::int32_t birth_idx = 0; // pixel where the component was created
  std::int32_t order = 0;     // creation sequence number in the sweep
};

bool dot_order(const PersistentDot& a, const PersistentDot& b, int w) {
  double pa = a.persistence(), pb = b.persistence();
  if (pa != pb) return pa > pb;
  if (a.birth != b.birth) return a.birth > b.birth;
  std::int64_t ia = static_cast<std::int64_t>(a.birth_px.row) * w + a.birth_px.col;
  std::int64_t ib = static_cast<std::int64_t>(b.birth_px.row) * w + b.birth_px.col;
  if (ia != ib) return ia < ib;
  // Two holes can close at the same wall pixel with equal persistence; the
  // death pixel (unique per feature) makes the order total.
  std::int64_t da = static_cast<std::int64_t>(a.death_px.row) * w + a.death_px.col;
  std::int64_t db = static_cast<std::int64_t>(b.death_px.row) * w + b.death_px.col;
  return da < db;
}

constexpr int kOff8[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                             {0, 1},   {1, -1}, {1, 0},  {1, 1}};
constexpr int kOff4[4][2] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};

}  // namespace

PersistenceDiagram diagram_0d(const ImageGrid& img) {
  img.validate();
  const int h = img.h, w = img.w;
  const std::int32_t n = h * w;

  // Sweep pixels by decreasing value; ties by ascending row-major index.
  std::vector<std::int32_t> sweep(n);
  std::iota(sweep.begin(), sweep.end(), 0);
  std::sort(sweep.begin(), sweep.end(), [&](std::int32_t a, std::int32_t b) {
    if (img.v[a] != img.v[b]) return img.v[a] > img.v[b];
    return a < b;
  });
  std::vector<std::int32_t> pos(n);
  for (std::int32_t i = 0; i < n; ++i) pos[sweep[i]] = i;

  UnionFind uf(n);
  std::vector<CompInfo> info(n);
  std::int32_t next_order = 0;

  PersistenceDiagram out;
  out.dim = 0;
  out.h = h;
  out.w = w;
  out.max_value = img.v[sweep.front()];
  out.min_value = img.v[sweep.back()];

  std::vector<std::int32_t> roots;
  for (std::int32_t step = 0; step < n; ++step) {
    const std::int32_t p = sweep[step];
    const int pr = p / w, pc = p % w;

    roots.clear();
    for (const auto& d : kOff8) {
      const int qr = pr + d[0], qc = pc + d[1];
      if (qr < 0 || qr >= h || qc < 0 || qc >= w) continue;
      const std::int32_t q = qr * w + qc;
      if (pos[q] > step) continue;  // not yet in the super-level set
      const std::int32_t r = uf.find(q);
      if (std::find(roots.begin(), roots.end(), r) == roots.end()) roots.push_back(r);
    }

    if (roots.empty()) {
      uf.make_set(p);
      info[p] = {img.v[p], p, next_order++};
      continue;
    }

    // Elder rule: the component with the higher birth survives; ties go to
    // the one created earlier in the sweep.
    std::int32_t keep = roots[0];
    for (std::size_t i = 1; i < roots.size(); ++i) {
      const std::int32_t r = roots[i];
      if (info[r].birth_value > info[keep].birth_value ||
          (info[r].birth_value == info[keep].birth_value && info[r].order < info[keep].order))
        keep = r;
    }
    for (std::int32_t r : roots) {
      if (r == keep) continue;
      PersistentDot dot;
      dot.dim = 0;
      dot.birth = info[r].birth_value;
      dot.death = img.v[p];
      dot.birth_px = {info[r].birth_idx / w, info[r].birth_idx % w};
      dot.death_px = {pr, pc};
      dot.essential = false;
      out.dots.push_back(dot);
      uf.link(keep, r);
    }
    uf.parent[p] = keep;
  }

  // The one surviving component: death is the global minimum, reached at
  // the last pixel of the sweep.
  const std::int32_t last = sweep.back();
  const std::int32_t root = uf.find(sweep.front());
  PersistentDot ess;
  ess.dim = 0;
  ess.birth = info[root].birth_value;
  ess.death = img.v[last];
  ess.birth_px = {info[root].birth_idx / w, info[root].birth_idx % w};
  ess.death_px = {last / w, last % w};
  ess.essential = true;
  out.dots.push_back(ess);

  std::sort(out.dots.begin(), out.dots.end(),
            [&](const PersistentDot& a, const PersistentDot& b) { return dot_order(a, b, w); });
  return out;
}

PersistenceDiagram diagram_1d(const ImageGrid& img) {
  img.validate();
  const int h = img.h, w = img.w;
  const int ph = h + 2, pw = w + 2;
  const std::int32_t n = ph * pw;

  // Padded grid: a one-pixel border at -infinity glues all outside
  // background together.  Holes of the super-level sets are exactly the
  // finite components of this padded complement under 4-connectivity.
  auto is_frame = [&](std::int32_t q) {
    const int r = q / pw, c = q % pw;
    return r == 0 || c == 0 || r == ph - 1 || c == pw - 1;
  };
  auto value_at = [&](std::int32_t q) {
    const int r = q / pw, c = q % pw;
    return img.at(r - 1, c - 1);  // only valid for interior pixels
  };

  // Sub-level sweep: border pixels first (in index order, so the border
  // forms a single component without merges), then by increasing value,
  // ties by ascending padded row-major index.
  std::vector<std::int32_t> sweep(n);
  std::iota(sweep.begin(), sweep.end(), 0);
  std::sort(sweep.begin(), sweep.end(), [&](std::int32_t a, std::int32_t b) {
    const bool fa = is_frame(a), fb = is_frame(b);
    if (fa != fb) return fa;
    if (fa) return a < b;
    const double va = value_at(a), vb = value_at(b);
    if (va != vb) return va < vb;
    return a < b;
  });
  std::vector<std::int32_t> pos(n);
  for (std::int32_t i = 0; i < n; ++i) pos[sweep[i]] = i;

  UnionFind uf(n);
  std::vector<CompInfo> info(n);
  std::vector<char> frame_comp(n, 0);  // valid at roots
  std::int32_t next_order = 0;

  PersistenceDiagram out;
  out.dim = 1;
  out.h = h;
  out.w = w;
  out.min_value = *std::min_element(img.v.begin(), img.v.end());
  out.max_value = *std::max_element(img.v.begin(), img.v.end());

  std::vector<std::int32_t> roots;
  for (std::int32_t step = 0; step < n; ++step) {
    const std::int32_t p = sweep[step];
    const int pr = p / pw, pc = p % pw;

    roots.clear();
    for (const auto& d : kOff4) {
      const int qr = pr + d[0], qc = pc + d[1];
      if (qr < 0 || qr >= ph || qc < 0 || qc >= pw) continue;
      const std::int32_t q = qr * pw + qc;
      if (pos[q] > step) continue;
      const std::int32_t r = uf.find(q);
      if (std::find(roots.begin(), roots.end(), r) == roots.end()) roots.push_back(r);
    }

    if (roots.empty()) {
      uf.make_set(p);
      info[p] = {is_frame(p) ? 0.0 : value_at(p), p, next_order++};
      frame_comp[p] = is_frame(p) ? 1 : 0;
      continue;
    }

    // Elder rule for sub-level sets: the lower-minimum component survives;
    // the border component outranks everything.
    std::int32_t keep = roots[0];
    for (std::size_t i = 1; i < roots.size(); ++i) {
      const std::int32_t r = roots[i];
      if (frame_comp[keep]) break;
      if (frame_comp[r] || info[r].birth_value < info[keep].birth_value ||
          (info[r].birth_value == info[keep].birth_value && info[r].order < info[keep].order))
        keep = r;
    }
    for (std::int32_t r : roots) {
      if (r == keep) continue;
      // Absorbed components were created at interior pixels (the border is
      // swept first and is a single component), so this is a hole dying:
      // the wall closes at p, the hole bottoms out at the component's
      // minimum.
      PersistentDot dot;
      dot.dim = 1;
      dot.birth = value_at(p);
      dot.death = info[r].birth_value;
      dot.birth_px = {pr - 1, pc - 1};
      dot.death_px = {info[r].birth_idx / pw - 1, info[r].birth_idx % pw - 1};
      dot.essential = false;
      out.dots.push_back(dot);
      uf.link(keep, r);
    }
    uf.parent[p] = keep;
  }

  std::sort(out.dots.begin(), out.dots.end(),
            [&](const PersistentDot& a, const PersistentDot& b) { return dot_order(a, b, w); });
  return out;
}

int label_components(const std::vector<char>& mask, int h, int w, int connectivity,
                     std::vector<int>* labels_out) {
  if (connectivity != 4 && connectivity != 8)
    throw ValidationError("label_components: connectivity must be 4 or 8");
  if (mask.size() != static_cast<std::size_t>(h) * w)
    throw ValidationError("label_components: mask size mismatch");
  std::vector<int> labels(mask.size(), -1);
  std::vector<std::int32_t> stack;
  int count = 0;
  for (std::int32_t seed = 0; seed < static_cast<std::int32_t>(mask.size()); ++seed) {
    if (!mask[seed] || labels[seed] != -1) continue;
    const int id = count++;
    labels[seed] = id;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::int32_t p = stack.back();
      stack.pop_back();
      const int pr = p / w, pc = p % w;
      const auto visit = [&](int qr, int qc) {
        if (qr < 0 || qr >= h || qc < 0 || qc >= w) return;
        const std::int32_t q = qr * w + qc;
        if (!mask[q] || labels[q] != -1) return;
        labels[q] = id;
        stack.push_back(q);
      };
      if (connectivity == 8)
        for (const auto& d : kOff8) visit(pr + d[0], pc + d[1]);
      else
        for (const auto& d : kOff4) visit(pr + d[0], pc + d[1]);
    }
  }
  if (labels_out) *labels_out = std::move(labels);
  return count;
}

int betti_at(const ImageGrid& img, double u, int dim) {
  img.validate();
  if (dim != 0 && dim != 1) throw ValidationError("betti_at: dim must be 0 or 1");
  const int h = img.h, w = img.w;
  std::vector<char> mask(img.size());
  if (dim == 0) {
    for (std::size_t i = 0; i < img.size(); ++i) mask[i] = img.v[i] >= u ? 1 : 0;
    return label_components(mask, h, w, 8, nullptr);
  }
  // dim 1: 4-connected components of the complement that avoid the border.
  for (std::size_t i = 0; i < img.size(); ++i) mask[i] = img.v[i] < u ? 1 : 0;
  std::vector<int> labels;
  const int count = label_components(mask, h, w, 4, &labels);
  std::vector<char> touches_border(count, 0);
  for (int c = 0; c < w; ++c) {
    if (labels[c] >= 0) touches_border[labels[c]] = 1;
    if (labels[static_cast<std::size_t>(h - 1) * w + c] >= 0)
      touches_border[labels[static_cast<std::size_t>(h - 1) * w + c]] = 1;
  }
  for (int r = 0; r < h; ++r) {
    if (labels[static_cast<std::size_t>(r) * w] >= 0)
      touches_border[labels[static_cast<std::size_t>(r) * w]] = 1;
    if (labels[static_cast<std::size_t>(r) * w + w - 1] >= 0)
      touches_border[labels[static_cast<std::size_t>(r) * w + w - 1]] = 1;
  }
  int holes = 0;
  for (int c = 0; c < count; ++c)
    if (!touches_border[c]) ++holes;
  return holes;
}

int betti_from_diagram(const PersistenceDiagram& d, double u) {
  int alive = 0;
  for (const PersistentDot& dot : d.dots) {
    if (dot.essential) {
      if (dot.birth >= u) ++alive;
    } else {
      if (dot.birth >= u && u > dot.death) ++alive;
    }
  }
  return alive;
}

std::string diagram_to_json(const PersistenceDiagram& d) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const PersistentDot& dot : d.dots) {
    nlohmann::ordered_json j;
    j["dim"] = dot.dim;
    j["birth"] = dot.birth;
    j["death"] = dot.death;
    j["birth_px"] = {dot.birth_px.row, dot.birth_px.col};
    j["death_px"] = {dot.death_px.row, dot.death_px.col};
    j["essential"] = dot.essential;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

}  // namespace topogen
