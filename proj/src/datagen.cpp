#include "topogen/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "topogen/errors.hpp"
#include "topogen/persistence.hpp"

namespace topogen {

ShapeClass shape_class_from_string(const std::string& s) {
  if (s == "circle") return ShapeClass::circle;
  if (s == "triangle") return ShapeClass::triangle;
  if (s == "rectangle") return ShapeClass::rectangle;
  if (s == "mixed") return ShapeClass::mixed;
  throw ValidationError("unknown shape class: " + s);
}

std::string shape_class_to_string(ShapeClass sc) {
  switch (sc) {
    case ShapeClass::circle: return "circle";
    case ShapeClass::triangle: return "triangle";
    case ShapeClass::rectangle: return "rectangle";
    case ShapeClass::mixed: return "mixed";
  }
  throw ValidationError("invalid shape class value");
}

namespace {

/// Pixels of one rasterized shape, as row-major indices.
using Pixels = std::vector<std::int32_t>;

/// True if the pixel set forms a single 8-connected component.
bool connected8(const Pixels& px, int size) {
  if (px.empty()) return false;
  std::vector<char> mask(static_cast<std::size_t>(size) * size, 0);
  for (std::int32_t p : px) mask[p] = 1;
  return label_components(mask, size, size, 8, nullptr) == 1;
}

Pixels raster_circle(double cy, double cx, double r, int size) {
  Pixels out;
  const int r0 = std::max(0, static_cast<int>(std::floor(cy - r)) - 1);
  const int r1 = std::min(size - 1, static_cast<int>(std::ceil(cy + r)) + 1);
  const int c0 = std::max(0, static_cast<int>(std::floor(cx - r)) - 1);
  const int c1 = std::min(size - 1, static_cast<int>(std::ceil(cx + r)) + 1);
  for (int rr = r0; rr <= r1; ++rr)
    for (int cc = c0; cc <= c1; ++cc)
      if ((rr - cy) * (rr - cy) + (cc - cx) * (cc - cx) <= r * r)
        out.push_back(rr * size + cc);
  return out;
}

Pixels raster_rect(int top, int left, int hh, int ww, int size) {
  Pixels out;
  for (int rr = top; rr < top + hh; ++rr)
    for (int cc = left; cc < left + ww; ++cc)
      if (rr >= 0 && rr < size && cc >= 0 && cc < size) out.push_back(rr * size + cc);
  return out;
}

Pixels raster_triangle(double cy, double cx, double r, double theta, int size, Rng& rng) {
  // Three vertices roughly 120 degrees apart on a circle of radius r.
  std::uniform_real_distribution<double> jitter(-0.4, 0.4);
  double vy[3], vx[3];
  for (int k = 0; k < 3; ++k) {
    const double ang = theta + k * 2.0 * 3.14159265358979323846 / 3.0 + jitter(rng);
    vy[k] = cy + r * std::sin(ang);
    vx[k] = cx + r * std::cos(ang);
  }
  // Half-plane inclusion test against the three edges (orientation-aware).
  const auto cross = [&](int i, int j, double py, double px) {
    return (vx[j] - vx[i]) * (py - vy[i]) - (vy[j] - vy[i]) * (px - vx[i]);
  };
  const double area2 = cross(0, 1, vy[2], vx[2]);
  Pixels out;
  if (std::abs(area2) < 4.0) return out;  // too thin, caller retries
  const int r0 = std::max(0, static_cast<int>(std::floor(cy - r)) - 1);
  const int r1 = std::min(size - 1, static_cast<int>(std::ceil(cy + r)) + 1);
  const int c0 = std::max(0, static_cast<int>(std::floor(cx - r)) - 1);
  const int c1 = std::min(size - 1, static_cast<int>(std::ceil(cx + r)) + 1);
  const double sgn = area2 > 0 ? 1.0 : -1.0;
  for (int rr = r0; rr <= r1; ++rr)
    for (int cc = c0; cc <= c1; ++cc) {
      const double py = rr, px = cc;
      if (sgn * cross(0, 1, py, px) >= 0 && sgn * cross(1, 2, py, px) >= 0 &&
          sgn * cross(2, 0, py, px) >= 0)
        out.push_back(rr * size + cc);
    }
  return out;
}

}  // namespace

ImageGrid gen_shapes(int c, ShapeClass cls, int size, Rng& rng) {
  if (size < 16) throw ValidationError("gen_shapes: size must be >= 16");
  if (c < 1) throw ValidationError("gen_shapes: c must be >= 1");

  const int min_area = std::max(4, (size / 16) * (size / 16));
  const double r_min = std::max(1.6, std::sqrt(min_area / 3.14159265358979323846));
  const double r_max = std::max(r_min + 0.5, size / 8.0);

  // With cls == mixed every placed shape draws its own class; build_dataset
  // instead resolves mixed to one class per image so that recorded class
  // ids stay informative.
  for (int restart = 0; restart < 64; ++restart) {
    std::vector<char> blocked(static_cast<std::size_t>(size) * size, 0);
    ImageGrid img(size, size, -1.0);
    std::uniform_real_distribution<double> upos(1.0, size - 2.0);
    std::uniform_real_distribution<double> urad(r_min, r_max);
    std::uniform_real_distribution<double> uang(0.0, 2.0 * 3.14159265358979323846);
    std::uniform_int_distribution<int> uclass(0, 2);

    int placed = 0;
    bool failed = false;
    for (int s = 0; s < c; ++s) {
      bool ok = false;
      for (int attempt = 0; attempt < 400 && !ok; ++attempt) {
        ShapeClass sc = cls;
        if (sc == ShapeClass::mixed) sc = static_cast<ShapeClass>(uclass(rng));
        const double cy = upos(rng), cx = upos(rng);
        Pixels px;
        switch (sc) {
          case ShapeClass::circle:
            px = raster_circle(cy, cx, urad(rng), size);
            break;
          case ShapeClass::rectangle: {
            const int hh = std::max(2, static_cast<int>(std::lround(urad(rng) * 2)));
            const int ww = std::max(2, static_cast<int>(std::lround(urad(rng) * 2)));
            px = raster_rect(static_cast<int>(cy) - hh / 2, static_cast<int>(cx) - ww / 2, hh,
                             ww, size);
            break;
          }
          case ShapeClass::triangle:
            px = raster_triangle(cy, cx, std::max(2.2, urad(rng)), uang(rng), size, rng);
            break;
          case ShapeClass::mixed:
            break;  // unreachable
        }
        if (static_cast<int>(px.size()) < min_area) continue;
        if (!connected8(px, size)) continue;
        bool clear = true;
        for (std::int32_t p : px) {
          const int pr = p / size, pc = p % size;
          if (pr < 1 || pr >= size - 1 || pc < 1 || pc >= size - 1 || blocked[p]) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        // Commit: paint and block a 2-pixel Chebyshev margin so distinct
        // shapes stay at least 2 background pixels apart (never 8-adjacent).
        for (std::int32_t p : px) {
          img.v[p] = 1.0;
          const int pr = p / size, pc = p % size;
          for (int dr = -2; dr <= 2; ++dr)
            for (int dc = -2; dc <= 2; ++dc) {
              const int qr = pr + dr, qc = pc + dc;
              if (qr >= 0 && qr < size && qc >= 0 && qc < size) blocked[qr * size + qc] = 1;
            }
        }
        ok = true;
        ++placed;
      }
      if (!ok) {
        failed = true;
        break;
      }
    }
    if (failed || placed != c) continue;
    if (betti_at(img, 0.0, 0) != c) continue;  // oracle cross-check
    return img;
  }
  throw ValidationError("gen_shapes: could not place " + std::to_string(c) +
                        " shapes on a " + std::to_string(size) + "x" + std::to_string(size) +
                        " canvas");
}

namespace {

struct Cell {
  int r0, c0, r1, c1;  // inclusive interior (room) bounds
  int height() const { return r1 - r0 + 1; }
  int width() const { return c1 - c0 + 1; }
};

}  // namespace

ImageGrid gen_regions(int c, int size, Rng& rng) {
  if (size < 10) throw ValidationError("gen_regions: size must be >= 10");
  if (c < 1) throw ValidationError("gen_regions: c must be >= 1");

  for (int attempt = 0; attempt < 256; ++attempt) {
    ImageGrid img(size, size, -1.0);
    // 2-pixel frame wall.
    for (int r = 0; r < size; ++r)
      for (int col = 0; col < size; ++col)
        if (r < 2 || r >= size - 2 || col < 2 || col >= size - 2) img.at(r, col) = 1.0;

    std::vector<Cell> cells = {{2, 2, size - 3, size - 3}};
    bool stuck = false;
    while (static_cast<int>(cells.size()) < c) {
      // A cell can host a wall if both children keep at least 2 pixels.
      std::vector<std::size_t> splittable;
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i].height() >= 6 || cells[i].width() >= 6) splittable.push_back(i);
      if (splittable.empty()) {
        stuck = true;
        break;
      }
      std::uniform_int_distribution<std::size_t> pick(0, splittable.size() - 1);
      const std::size_t ci = splittable[pick(rng)];
      Cell cell = cells[ci];
      const bool can_h = cell.height() >= 6;
      const bool can_v = cell.width() >= 6;
      bool horizontal = can_h;
      if (can_h && can_v) horizontal = std::uniform_int_distribution<int>(0, 1)(rng) == 1;

      if (horizontal) {
        // Wall occupies rows k, k+1; children keep >= 2 rows each.
        std::uniform_int_distribution<int> upos(cell.r0 + 2, cell.r1 - 3);
        const int k = upos(rng);
        for (int col = cell.c0; col <= cell.c1; ++col) {
          img.at(k, col) = 1.0;
          img.at(k + 1, col) = 1.0;
        }
        cells[ci] = {cell.r0, cell.c0, k - 1, cell.c1};
        cells.push_back({k + 2, cell.c0, cell.r1, cell.c1});
      } else {
        std::uniform_int_distribution<int> upos(cell.c0 + 2, cell.c1 - 3);
        const int k = upos(rng);
        for (int r = cell.r0; r <= cell.r1; ++r) {
          img.at(r, k) = 1.0;
          img.at(r, k + 1) = 1.0;
        }
        cells[ci] = {cell.r0, cell.c0, cell.r1, k - 1};
        cells.push_back({cell.r0, k + 2, cell.r1, cell.c1});
      }
    }
    if (stuck) continue;

    // Oracle cross-checks: exactly c holes, and the wall is one component.
    if (betti_at(img, 0.0, 1) != c) continue;
    std::vector<char> wall(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) wall[i] = img.v[i] >= 0.0 ? 1 : 0;
    if (label_components(wall, size, size, 8, nullptr) != 1) continue;
    return img;
  }
  throw ValidationError("gen_regions: could not build " + std::to_string(c) + " regions on a " +
                        std::to_string(size) + "x" + std::to_string(size) + " canvas");
}

std::string DatasetManifest::to_json() const {
  nlohmann::ordered_json j;
  j["dim"] = dim;
  j["image_size"] = image_size;
  j["c_min"] = c_min;
  j["c_max"] = c_max;
  j["shape_class"] = shape_class;
  j["seed"] = seed;
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const ManifestEntry& e : entries) {
    nlohmann::ordered_json je;
    je["file"] = e.file;
    je["c"] = e.c;
    je["dim"] = e.dim;
    je["class_id"] = e.class_id;
    je["seed"] = e.seed;
    arr.push_back(std::move(je));
  }
  j["entries"] = std::move(arr);
  return j.dump(2);
}

DatasetManifest DatasetManifest::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest " + path + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.dim = j.at("dim").get<int>();
    m.image_size = j.at("image_size").get<int>();
    m.c_min = j.at("c_min").get<int>();
    m.c_max = j.at("c_max").get<int>();
    m.shape_class = j.at("shape_class").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.file = je.at("file").get<std::string>();
      e.c = je.at("c").get<int>();
      e.dim = je.at("dim").get<int>();
      e.class_id = je.at("class_id").get<int>();
      e.seed = je.at("seed").get<std::uint64_t>();
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest " + path + " missing fields: " + e.what());
  }
  if (m.dim != 0 && m.dim != 1) throw ValidationError("manifest: dim must be 0 or 1");
  if (m.entries.empty()) throw ValidationError("manifest: no entries");
  return m;
}

DatasetManifest build_dataset(int dim, int n_per_c, int c_min, int c_max, int size,
                              ShapeClass cls, std::uint64_t seed, const std::string& out_dir,
                              int threads) {
  if (dim != 0 && dim != 1) throw UsageError("build_dataset: dim must be 0 or 1");
  if (n_per_c < 1) throw UsageError("build_dataset: n_per_c must be >= 1");
  if (c_min < 1 || c_max < c_min) throw UsageError("build_dataset: need 1 <= c_min <= c_max");
  if (threads < 1) throw UsageError("build_dataset: threads must be >= 1");
  std::filesystem::create_directories(out_dir);

  DatasetManifest m;
  m.dim = dim;
  m.image_size = size;
  m.c_min = c_min;
  m.c_max = c_max;
  m.shape_class = dim == 0 ? shape_class_to_string(cls) : "regions";
  m.seed = seed;

  for (int c = c_min; c <= c_max; ++c) {
    for (int i = 0; i < n_per_c; ++i) {
      const std::size_t idx = m.entries.size();
      std::ostringstream name;
      name << "c" << c << "_" << std::setw(4) << std::setfill('0') << i << ".png";
      ManifestEntry e;
      e.file = name.str();
      e.c = c;
      e.dim = dim;
      e.seed = derive_seed(seed, idx);
      m.entries.push_back(std::move(e));
    }
  }

  // Every image draws from its own derived seed, so work partitioning
  // cannot change the output.
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  const auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= m.entries.size()) return;
      try {
        ManifestEntry& e = m.entries[i];
        Rng rng(e.seed);
        ImageGrid img;
        if (dim == 0) {
          ShapeClass eff = cls;
          if (cls == ShapeClass::mixed)
            eff = static_cast<ShapeClass>(std::uniform_int_distribution<int>(0, 2)(rng));
          img = gen_shapes(e.c, eff, size, rng);
          e.class_id = static_cast<int>(eff);
        } else {
          img = gen_regions(e.c, size, rng);
          e.class_id = 0;
        }
        save_png(img, (std::filesystem::path(out_dir) / e.file).string());
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::ofstream mf(std::filesystem::path(out_dir) / "manifest.json");
  if (!mf) throw ValidationError("cannot write manifest in " + out_dir);
  mf << m.to_json() << "\n";
  return m;
}

LoadedDataset load_dataset(const std::string& dataset_dir) {
  const auto manifest_path = std::filesystem::path(dataset_dir) / "manifest.json";
  const DatasetManifest m = DatasetManifest::from_json_file(manifest_path.string());
  LoadedDataset ds;
  ds.dim = m.dim;
  ds.image_size = m.image_size;
  ds.c_max = m.c_max;
  ds.images.reserve(m.entries.size());
  for (const ManifestEntry& e : m.entries) {
    ImageGrid img = load_image((std::filesystem::path(dataset_dir) / e.file).string());
    if (img.h != m.image_size || img.w != m.image_size)
      throw ValidationError("dataset image " + e.file + " does not match the manifest size");
    ds.images.push_back(std::move(img));
    ds.c.push_back(e.c);
    ds.class_id.push_back(e.class_id);
  }
  return ds;
}

}  // namespace topogen
