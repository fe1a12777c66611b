#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "topogen/image.hpp"
#include "topogen/rng.hpp"

namespace topogen {

/// Shape family for the component-count generator.
enum class ShapeClass : int {
  circle = 0,
  triangle = 1,
  rectangle = 2,
  mixed = 3,  // each placed shape picks one of the three at random
};

ShapeClass shape_class_from_string(const std::string& s);
std::string shape_class_to_string(ShapeClass sc);

/// Binary mask (-1 background, +1 foreground) with exactly c foreground
/// shapes, pairwise separated by at least 2 background pixels (so they are
/// distinct 8-connected components with margin).  Throws ValidationError if
/// placement fails after bounded retries (c too large for the canvas).
/// The result is oracle-verified: betti_at(mask, 0, dim 0) == c.
ImageGrid gen_shapes(int c, ShapeClass cls, int size, Rng& rng);

/// Binary mask whose foreground is one border-connected wall system
/// enclosing exactly c rooms (holes), built by recursive splitting.
/// Walls are 2 pixels thick; rooms are at least 2x2.  Oracle-verified:
/// betti_at(mask, 0, dim 1) == c and the wall is one component.
ImageGrid gen_regions(int c, int size, Rng& rng);

/// One dataset image: the file it was written to and its exact label.
struct ManifestEntry {
  std::string file;
  int c = 0;
  int dim = 0;
  int class_id = 0;       // shape class for dim 0; 0 for dim 1
  std::uint64_t seed = 0; // per-image generator seed
};

struct DatasetManifest {
  int dim = 0;
  int image_size = 0;
  int c_min = 0;
  int c_max = 0;
  std::string shape_class;  // "circle"/"triangle"/"rectangle"/"mixed" or "regions"
  std::uint64_t seed = 0;   // master seed
  std::vector<ManifestEntry> entries;

  std::string to_json() const;
  static DatasetManifest from_json_file(const std::string& path);
};

/// Generate n_per_c masks for every c in [c_min, c_max], write them as PNGs
/// plus a manifest.json into out_dir, and return the manifest.  Every image
/// derives its own seed from (seed, running index), so builds with the same
/// arguments are byte-identical, independent of thread count.
DatasetManifest build_dataset(int dim, int n_per_c, int c_min, int c_max, int size,
                              ShapeClass cls, std::uint64_t seed, const std::string& out_dir,
                              int threads = 1);

/// A dataset pulled into memory for training: images in native [-1, 1]
/// range with their exact labels.
struct LoadedDataset {
  int dim = 0;
  int image_size = 0;
  int c_max = 0;  // as declared by the manifest
  std::vector<ImageGrid> images;
  std::vector<int> c;
  std::vector<int> class_id;
};

/// Read manifest.json from dataset_dir and load every image it lists.
/// Throws ValidationError on missing files or shape mismatches.
LoadedDataset load_dataset(const std::string& dataset_dir);

}  // namespace topogen
