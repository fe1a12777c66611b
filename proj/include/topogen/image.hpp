#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace topogen {

/// Dense 2D scalar field, row-major, values nominally in [-1, 1].
/// This is the common currency between the persistence code, the mask
/// generators and the diffusion model (which flattens it to a tensor).
struct ImageGrid {
  int h = 0;
  int w = 0;
  std::vector<double> v;  // row-major, size h*w

  ImageGrid() = default;
  ImageGrid(int h_, int w_, double fill = 0.0);

  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * w + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * w + c]; }
  std::size_t size() const { return v.size(); }

  /// Throws ValidationError unless h >= 1, w >= 1, v.size() == h*w and all
  /// values are finite.
  void validate() const;
};

/// Map one value to the 8-bit PNG encoding: clamp to [-1, 1], then affine
/// to [0, 255] with -1 -> 0 and +1 -> 255, rounding to nearest.
std::uint8_t value_to_byte(double v);

/// Inverse of value_to_byte up to quantization: byte b -> b/255*2 - 1.
double byte_to_value(std::uint8_t b);

/// 8-bit grayscale PNG I/O.  Loading accepts only grayscale PNGs (bit
/// depths 1/2/4/8 are expanded to 8); anything else is a ValidationError.
ImageGrid load_png(const std::string& path);
void save_png(const ImageGrid& img, const std::string& path);

/// Raw float32 image file: magic "TDNF", then u32 height, u32 width,
/// u32 reserved (zero), then h*w little-endian float32 in row-major order.
/// Lossless for float-valued images (up to the double->float cast).
ImageGrid load_raw(const std::string& path);
void save_raw(const ImageGrid& img, const std::string& path);

/// Load either format, dispatching on the file's magic bytes.
ImageGrid load_image(const std::string& path);

}  // namespace topogen
