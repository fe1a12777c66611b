#include "topogen/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "topogen/errors.hpp"

namespace topogen {

ImageGrid::ImageGrid(int h_, int w_, double fill)
    : h(h_), w(w_), v(static_cast<std::size_t>(h_) * static_cast<std::size_t>(w_), fill) {
  if (h_ < 1 || w_ < 1) throw ValidationError("ImageGrid: dimensions must be >= 1");
}

void ImageGrid::validate() const {
  if (h < 1 || w < 1) throw ValidationError("ImageGrid: dimensions must be >= 1");
  if (v.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w))
    throw ValidationError("ImageGrid: buffer size does not match h*w");
  for (double x : v)
    if (!std::isfinite(x)) throw ValidationError("ImageGrid: non-finite pixel value");
}

std::uint8_t value_to_byte(double v) {
  double c = std::clamp(v, -1.0, 1.0);
  return static_cast<std::uint8_t>(std::lround((c + 1.0) * 0.5 * 255.0));
}

double byte_to_value(std::uint8_t b) { return static_cast<double>(b) / 255.0 * 2.0 - 1.0; }

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_u32(std::FILE* f, std::uint32_t x) {
  unsigned char b[4] = {static_cast<unsigned char>(x & 0xff),
                        static_cast<unsigned char>((x >> 8) & 0xff),
                        static_cast<unsigned char>((x >> 16) & 0xff),
                        static_cast<unsigned char>((x >> 24) & 0xff)};
  if (std::fwrite(b, 1, 4, f) != 4) throw ValidationError("raw image: short write");
}

std::uint32_t read_u32(std::FILE* f) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) throw ValidationError("raw image: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

ImageGrid load_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ValidationError("cannot open PNG file: " + path);

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw ValidationError("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ValidationError("libpng: failed to create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ValidationError("libpng: failed to create info struct");
  }
  std::vector<std::uint8_t> bytes;
  png_uint_32 h = 0, w = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("malformed PNG file: " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  int bit_depth = 0, color_type = 0;
  png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);
  if (color_type != PNG_COLOR_TYPE_GRAY || bit_depth > 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("PNG must be 8-bit grayscale: " + path);
  }
  if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  bytes.resize(static_cast<std::size_t>(h) * w);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = bytes.data() + static_cast<std::size_t>(r) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageGrid img(static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < bytes.size(); ++i) img.v[i] = byte_to_value(bytes[i]);
  return img;
}

void save_png(const ImageGrid& img, const std::string& path) {
  img.validate();
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw ValidationError("cannot create PNG file: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ValidationError("libpng: failed to create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ValidationError("libpng: failed to create info struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ValidationError("libpng: write failed: " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.w));
  for (int r = 0; r < img.h; ++r) {
    for (int c = 0; c < img.w; ++c) row[static_cast<std::size_t>(c)] = value_to_byte(img.at(r, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

namespace {
constexpr char kRawMagic[4] = {'T', 'D', 'N', 'F'};
}

ImageGrid load_raw(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ValidationError("cannot open raw image file: " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, kRawMagic, 4) != 0)
    throw ValidationError("raw image: bad magic in " + path);
  std::uint32_t h = read_u32(f.get());
  std::uint32_t w = read_u32(f.get());
  std::uint32_t reserved = read_u32(f.get());
  if (reserved != 0) throw ValidationError("raw image: nonzero reserved field in " + path);
  if (h < 1 || w < 1 || h > (1u << 20) || w > (1u << 20))
    throw ValidationError("raw image: implausible dimensions in " + path);
  std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<float> buf(n);
  if (std::fread(buf.data(), sizeof(float), n, f.get()) != n)
    throw ValidationError("raw image: truncated pixel data in " + path);
  ImageGrid img(static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < n; ++i) img.v[i] = static_cast<double>(buf[i]);
  img.validate();
  return img;
}

void save_raw(const ImageGrid& img, const std::string& path) {
  img.validate();
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw ValidationError("cannot create raw image file: " + path);
  if (std::fwrite(kRawMagic, 1, 4, f.get()) != 4)
    throw ValidationError("raw image: short write");
  write_u32(f.get(), static_cast<std::uint32_t>(img.h));
  write_u32(f.get(), static_cast<std::uint32_t>(img.w));
  write_u32(f.get(), 0);
  std::vector<float> buf(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) buf[i] = static_cast<float>(img.v[i]);
  if (std::fwrite(buf.data(), sizeof(float), buf.size(), f.get()) != buf.size())
    throw ValidationError("raw image: short write");
}

ImageGrid load_image(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ValidationError("cannot open image file: " + path);
  unsigned char head[4] = {0, 0, 0, 0};
  std::size_t got = std::fread(head, 1, 4, f.get());
  f.reset();
  if (got == 4 && std::memcmp(head, kRawMagic, 4) == 0) return load_raw(path);
  return load_png(path);
}

}  // namespace topogen
