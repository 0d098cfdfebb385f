#include "lgr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

#include "lgr/errors.hpp"

namespace lgr {
namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct ImageBytes {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> data;
};

ImageBytes to_bytes(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw DimensionError("expected an image [H x W x 1|3], got " + shape_str(image.shape()));
  }
  ImageBytes b{image.dim(0), image.dim(1), image.dim(2), {}};
  b.data.reserve(image.size());
  for (double v : image.data()) b.data.push_back(to_byte(v));
  return b;
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::string& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path + "'");
  return f;
}

void write_png(const std::string& path, const ImageBytes& b) {
  File f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed for '" + path + "'");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG '" + path + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(b.width), static_cast<png_uint_32>(b.height), 8,
               b.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < b.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(b.data.data() + y * b.width * b.channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageBytes read_png(const std::string& path) {
  File f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed for '" + path + "'");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed reading PNG '" + path + "'");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  ImageBytes b;
  b.width = png_get_image_width(png, info);
  b.height = png_get_image_height(png, info);
  b.channels = 3;
  if (png_get_rowbytes(png, info) != b.width * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG layout in '" + path + "'");
  }
  b.data.resize(b.width * b.height * 3);
  for (std::size_t y = 0; y < b.height; ++y) png_read_row(png, b.data.data() + y * b.width * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return b;
}

void write_pnm(const std::string& path, const ImageBytes& b) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "'");
  out << (b.channels == 1 ? "P5" : "P6") << "\n" << b.width << " " << b.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(b.data.data()), static_cast<std::streamsize>(b.data.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

ImageBytes read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string magic;
  ImageBytes b;
  int maxval = 0;
  in >> magic >> b.width >> b.height >> maxval;
  if (!in || (magic != "P5" && magic != "P6") || maxval != 255) {
    throw IoError("'" + path + "' is not an 8-bit binary PGM/PPM");
  }
  in.get();
  const std::size_t src_channels = magic == "P5" ? 1 : 3;
  std::vector<std::uint8_t> raw(b.width * b.height * src_channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("truncated image '" + path + "'");
  b.channels = 3;
  b.data.resize(b.width * b.height * 3);
  for (std::size_t i = 0; i < b.width * b.height; ++i)
    for (std::size_t c = 0; c < 3; ++c) b.data[i * 3 + c] = raw[i * src_channels + (src_channels == 1 ? 0 : c)];
  return b;
}

}  // namespace

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

void write_image(const std::string& path, const Tensor& image) {
  const ImageBytes b = to_bytes(image);
  if (ends_with(path, ".pgm") || ends_with(path, ".ppm")) {
    if ((b.channels == 1) != ends_with(path, ".pgm")) {
      throw IoError("'" + path + "': use .pgm for gray and .ppm for colour images");
    }
    write_pnm(path, b);
  } else {
    write_png(path, b);
  }
}

Tensor read_image(const std::string& path) {
  const ImageBytes b = ends_with(path, ".pgm") || ends_with(path, ".ppm") ? read_pnm(path) : read_png(path);
  Tensor t({b.height, b.width, 3});
  for (std::size_t i = 0; i < b.data.size(); ++i) t[i] = b.data[i] / 255.0;
  return t;
}

}  // namespace lgr
