#include "nerfinv/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "nerfinv/errors.hpp"

namespace nerfinv {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image::Image(int width, int height, const Rgb& fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw InvalidArgument("Image: negative dimensions");
  pixels_.assign(static_cast<std::size_t>(width) * height, fill);
}

double image_mse(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height()) throw InvalidArgument("image_mse: dimension mismatch");
  if (a.empty()) throw InvalidArgument("image_mse: empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i) sum += (a.pixels()[i] - b.pixels()[i]).squaredNorm();
  return sum / (3.0 * static_cast<double>(a.pixels().size()));
}

unsigned char quantize_channel(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(255.0 * c));
}

void write_png(const Image& image, const std::string& path) {
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open PNG for writing", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng error while writing", path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(static_cast<std::size_t>(image.width()) * 3);
  for (int v = 0; v < image.height(); ++v) {
    for (int u = 0; u < image.width(); ++u) {
      for (int c = 0; c < 3; ++c) row[3 * u + c] = quantize_channel(image.at(u, v)[c]);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(f.get()) != 0) throw IoError("failed writing PNG", path);
}

Image read_png(const std::string& path, const Rgb& background) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open PNG", path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw IoError("not a PNG file", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng error while reading", path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  std::vector<unsigned char> data(png_get_rowbytes(png, info) * static_cast<std::size_t>(height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int v = 0; v < height; ++v) rows[v] = data.data() + static_cast<std::size_t>(v) * png_get_rowbytes(png, info);
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image image(width, height);
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const unsigned char* px = rows[v] + static_cast<std::size_t>(u) * channels;
      Rgb c(px[0] / 255.0, px[1] / 255.0, px[2] / 255.0);
      if (channels == 4) {
        const double a = px[3] / 255.0;
        c = a * c + (1.0 - a) * background;
      }
      image.at(u, v) = c;
    }
  }
  return image;
}

std::string png_library_version() { return png_get_libpng_ver(nullptr); }

}  // namespace nerfinv
