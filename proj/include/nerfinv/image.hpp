#pragma once

#include <string>
#include <vector>

#include "nerfinv/common.hpp"

namespace nerfinv {

// Row-major float RGB image, channels nominally in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, const Rgb& fill = Rgb::Zero());

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }

  Rgb& at(int u, int v) { return pixels_[static_cast<std::size_t>(v) * width_ + u]; }
  const Rgb& at(int u, int v) const { return pixels_[static_cast<std::size_t>(v) * width_ + u]; }

  std::vector<Rgb>& pixels() { return pixels_; }
  const std::vector<Rgb>& pixels() const { return pixels_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Rgb> pixels_;
};

// Mean squared error over all channels. Throws InvalidArgument on size
// mismatch.
double image_mse(const Image& a, const Image& b);

// Clamps to [0, 1] and quantizes with round(255 v).
unsigned char quantize_channel(double v);

// 8-bit RGB PNG.
void write_png(const Image& image, const std::string& path);
// Reads 8-bit gray/RGB/RGBA PNGs. RGBA is composited over `background`.
Image read_png(const std::string& path, const Rgb& background = Rgb::Ones());

// Version of the linked PNG library, for run manifests.
std::string png_library_version();

}  // namespace nerfinv
