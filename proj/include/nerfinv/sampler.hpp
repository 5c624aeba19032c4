#pragma once

#include <string>
#include <vector>

#include "nerfinv/common.hpp"
#include "nerfinv/image.hpp"
#include "nerfinv/rng.hpp"

namespace nerfinv {

enum class SamplingStrategy { kRandom, kInterestPoint, kInterestRegion };

SamplingStrategy parse_strategy(const std::string& name);
std::string to_string(SamplingStrategy s);

// Pixels chosen for one optimization step together with their observed
// colors. No pixel appears twice.
struct PixelBatch {
  std::vector<Pixel> pixels;
  std::vector<Rgb> colors;
};

class InterestMask {
 public:
  InterestMask() = default;
  InterestMask(int width, int height, bool fill = false)
      : width_(width), height_(height), cells_(static_cast<std::size_t>(width) * height, fill ? 1 : 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool at(int u, int v) const { return cells_[static_cast<std::size_t>(v) * width_ + u] != 0; }
  void set(int u, int v, bool value = true) { cells_[static_cast<std::size_t>(v) * width_ + u] = value ? 1 : 0; }
  std::size_t count() const;
  friend bool operator==(const InterestMask&, const InterestMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<unsigned char> cells_;
};

struct HarrisOptions {
  double k = 0.04;
  double relative_threshold = 0.01;
};

// Harris corner response on the mean-of-channels gray image: Sobel gradients
// (replicated border), structure tensor summed over a 3x3 window,
// R = det − k·trace².
std::vector<double> harris_response(const Image& image, double k = 0.04);

// Local maxima (>= all 8 neighbors) of the Harris response above
// relative_threshold · max response, sorted by response descending (ties by
// raster order). Constant images yield no points. Requires width, height >= 16.
std::vector<Pixel> detect_interest_points(const Image& image, const HarrisOptions& options = {});

InterestMask mask_from_points(int width, int height, const std::vector<Pixel>& points);

// Each iteration sets a pixel iff any pixel of its 5x5 neighborhood is set.
InterestMask dilate_mask(const InterestMask& mask, int iterations);

// Default dilation iteration count for a batch size.
int default_dilation_iterations(int batch_size);

// `count` distinct values from [0, n) chosen uniformly (Floyd's algorithm), in
// generation order.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, Rng& rng);

// Draws pixel batches from one observed image. Interest points (and the
// dilated region) are computed once at construction and reused by every call.
class RaySampler {
 public:
  RaySampler(const Image& observed, SamplingStrategy strategy, int dilation_iterations);

  // random: b distinct pixels uniformly. interest_point / interest_region: b
  // distinct pixels uniformly from the candidate set; when it holds fewer than
  // b pixels all are taken and the remainder is drawn uniformly from the rest
  // of the image. Throws InvalidArgument unless 1 <= b <= width·height.
  PixelBatch sample(int batch_size, Rng& rng) const;

  const std::vector<Pixel>& interest_points() const { return points_; }
  // Candidate pixel indices (raster order); empty for the random strategy.
  const std::vector<std::size_t>& candidates() const { return candidates_; }
  SamplingStrategy strategy() const { return strategy_; }

 private:
  const Image* image_;
  SamplingStrategy strategy_;
  std::vector<Pixel> points_;
  std::vector<std::size_t> candidates_;
};

PixelBatch sample_batch(SamplingStrategy strategy, const Image& image, int batch_size, int dilation_iterations,
                        Rng& rng);

// White where set.
void write_mask_png(const InterestMask& mask, const std::string& path);

}  // namespace nerfinv
