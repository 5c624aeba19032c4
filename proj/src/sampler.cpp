#include "nerfinv/sampler.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "nerfinv/errors.hpp"

namespace nerfinv {

SamplingStrategy parse_strategy(const std::string& name) {
  if (name == "random") return SamplingStrategy::kRandom;
  if (name == "interest_point" || name == "point") return SamplingStrategy::kInterestPoint;
  if (name == "interest_region" || name == "region") return SamplingStrategy::kInterestRegion;
  throw InvalidArgument("unknown sampling strategy: " + name);
}

std::string to_string(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::kRandom:
      return "random";
    case SamplingStrategy::kInterestPoint:
      return "interest_point";
    case SamplingStrategy::kInterestRegion:
      return "interest_region";
  }
  return "unknown";
}

std::size_t InterestMask::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), 1));
}

std::vector<double> harris_response(const Image& image, double k) {
  const int w = image.width();
  const int h = image.height();
  std::vector<double> gray(static_cast<std::size_t>(w) * h);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const Rgb& c = image.at(u, v);
      gray[static_cast<std::size_t>(v) * w + u] = (c[0] + c[1] + c[2]) / 3.0;
    }
  auto g = [&](int u, int v) {
    u = std::clamp(u, 0, w - 1);
    v = std::clamp(v, 0, h - 1);
    return gray[static_cast<std::size_t>(v) * w + u];
  };

  std::vector<double> ixx(gray.size()), iyy(gray.size()), ixy(gray.size());
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double gx = (g(u + 1, v - 1) + 2.0 * g(u + 1, v) + g(u + 1, v + 1)) -
                        (g(u - 1, v - 1) + 2.0 * g(u - 1, v) + g(u - 1, v + 1));
      const double gy = (g(u - 1, v + 1) + 2.0 * g(u, v + 1) + g(u + 1, v + 1)) -
                        (g(u - 1, v - 1) + 2.0 * g(u, v - 1) + g(u + 1, v - 1));
      const std::size_t i = static_cast<std::size_t>(v) * w + u;
      ixx[i] = gx * gx;
      iyy[i] = gy * gy;
      ixy[i] = gx * gy;
    }
  }

  std::vector<double> response(gray.size(), 0.0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      double a = 0.0, b = 0.0, c = 0.0;
      for (int dv = -1; dv <= 1; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          const int uu = u + du;
          const int vv = v + dv;
          if (uu < 0 || vv < 0 || uu >= w || vv >= h) continue;
          const std::size_t j = static_cast<std::size_t>(vv) * w + uu;
          a += ixx[j];
          b += iyy[j];
          c += ixy[j];
        }
      }
      response[static_cast<std::size_t>(v) * w + u] = (a * b - c * c) - k * (a + b) * (a + b);
    }
  }
  return response;
}

std::vector<Pixel> detect_interest_points(const Image& image, const HarrisOptions& options) {
  const int w = image.width();
  const int h = image.height();
  if (w < 16 || h < 16) throw InvalidArgument("detect_interest_points: image must be at least 16x16");
  const std::vector<double> r = harris_response(image, options.k);
  const double max_r = *std::max_element(r.begin(), r.end());
  if (!(max_r > 0.0)) return {};
  const double threshold = options.relative_threshold * max_r;

  struct Candidate {
    double response;
    std::size_t index;
  };
  std::vector<Candidate> found;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * w + u;
      if (r[i] <= threshold) continue;
      bool is_max = true;
      for (int dv = -1; dv <= 1 && is_max; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          const int uu = u + du;
          const int vv = v + dv;
          if ((du == 0 && dv == 0) || uu < 0 || vv < 0 || uu >= w || vv >= h) continue;
          if (r[static_cast<std::size_t>(vv) * w + uu] > r[i]) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) found.push_back({r[i], i});
    }
  }
  std::stable_sort(found.begin(), found.end(),
                   [](const Candidate& a, const Candidate& b) { return a.response > b.response; });
  std::vector<Pixel> out;
  out.reserve(found.size());
  for (const Candidate& c : found) out.push_back({static_cast<int>(c.index % w), static_cast<int>(c.index / w)});
  return out;
}

InterestMask mask_from_points(int width, int height, const std::vector<Pixel>& points) {
  InterestMask m(width, height);
  for (const Pixel& p : points) m.set(p.u, p.v);
  return m;
}

InterestMask dilate_mask(const InterestMask& mask, int iterations) {
  if (iterations < 0) throw InvalidArgument("dilate_mask: iterations must be >= 0");
  const int w = mask.width();
  const int h = mask.height();
  InterestMask cur = mask;
  // The 5x5 square is separable: a horizontal then a vertical radius-2 pass.
  for (int it = 0; it < iterations; ++it) {
    InterestMask rows(w, h);
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        bool any = false;
        for (int du = -2; du <= 2 && !any; ++du) {
          const int uu = u + du;
          any = uu >= 0 && uu < w && cur.at(uu, v);
        }
        rows.set(u, v, any);
      }
    InterestMask next(w, h);
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        bool any = false;
        for (int dv = -2; dv <= 2 && !any; ++dv) {
          const int vv = v + dv;
          any = vv >= 0 && vv < h && rows.at(u, vv);
        }
        next.set(u, v, any);
      }
    if (next == cur) break;
    cur = std::move(next);
  }
  return cur;
}

int default_dilation_iterations(int batch_size) { return batch_size <= 1024 ? 3 : 5; }

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, Rng& rng) {
  if (count > n) throw InvalidArgument("sample_without_replacement: count exceeds population");
  std::vector<std::size_t> out;
  out.reserve(count);
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(count * 2);
  for (std::size_t j = n - count; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> dist(0, j);
    const std::size_t t = dist(rng);
    const std::size_t pick = chosen.insert(t).second ? t : j;
    if (pick == j) chosen.insert(j);
    out.push_back(pick);
  }
  return out;
}

RaySampler::RaySampler(const Image& observed, SamplingStrategy strategy, int dilation_iterations)
    : image_(&observed), strategy_(strategy) {
  if (observed.empty()) throw InvalidArgument("RaySampler: empty image");
  if (strategy == SamplingStrategy::kRandom) return;
  points_ = detect_interest_points(observed);
  const int w = observed.width();
  if (strategy == SamplingStrategy::kInterestPoint) {
    for (const Pixel& p : points_) candidates_.push_back(static_cast<std::size_t>(p.v) * w + p.u);
    return;
  }
  const InterestMask region = dilate_mask(mask_from_points(w, observed.height(), points_), dilation_iterations);
  for (int v = 0; v < observed.height(); ++v)
    for (int u = 0; u < w; ++u)
      if (region.at(u, v)) candidates_.push_back(static_cast<std::size_t>(v) * w + u);
}

PixelBatch RaySampler::sample(int batch_size, Rng& rng) const {
  const int w = image_->width();
  const std::size_t total = static_cast<std::size_t>(w) * image_->height();
  if (batch_size < 1 || static_cast<std::size_t>(batch_size) > total) {
    throw InvalidArgument("sample_batch: batch size must lie in [1, width*height]");
  }
  const auto b = static_cast<std::size_t>(batch_size);

  std::vector<std::size_t> indices;
  if (candidates_.size() >= b) {
    for (std::size_t k : sample_without_replacement(candidates_.size(), b, rng)) indices.push_back(candidates_[k]);
  } else if (candidates_.empty()) {
    indices = sample_without_replacement(total, b, rng);
  } else {
    // Shortfall: every candidate, then uniform draws from the other pixels.
    indices = candidates_;
    std::vector<unsigned char> taken(total, 0);
    for (std::size_t i : candidates_) taken[i] = 1;
    std::vector<std::size_t> rest;
    rest.reserve(total - candidates_.size());
    for (std::size_t i = 0; i < total; ++i)
      if (!taken[i]) rest.push_back(i);
    for (std::size_t k : sample_without_replacement(rest.size(), b - candidates_.size(), rng)) {
      indices.push_back(rest[k]);
    }
  }

  PixelBatch batch;
  batch.pixels.reserve(b);
  batch.colors.reserve(b);
  for (std::size_t i : indices) {
    const Pixel p{static_cast<int>(i % w), static_cast<int>(i / w)};
    batch.pixels.push_back(p);
    batch.colors.push_back(image_->at(p.u, p.v));
  }
  return batch;
}

PixelBatch sample_batch(SamplingStrategy strategy, const Image& image, int batch_size, int dilation_iterations,
                        Rng& rng) {
  return RaySampler(image, strategy, dilation_iterations).sample(batch_size, rng);
}

void write_mask_png(const InterestMask& mask, const std::string& path) {
  Image img(mask.width(), mask.height());
  for (int v = 0; v < mask.height(); ++v)
    for (int u = 0; u < mask.width(); ++u) img.at(u, v) = mask.at(u, v) ? Rgb::Ones() : Rgb::Zero();
  write_png(img, path);
}

}  // namespace nerfinv
