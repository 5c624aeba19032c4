#include "nerfinv/analytic_scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "nerfinv/errors.hpp"

namespace nerfinv {
namespace {

struct Falloff {
  double value;
  double slope;  // d value / d sd
};

// Logistic step in signed distance, falling from 99% to 1% of its peak
// across `width`. Unlike polynomial steps with compact support, its third
// derivative stays bounded relative to the first near the shell edge.
constexpr double kLogisticSpan = 9.190239700361385;  // 2·ln(99)
// exp(-37) < 2^-53: terms this far down the logistic or softmin tails vanish
// against the dominant term in double precision and are skipped.
constexpr double kTailCutoff = 37.0;

Falloff falloff(double sd, double width) {
  const double scale = width / kLogisticSpan;
  if (sd > kTailCutoff * scale) return {0.0, 0.0};
  const double value = 1.0 / (1.0 + std::exp(sd / scale));
  return {value, -value * (1.0 - value) / scale};
}

struct SignedDistance {
  double value;
  Vec3 gradient;
};

template <bool kWithGrads>
SignedDistance signed_distance(const Primitive& p, const Vec3& x) {
  const Vec3 q = x - p.center;
  SignedDistance out{0.0, Vec3::Zero()};
  if (p.shape == PrimitiveShape::kSphere) {
    const double r = q.norm();
    out.value = r - p.size.x();
    if (kWithGrads && r > 0.0) out.gradient = q / r;
    return out;
  }
  const Vec3 n = q.cwiseQuotient(p.size);
  const Vec3 n2 = n.cwiseProduct(n);
  const Vec3 n4 = n2.cwiseProduct(n2);
  const double sum = n4.dot(n4);
  const double g = std::sqrt(std::sqrt(std::sqrt(sum)));
  const double scale = p.size.minCoeff();
  out.value = (g - 1.0) * scale;
  if (kWithGrads && g > 0.0) {
    // ∂g/∂qᵢ = nᵢ⁷ g⁻⁷ / hᵢ
    const double inv = g / sum;
    for (int i = 0; i < 3; ++i) out.gradient[i] = scale * n4[i] * n2[i] * n[i] * inv / p.size[i];
  }
  return out;
}

}  // namespace

AnalyticScene::AnalyticScene(std::vector<Primitive> primitives, double view_tint, const Vec3& tint_direction,
                             double color_blend)
    : primitives_(std::move(primitives)),
      view_tint_(view_tint),
      tint_direction_(tint_direction.normalized()),
      color_blend_(color_blend) {
  if (view_tint < 0.0 || view_tint > 1.0) throw InvalidArgument("AnalyticScene: view_tint must lie in [0, 1]");
  if (!(color_blend > 0.0)) throw InvalidArgument("AnalyticScene: color_blend must be positive");
  if (!tint_direction.allFinite() || tint_direction.norm() == 0.0) {
    throw InvalidArgument("AnalyticScene: tint direction must be a nonzero vector");
  }
  for (const auto& p : primitives_) {
    if (!(p.shell_width > 0.0) || p.peak_density < 0.0 || (p.size.array() <= 0.0).any()) {
      throw InvalidArgument("AnalyticScene: primitive needs positive size and shell width, non-negative density");
    }
    if ((p.albedo.array() < 0.0).any() || (p.albedo.array() > 1.0).any()) {
      throw InvalidArgument("AnalyticScene: albedo channels must lie in [0, 1]");
    }
  }
}

AnalyticScene AnalyticScene::toy() {
  std::vector<Primitive> prims;
  auto box = [&](Vec3 c, Vec3 h, Rgb a) {
    prims.push_back({PrimitiveShape::kBox, c, h, 0.12, 25.0, a});
  };
  auto sphere = [&](Vec3 c, double r, Rgb a) {
    prims.push_back({PrimitiveShape::kSphere, c, Vec3::Constant(r), 0.12, 25.0, a});
  };
  box({0.0, 0.0, 0.0}, {0.45, 0.45, 0.3}, {0.85, 0.25, 0.15});
  box({-0.35, 0.55, 0.25}, {0.2, 0.2, 0.45}, {0.95, 0.85, 0.2});
  sphere({0.6, 0.45, 0.35}, 0.3, {0.15, 0.35, 0.9});
  sphere({-0.55, -0.5, 0.15}, 0.32, {0.2, 0.75, 0.3});
  sphere({0.2, -0.35, 0.55}, 0.2, {0.6, 0.2, 0.7});
  return AnalyticScene(std::move(prims), 0.2, Vec3(0.3, 0.2, 1.0));
}

AnalyticScene AnalyticScene::single_sphere(const Vec3& center, double radius, double peak_density, const Rgb& albedo,
                                           double shell_width) {
  return AnalyticScene({{PrimitiveShape::kSphere, center, Vec3::Constant(radius), shell_width, peak_density, albedo}});
}

template <bool kWithGrads>
FieldJacobians AnalyticScene::eval(const Vec3& x, const Vec3& d) const {
  FieldJacobians out;
  if (primitives_.empty()) {
    out.output.color = Rgb::Constant(0.5);
    return out;
  }
  // Density sums the primitive shells; color is a softmin blend of albedos
  // over signed distance, smooth everywhere including empty space.
  constexpr std::size_t kStackPrimitives = 16;
  std::array<SignedDistance, kStackPrimitives> stack_sds;
  std::vector<SignedDistance> heap_sds;
  SignedDistance* sds = stack_sds.data();
  if (primitives_.size() > kStackPrimitives) {
    heap_sds.resize(primitives_.size());
    sds = heap_sds.data();
  }
  double nearest = INFINITY;
  for (std::size_t k = 0; k < primitives_.size(); ++k) {
    sds[k] = signed_distance<kWithGrads>(primitives_[k], x);
    nearest = std::min(nearest, sds[k].value);
  }

  double density = 0.0;
  Vec3 d_density = Vec3::Zero();
  double total = 0.0;
  Rgb blended = Rgb::Zero();
  Mat3 d_blended = Mat3::Zero();  // Σ aₖ ∂φₖ/∂x
  Vec3 d_total = Vec3::Zero();
  for (std::size_t k = 0; k < primitives_.size(); ++k) {
    const Primitive& p = primitives_[k];
    const SignedDistance& sd = sds[k];
    const double gap = (sd.value - nearest) / color_blend_;
    if (gap < kTailCutoff) {
      const double phi = std::exp(-gap);
      total += phi;
      blended += phi * p.albedo;
      if constexpr (kWithGrads) {
        const Vec3 g = (-phi / color_blend_) * sd.gradient;
        d_total += g;
        d_blended += p.albedo * g.transpose();
      }
    }
    const Falloff f = falloff(sd.value, p.shell_width);
    if (f.value == 0.0) continue;
    density += p.peak_density * f.value;
    if constexpr (kWithGrads) d_density += (p.peak_density * f.slope) * sd.gradient;
  }

  const Rgb base = blended / total;
  const double cos_view = d.dot(tint_direction_);
  const double tint = 1.0 - 0.5 * view_tint_ * (1.0 - cos_view);
  out.output.density = density;
  out.output.color = tint * base;
  if constexpr (kWithGrads) {
    out.d_density_dx = d_density;
    out.d_color_dx = tint * (d_blended - base * d_total.transpose()) / total;
    out.d_color_dd = (0.5 * view_tint_) * base * tint_direction_.transpose();
  }
  return out;
}

FieldOutput AnalyticScene::do_query(const Vec3& x, const Vec3& d) const { return eval<false>(x, d).output; }

FieldJacobians AnalyticScene::do_query_with_grads(const Vec3& x, const Vec3& d) const { return eval<true>(x, d); }

}  // namespace nerfinv
