#pragma once

#include <string>
#include <vector>

#include "nerfinv/field.hpp"

namespace nerfinv {

enum class PrimitiveShape { kSphere, kBox };

// One smooth blob of density. For spheres `size` holds the radius in x; for
// boxes it holds the half extents. Boxes are rendered as p = 8
// superellipsoids so the density stays smooth across edges and corners.
struct Primitive {
  PrimitiveShape shape = PrimitiveShape::kSphere;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Constant(0.5);
  double shell_width = 0.1;
  double peak_density = 20.0;
  Rgb albedo = Rgb::Constant(0.8);
};

// Closed-form radiance field standing in for a trained network. The density
// of each primitive is peak · logistic(−sd/s) with sd a signed distance to
// its surface and s chosen so density falls from 99% to 1% of peak across the
// shell width w; overlapping primitives add densities.
// Color blends albedos with softmin weights exp(−sd/color_blend), so it is
// smooth everywhere. An optional tint darkens color by up to `view_tint` as
// the view direction turns away from `tint_direction`.
class AnalyticScene final : public RadianceField {
 public:
  AnalyticScene() = default;
  explicit AnalyticScene(std::vector<Primitive> primitives, double view_tint = 0.0,
                         const Vec3& tint_direction = Vec3::UnitZ(), double color_blend = 0.05);

  // Built-in desk-scale scene: a few colored boxes and spheres inside the
  // unit-ish cube around the origin.
  static AnalyticScene toy();
  static AnalyticScene single_sphere(const Vec3& center, double radius, double peak_density, const Rgb& albedo,
                                     double shell_width = 0.1);

  const std::vector<Primitive>& primitives() const { return primitives_; }
  double view_tint() const { return view_tint_; }
  double color_blend() const { return color_blend_; }
  const Vec3& tint_direction() const { return tint_direction_; }

 protected:
  FieldOutput do_query(const Vec3& x, const Vec3& d) const override;
  FieldJacobians do_query_with_grads(const Vec3& x, const Vec3& d) const override;

 private:
  template <bool kWithGrads>
  FieldJacobians eval(const Vec3& x, const Vec3& d) const;

  std::vector<Primitive> primitives_;
  double view_tint_ = 0.0;
  Vec3 tint_direction_ = Vec3::UnitZ();
  double color_blend_ = 0.05;  // softmin length scale of the albedo blend
};

}  // namespace nerfinv
