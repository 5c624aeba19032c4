#pragma once

#include <span>
#include <vector>

#include "nerfinv/common.hpp"

namespace nerfinv {

struct FieldOutput {
  double density = 0.0;  // σ >= 0, 1/length
  Rgb color = Rgb::Zero();  // each channel in [0, 1]
};

// Output plus input Jacobians. Rows of the color Jacobians index the color
// channel, columns the input coordinate. Density never depends on the view
// direction, so ∂σ/∂d is not represented.
struct FieldJacobians {
  FieldOutput output;
  Vec3 d_density_dx = Vec3::Zero();
  Mat3 d_color_dx = Mat3::Zero();
  Mat3 d_color_dd = Mat3::Zero();
};

// σ, c = F(x, d).
//
// Implementations provide single-point evaluation with Jacobians. The batched
// per-ray entry points have default implementations in terms of the
// single-point ones; fields with a cheaper vectorized path override them.
// All const member functions must be safe to call concurrently.
class RadianceField {
 public:
  virtual ~RadianceField() = default;

  // Throws InvalidArgument if ‖d‖ differs from 1 by more than 1e-6.
  FieldOutput query(const Vec3& x, const Vec3& d) const;
  FieldJacobians query_with_grads(const Vec3& x, const Vec3& d) const;

  // Evaluates all samples of one ray. `d` is assumed to be unit length.
  virtual void evaluate(std::span<const Vec3> points, const Vec3& d, std::span<FieldOutput> out) const;

  // Vector-Jacobian product for one ray: given ∂L/∂σᵢ and ∂L/∂cᵢ per sample,
  // writes ∂L/∂xᵢ and returns the total ∂L/∂d.
  virtual Vec3 backpropagate_inputs(std::span<const Vec3> points, const Vec3& d, std::span<const double> grad_density,
                                    std::span<const Rgb> grad_color, std::span<Vec3> grad_points) const;

 protected:
  virtual FieldOutput do_query(const Vec3& x, const Vec3& d) const = 0;
  virtual FieldJacobians do_query_with_grads(const Vec3& x, const Vec3& d) const = 0;
};

// Throws InvalidArgument unless ‖d‖ = 1 within 1e-6.
void check_unit_direction(const Vec3& d);

// Spatially uniform density and color. Used as the homogeneous-slab and
// empty-space oracle.
class ConstantField final : public RadianceField {
 public:
  ConstantField(double density, const Rgb& color) : density_(density), color_(color) {}

 protected:
  FieldOutput do_query(const Vec3&, const Vec3&) const override { return {density_, color_}; }
  FieldJacobians do_query_with_grads(const Vec3& x, const Vec3& d) const override;

 private:
  double density_;
  Rgb color_;
};

// Concatenation over frequencies j = 0..L-1 of (sin(2ʲπv_k), cos(2ʲπv_k)) for
// each component k. Within one frequency the components are laid out in
// order, each contributing its (sin, cos) pair. L = 0 yields an empty vector.
std::vector<double> positional_encoding(std::span<const double> v, int frequencies);

}  // namespace nerfinv
