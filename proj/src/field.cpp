#include "nerfinv/field.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "nerfinv/errors.hpp"

namespace nerfinv {

void check_unit_direction(const Vec3& d) {
  const double n = d.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-6) {
    throw InvalidArgument("field query: direction must be unit length (norm " + std::to_string(n) + ")");
  }
}

FieldOutput RadianceField::query(const Vec3& x, const Vec3& d) const {
  check_unit_direction(d);
  return do_query(x, d);
}

FieldJacobians RadianceField::query_with_grads(const Vec3& x, const Vec3& d) const {
  check_unit_direction(d);
  return do_query_with_grads(x, d);
}

void RadianceField::evaluate(std::span<const Vec3> points, const Vec3& d, std::span<FieldOutput> out) const {
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = do_query(points[i], d);
}

Vec3 RadianceField::backpropagate_inputs(std::span<const Vec3> points, const Vec3& d,
                                         std::span<const double> grad_density, std::span<const Rgb> grad_color,
                                         std::span<Vec3> grad_points) const {
  Vec3 grad_dir = Vec3::Zero();
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (grad_density[i] == 0.0 && grad_color[i].isZero()) {
      grad_points[i].setZero();
      continue;
    }
    const FieldJacobians j = do_query_with_grads(points[i], d);
    grad_points[i] = grad_density[i] * j.d_density_dx + j.d_color_dx.transpose() * grad_color[i];
    grad_dir += j.d_color_dd.transpose() * grad_color[i];
  }
  return grad_dir;
}

FieldJacobians ConstantField::do_query_with_grads(const Vec3& x, const Vec3& d) const {
  FieldJacobians j;
  j.output = do_query(x, d);
  return j;
}

std::vector<double> positional_encoding(std::span<const double> v, int frequencies) {
  if (frequencies < 0) throw InvalidArgument("positional_encoding: frequency count must be >= 0");
  std::vector<double> out;
  out.reserve(2 * v.size() * static_cast<std::size_t>(frequencies));
  for (int j = 0; j < frequencies; ++j) {
    const double scale = std::ldexp(std::numbers::pi, j);
    for (double c : v) {
      out.push_back(std::sin(scale * c));
      out.push_back(std::cos(scale * c));
    }
  }
  return out;
}

}  // namespace nerfinv
