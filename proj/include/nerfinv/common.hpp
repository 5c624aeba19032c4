#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace nerfinv {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Rgb = Eigen::Vector3d;

}  // namespace nerfinv

namespace nerfinv {

// Integer pixel coordinates: u to the right, v down.
struct Pixel {
  int u = 0;
  int v = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

}  // namespace nerfinv
