#pragma once

#include "nerfinv/common.hpp"
#include "nerfinv/rng.hpp"

namespace nerfinv {

// Rigid transform. Throughout the library poses are camera-to-world: a point
// p_cam in the camera frame maps to rotation * p_cam + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  // Throws InvalidArgument unless the 4x4 matrix is a rigid transform
  // (orthonormal rotation with det +1, last row 0 0 0 1) within `tol`.
  static Pose from_matrix(const Mat4& m, double tol = 1e-6);
  Mat4 matrix() const;

  Pose inverse() const;
  Vec3 transform_point(const Vec3& p) const { return rotation * p + translation; }

  // RᵀR = I and det R = +1 within tol, all entries finite.
  bool is_valid(double tol = 1e-9) const;
};

// this * other: applies `other` first.
Pose operator*(const Pose& a, const Pose& b);

// Exponential coordinates [ωθ | νθ] of a rigid motion: rotation part first,
// radians; translation part in scene units.
struct ExpCoords {
  Vec6 value = Vec6::Zero();

  ExpCoords() = default;
  explicit ExpCoords(const Vec6& v) : value(v) {}
  ExpCoords(const Vec3& rotation, const Vec3& translation) {
    value << rotation, translation;
  }

  Vec3 rotation() const { return value.head<3>(); }
  Vec3 translation() const { return value.tail<3>(); }
};

Mat3 skew(const Vec3& v);

// SO(3) exponential (Rodrigues) of the rotation vector phi.
Mat3 exp_so3(const Vec3& phi);

// e^{[S]θ}: rotation block is Rodrigues, translation block is
// K(S,θ) = (Iθ + (1 − cos θ)[ω] + (θ − sin θ)[ω]²)ν.
Pose exp_se3(const ExpCoords& coords);

// Principal-branch inverse of exp_se3. Throws AmbiguousBranch when the
// rotation angle is within 1e-6 of pi.
ExpCoords log_se3(const Pose& pose);

// Left Jacobian of SE(3) for the [rotation | translation] ordering:
// exp(ξ + dξ) ≈ exp(J(ξ) dξ) exp(ξ).
Mat6 left_jacobian_se3(const ExpCoords& coords);
Mat3 left_jacobian_so3(const Vec3& phi);

struct PoseErrors {
  double rotation_deg = 0.0;
  double translation = 0.0;
};

PoseErrors pose_errors(const Pose& a, const Pose& b);

// Rotates the camera about its own center by a uniformly random axis and an
// angle ~ U[-rot_limit_deg, rot_limit_deg], then offsets each translation
// component by U[-trans_limit, trans_limit].
Pose perturb_pose(const Pose& pose, double rot_limit_deg, double trans_limit, Rng& rng);

}  // namespace nerfinv
