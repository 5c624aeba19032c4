#include "nerfinv/se3.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "nerfinv/errors.hpp"

namespace nerfinv {
namespace {

constexpr double kSmallAngle = 1e-8;
// Below this angle the closed-form Jacobian coefficients lose precision and
// their Taylor expansions are used instead.
constexpr double kSeriesAngle = 1e-3;

bool all_finite(const Vec6& v) { return v.allFinite(); }

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

Pose Pose::from_matrix(const Mat4& m, double tol) {
  if (!m.allFinite()) throw InvalidArgument("pose matrix has non-finite entries");
  if (std::abs(m(3, 0)) > tol || std::abs(m(3, 1)) > tol || std::abs(m(3, 2)) > tol ||
      std::abs(m(3, 3) - 1.0) > tol) {
    throw InvalidArgument("pose matrix last row must be [0 0 0 1]");
  }
  Pose p;
  p.rotation = m.topLeftCorner<3, 3>();
  p.translation = m.topRightCorner<3, 1>();
  if (!p.is_valid(tol)) throw InvalidArgument("pose rotation is not orthonormal with det +1");
  return p;
}

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

bool Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  if (((rotation.transpose() * rotation) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

Pose operator*(const Pose& a, const Pose& b) {
  Pose c;
  c.rotation = a.rotation * b.rotation;
  c.translation = a.rotation * b.translation + a.translation;
  return c;
}

Mat3 exp_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 w = skew(phi);
  if (theta < kSmallAngle) return Mat3::Identity() + w + 0.5 * w * w;
  const Mat3 k = w / theta;
  const double half = std::sin(0.5 * theta);
  return Mat3::Identity() + std::sin(theta) * k + (2.0 * half * half) * k * k;
}

Pose exp_se3(const ExpCoords& coords) {
  if (!all_finite(coords.value)) throw InvalidArgument("exp_se3: non-finite exponential coordinates");
  const Vec3 phi = coords.rotation();
  const Vec3 rho = coords.translation();
  const double theta = phi.norm();

  Pose out;
  if (theta < kSmallAngle) {
    // Second-order expansion of K(S,θ) around θ = 0.
    const Mat3 w = skew(phi);
    out.rotation = Mat3::Identity() + w + 0.5 * w * w;
    out.translation = (Mat3::Identity() + 0.5 * w + (1.0 / 6.0) * w * w) * rho;
    return out;
  }
  // K(S,θ)ν = (Iθ + (1 − cosθ)[ω] + (θ − sinθ)[ω]²)ν with ν = ρ/θ, applied to
  // ρ directly so the small-θ division never amplifies rounding.
  const Mat3 w = skew(phi / theta);
  const Mat3 w2 = w * w;
  const double s = std::sin(theta);
  const double half = std::sin(0.5 * theta);
  const double one_minus_cos = 2.0 * half * half;
  double theta_minus_sin;
  if (theta < 1e-2) {
    const double t2 = theta * theta;
    theta_minus_sin = theta * t2 * (1.0 / 6.0 - t2 * (1.0 / 120.0 - t2 / 5040.0));
  } else {
    theta_minus_sin = theta - s;
  }
  out.rotation = Mat3::Identity() + s * w + one_minus_cos * w2;
  out.translation = (Mat3::Identity() + (one_minus_cos / theta) * w + (theta_minus_sin / theta) * w2) * rho;
  return out;
}

Mat3 left_jacobian_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 w = skew(phi);
  if (theta < kSeriesAngle) {
    const double t2 = theta * theta;
    return Mat3::Identity() + (0.5 - t2 / 24.0) * w + (1.0 / 6.0 - t2 / 120.0) * w * w;
  }
  const double t2 = theta * theta;
  return Mat3::Identity() + ((1.0 - std::cos(theta)) / t2) * w + ((theta - std::sin(theta)) / (t2 * theta)) * w * w;
}

namespace {

Mat3 inverse_left_jacobian_so3(const Vec3& phi, double theta) {
  const Mat3 w = skew(phi);
  double coeff;
  if (theta < kSeriesAngle) {
    coeff = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    coeff = 1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Mat3::Identity() - 0.5 * w + coeff * w * w;
}

// Coupling block of the SE(3) left Jacobian.
Mat3 jacobian_coupling(const Vec3& phi, const Vec3& rho) {
  const double theta = phi.norm();
  const Mat3 p = skew(phi);
  const Mat3 r = skew(rho);
  const Mat3 pr = p * r;
  const Mat3 rp = r * p;
  const Mat3 prp = pr * p;

  double a, b, c;
  if (theta < kSeriesAngle) {
    const double t2 = theta * theta;
    a = 1.0 / 6.0 - t2 / 120.0;
    b = 1.0 / 24.0 - t2 / 720.0;
    c = 1.0 / 120.0 - t2 / 2520.0;
  } else {
    const double t2 = theta * theta;
    const double s = std::sin(theta);
    const double co = std::cos(theta);
    a = (theta - s) / (t2 * theta);
    b = (t2 + 2.0 * co - 2.0) / (2.0 * t2 * t2);
    c = (2.0 * theta - 3.0 * s + theta * co) / (2.0 * t2 * t2 * theta);
  }
  return 0.5 * r + a * (pr + rp + prp) + b * (p * pr + rp * p - 3.0 * prp) + c * (prp * p + p * prp);
}

}  // namespace

Mat6 left_jacobian_se3(const ExpCoords& coords) {
  const Vec3 phi = coords.rotation();
  const Mat3 j = left_jacobian_so3(phi);
  Mat6 out = Mat6::Zero();
  out.topLeftCorner<3, 3>() = j;
  out.bottomRightCorner<3, 3>() = j;
  out.bottomLeftCorner<3, 3>() = jacobian_coupling(phi, coords.translation());
  return out;
}

ExpCoords log_se3(const Pose& pose) {
  if (!pose.is_valid(1e-6)) throw InvalidArgument("log_se3: invalid pose");
  const Mat3& r = pose.rotation;
  const Vec3 vee(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double sin_theta = 0.5 * vee.norm();
  const double cos_theta = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(sin_theta, cos_theta);
  if (theta > std::numbers::pi - 1e-6) {
    throw AmbiguousBranch("log_se3: rotation angle within 1e-6 of pi has no unique logarithm");
  }

  Vec3 phi;
  if (theta < kSeriesAngle) {
    // vee = 2 sinθ ω; sinθ/θ ≈ 1 - θ²/6.
    phi = 0.5 * vee / (1.0 - theta * theta / 6.0);
  } else if (theta < 0.5 * std::numbers::pi) {
    phi = theta * vee / (2.0 * sin_theta);
  } else {
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part (R + Rᵀ)/2 = cosθ I + (1 − cosθ) ωωᵀ.
    const Mat3 outer = (0.5 * (r + r.transpose()) - cos_theta * Mat3::Identity()) / (1.0 - cos_theta);
    Eigen::Index k;
    outer.diagonal().maxCoeff(&k);
    Vec3 axis = outer.col(k) / std::sqrt(outer(k, k));
    if (axis.dot(vee) < 0.0) axis = -axis;
    phi = theta * axis.normalized();
  }

  ExpCoords out;
  out.value.head<3>() = phi;
  out.value.tail<3>() = inverse_left_jacobian_so3(phi, theta) * pose.translation;
  return out;
}

PoseErrors pose_errors(const Pose& a, const Pose& b) {
  // trace(RaᵀRb) = Σ Ra_ij Rb_ij, summed elementwise so the result is
  // symmetric in (a, b) to the last bit.
  double tr = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) tr += a.rotation(i, j) * b.rotation(i, j);
  const double c = std::clamp(0.5 * (tr - 1.0), -1.0, 1.0);
  PoseErrors e;
  e.rotation_deg = std::acos(c) * 180.0 / std::numbers::pi;
  e.translation = (a.translation - b.translation).norm();
  return e;
}

Pose perturb_pose(const Pose& pose, double rot_limit_deg, double trans_limit, Rng& rng) {
  if (rot_limit_deg < 0.0 || trans_limit < 0.0) throw InvalidArgument("perturb_pose: limits must be >= 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 axis;
  do {
    axis = Vec3(normal(rng), normal(rng), normal(rng));
  } while (axis.norm() < 1e-12);
  axis.normalize();
  std::uniform_real_distribution<double> angle_dist(-rot_limit_deg, rot_limit_deg);
  const double angle = rot_limit_deg > 0.0 ? angle_dist(rng) * std::numbers::pi / 180.0 : 0.0;

  Pose out = pose;
  out.rotation = exp_so3(angle * axis) * pose.rotation;
  if (trans_limit > 0.0) {
    std::uniform_real_distribution<double> offset(-trans_limit, trans_limit);
    for (int i = 0; i < 3; ++i) out.translation[i] += offset(rng);
  }
  return out;
}

}  // namespace nerfinv
