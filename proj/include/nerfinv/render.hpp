#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nerfinv/field.hpp"
#include "nerfinv/image.hpp"
#include "nerfinv/rng.hpp"
#include "nerfinv/se3.hpp"

namespace nerfinv {

// Pinhole camera. Camera space is right-handed with the camera looking down
// −z and y up; pixel v grows downward.
struct Camera {
  int width = 100;
  int height = 100;
  double focal = 138.9;  // pixels
  double cx = 50.0;
  double cy = 50.0;
  double near = 2.0;
  double far = 6.0;

  // Principal point at the image center.
  static Camera from_fov(int width, int height, double camera_angle_x, double near, double far);
  double camera_angle_x() const;
  // Throws InvalidArgument if any invariant is violated.
  void validate() const;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = -Vec3::UnitZ();
  double near = 2.0;
  double far = 6.0;
};

struct RenderConfig {
  int n_samples = 128;
  bool stratified = false;
  Rgb background = Rgb::Ones();

  void validate() const;
};

// Ray through continuous pixel coordinates (u, v); pixel (i, j) covers
// [i, i+1) x [j, j+1). Throws InvalidArgument outside [0, width] x [0, height].
Ray camera_ray(const Camera& camera, const Pose& pose, double u, double v);
// Ray through the center of an integer pixel.
Ray pixel_ray(const Camera& camera, const Pose& pose, const Pixel& pixel);

// Samples and field values along one ray, kept for the reverse pass.
struct RayTrace {
  Vec3 direction = Vec3::Zero();
  std::vector<double> t;
  std::vector<double> delta;
  std::vector<Vec3> points;
  std::vector<FieldOutput> samples;
  std::vector<double> transmittance;  // n + 1 entries, T₁ = 1
  Rgb color = Rgb::Zero();
};

// Quadrature Ĉ = Σᵢ Tᵢ(1 − exp(−σᵢδᵢ))cᵢ + T_{n+1}·background with n equal
// bins over [near, far] (bin midpoints, or one uniform jitter per bin when
// stratified) and δᵢ = t_{i+1} − tᵢ, t_{n+1} = far. `rng` is required when
// stratified.
RayTrace trace_ray(const RadianceField& field, const Ray& ray, const RenderConfig& config, Rng* rng = nullptr);
Rgb render_ray(const RadianceField& field, const Ray& ray, const RenderConfig& config, Rng* rng = nullptr);

// Reverse of the compositing step: given ∂L/∂Ĉ, writes ∂L/∂σᵢ and ∂L/∂cᵢ.
void composite_backward(const RayTrace& trace, const Rgb& background, const Vec3& grad_color,
                        std::span<double> grad_density, std::span<Rgb> grad_sample_color);

struct RayGradients {
  Rgb color = Rgb::Zero();
  Vec3 d_origin = Vec3::Zero();
  Vec3 d_direction = Vec3::Zero();
};

// Renders the ray and pulls `d_loss_d_color` back to the ray origin and
// direction, through both the sample positions xᵢ = o + tᵢd and the direction
// input of the field.
RayGradients render_ray_with_pose_grads(const RadianceField& field, const Ray& ray, const RenderConfig& config,
                                        const Vec3& d_loss_d_color, Rng* rng = nullptr);

// Reverse pass for an already traced ray.
RayGradients backpropagate_ray(const RadianceField& field, const RayTrace& trace, const RenderConfig& config,
                               const Vec3& d_loss_d_color);

// Renders each pixel center in order. Stratified jitter for pixel i uses a
// stream split from one seed drawn from `rng`, so results do not depend on
// the thread count.
std::vector<Rgb> render_pixels(const RadianceField& field, const Camera& camera, const Pose& pose,
                               std::span<const Pixel> pixels, const RenderConfig& config, Rng& rng, int threads = 1);

Image render_image(const RadianceField& field, const Camera& camera, const Pose& pose, const RenderConfig& config,
                   Rng& rng, int threads = 1);

}  // namespace nerfinv
