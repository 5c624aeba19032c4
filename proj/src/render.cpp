#include "nerfinv/render.hpp"

#include <cmath>

#include "nerfinv/errors.hpp"
#include "nerfinv/parallel.hpp"

namespace nerfinv {

Camera Camera::from_fov(int width, int height, double camera_angle_x, double near, double far) {
  Camera c;
  c.width = width;
  c.height = height;
  c.focal = 0.5 * width / std::tan(0.5 * camera_angle_x);
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  c.near = near;
  c.far = far;
  c.validate();
  return c;
}

double Camera::camera_angle_x() const { return 2.0 * std::atan(0.5 * width / focal); }

void Camera::validate() const {
  if (width < 1 || height < 1) throw InvalidArgument("Camera: width and height must be >= 1");
  if (!(focal > 0.0) || !std::isfinite(focal)) throw InvalidArgument("Camera: focal length must be positive");
  if (!(near > 0.0) || !(near < far) || !std::isfinite(far)) throw InvalidArgument("Camera: need 0 < near < far");
  if (!std::isfinite(cx) || !std::isfinite(cy)) throw InvalidArgument("Camera: principal point must be finite");
}

void RenderConfig::validate() const {
  if (n_samples < 2) throw InvalidArgument("RenderConfig: n_samples must be >= 2");
  if ((background.array() < 0.0).any() || (background.array() > 1.0).any()) {
    throw InvalidArgument("RenderConfig: background channels must lie in [0, 1]");
  }
}

Ray camera_ray(const Camera& camera, const Pose& pose, double u, double v) {
  if (!(u >= 0.0 && u <= camera.width && v >= 0.0 && v <= camera.height)) {
    throw InvalidArgument("camera_ray: pixel outside the image");
  }
  const Vec3 dir_cam((u - camera.cx) / camera.focal, -(v - camera.cy) / camera.focal, -1.0);
  Ray r;
  r.origin = pose.translation;
  r.direction = pose.rotation * dir_cam.normalized();
  r.near = camera.near;
  r.far = camera.far;
  return r;
}

Ray pixel_ray(const Camera& camera, const Pose& pose, const Pixel& pixel) {
  return camera_ray(camera, pose, pixel.u + 0.5, pixel.v + 0.5);
}

RayTrace trace_ray(const RadianceField& field, const Ray& ray, const RenderConfig& config, Rng* rng) {
  config.validate();
  if (!(ray.near < ray.far)) throw InvalidArgument("trace_ray: ray needs near < far");
  check_unit_direction(ray.direction);
  if (config.stratified && rng == nullptr) throw InvalidArgument("trace_ray: stratified sampling needs an rng");

  const int n = config.n_samples;
  const double bin = (ray.far - ray.near) / n;
  RayTrace tr;
  tr.direction = ray.direction;
  tr.t.resize(n);
  tr.delta.resize(n);
  tr.points.resize(n);
  tr.samples.resize(n);
  tr.transmittance.resize(n + 1);

  if (config.stratified) {
    std::uniform_real_distribution<double> jitter(0.0, 1.0);
    for (int i = 0; i < n; ++i) tr.t[i] = ray.near + (i + jitter(*rng)) * bin;
  } else {
    for (int i = 0; i < n; ++i) tr.t[i] = ray.near + (i + 0.5) * bin;
  }
  for (int i = 0; i < n; ++i) {
    tr.delta[i] = (i + 1 < n ? tr.t[i + 1] : ray.far) - tr.t[i];
    tr.points[i] = ray.origin + tr.t[i] * ray.direction;
  }
  field.evaluate(tr.points, ray.direction, tr.samples);

  double depth = 0.0;
  Rgb color = Rgb::Zero();
  tr.transmittance[0] = 1.0;
  for (int i = 0; i < n; ++i) {
    const double tau = tr.samples[i].density * tr.delta[i];
    color += tr.transmittance[i] * (1.0 - std::exp(-tau)) * tr.samples[i].color;
    depth += tau;
    tr.transmittance[i + 1] = std::exp(-depth);
  }
  tr.color = color + tr.transmittance[n] * config.background;
  return tr;
}

Rgb render_ray(const RadianceField& field, const Ray& ray, const RenderConfig& config, Rng* rng) {
  return trace_ray(field, ray, config, rng).color;
}

void composite_backward(const RayTrace& trace, const Rgb& background, const Vec3& grad_color,
                        std::span<double> grad_density, std::span<Rgb> grad_sample_color) {
  const std::size_t n = trace.samples.size();
  // suffix = Σ_{k>i} wₖ (g·cₖ) + T_{n+1} (g·background)
  double suffix = trace.transmittance[n] * grad_color.dot(background);
  for (std::size_t k = n; k-- > 0;) {
    const double tau = trace.samples[k].density * trace.delta[k];
    const double weight = trace.transmittance[k] * (1.0 - std::exp(-tau));
    const double gc = grad_color.dot(trace.samples[k].color);
    const double d_tau = trace.transmittance[k + 1] * gc - suffix;
    grad_density[k] = d_tau * trace.delta[k];
    grad_sample_color[k] = weight * grad_color;
    suffix += weight * gc;
  }
}

RayGradients backpropagate_ray(const RadianceField& field, const RayTrace& trace, const RenderConfig& config,
                               const Vec3& d_loss_d_color) {
  const std::size_t n = trace.samples.size();
  std::vector<double> g_density(n);
  std::vector<Rgb> g_color(n);
  std::vector<Vec3> g_points(n);
  composite_backward(trace, config.background, d_loss_d_color, g_density, g_color);

  RayGradients out;
  out.color = trace.color;
  out.d_direction = field.backpropagate_inputs(trace.points, trace.direction, g_density, g_color, g_points);
  for (std::size_t i = 0; i < n; ++i) {
    out.d_origin += g_points[i];
    out.d_direction += trace.t[i] * g_points[i];
  }
  return out;
}

RayGradients render_ray_with_pose_grads(const RadianceField& field, const Ray& ray, const RenderConfig& config,
                                        const Vec3& d_loss_d_color, Rng* rng) {
  return backpropagate_ray(field, trace_ray(field, ray, config, rng), config, d_loss_d_color);
}

std::vector<Rgb> render_pixels(const RadianceField& field, const Camera& camera, const Pose& pose,
                               std::span<const Pixel> pixels, const RenderConfig& config, Rng& rng, int threads) {
  config.validate();
  for (const Pixel& p : pixels) {
    if (p.u < 0 || p.v < 0 || p.u >= camera.width || p.v >= camera.height) {
      throw InvalidArgument("render_pixels: pixel outside the image");
    }
  }
  const std::uint64_t master = rng();
  std::vector<Rgb> out(pixels.size());
  parallel_for(pixels.size(), threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Ray ray = pixel_ray(camera, pose, pixels[i]);
      if (config.stratified) {
        Rng local(split_seed(master, i));
        out[i] = render_ray(field, ray, config, &local);
      } else {
        out[i] = render_ray(field, ray, config);
      }
    }
  }, 64);
  return out;
}

Image render_image(const RadianceField& field, const Camera& camera, const Pose& pose, const RenderConfig& config,
                   Rng& rng, int threads) {
  camera.validate();
  std::vector<Pixel> pixels;
  pixels.reserve(static_cast<std::size_t>(camera.width) * camera.height);
  for (int v = 0; v < camera.height; ++v)
    for (int u = 0; u < camera.width; ++u) pixels.push_back({u, v});
  Image img(camera.width, camera.height);
  img.pixels() = render_pixels(field, camera, pose, pixels, config, rng, threads);
  return img;
}

}  // namespace nerfinv
