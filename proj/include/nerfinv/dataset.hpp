#pragma once

#include <string>
#include <vector>

#include "nerfinv/field.hpp"
#include "nerfinv/image.hpp"
#include "nerfinv/render.hpp"
#include "nerfinv/se3.hpp"

namespace nerfinv {

// Camera-to-world pose at `eye` looking at `target` (camera −z toward the
// target, camera +y as close to `up` as possible).
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

// n camera poses on the upper hemisphere of the given radius, all facing the
// origin. Positions follow a golden-angle spiral in azimuth with elevations
// spread evenly over [min_elevation_deg, max_elevation_deg].
std::vector<Pose> hemisphere_poses(int n, double radius, double min_elevation_deg = 15.0,
                                   double max_elevation_deg = 65.0);

struct Frame {
  std::string name;
  Image image;
  Pose pose;
};

struct PosedDataset {
  Camera camera;
  std::vector<Frame> frames;
  std::vector<Image> unposed;

  // Throws InvalidArgument if an image disagrees with the camera size or a
  // pose is not rigid.
  void validate() const;
};

// Renders one frame per pose (deterministic midpoint quadrature).
PosedDataset render_dataset(const RadianceField& field, const Camera& camera, const std::vector<Pose>& poses,
                            const RenderConfig& config, int threads = 1);

// NeRF-synthetic layout: `transforms.json` with camera_angle_x and frames of
// {file_path (relative, without extension), transform_matrix (4x4
// camera-to-world, row-major)}, plus one PNG per frame. Extra keys carry the
// image size and near/far bounds.
void write_transforms(const PosedDataset& dataset, const std::string& directory);
PosedDataset read_transforms(const std::string& directory, const std::string& file = "transforms.json");

// {"transform_matrix": 4 row arrays}, camera-to-world. Values are written with
// full double precision.
void write_pose_json(const Pose& pose, const std::string& path);
Pose read_pose_json(const std::string& path);

}  // namespace nerfinv
