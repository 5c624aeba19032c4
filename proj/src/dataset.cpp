#include "nerfinv/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "nerfinv/errors.hpp"

namespace nerfinv {

namespace fs = std::filesystem;
using nlohmann::json;

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 back = (eye - target).normalized();
  Vec3 right = up.cross(back);
  if (right.norm() < 1e-9) right = Vec3::UnitX().cross(back);
  right.normalize();
  const Vec3 cam_up = back.cross(right);
  Pose p;
  p.rotation.col(0) = right;
  p.rotation.col(1) = cam_up;
  p.rotation.col(2) = back;
  p.translation = eye;
  return p;
}

std::vector<Pose> hemisphere_poses(int n, double radius, double min_elevation_deg, double max_elevation_deg) {
  if (n < 1) throw InvalidArgument("hemisphere_poses: n must be >= 1");
  if (!(radius > 0.0)) throw InvalidArgument("hemisphere_poses: radius must be positive");
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  const double deg = std::numbers::pi / 180.0;
  std::vector<Pose> poses;
  poses.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double frac = n == 1 ? 0.5 : static_cast<double>(i) / (n - 1);
    const double elevation = (min_elevation_deg + frac * (max_elevation_deg - min_elevation_deg)) * deg;
    const double azimuth = i * golden;
    const Vec3 eye = radius * Vec3(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                                   std::sin(elevation));
    poses.push_back(look_at(eye, Vec3::Zero()));
  }
  return poses;
}

void PosedDataset::validate() const {
  camera.validate();
  auto check = [&](const Image& img) {
    if (img.width() != camera.width || img.height() != camera.height) {
      throw InvalidArgument("PosedDataset: image size does not match the camera");
    }
  };
  for (const Frame& f : frames) {
    check(f.image);
    if (!f.pose.is_valid(1e-6)) throw InvalidArgument("PosedDataset: invalid pose for frame " + f.name);
  }
  for (const Image& img : unposed) check(img);
}

PosedDataset render_dataset(const RadianceField& field, const Camera& camera, const std::vector<Pose>& poses,
                            const RenderConfig& config, int threads) {
  RenderConfig cfg = config;
  cfg.stratified = false;
  PosedDataset ds;
  ds.camera = camera;
  Rng rng(0);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    ds.frames.push_back({"r_" + std::to_string(i), render_image(field, camera, poses[i], cfg, rng, threads), poses[i]});
  }
  return ds;
}

void write_transforms(const PosedDataset& dataset, const std::string& directory) {
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw IoError("cannot create dataset directory", directory);
  json j;
  j["camera_angle_x"] = dataset.camera.camera_angle_x();
  j["w"] = dataset.camera.width;
  j["h"] = dataset.camera.height;
  j["fl_x"] = dataset.camera.focal;
  j["cx"] = dataset.camera.cx;
  j["cy"] = dataset.camera.cy;
  j["near"] = dataset.camera.near;
  j["far"] = dataset.camera.far;
  j["frames"] = json::array();
  for (const Frame& f : dataset.frames) {
    const Mat4 m = f.pose.matrix();
    json rows = json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
    j["frames"].push_back({{"file_path", "./" + f.name}, {"transform_matrix", rows}});
    write_png(f.image, (fs::path(directory) / (f.name + ".png")).string());
  }
  const std::string path = (fs::path(directory) / "transforms.json").string();
  std::ofstream os(path);
  if (!os) throw IoError("cannot write transforms.json", path);
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed writing transforms.json", path);
}

PosedDataset read_transforms(const std::string& directory, const std::string& file) {
  const std::string path = (fs::path(directory) / file).string();
  std::ifstream is(path);
  if (!is) throw IoError("cannot open transforms file", path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed JSON (") + e.what() + ")", path);
  }

  PosedDataset ds;
  try {
    std::vector<std::pair<std::string, Pose>> entries;
    for (const json& f : j.at("frames")) {
      std::string rel = f.at("file_path").get<std::string>();
      if (fs::path(rel).extension().empty()) rel += ".png";
      Mat4 m;
      const json& rows = f.at("transform_matrix");
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m(r, c) = rows.at(r).at(c).get<double>();
      entries.emplace_back(rel, Pose::from_matrix(m, 1e-5));
    }
    if (entries.empty()) throw IoError("transforms file has no frames", path);
    for (auto& [rel, pose] : entries) {
      Frame fr;
      fr.name = fs::path(rel).stem().string();
      fr.image = read_png((fs::path(directory) / rel).string());
      fr.pose = pose;
      ds.frames.push_back(std::move(fr));
    }
    const int w = j.contains("w") ? j["w"].get<int>() : ds.frames.front().image.width();
    const int h = j.contains("h") ? j["h"].get<int>() : ds.frames.front().image.height();
    const double near = j.value("near", 2.0);
    const double far = j.value("far", 6.0);
    ds.camera = Camera::from_fov(w, h, j.at("camera_angle_x").get<double>(), near, far);
    if (j.contains("fl_x")) ds.camera.focal = j["fl_x"].get<double>();
    if (j.contains("cx")) ds.camera.cx = j["cx"].get<double>();
    if (j.contains("cy")) ds.camera.cy = j["cy"].get<double>();
  } catch (const json::exception& e) {
    throw IoError(std::string("invalid transforms file (") + e.what() + ")", path);
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("invalid transforms file (") + e.what() + ")", path);
  }
  ds.validate();
  return ds;
}

void write_pose_json(const Pose& pose, const std::string& path) {
  const Mat4 m = pose.matrix();
  json rows = json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
  std::ofstream os(path);
  if (!os) throw IoError("cannot write pose file", path);
  os << json{{"transform_matrix", rows}}.dump(2) << '\n';
  if (!os) throw IoError("failed writing pose file", path);
}

Pose read_pose_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open pose file", path);
  try {
    json j;
    is >> j;
    const json& rows = j.at("transform_matrix");
    Mat4 m;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) = rows.at(r).at(c).get<double>();
    return Pose::from_matrix(m, 1e-5);
  } catch (const json::exception& e) {
    throw IoError(std::string("invalid pose file (") + e.what() + ")", path);
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("invalid pose file (") + e.what() + ")", path);
  }
}

}  // namespace nerfinv
