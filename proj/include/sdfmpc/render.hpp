#pragma once

// Range-image sensor model: equiangular pixel grid over a pyramidal frustum,
// sphere-traced rendering against a primitive scene, and the .rimg binary
// container. Ranges are Euclidean distances along the pixel ray (not z-depth);
// 0 encodes an invalid pixel.

#include "sdfmpc/core.hpp"
#include "sdfmpc/scene.hpp"

#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdfmpc {

struct FrustumSpec {
  double alpha_h = 45.0 * M_PI / 180.0;  // azimuth half-aperture, rad
  double alpha_v = 30.0 * M_PI / 180.0;  // elevation half-aperture, rad
  double d_max = 5.0;                    // max range, m
};

// Azimuth about +z from the +x optical axis, elevation toward +z.
inline void spherical_coords(const Vec3& p, double& az, double& el, double& r) {
  r = p.norm();
  az = std::atan2(p.y(), p.x());
  el = std::atan2(p.z(), std::hypot(p.x(), p.y()));
}

inline bool in_frustum(const FrustumSpec& f, const Vec3& p) {
  double az, el, r;
  spherical_coords(p, az, el, r);
  return r > 0.0 && r <= f.d_max && std::abs(az) <= f.alpha_h && std::abs(el) <= f.alpha_v;
}

inline Vec3 ray_direction(double az, double el) {
  const double ce = std::cos(el);
  return {ce * std::cos(az), ce * std::sin(az), std::sin(el)};
}

struct RangeImage {
  int width = 0;
  int height = 0;
  FrustumSpec frustum;
  std::vector<float> ranges;  // row-major, rows indexed by elevation (row 0 lowest)
  Pose pose;                  // sensor pose at capture (world frame); not serialized

  float& at(int row, int col) { return ranges[static_cast<size_t>(row) * width + col]; }
  float at(int row, int col) const { return ranges[static_cast<size_t>(row) * width + col]; }

  double azimuth_of_col(int col) const {
    return -frustum.alpha_h + (col + 0.5) * (2.0 * frustum.alpha_h / width);
  }
  double elevation_of_row(int row) const {
    return -frustum.alpha_v + (row + 0.5) * (2.0 * frustum.alpha_v / height);
  }
  int col_of_azimuth(double az) const {
    const int c = static_cast<int>(std::floor((az + frustum.alpha_h) / (2.0 * frustum.alpha_h) * width));
    return std::clamp(c, 0, width - 1);
  }
  int row_of_elevation(double el) const {
    const int r = static_cast<int>(std::floor((el + frustum.alpha_v) / (2.0 * frustum.alpha_v) * height));
    return std::clamp(r, 0, height - 1);
  }
};

struct RenderOptions {
  double noise_std = 0.0;       // Gaussian noise on hit ranges, m
  double dropout_prob = 0.0;    // per-pixel invalidation probability
  double hit_tolerance = 1e-3;  // m
  int max_steps = 256;
  double relaxation = 0.9;      // fraction of the SDF bound taken per step
};

// Sphere tracing: the SDF at the current point bounds the free distance along
// the ray, so stepping by relaxation * sdf can never jump across a surface.
inline double trace_ray(const SceneSpec& scene, const Vec3& origin, const Vec3& dir,
                        double d_max, const RenderOptions& opt = {}) {
  double t = 0.0;
  for (int step = 0; step < opt.max_steps; ++step) {
    const double sdf = scene_sdf(scene, origin + t * dir);
    if (sdf < opt.hit_tolerance) return t;
    t += opt.relaxation * sdf;
    if (t >= d_max) return d_max;
  }
  return t;  // stalled on a grazing ray; report the conservative near point
}

inline RangeImage render_range_image(const SceneSpec& scene, const Pose& sensor_pose,
                                     const FrustumSpec& frustum, int width, int height,
                                     const RenderOptions& opt = {},
                                     std::mt19937_64* rng = nullptr) {
  if (scene_sdf(scene, sensor_pose.t) < 0.0)
    throw std::runtime_error("render: sensor origin is inside an obstacle");
  RangeImage img;
  img.width = width;
  img.height = height;
  img.frustum = frustum;
  img.pose = sensor_pose;
  img.ranges.assign(static_cast<size_t>(width) * height, 0.f);
  std::normal_distribution<double> noise(0.0, opt.noise_std);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      const Vec3 dir = sensor_pose.R * ray_direction(img.azimuth_of_col(col), img.elevation_of_row(row));
      double r = trace_ray(scene, sensor_pose.t, dir, frustum.d_max, opt);
      if (rng && opt.noise_std > 0.0 && r < frustum.d_max)
        r = std::clamp(r + noise(*rng), 1e-3, frustum.d_max);
      if (rng && opt.dropout_prob > 0.0 && unit(*rng) < opt.dropout_prob) r = 0.0;
      img.at(row, col) = static_cast<float>(r);
    }
  }
  return img;
}

// .rimg container: "RIMG" magic, u32 width, u32 height, f32 alpha_h, f32
// alpha_v, f32 d_max, then width*height f32 ranges row-major. Little-endian.
inline void save_range_image(const RangeImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write range image: " + path);
  const char magic[4] = {'R', 'I', 'M', 'G'};
  out.write(magic, 4);
  const std::uint32_t w = img.width, h = img.height;
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  const float hdr[3] = {static_cast<float>(img.frustum.alpha_h),
                        static_cast<float>(img.frustum.alpha_v),
                        static_cast<float>(img.frustum.d_max)};
  out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  out.write(reinterpret_cast<const char*>(img.ranges.data()),
            static_cast<std::streamsize>(img.ranges.size() * sizeof(float)));
}

inline RangeImage load_range_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read range image: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "RIMG", 4) != 0)
    throw std::runtime_error("bad range image magic: " + path);
  std::uint32_t w = 0, h = 0;
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  float hdr[3];
  in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  RangeImage img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.frustum.alpha_h = hdr[0];
  img.frustum.alpha_v = hdr[1];
  img.frustum.d_max = hdr[2];
  img.ranges.resize(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(img.ranges.data()),
          static_cast<std::streamsize>(img.ranges.size() * sizeof(float)));
  if (!in) throw std::runtime_error("truncated range image: " + path);
  return img;
}

}  // namespace sdfmpc
