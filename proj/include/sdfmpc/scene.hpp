#pragma once

// World model: a scene is a union of convex primitives with exact signed
// distance functions. Distance to the union is the min over primitives
// (exact outside; the usual conservative min inside overlaps).

#include "sdfmpc/core.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdfmpc {

enum class Shape { kSphere, kBox, kCylinder };

// dims encodes, per shape:
//   sphere:   dims[0] = radius
//   box:      dims    = full edge lengths (axis-aligned)
//   cylinder: dims[0] = radius, dims[2] = full height, axis vertical
struct Primitive {
  Shape shape = Shape::kSphere;
  Vec3 center = Vec3::Zero();
  Vec3 dims = Vec3::Ones();
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  Vec3 bounds_min = Vec3(-10, -10, -10);
  Vec3 bounds_max = Vec3(10, 10, 10);
};

inline double primitive_sdf(const Primitive& prim, const Vec3& p) {
  const Vec3 d = p - prim.center;
  switch (prim.shape) {
    case Shape::kSphere:
      return d.norm() - prim.dims[0];
    case Shape::kBox: {
      const Vec3 q = d.cwiseAbs() - 0.5 * prim.dims;
      const Vec3 qp = q.cwiseMax(0.0);
      return qp.norm() + std::min(q.maxCoeff(), 0.0);
    }
    case Shape::kCylinder: {
      const double dr = std::hypot(d.x(), d.y()) - prim.dims[0];
      const double dz = std::abs(d.z()) - 0.5 * prim.dims[2];
      const double mr = std::max(dr, 0.0), mz = std::max(dz, 0.0);
      return std::hypot(mr, mz) + std::min(std::max(dr, dz), 0.0);
    }
  }
  return 0.0;
}

inline Vec3 primitive_sdf_grad(const Primitive& prim, const Vec3& p) {
  const Vec3 d = p - prim.center;
  switch (prim.shape) {
    case Shape::kSphere: {
      const double n = d.norm();
      return n > 1e-12 ? Vec3(d / n) : Vec3(0, 0, 1);
    }
    case Shape::kBox: {
      const Vec3 q = d.cwiseAbs() - 0.5 * prim.dims;
      const Vec3 qp = q.cwiseMax(0.0);
      const double np = qp.norm();
      if (np > 1e-12) {
        Vec3 g = qp / np;
        for (int i = 0; i < 3; ++i) g[i] *= (d[i] < 0 ? -1.0 : 1.0);
        return g;
      }
      // Inside: distance changes along the axis closest to a face.
      int j = 0;
      q.maxCoeff(&j);
      Vec3 g = Vec3::Zero();
      g[j] = d[j] < 0 ? -1.0 : 1.0;
      return g;
    }
    case Shape::kCylinder: {
      const double rho = std::hypot(d.x(), d.y());
      const double dr = rho - prim.dims[0];
      const double dz = std::abs(d.z()) - 0.5 * prim.dims[2];
      const Vec3 radial = rho > 1e-12 ? Vec3(d.x() / rho, d.y() / rho, 0) : Vec3(1, 0, 0);
      const Vec3 axial(0, 0, d.z() < 0 ? -1.0 : 1.0);
      if (dr > 0 && dz > 0) {
        const double n = std::hypot(dr, dz);
        return (radial * dr + axial * dz) / n;
      }
      if (dr > dz) return radial;
      return axial;
    }
  }
  return Vec3(0, 0, 1);
}

inline double scene_sdf(const SceneSpec& scene, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& prim : scene.primitives) best = std::min(best, primitive_sdf(prim, p));
  return best;
}

// Gradient of the min: gradient of the closest primitive. On ties the first
// wins; the field is non-smooth there anyway.
inline Vec3 scene_sdf_grad(const SceneSpec& scene, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  const Primitive* arg = nullptr;
  for (const auto& prim : scene.primitives) {
    const double v = primitive_sdf(prim, p);
    if (v < best) {
      best = v;
      arg = &prim;
    }
  }
  return arg ? primitive_sdf_grad(*arg, p) : Vec3(0, 0, 1);
}

inline nlohmann::json scene_to_json(const SceneSpec& scene) {
  nlohmann::json j;
  j["bounds"] = {{"min", {scene.bounds_min.x(), scene.bounds_min.y(), scene.bounds_min.z()}},
                 {"max", {scene.bounds_max.x(), scene.bounds_max.y(), scene.bounds_max.z()}}};
  j["primitives"] = nlohmann::json::array();
  for (const auto& prim : scene.primitives) {
    const char* name = prim.shape == Shape::kSphere     ? "sphere"
                       : prim.shape == Shape::kBox      ? "axis-aligned-box"
                                                        : "vertical-cylinder";
    j["primitives"].push_back({{"shape", name},
                               {"center", {prim.center.x(), prim.center.y(), prim.center.z()}},
                               {"dims", {prim.dims.x(), prim.dims.y(), prim.dims.z()}}});
  }
  return j;
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec scene;
  if (j.contains("bounds")) {
    for (int i = 0; i < 3; ++i) {
      scene.bounds_min[i] = j["bounds"]["min"][i].get<double>();
      scene.bounds_max[i] = j["bounds"]["max"][i].get<double>();
    }
  }
  for (const auto& jp : j.at("primitives")) {
    Primitive prim;
    const std::string name = jp.at("shape").get<std::string>();
    if (name == "sphere")
      prim.shape = Shape::kSphere;
    else if (name == "axis-aligned-box")
      prim.shape = Shape::kBox;
    else if (name == "vertical-cylinder")
      prim.shape = Shape::kCylinder;
    else
      throw std::runtime_error("unknown primitive shape: " + name);
    for (int i = 0; i < 3; ++i) {
      prim.center[i] = jp.at("center")[i].get<double>();
      prim.dims[i] = jp.at("dims")[i].get<double>();
    }
    scene.primitives.push_back(prim);
  }
  return scene;
}

inline void save_scene(const SceneSpec& scene, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scene file: " + path);
  out << scene_to_json(scene).dump(2) << "\n";
}

inline SceneSpec load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read scene file: " + path);
  nlohmann::json j;
  in >> j;
  return scene_from_json(j);
}

}  // namespace sdfmpc
