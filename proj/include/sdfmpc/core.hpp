#pragma once

// Shared aliases, the seeded RNG sub-stream scheme, and small frame helpers.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string_view>

namespace sdfmpc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

constexpr double kGravity = 9.81;  // m/s^2

// All randomness in the project flows from one 64-bit seed. Independent
// consumers (scene layout, sensor noise, net init, point sampling, ...)
// derive their own generator from a stream name, so adding a draw in one
// place never perturbs another. splitmix64 over an FNV-1a hash of the name
// gives well-mixed, platform-stable stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return splitmix64(seed ^ h);
}

inline std::mt19937_64 rng_stream(std::uint64_t seed, std::string_view name) {
  return std::mt19937_64(stream_seed(seed, name));
}

// Rigid transform, p_world = R * p_local + t.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  Vec3 apply_inverse(const Vec3& p) const { return R.transpose() * (p - t); }
  Pose compose(const Pose& other) const { return {R * other.R, R * other.t + t}; }
  Pose inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
};

inline Mat3 rot_z(double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  Mat3 R;
  R << c, -s, 0, s, c, 0, 0, 0, 1;
  return R;
}

inline Mat3 rot_y(double pitch) {
  const double c = std::cos(pitch), s = std::sin(pitch);
  Mat3 R;
  R << c, 0, s, 0, 1, 0, -s, 0, c;
  return R;
}

inline Mat3 rot_x(double roll) {
  const double c = std::cos(roll), s = std::sin(roll);
  Mat3 R;
  R << 1, 0, 0, 0, c, -s, 0, s, c;
  return R;
}

// Body attitude from yaw + roll/pitch, z-y-x order: R = Rz(yaw)*Ry(pitch)*Rx(roll).
inline Mat3 attitude(double yaw, double roll, double pitch) {
  return rot_z(yaw) * rot_y(pitch) * rot_x(roll);
}

}  // namespace sdfmpc
