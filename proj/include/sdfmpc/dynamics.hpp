#pragma once

// Multirotor model used by the controller. The platform is co-planar, so
// attitude reduces to a yaw quaternion pair (qw, qz) carried as state while
// roll/pitch are direct inputs realized by a fast inner loop. Velocity and
// position are expressed in the fixed odometry frame: p_dot = v, and thrust
// enters v_dot through the full yaw*tilt rotation. With zero thrust the model
// is free fall, so kinetic plus potential energy is conserved.
//
// State layout: x = [p(3), qw, qz, v(3)], input u = [T, roll, pitch, yaw_rate].

#include "sdfmpc/core.hpp"

#include <cmath>

namespace sdfmpc {

constexpr int kStateDim = 8;
constexpr int kInputDim = 4;

struct VehicleState {
  Vec3 p = Vec3::Zero();
  double qw = 1.0;
  double qz = 0.0;
  Vec3 v = Vec3::Zero();

  Eigen::Matrix<double, kStateDim, 1> to_vector() const {
    Eigen::Matrix<double, kStateDim, 1> x;
    x << p, qw, qz, v;
    return x;
  }
  static VehicleState from_vector(const Eigen::Matrix<double, kStateDim, 1>& x) {
    VehicleState s;
    s.p = x.segment<3>(0);
    s.qw = x[3];
    s.qz = x[4];
    s.v = x.segment<3>(5);
    return s;
  }
  double yaw() const { return 2.0 * std::atan2(qz, qw); }
  void normalize_heading() {
    const double n = std::hypot(qw, qz);
    if (n > 1e-15) {
      qw /= n;
      qz /= n;
    } else {
      qw = 1.0;
      qz = 0.0;
    }
  }
};

struct ControlInput {
  double thrust = 0.0;  // N
  double roll = 0.0;    // rad
  double pitch = 0.0;   // rad
  double yaw_rate = 0.0;  // rad/s

  Eigen::Matrix<double, kInputDim, 1> to_vector() const {
    return {thrust, roll, pitch, yaw_rate};
  }
  static ControlInput from_vector(const Eigen::Matrix<double, kInputDim, 1>& u) {
    return {u[0], u[1], u[2], u[3]};
  }
};

struct VehicleBounds {
  double thrust_min = 0.0;
  double thrust_max = 2.0 * 1.25 * kGravity;
  double roll_max = 30.0 * M_PI / 180.0;
  double pitch_max = 30.0 * M_PI / 180.0;
  double yaw_rate_max = 1.5;
  double vel_max = 3.0;  // per-axis box on velocity
};

struct VehicleParams {
  double mass = 1.25;    // kg
  double radius = 0.25;  // bounding sphere, m
  VehicleBounds bounds;

  double hover_thrust() const { return mass * kGravity; }
};

inline VehicleState make_state(const Vec3& p, double yaw, const Vec3& v) {
  VehicleState s;
  s.p = p;
  s.qw = std::cos(0.5 * yaw);
  s.qz = std::sin(0.5 * yaw);
  s.v = v;
  return s;
}

// Thrust axis in the yaw frame for the z-y-x tilt composition Ry(pitch)*Rx(roll).
inline Vec3 tilt_axis(double roll, double pitch) {
  return {std::sin(pitch) * std::cos(roll), -std::sin(roll), std::cos(pitch) * std::cos(roll)};
}

inline Eigen::Matrix<double, kStateDim, 1> dynamics(const VehicleState& x, const ControlInput& u,
                                                    const VehicleParams& params) {
  Eigen::Matrix<double, kStateDim, 1> f;
  f.segment<3>(0) = x.v;
  f[3] = -0.5 * x.qz * u.yaw_rate;
  f[4] = 0.5 * x.qw * u.yaw_rate;
  const Vec3 n = tilt_axis(u.roll, u.pitch);
  const double c = x.qw * x.qw - x.qz * x.qz;  // cos(yaw) for a unit pair
  const double s = 2.0 * x.qw * x.qz;          // sin(yaw)
  const Vec3 world_n(c * n.x() - s * n.y(), s * n.x() + c * n.y(), n.z());
  f.segment<3>(5) = (u.thrust / params.mass) * world_n - Vec3(0, 0, kGravity);
  return f;
}

inline void dynamics_jacobians(const VehicleState& x, const ControlInput& u,
                               const VehicleParams& params,
                               Eigen::Matrix<double, kStateDim, kStateDim>& A,
                               Eigen::Matrix<double, kStateDim, kInputDim>& B) {
  A.setZero();
  B.setZero();
  A.block<3, 3>(0, 5).setIdentity();
  A(3, 4) = -0.5 * u.yaw_rate;
  A(4, 3) = 0.5 * u.yaw_rate;
  B(3, 3) = -0.5 * x.qz;
  B(4, 3) = 0.5 * x.qw;

  const double sr = std::sin(u.roll), cr = std::cos(u.roll);
  const double sp = std::sin(u.pitch), cp = std::cos(u.pitch);
  const Vec3 n(sp * cr, -sr, cp * cr);
  const double c = x.qw * x.qw - x.qz * x.qz;
  const double s = 2.0 * x.qw * x.qz;
  const double Tm = u.thrust / params.mass;

  // d(world thrust axis)/d(qw, qz): c and s are quadratic in the pair.
  const double dc_dqw = 2 * x.qw, dc_dqz = -2 * x.qz;
  const double ds_dqw = 2 * x.qz, ds_dqz = 2 * x.qw;
  A(5, 3) = Tm * (dc_dqw * n.x() - ds_dqw * n.y());
  A(6, 3) = Tm * (ds_dqw * n.x() + dc_dqw * n.y());
  A(5, 4) = Tm * (dc_dqz * n.x() - ds_dqz * n.y());
  A(6, 4) = Tm * (ds_dqz * n.x() + dc_dqz * n.y());

  const Vec3 world_n(c * n.x() - s * n.y(), s * n.x() + c * n.y(), n.z());
  B.block<3, 1>(5, 0) = world_n / params.mass;
  const Vec3 dn_droll(-sp * sr, -cr, -cp * sr);
  const Vec3 dn_dpitch(cp * cr, 0.0, -sp * cr);
  const auto yaw_rotate = [&](const Vec3& w) {
    return Vec3(c * w.x() - s * w.y(), s * w.x() + c * w.y(), w.z());
  };
  B.block<3, 1>(5, 1) = Tm * yaw_rotate(dn_droll);
  B.block<3, 1>(5, 2) = Tm * yaw_rotate(dn_dpitch);
}

inline VehicleState rk4_step(const VehicleState& x, const ControlInput& u,
                             const VehicleParams& params, double dt) {
  using XVec = Eigen::Matrix<double, kStateDim, 1>;
  const XVec x0 = x.to_vector();
  const XVec k1 = dynamics(x, u, params);
  const XVec k2 = dynamics(VehicleState::from_vector(x0 + 0.5 * dt * k1), u, params);
  const XVec k3 = dynamics(VehicleState::from_vector(x0 + 0.5 * dt * k2), u, params);
  const XVec k4 = dynamics(VehicleState::from_vector(x0 + dt * k3), u, params);
  VehicleState out = VehicleState::from_vector(x0 + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4));
  out.normalize_heading();
  return out;
}

// Sensitivities of rk4_step, chain rule through the stages and the final
// heading renormalization (the projection keeps the pair on the unit circle,
// so its Jacobian must be part of the discrete linearization).
inline VehicleState rk4_step_jacobians(const VehicleState& x, const ControlInput& u,
                                       const VehicleParams& params, double dt,
                                       Eigen::Matrix<double, kStateDim, kStateDim>& Ad,
                                       Eigen::Matrix<double, kStateDim, kInputDim>& Bd) {
  using XVec = Eigen::Matrix<double, kStateDim, 1>;
  using AMat = Eigen::Matrix<double, kStateDim, kStateDim>;
  using BMat = Eigen::Matrix<double, kStateDim, kInputDim>;
  const XVec x0 = x.to_vector();

  AMat A1, A2, A3, A4;
  BMat B1, B2, B3, B4;
  const XVec k1 = dynamics(x, u, params);
  dynamics_jacobians(x, u, params, A1, B1);
  const VehicleState s2 = VehicleState::from_vector(x0 + 0.5 * dt * k1);
  const XVec k2 = dynamics(s2, u, params);
  dynamics_jacobians(s2, u, params, A2, B2);
  const VehicleState s3 = VehicleState::from_vector(x0 + 0.5 * dt * k2);
  const XVec k3 = dynamics(s3, u, params);
  dynamics_jacobians(s3, u, params, A3, B3);
  const VehicleState s4 = VehicleState::from_vector(x0 + dt * k3);
  const XVec k4 = dynamics(s4, u, params);
  dynamics_jacobians(s4, u, params, A4, B4);

  const AMat I = AMat::Identity();
  const AMat dk1_dx = A1;
  const AMat dk2_dx = A2 * (I + 0.5 * dt * dk1_dx);
  const AMat dk3_dx = A3 * (I + 0.5 * dt * dk2_dx);
  const AMat dk4_dx = A4 * (I + dt * dk3_dx);
  Ad = I + (dt / 6.0) * (dk1_dx + 2 * dk2_dx + 2 * dk3_dx + dk4_dx);

  const BMat dk1_du = B1;
  const BMat dk2_du = A2 * (0.5 * dt * dk1_du) + B2;
  const BMat dk3_du = A3 * (0.5 * dt * dk2_du) + B3;
  const BMat dk4_du = A4 * (dt * dk3_du) + B4;
  Bd = (dt / 6.0) * (dk1_du + 2 * dk2_du + 2 * dk3_du + dk4_du);

  const XVec xn = x0 + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
  const double norm = std::hypot(xn[3], xn[4]);
  VehicleState out = VehicleState::from_vector(xn);
  out.normalize_heading();
  if (norm > 1e-15) {
    Eigen::Matrix2d P;
    const double qw = xn[3] / norm, qz = xn[4] / norm;
    P << 1 - qw * qw, -qw * qz, -qw * qz, 1 - qz * qz;
    P /= norm;
    Ad.block<2, 8>(3, 0) = P * Ad.block<2, 8>(3, 0);
    Bd.block<2, 4>(3, 0) = P * Bd.block<2, 4>(3, 0);
  }
  return out;
}

// z-component of q_ref * conj(q) on the yaw subgroup: the signed sine of half
// the heading mismatch, zero iff aligned, antisymmetric in its arguments.
inline double heading_error(double qw_ref, double qz_ref, double qw, double qz) {
  return qz_ref * qw - qw_ref * qz;
}

}  // namespace sdfmpc
