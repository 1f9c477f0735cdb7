#pragma once

// Observation-frame geometry and the distance fields the controller
// constrains against.
//
// All collision information lives in the observation frame: the inertial
// frame coinciding with the sensor frame at the capture time of the current
// range image. Controller states are expressed in the capture-time vehicle
// frame (yaw-aligned, gravity-down), so the transform between the two is the
// fixed capture tilt plus the sensor mount extrinsics.

#include "sdfmpc/core.hpp"
#include "sdfmpc/dynamics.hpp"
#include "sdfmpc/oracle.hpp"
#include "sdfmpc/render.hpp"
#include "sdfmpc/scene.hpp"
#include "sdfmpc/net.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace sdfmpc {

struct SensorMount {
  Vec3 p_bs = Vec3::Zero();       // sensor origin in the body frame
  Mat3 r_bs = Mat3::Identity();   // sensor axes in the body frame
};

// Maps between the controller's working frame and the observation frame.
// capture_tilt holds the body roll/pitch at capture time; yaw is zero by
// construction of the working frame.
struct ObservationFrame {
  Mat3 r_b0 = Mat3::Identity();  // body attitude at capture in the working frame
  SensorMount mount;

  static ObservationFrame from_tilt(double roll0, double pitch0, const SensorMount& m) {
    ObservationFrame f;
    f.r_b0 = rot_y(pitch0) * rot_x(roll0);
    f.mount = m;
    return f;
  }

  // Observation-frame coordinates of a working-frame point.
  Vec3 to_observation(const Vec3& p_work) const {
    return mount.r_bs.transpose() * (r_b0.transpose() * p_work - mount.p_bs);
  }
  // Constant Jacobian d(observation point)/d(working point).
  Mat3 jacobian() const { return mount.r_bs.transpose() * r_b0.transpose(); }

  // Current sensor origin in the observation frame. The mount offset is
  // carried by the yaw attitude only (tilt is an input, not a state); exact
  // for a centered sensor.
  Vec3 sensor_position(const Vec3& p_body_work, double qw, double qz) const {
    const double c = qw * qw - qz * qz, s = 2.0 * qw * qz;
    const Vec3 off(c * mount.p_bs.x() - s * mount.p_bs.y(),
                   s * mount.p_bs.x() + c * mount.p_bs.y(), mount.p_bs.z());
    return to_observation(p_body_work + off);
  }
};

// ---------------------------------------------------------------------------
// Field-of-view membership residuals.

struct FovResiduals {
  double azimuth = 0.0;    // alpha_h - |azimuth|, >= 0 inside
  double elevation = 0.0;  // alpha_v - |elevation|, >= 0 inside
};

struct FovLinearization {
  double az = 0.0, el = 0.0;  // angles at the point
  Vec3 daz = Vec3::Zero();    // gradients wrt the observation-frame point
  Vec3 del = Vec3::Zero();
  bool degenerate = false;    // at the origin every direction is admissible
};

inline FovLinearization fov_linearize(const Vec3& p) {
  FovLinearization out;
  const double x = p.x(), y = p.y(), z = p.z();
  const double rho2 = x * x + y * y;
  const double r2 = rho2 + z * z;
  if (r2 < 1e-18) {
    out.degenerate = true;
    return out;
  }
  out.az = std::atan2(y, x);
  out.el = std::atan2(z, std::sqrt(rho2));
  if (rho2 > 1e-18) {
    out.daz = Vec3(-y / rho2, x / rho2, 0.0);
    const double rho = std::sqrt(rho2);
    out.del = Vec3(-z * x / (rho * r2), -z * y / (rho * r2), rho / r2);
  } else {
    // On the vertical axis azimuth is undefined; elevation is +-pi/2 with a
    // well-defined horizontal gradient direction left at zero by symmetry.
    out.az = 0.0;
    out.el = z > 0 ? M_PI / 2 : -M_PI / 2;
  }
  return out;
}

// Two-sided membership residuals of the current sensor position.
inline FovResiduals fov_constraints(const VehicleState& x, const ObservationFrame& frame,
                                    const FrustumSpec& frustum) {
  const Vec3 p = frame.sensor_position(x.p, x.qw, x.qz);
  const FovLinearization lin = fov_linearize(p);
  if (lin.degenerate) return {frustum.alpha_h, frustum.alpha_v};
  return {frustum.alpha_h - std::abs(lin.az), frustum.alpha_v - std::abs(lin.el)};
}

// ---------------------------------------------------------------------------
// Constraint fields.

struct FieldSample {
  double value = 0.0;  // meters, clamped to [-t_sdf, t_sdf]
  Vec3 grad = Vec3::Zero();
};

class ConstraintField {
 public:
  virtual ~ConstraintField() = default;
  virtual FieldSample eval(const Vec3& p_obs) const = 0;
  virtual double truncation() const = 0;
};

// Ground-truth variant: the scene's exact signed distance, expressed in the
// observation frame, clamped to the truncation band and masked to the sensor
// frustum. Points behind the sensor carry no observed information, so they
// are valued by spherical projection onto the frustum minus the displacement,
// the same conservative extension the pixel-space transform uses.
class AnalyticSceneField final : public ConstraintField {
 public:
  AnalyticSceneField(SceneSpec scene, Pose world_from_obs, FrustumSpec frustum, double t_sdf)
      : scene_(std::move(scene)),
        world_from_obs_(world_from_obs),
        frustum_(frustum),
        t_sdf_(t_sdf) {}

  double truncation() const override { return t_sdf_; }

  FieldSample eval(const Vec3& p_obs) const override {
    if (in_frustum(frustum_, p_obs)) return eval_inside(p_obs);
    const Vec3 proj = project_to_frustum(p_obs);
    FieldSample out;
    out.value = eval_inside(proj).value - (p_obs - proj).norm();
    out.value = std::max(out.value, -t_sdf_);
    // Piecewise-smooth composite; differentiate numerically.
    for (int d = 0; d < 3; ++d) {
      Vec3 lo = p_obs, hi = p_obs;
      const double h = 1e-4;
      lo[d] -= h;
      hi[d] += h;
      out.grad[d] = (value_any(hi) - value_any(lo)) / (2 * h);
    }
    return out;
  }

 private:
  FieldSample eval_inside(const Vec3& p_obs) const {
    const Vec3 pw = world_from_obs_.apply(p_obs);
    const double raw = scene_sdf(scene_, pw);
    FieldSample out;
    if (raw >= t_sdf_) {
      out.value = t_sdf_;
    } else if (raw <= -t_sdf_) {
      out.value = -t_sdf_;
    } else {
      out.value = raw;
      out.grad = world_from_obs_.R.transpose() * scene_sdf_grad(scene_, pw);
    }
    return out;
  }

  double value_any(const Vec3& p_obs) const {
    if (in_frustum(frustum_, p_obs)) return eval_inside(p_obs).value;
    const Vec3 proj = project_to_frustum(p_obs);
    return std::max(eval_inside(proj).value - (p_obs - proj).norm(), -t_sdf_);
  }

  Vec3 project_to_frustum(const Vec3& p) const {
    double az, el, r;
    spherical_coords(p, az, el, r);
    const double margin = 1e-6;
    az = std::clamp(az, -frustum_.alpha_h + margin, frustum_.alpha_h - margin);
    el = std::clamp(el, -frustum_.alpha_v + margin, frustum_.alpha_v - margin);
    r = std::clamp(r, 1e-3, frustum_.d_max);
    return r * ray_direction(az, el);
  }

  SceneSpec scene_;
  Pose world_from_obs_;
  FrustumSpec frustum_;
  double t_sdf_;
};

// Learned variant: the sine MLP conditioned on a latent code, clamped to the
// truncation band (the gradient is zeroed where the clamp is active).
class NeuralConstraintField final : public ConstraintField {
 public:
  NeuralConstraintField(const SineMlp* net, VecX latent, double t_sdf)
      : net_(net), latent_(std::move(latent)), t_sdf_(t_sdf) {}

  double truncation() const override { return t_sdf_; }

  FieldSample eval(const Vec3& p_obs) const override {
    FieldSample out;
    Vec3 g;
    const double raw = sdf_eval(*net_, latent_, p_obs, &g);
    if (raw >= t_sdf_) {
      out.value = t_sdf_;
    } else if (raw <= -t_sdf_) {
      out.value = -t_sdf_;
    } else {
      out.value = raw;
      out.grad = g;
    }
    return out;
  }

 private:
  const SineMlp* net_;
  VecX latent_;
  double t_sdf_;
};

}  // namespace sdfmpc
