#pragma once

// Receding-horizon avoidance NLP: multiple shooting over the vehicle model,
// Gauss-Newton SQP with LM regularization, distance-field and view-membership
// constraints softened by penalized slacks, hard input/velocity bounds, and a
// braking-based terminal set. Condensing eliminates the state deviations, so
// each SQP iteration solves one dense QP in the input deviations and slacks.
//
// Terminal margin bookkeeping: the fitted braking-distance surrogate can
// under-estimate the true stopping distance (by at most its recorded grid
// error), and the discrete braking rollout overshoots the continuous optimum
// by at most max_decel*dt^2/8. Both are added to the terminal margin and to
// the standstill extrapolation so the feasibility argument survives the
// surrogate and the discretization.

#include "sdfmpc/braking.hpp"
#include "sdfmpc/core.hpp"
#include "sdfmpc/dynamics.hpp"
#include "sdfmpc/field.hpp"
#include "sdfmpc/qp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace sdfmpc {

struct NlpConfig {
  int n_nodes = 20;         // shooting intervals
  double t_horizon = 1.5;   // s
  Vec4 q_diag{20.0, 5.0, 5.0, 5.0};      // heading, velocity xyz
  Vec4 r_diag{0.04, 50.0, 50.0, 5.0};    // thrust, roll, pitch, yaw rate
  double epsilon = 0.1;     // m, path clearance margin on top of the radius
  double lm_factor = 10.0;
  double fov_l1 = 20.0;
  double sdf_l1 = 200.0;
  double sdf_l2 = 20.0;
  int max_sqp_iters = 30;
  double kkt_tol = 1e-6;
  bool enable_sdf = true;
  bool enable_fov = true;
  bool enable_velocity_box = true;
  QpConfig qp;

  double dt() const { return t_horizon / n_nodes; }
  StageWeights stage_weights() const {
    StageWeights w;
    w.q_heading = q_diag[0];
    w.q_velocity = Vec3(q_diag[1], q_diag[2], q_diag[3]);
    w.r_thrust = r_diag[0];
    w.r_roll = r_diag[1];
    w.r_pitch = r_diag[2];
    w.r_yaw_rate = r_diag[3];
    return w;
  }
};

enum class NlpStatus { kConverged, kMaxIters, kRtiSingleStep, kInfeasibleQp };

inline const char* to_string(NlpStatus s) {
  switch (s) {
    case NlpStatus::kConverged: return "converged";
    case NlpStatus::kMaxIters: return "max-iters";
    case NlpStatus::kRtiSingleStep: return "rti-single-step";
    case NlpStatus::kInfeasibleQp: return "infeasible-qp";
  }
  return "unknown";
}

struct References {
  Vec3 v_ref = Vec3::Zero();
  double qw_ref = 1.0;
  double qz_ref = 0.0;
};

struct SqpIterRecord {
  int iter = 0;
  double cost = 0.0;
  double kkt = 0.0;
  double slack_max = 0.0;
  QpStatus qp_status = QpStatus::kConverged;
  long wall_time_us = 0;
};

struct NlpSolution {
  std::vector<VehicleState> states;  // N+1, satisfy the discrete dynamics
  std::vector<ControlInput> inputs;  // N
  VecX sdf_slack;                    // N, nodes 1..N
  VecX fov_az_slack;                 // N+1
  VecX fov_el_slack;                 // N+1
  Vec3 terminal_slack = Vec3::Zero();  // sdf, azimuth, elevation
  double cost = 0.0;
  double kkt_residual = std::numeric_limits<double>::infinity();
  NlpStatus status = NlpStatus::kMaxIters;
  std::vector<SqpIterRecord> iterations;
};

// Clearance beyond which the linearized path constraint is satisfied:
// field value at the observation-frame body position minus (radius + margin).
inline double collision_constraint(const ConstraintField& field, const VehicleState& x,
                                   const ObservationFrame& frame, double r, double epsilon) {
  return field.eval(frame.to_observation(x.p)).value - (r + epsilon);
}

struct TerminalResiduals {
  double sdf = 0.0;              // field(p_N) - d_ext - r
  FovResiduals terminal_fov;     // sensor position at the terminal node
  FovResiduals standstill_fov;   // extrapolated stopping position
  double d_ext = 0.0;            // braking distance bound used, m
};

namespace detail {

// Braking-distance bound at v: surrogate inside its fit ball, exact radial
// quadratic scaling outside it (stopping distance is quadratic in speed for a
// fixed direction), plus the under-estimation guard and the discrete pad.
inline double braking_extension(const BrakingPolynomial& poly, const Vec3& v, double pad) {
  const double speed = v.norm();
  if (speed < 1e-9) return 0.0;
  const double scale = std::max(1.0, speed / poly.fit_radius);
  return scale * scale * (poly.eval(v / scale) + poly.max_underestimate) + pad;
}

inline Vec3 braking_extension_grad(const BrakingPolynomial& poly, const Vec3& v, double pad) {
  const double speed = v.norm();
  if (speed < 1e-9) return Vec3::Zero();
  if (speed <= poly.fit_radius) return poly.gradient(v);
  Vec3 g;
  const double h = 1e-6;
  for (int d = 0; d < 3; ++d) {
    Vec3 lo = v, hi = v;
    lo[d] -= h;
    hi[d] += h;
    g[d] = (braking_extension(poly, hi, pad) - braking_extension(poly, lo, pad)) / (2 * h);
  }
  return g;
}

}  // namespace detail

inline TerminalResiduals terminal_constraints(const VehicleState& x_n, const ConstraintField& field,
                                              const BrakingPolynomial& poly,
                                              const ObservationFrame& frame,
                                              const FrustumSpec& frustum, double r,
                                              double pad = 0.0) {
  TerminalResiduals out;
  out.d_ext = detail::braking_extension(poly, x_n.v, pad);
  out.sdf = field.eval(frame.to_observation(x_n.p)).value - out.d_ext - r;
  out.terminal_fov = fov_constraints(x_n, frame, frustum);

  const double c = x_n.qw * x_n.qw - x_n.qz * x_n.qz, s = 2.0 * x_n.qw * x_n.qz;
  const Vec3 off(c * frame.mount.p_bs.x() - s * frame.mount.p_bs.y(),
                 s * frame.mount.p_bs.x() + c * frame.mount.p_bs.y(), frame.mount.p_bs.z());
  Vec3 p_stand = x_n.p + off;
  const double speed = x_n.v.norm();
  if (speed >= 1e-9) p_stand += out.d_ext * (x_n.v / speed);
  const FovLinearization lin = fov_linearize(frame.to_observation(p_stand));
  if (lin.degenerate) {
    out.standstill_fov = {frustum.alpha_h, frustum.alpha_v};
  } else {
    out.standstill_fov = {frustum.alpha_h - std::abs(lin.az), frustum.alpha_v - std::abs(lin.el)};
  }
  return out;
}

// Re-expresses a solution in a new working frame whose origin and yaw are
// given in the old one (observation switch). Inputs are frame-invariant:
// tilt angles act relative to the state yaw, which absorbs the change.
inline void transform_solution(NlpSolution& sol, const Vec3& new_origin, double new_yaw) {
  const Mat3 rzt = rot_z(new_yaw).transpose();
  const double ch = std::cos(0.5 * new_yaw), sh = std::sin(0.5 * new_yaw);
  for (VehicleState& x : sol.states) {
    x.p = rzt * (x.p - new_origin);
    x.v = rzt * x.v;
    const double qw = x.qw, qz = x.qz;
    x.qw = ch * qw + sh * qz;
    x.qz = ch * qz - sh * qw;
    x.normalize_heading();
  }
}

class NmpcSolver {
 public:
  NmpcSolver(const NlpConfig& config, const VehicleParams& params, BrakingPolynomial poly,
             const FrustumSpec& frustum)
      : cfg_(config), params_(params), poly_(std::move(poly)), frustum_(frustum) {
    lm_current_ = cfg_.lm_factor;
    if (cfg_.n_nodes < 2) throw std::invalid_argument("NmpcSolver: need at least 2 nodes");
    if ((cfg_.r_diag.array() <= 0.0).any())
      throw std::invalid_argument("NmpcSolver: input weights must be positive");
    weights_ = cfg_.stage_weights();

    // Worst-case feasible deceleration magnitude over directions, for the
    // discrete-overshoot pad; minimum is computed inside terminal_coefficient.
    double max_decel = 0.0;
    const int n_dirs = 4096;
    for (int i = 0; i < n_dirs; ++i) {
      const double z = 1.0 - 2.0 * (i + 0.5) / n_dirs;
      const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double ang = i * 2.399963229728653;  // golden angle
      const Vec3 u(rho * std::cos(ang), rho * std::sin(ang), z);
      max_decel = std::max(max_decel, braking_accel(u, params_).decel);
    }
    const double dt = cfg_.dt();
    pad_ = max_decel * dt * dt / 8.0;

    const double v_bar = std::sqrt(3.0) * params_.bounds.vel_max;  // covers the box corners
    terminal_ = terminal_coefficient(weights_, params_, v_bar, params_.bounds.vel_max, dt);
  }

  double terminal_p() const { return terminal_.p; }
  double discrete_pad() const { return pad_; }
  const BrakingPolynomial& braking_poly() const { return poly_; }

  // Horizon cost of a dynamically consistent trajectory: stage terms plus the
  // terminal kinetic penalty. Slack penalties are added separately.
  double trajectory_cost(const std::vector<VehicleState>& states,
                         const std::vector<ControlInput>& inputs, const References& refs) const {
    double j = 0.0;
    for (size_t k = 0; k < inputs.size(); ++k)
      j += stage_cost(states[k], inputs[k], weights_, params_, refs.v_ref, refs.qw_ref,
                      refs.qz_ref);
    j += terminal_.p * states.back().v.squaredNorm();
    return j;
  }

  NlpSolution solve(const VehicleState& x0, const ConstraintField& field,
                    const ObservationFrame& frame, const References& refs,
                    const NlpSolution* warm = nullptr) {
    init_workspace();
    if (warm && warm->states.size() == size_t(cfg_.n_nodes + 1) &&
        warm->inputs.size() == size_t(cfg_.n_nodes)) {
      xbar_ = warm->states;
      ubar_ = warm->inputs;
    } else {
      cold_start(x0);
    }
    return iterate(x0, field, frame, refs, /*rti=*/false);
  }

  // One re-linearization from the time-shifted previous solution, with the
  // braking policy appended at the tail. Falls back to a cold full solve on
  // shape mismatch.
  NlpSolution rti_step(const NlpSolution& previous, const VehicleState& x0,
                       const ConstraintField& field, const ObservationFrame& frame,
                       const References& refs) {
    const int n = cfg_.n_nodes;
    if (previous.states.size() != size_t(n + 1) || previous.inputs.size() != size_t(n))
      return solve(x0, field, frame, refs);
    init_workspace();
    for (int k = 0; k < n; ++k) xbar_[k] = previous.states[k + 1];
    for (int k = 0; k + 1 < n; ++k) ubar_[k] = previous.inputs[k + 1];
    const VehicleState& tail = previous.states[n];
    const Mat3 rz = rot_z(tail.yaw());
    ControlInput brake = braking_policy(rz.transpose() * tail.v, params_, cfg_.dt());
    ubar_[n - 1] = brake;
    xbar_[n] = rk4_step(tail, brake, params_, cfg_.dt());
    return iterate(x0, field, frame, refs, /*rti=*/true);
  }

 private:
  using Mat8 = Eigen::Matrix<double, kStateDim, kStateDim>;
  using Mat84 = Eigen::Matrix<double, kStateDim, kInputDim>;
  using Vec8 = Eigen::Matrix<double, kStateDim, 1>;

  // Variable layout: input deviations, then one slack per softened
  // constraint pair; see index helpers.
  int nu_total() const { return 4 * cfg_.n_nodes; }
  int idx_sdf(int k) const { return nu_total() + (k - 1); }               // k = 1..N
  int idx_az(int k) const { return nu_total() + cfg_.n_nodes + k; }       // k = 0..N
  int idx_el(int k) const { return idx_az(cfg_.n_nodes) + 1 + k; }        // k = 0..N
  int idx_term() const { return idx_el(cfg_.n_nodes) + 1; }               // sdf, az, el
  int n_vars() const { return idx_term() + 3; }

  void init_workspace() {
    const int n = cfg_.n_nodes;
    xbar_.resize(n + 1);
    ubar_.resize(n);
    sens_.assign(n + 1, Eigen::Matrix<double, kStateDim, Eigen::Dynamic>::Zero(kStateDim, 4 * n));
    shift_.assign(n + 1, Vec8::Zero());
  }

  void cold_start(const VehicleState& x0) {
    ControlInput hover{params_.hover_thrust(), 0.0, 0.0, 0.0};
    xbar_[0] = x0;
    for (int k = 0; k < cfg_.n_nodes; ++k) {
      ubar_[k] = hover;
      xbar_[k + 1] = rk4_step(xbar_[k], hover, params_, cfg_.dt());
    }
  }

  struct Violations {
    VecX sdf, az, el;  // sizes N, N+1, N+1
    Vec3 term = Vec3::Zero();
    double max() const {
      double m = term.maxCoeff();
      if (sdf.size()) m = std::max(m, sdf.maxCoeff());
      if (az.size()) m = std::max(m, az.maxCoeff());
      if (el.size()) m = std::max(m, el.maxCoeff());
      return m;
    }
  };

  Violations violations(const std::vector<VehicleState>& states, const ConstraintField& field,
                        const ObservationFrame& frame) const {
    const int n = cfg_.n_nodes;
    Violations v;
    v.sdf = VecX::Zero(n);
    v.az = VecX::Zero(n + 1);
    v.el = VecX::Zero(n + 1);
    if (cfg_.enable_sdf) {
      for (int k = 1; k <= n; ++k)
        v.sdf[k - 1] =
            std::max(0.0, -collision_constraint(field, states[k], frame, params_.radius,
                                                cfg_.epsilon));
    }
    if (cfg_.enable_fov) {
      for (int k = 0; k <= n; ++k) {
        const FovResiduals f = fov_constraints(states[k], frame, frustum_);
        v.az[k] = std::max(0.0, -f.azimuth);
        v.el[k] = std::max(0.0, -f.elevation);
      }
    }
    const TerminalResiduals t = terminal_constraints(states[n], field, poly_, frame, frustum_,
                                                     params_.radius + cfg_.epsilon, pad_);
    if (cfg_.enable_sdf) v.term[0] = std::max(0.0, -t.sdf);
    if (cfg_.enable_fov) {
      v.term[1] = std::max(0.0, -t.standstill_fov.azimuth);
      v.term[2] = std::max(0.0, -t.standstill_fov.elevation);
    }
    return v;
  }

  double penalty(const Violations& v) const {
    double j = 0.0;
    for (int i = 0; i < v.sdf.size(); ++i)
      j += cfg_.sdf_l1 * v.sdf[i] + cfg_.sdf_l2 * v.sdf[i] * v.sdf[i];
    j += cfg_.fov_l1 * (v.az.sum() + v.el.sum());
    j += cfg_.sdf_l1 * v.term.sum() + cfg_.sdf_l2 * v.term.squaredNorm();
    return j;
  }

  // Linearizes the trajectory, builds the condensed QP, and records the merit
  // of the current iterate from the same residuals.
  void build(const VehicleState& x0, const ConstraintField& field, const ObservationFrame& frame,
             const References& refs) {
    const int n = cfg_.n_nodes;
    const int nu = nu_total();
    const int nv = n_vars();
    const double dt = cfg_.dt();
    const double sq_qh = std::sqrt(weights_.q_heading);
    const Vec3 sq_qv = weights_.q_velocity.cwiseSqrt();
    const double sq_rt = std::sqrt(weights_.r_thrust), sq_rr = std::sqrt(weights_.r_roll);
    const double sq_rp = std::sqrt(weights_.r_pitch), sq_rw = std::sqrt(weights_.r_yaw_rate);

    // Defect-aware sensitivity recursion.
    shift_[0] = x0.to_vector() - xbar_[0].to_vector();
    sens_[0].setZero();
    defect_inf_ = 0.0;
    Mat8 a;
    Mat84 b;
    for (int k = 0; k < n; ++k) {
      const VehicleState pred = rk4_step_jacobians(xbar_[k], ubar_[k], params_, dt, a, b);
      const Vec8 c = pred.to_vector() - xbar_[k + 1].to_vector();
      defect_inf_ = std::max(defect_inf_, c.cwiseAbs().maxCoeff());
      sens_[k + 1].noalias() = a * sens_[k];
      sens_[k + 1].middleCols(4 * k, 4) += b;
      shift_[k + 1] = a * shift_[k] + c;
    }
    warm_consistent_ = shift_[0].cwiseAbs().maxCoeff() < 1e-9;

    qp_.P = MatX::Zero(nv, nv);
    qp_.q = VecX::Zero(nv);
    const double kInf = std::numeric_limits<double>::infinity();
    qp_.lb = VecX::Constant(nv, 0.0);
    qp_.ub = VecX::Constant(nv, kInf);

    // Gauss-Newton cost blocks over the input deviations.
    auto hu = qp_.P.topLeftCorner(nu, nu);
    auto gu = qp_.q.head(nu);
    double merit_stages = 0.0;
    Eigen::Matrix<double, 8, 8> jx;
    Eigen::Matrix<double, 8, 4> ju;
    Vec8 res;
    MatX jc(8, nu);
    for (int k = 0; k < n; ++k) {
      const VehicleState& x = xbar_[k];
      const ControlInput& u = ubar_[k];
      merit_stages += stage_cost(x, u, weights_, params_, refs.v_ref, refs.qw_ref, refs.qz_ref);
      jx.setZero();
      ju.setZero();
      res[0] = sq_qh * heading_error(refs.qw_ref, refs.qz_ref, x.qw, x.qz);
      jx(0, 3) = sq_qh * refs.qz_ref;
      jx(0, 4) = -sq_qh * refs.qw_ref;
      for (int i = 0; i < 3; ++i) {
        res[1 + i] = sq_qv[i] * (x.v[i] - refs.v_ref[i]);
        jx(1 + i, 5 + i) = sq_qv[i];
      }
      const double cr = std::cos(u.roll), sr = std::sin(u.roll);
      const double cp = std::cos(u.pitch), sp = std::sin(u.pitch);
      res[4] = sq_rt * (u.thrust * cr * cp - params_.mass * kGravity);
      ju(4, 0) = sq_rt * cr * cp;
      ju(4, 1) = -sq_rt * u.thrust * sr * cp;
      ju(4, 2) = -sq_rt * u.thrust * cr * sp;
      res[5] = sq_rr * u.roll;
      ju(5, 1) = sq_rr;
      res[6] = sq_rp * u.pitch;
      ju(6, 2) = sq_rp;
      res[7] = sq_rw * u.yaw_rate;
      ju(7, 3) = sq_rw;

      jc.noalias() = jx * sens_[k];
      jc.middleCols(4 * k, 4) += ju;
      const Vec8 r_eff = res + jx * shift_[k];
      hu.noalias() += 2.0 * jc.transpose() * jc;
      gu.noalias() += 2.0 * jc.transpose() * r_eff;
    }
    {
      const double sp_term = std::sqrt(terminal_.p);
      const MatX jt = sp_term * sens_[n].middleRows(5, 3);
      const Vec3 rt = sp_term * (xbar_[n].v + shift_[n].segment<3>(5));
      hu.noalias() += 2.0 * jt.transpose() * jt;
      gu.noalias() += 2.0 * jt.transpose() * rt;
      merit_stages += terminal_.p * xbar_[n].v.squaredNorm();
    }
    // LM term over the full-space decision variables, condensed. The weight
    // decays with the measured residual (see iterate), so early steps are
    // damped while the tail converges at the undamped Gauss-Newton rate.
    hu.diagonal().array() += lm_current_;
    for (int k = 1; k <= n; ++k) hu.noalias() += lm_current_ * sens_[k].transpose() * sens_[k];

    // Slack penalty columns (L2 weight doubled: the QP carries 1/2 x'Px).
    for (int k = 1; k <= n; ++k) {
      qp_.q[idx_sdf(k)] = cfg_.sdf_l1;
      qp_.P(idx_sdf(k), idx_sdf(k)) = 2.0 * cfg_.sdf_l2;
    }
    for (int k = 0; k <= n; ++k) {
      qp_.q[idx_az(k)] = cfg_.fov_l1;
      qp_.q[idx_el(k)] = cfg_.fov_l1;
    }
    for (int i = 0; i < 3; ++i) {
      qp_.q[idx_term() + i] = cfg_.sdf_l1;
      qp_.P(idx_term() + i, idx_term() + i) = 2.0 * cfg_.sdf_l2;
    }

    // Input deviation bounds.
    for (int k = 0; k < n; ++k) {
      const VehicleBounds& bb = params_.bounds;
      qp_.lb[4 * k + 0] = bb.thrust_min - ubar_[k].thrust;
      qp_.ub[4 * k + 0] = bb.thrust_max - ubar_[k].thrust;
      qp_.lb[4 * k + 1] = -bb.roll_max - ubar_[k].roll;
      qp_.ub[4 * k + 1] = bb.roll_max - ubar_[k].roll;
      qp_.lb[4 * k + 2] = -bb.pitch_max - ubar_[k].pitch;
      qp_.ub[4 * k + 2] = bb.pitch_max - ubar_[k].pitch;
      qp_.lb[4 * k + 3] = -bb.yaw_rate_max - ubar_[k].yaw_rate;
      qp_.ub[4 * k + 3] = bb.yaw_rate_max - ubar_[k].yaw_rate;
    }

    const int m_max = n + 4 * (n + 1) + 6 * n + 5;
    qp_.G = MatX::Zero(m_max, nv);
    qp_.h = VecX::Zero(m_max);
    int row = 0;
    Violations viol;
    viol.sdf = VecX::Zero(n);
    viol.az = VecX::Zero(n + 1);
    viol.el = VecX::Zero(n + 1);
    const Mat3 map = frame.jacobian();

    if (cfg_.enable_sdf) {
      for (int k = 1; k <= n; ++k) {
        const FieldSample fs = field.eval(frame.to_observation(xbar_[k].p));
        const Vec3 gp = map.transpose() * fs.grad;
        const double resid = fs.value - (params_.radius + cfg_.epsilon);
        viol.sdf[k - 1] = std::max(0.0, -resid);
        qp_.G.row(row).head(nu) = -(gp.transpose() * sens_[k].topRows(3));
        qp_.G(row, idx_sdf(k)) = -1.0;
        qp_.h[row] = resid + gp.dot(shift_[k].head<3>());
        ++row;
      }
    }
    if (cfg_.enable_fov) {
      for (int k = 0; k <= n; ++k) {
        Eigen::Matrix<double, 3, 8> jp = sensor_point_jacobian(xbar_[k], frame);
        const Vec3 p_obs = frame.sensor_position(xbar_[k].p, xbar_[k].qw, xbar_[k].qz);
        const FovLinearization lin = fov_linearize(p_obs);
        const Vec8 daz = jp.transpose() * lin.daz;
        const Vec8 del = jp.transpose() * lin.del;
        const double az = lin.degenerate ? 0.0 : lin.az;
        const double el = lin.degenerate ? 0.0 : lin.el;
        viol.az[k] = std::max(0.0, std::abs(az) - frustum_.alpha_h);
        viol.el[k] = std::max(0.0, std::abs(el) - frustum_.alpha_v);
        add_pair_rows(row, daz, az, frustum_.alpha_h, k, idx_az(k));
        add_pair_rows(row, del, el, frustum_.alpha_v, k, idx_el(k));
      }
    }
    if (cfg_.enable_velocity_box) {
      for (int k = 1; k <= n; ++k) {
        for (int i = 0; i < 3; ++i) {
          const double vmax = params_.bounds.vel_max;
          qp_.G.row(row).head(nu) = sens_[k].row(5 + i);
          qp_.h[row] = vmax - xbar_[k].v[i] - shift_[k][5 + i];
          ++row;
          qp_.G.row(row).head(nu) = -sens_[k].row(5 + i);
          qp_.h[row] = vmax + xbar_[k].v[i] + shift_[k][5 + i];
          ++row;
        }
      }
    }
    // Terminal rows: margin-inflated distance row plus standstill membership.
    {
      const VehicleState& xn = xbar_[n];
      const TerminalResiduals tr = terminal_constraints(xn, field, poly_, frame, frustum_,
                                                        params_.radius + cfg_.epsilon, pad_);
      if (cfg_.enable_sdf) {
        const FieldSample fs = field.eval(frame.to_observation(xn.p));
        Vec8 grad = Vec8::Zero();
        grad.head<3>() = map.transpose() * fs.grad;
        grad.tail<3>() = -detail::braking_extension_grad(poly_, xn.v, pad_);
        viol.term[0] = std::max(0.0, -tr.sdf);
        qp_.G.row(row).head(nu) = -(grad.transpose() * sens_[n]);
        qp_.G(row, idx_term() + 0) = -1.0;
        qp_.h[row] = tr.sdf + grad.dot(shift_[n]);
        ++row;
      }
      if (cfg_.enable_fov) {
        Eigen::Matrix<double, 3, 8> jp = sensor_point_jacobian(xn, frame);
        const double speed = xn.v.norm();
        Vec3 p_stand_obs;
        if (speed >= 1e-9) {
          const Vec3 vhat = xn.v / speed;
          const Vec3 dg = detail::braking_extension_grad(poly_, xn.v, pad_);
          const Mat3 dstand_dv =
              vhat * dg.transpose() + (tr.d_ext / speed) * (Mat3::Identity() - vhat * vhat.transpose());
          jp.rightCols<3>() += frame.jacobian() * dstand_dv;
          const double c = xn.qw * xn.qw - xn.qz * xn.qz, s = 2.0 * xn.qw * xn.qz;
          const Vec3 off(c * frame.mount.p_bs.x() - s * frame.mount.p_bs.y(),
                         s * frame.mount.p_bs.x() + c * frame.mount.p_bs.y(),
                         frame.mount.p_bs.z());
          p_stand_obs = frame.to_observation(xn.p + off + tr.d_ext * vhat);
        } else {
          jp.rightCols<3>().setZero();
          p_stand_obs = frame.sensor_position(xn.p, xn.qw, xn.qz);
        }
        const FovLinearization lin = fov_linearize(p_stand_obs);
        const Vec8 daz = jp.transpose() * lin.daz;
        const Vec8 del = jp.transpose() * lin.del;
        const double az = lin.degenerate ? 0.0 : lin.az;
        const double el = lin.degenerate ? 0.0 : lin.el;
        viol.term[1] = std::max(0.0, std::abs(az) - frustum_.alpha_h);
        viol.term[2] = std::max(0.0, std::abs(el) - frustum_.alpha_v);
        add_pair_rows(row, daz, az, frustum_.alpha_h, n, idx_term() + 1);
        add_pair_rows(row, del, el, frustum_.alpha_v, n, idx_term() + 2);
      }
    }
    qp_.G.conservativeResize(row, nv);
    qp_.h.conservativeResize(row);

    build_merit_ = merit_stages + penalty(viol);
    build_slack_max_ = viol.max();
  }

  // Two rows encoding |angle + grad'(shift + S du)| <= limit + slack.
  void add_pair_rows(int& row, const Vec8& grad, double angle, double limit, int node,
                     int slack_col) {
    const int nu = nu_total();
    const double affine = grad.dot(shift_[node]);
    qp_.G.row(row).head(nu) = grad.transpose() * sens_[node];
    qp_.G(row, slack_col) = -1.0;
    qp_.h[row] = limit - angle - affine;
    ++row;
    qp_.G.row(row).head(nu) = -(grad.transpose() * sens_[node]);
    qp_.G(row, slack_col) = -1.0;
    qp_.h[row] = limit + angle + affine;
    ++row;
  }

  static Eigen::Matrix<double, 3, 8> sensor_point_jacobian(const VehicleState& x,
                                                           const ObservationFrame& frame) {
    Eigen::Matrix<double, 3, 8> jp = Eigen::Matrix<double, 3, 8>::Zero();
    const Mat3 map = frame.jacobian();
    jp.leftCols<3>() = map;
    const Vec3& b = frame.mount.p_bs;
    if (b.head<2>().squaredNorm() > 0.0) {
      const Vec3 doff_dqw(2 * x.qw * b.x() - 2 * x.qz * b.y(),
                          2 * x.qz * b.x() + 2 * x.qw * b.y(), 0.0);
      const Vec3 doff_dqz(-2 * x.qz * b.x() - 2 * x.qw * b.y(),
                          2 * x.qw * b.x() - 2 * x.qz * b.y(), 0.0);
      jp.col(3) = map * doff_dqw;
      jp.col(4) = map * doff_dqz;
    }
    return jp;
  }

  void apply_step(const VecX& delta) {
    const int n = cfg_.n_nodes;
    step_inf_ = delta.head(nu_total()).cwiseAbs().maxCoeff();
    for (int k = 0; k < n; ++k) {
      const VehicleBounds& bb = params_.bounds;
      ubar_[k].thrust = std::clamp(ubar_[k].thrust + delta[4 * k + 0], bb.thrust_min, bb.thrust_max);
      ubar_[k].roll = std::clamp(ubar_[k].roll + delta[4 * k + 1], -bb.roll_max, bb.roll_max);
      ubar_[k].pitch = std::clamp(ubar_[k].pitch + delta[4 * k + 2], -bb.pitch_max, bb.pitch_max);
      ubar_[k].yaw_rate =
          std::clamp(ubar_[k].yaw_rate + delta[4 * k + 3], -bb.yaw_rate_max, bb.yaw_rate_max);
    }
    for (int k = n; k >= 1; --k) {
      const Vec8 dx = shift_[k] + sens_[k] * delta.head(nu_total());
      xbar_[k] = VehicleState::from_vector(xbar_[k].to_vector() + dx);
      xbar_[k].normalize_heading();
    }
  }

  NlpSolution finalize(const VehicleState& x0, const ConstraintField& field,
                       const ObservationFrame& frame, const References& refs, NlpStatus status,
                       double kkt, std::vector<SqpIterRecord> iters) const {
    NlpSolution sol;
    const int n = cfg_.n_nodes;
    sol.states.resize(n + 1);
    sol.inputs = ubar_;
    sol.states[0] = x0;
    for (int k = 0; k < n; ++k) sol.states[k + 1] = rk4_step(sol.states[k], ubar_[k], params_, cfg_.dt());
    const Violations v = violations(sol.states, field, frame);
    sol.sdf_slack = v.sdf;
    sol.fov_az_slack = v.az;
    sol.fov_el_slack = v.el;
    sol.terminal_slack = v.term;
    sol.cost = trajectory_cost(sol.states, sol.inputs, refs) + penalty(v);
    sol.kkt_residual = kkt;
    sol.status = status;
    sol.iterations = std::move(iters);
    return sol;
  }

  NlpSolution iterate(const VehicleState& x0, const ConstraintField& field,
                      const ObservationFrame& frame, const References& refs, bool rti) {
    std::vector<SqpIterRecord> iters;
    const int max_iters = rti ? 1 : cfg_.max_sqp_iters;
    NlpStatus status = rti ? NlpStatus::kRtiSingleStep : NlpStatus::kMaxIters;
    double kkt = std::numeric_limits<double>::infinity();

    std::vector<VehicleState> x_keep;
    std::vector<ControlInput> u_keep;
    double merit_keep = std::numeric_limits<double>::infinity();
    bool keep_valid = false;

    if (!rti) lm_current_ = cfg_.lm_factor;
    for (int it = 0; it < max_iters; ++it) {
      // Damping proportional to the last step length: large far away, vanishing
      // near the solution, capped at the configured factor.
      if (it > 0) lm_current_ = std::min(cfg_.lm_factor, step_inf_);
      const auto t0 = std::chrono::steady_clock::now();
      build(x0, field, frame, refs);
      if (it > 0) {
        kkt = std::max(step_inf_, defect_inf_);
        if (kkt <= cfg_.kkt_tol) {
          status = NlpStatus::kConverged;
          break;
        }
      }
      if (rti && warm_consistent_) {
        x_keep = xbar_;
        u_keep = ubar_;
        merit_keep = build_merit_;
        keep_valid = true;
      }
      const QpSolution qp_sol = solve_qp(qp_, cfg_.qp);
      const auto t1 = std::chrono::steady_clock::now();
      SqpIterRecord rec;
      rec.iter = it;
      rec.cost = build_merit_;
      rec.kkt = std::max(step_inf_, defect_inf_);
      rec.slack_max = build_slack_max_;
      rec.qp_status = qp_sol.status;
      rec.wall_time_us =
          std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count();
      iters.push_back(rec);
      if (qp_sol.status == QpStatus::kInfeasible) {
        return finalize(x0, field, frame, refs, NlpStatus::kInfeasibleQp, kkt, std::move(iters));
      }
      apply_step(qp_sol.x);
      if (rti) {
        kkt = step_inf_;
        lm_current_ = std::min(cfg_.lm_factor, step_inf_);
      }
    }
    if (!rti && status == NlpStatus::kMaxIters) {
      // The loop may have converged on its very last step; measure once more.
      double defect = 0.0;
      for (int k = 0; k < cfg_.n_nodes; ++k) {
        const Vec8 c = rk4_step(xbar_[k], ubar_[k], params_, cfg_.dt()).to_vector() -
                       xbar_[k + 1].to_vector();
        defect = std::max(defect, c.cwiseAbs().maxCoeff());
      }
      kkt = std::max(step_inf_, defect);
      if (kkt <= cfg_.kkt_tol) status = NlpStatus::kConverged;
    }

    NlpSolution sol = finalize(x0, field, frame, refs, status, kkt, std::move(iters));
    if (rti && keep_valid && sol.status == NlpStatus::kRtiSingleStep) {
      // Single-iteration safeguard: a Gauss-Newton step may raise the true
      // merit; the shifted warm start is feasible by construction, keep it.
      if (sol.cost > merit_keep + 1e-12) {
        xbar_ = std::move(x_keep);
        ubar_ = std::move(u_keep);
        NlpSolution fallback =
            finalize(x0, field, frame, refs, NlpStatus::kRtiSingleStep, kkt, sol.iterations);
        if (fallback.cost <= sol.cost) return fallback;
      }
    }
    return sol;
  }

  NlpConfig cfg_;
  VehicleParams params_;
  BrakingPolynomial poly_;
  FrustumSpec frustum_;
  StageWeights weights_;
  TerminalCoefficient terminal_;
  double pad_ = 0.0;

  std::vector<VehicleState> xbar_;
  std::vector<ControlInput> ubar_;
  std::vector<Eigen::Matrix<double, kStateDim, Eigen::Dynamic>> sens_;
  std::vector<Vec8> shift_;
  QpProblem qp_;
  double lm_current_ = 0.0;  // residual-proportional damping, capped at lm_factor
  double defect_inf_ = 0.0;
  double step_inf_ = 0.0;
  double build_merit_ = 0.0;
  double build_slack_max_ = 0.0;
  bool warm_consistent_ = false;
};

}  // namespace sdfmpc
