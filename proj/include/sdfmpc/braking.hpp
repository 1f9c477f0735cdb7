#pragma once

// Maximum-deceleration machinery behind the terminal safety constraint.
//
// Given a velocity expressed in the yaw-aligned vehicle frame, the strongest
// constant deceleration anti-parallel to it is found in closed form. Writing
// the candidate acceleration as a = -lambda * v_hat, the required thrust
// vector is m * (g e3 - lambda v_hat), which pins thrust magnitude and tilt
// uniquely per lambda, so the search is one-dimensional. Each actuation bound
// carves an interval of admissible lambda containing 0:
//   thrust magnitude : lambda^2 - 2 g uz lambda + g^2 - (T_max/m)^2 <= 0
//   axis z >= 0      : lambda <= g / uz when uz > 0 (bounded tilt cannot
//                      point the thrust axis below the horizon)
//   roll             : |n_y| <= sin(roll_max) * |n|, a quadratic in lambda;
//                      only the connected component of 0 is reachable, any
//                      second component lies beyond the z >= 0 cut
//   pitch            : lambda * (|ux| + tan(pitch_max) uz) <= tan(pitch_max) g
// The optimum is the smallest upper end of those intervals.

#include "sdfmpc/core.hpp"
#include "sdfmpc/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace sdfmpc {

struct BrakingSolution {
  double thrust = 0.0;
  double roll = 0.0;
  double pitch = 0.0;
  Vec3 accel = Vec3::Zero();  // vehicle frame, equals -decel * v_hat
  double decel = 0.0;         // |accel|, m/s^2
};

// Thrust and tilt realizing a desired vehicle-frame acceleration exactly.
// Inverse of: a = (T/m) * tilt_axis(roll, pitch) - g e3. Does not clamp to
// bounds; feasibility is the caller's concern.
inline ControlInput acceleration_input(const Vec3& accel_vehicle, const VehicleParams& params) {
  const Vec3 n = accel_vehicle + Vec3(0, 0, kGravity);
  const double norm = n.norm();
  ControlInput u;
  u.thrust = params.mass * norm;
  if (norm > 1e-12) {
    const Vec3 nh = n / norm;
    u.roll = -std::asin(std::clamp(nh.y(), -1.0, 1.0));
    u.pitch = std::atan2(nh.x(), nh.z());
  }
  return u;
}

inline BrakingSolution braking_accel(const Vec3& v_vehicle, const VehicleParams& params) {
  BrakingSolution sol;
  const double speed = v_vehicle.norm();
  if (speed < 1e-12) {
    sol.thrust = params.hover_thrust();
    return sol;
  }
  const Vec3 u = v_vehicle / speed;
  const double g = kGravity;
  const double tm = params.bounds.thrust_max / params.mass;
  const double inf = std::numeric_limits<double>::infinity();

  double lam = g * u.z() + std::sqrt(std::max(0.0, tm * tm - g * g * (1.0 - u.z() * u.z())));

  if (u.z() > 1e-12) lam = std::min(lam, g / u.z());

  {
    const double s = std::sin(params.bounds.roll_max);
    const double a = u.y() * u.y() - s * s;
    const double b = 2.0 * s * s * g * u.z();
    const double c = -s * s * g * g;
    double bound = inf;
    if (std::abs(a) < 1e-14) {
      if (b > 1e-14) bound = -c / b;
    } else {
      const double disc = b * b - 4.0 * a * c;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        double r1 = (-b - sq) / (2.0 * a);
        double r2 = (-b + sq) / (2.0 * a);
        if (r1 > r2) std::swap(r1, r2);
        // f(0) = c < 0; the component of 0 ends at the smallest positive root.
        if (a > 0.0) {
          bound = r2;
        } else if (r1 >= 0.0) {
          bound = r1;
        }
      } else if (a > 0.0) {
        bound = 0.0;  // unreachable: f(0) < 0 forces real roots when a > 0
      }
    }
    lam = std::min(lam, bound);
  }

  {
    const double t = std::tan(params.bounds.pitch_max);
    const double coef = std::abs(u.x()) + t * u.z();
    if (coef > 1e-12) lam = std::min(lam, t * g / coef);
  }

  lam = std::max(lam, 0.0);
  sol.accel = -lam * u;
  sol.decel = lam;
  const ControlInput in = acceleration_input(sol.accel, params);
  sol.thrust = in.thrust;
  sol.roll = in.roll;
  sol.pitch = in.pitch;
  return sol;
}

// Stopping distance under the strongest constant deceleration, |v|^2 / (2 a).
inline double braking_distance(const Vec3& v_vehicle, const VehicleParams& params) {
  const double speed = v_vehicle.norm();
  if (speed < 1e-12) return 0.0;
  const double a = braking_accel(v_vehicle, params).decel;
  if (a < 1e-9) throw std::runtime_error("braking: zero feasible deceleration");
  return speed * speed / (2.0 * a);
}

// One step of the sampled braking policy. Far from standstill apply the
// strongest deceleration; once one step can absorb the whole velocity,
// command the exact-stop acceleration -v/dt instead, which a zero-order-hold
// integrator realizes as a perfect stop.
inline ControlInput braking_policy(const Vec3& v_vehicle, const VehicleParams& params, double dt) {
  const BrakingSolution sol = braking_accel(v_vehicle, params);
  ControlInput u;
  if (v_vehicle.norm() > sol.decel * dt) {
    u.thrust = sol.thrust;
    u.roll = sol.roll;
    u.pitch = sol.pitch;
  } else {
    u = acceleration_input(-v_vehicle / dt, params);
  }
  u.yaw_rate = 0.0;
  return u;
}

struct BrakingStep {
  VehicleState state;
  ControlInput input;
};

// Roll the sampled policy forward from a world-frame state until standstill.
// Thrust and gravity are constant over each interval, so the update
// p += v dt + a dt^2 / 2, v += a dt is exact; every displacement is parallel
// to the initial velocity (the commanded acceleration is always anti-parallel
// to the current one).
inline std::vector<BrakingStep> braking_rollout(const VehicleState& start,
                                                const VehicleParams& params, double dt,
                                                int max_steps = 10000) {
  std::vector<BrakingStep> out;
  VehicleState s = start;
  const double yaw = s.yaw();
  const Mat3 R = rot_z(yaw);
  for (int k = 0; k < max_steps; ++k) {
    const Vec3 v_vehicle = R.transpose() * s.v;
    const ControlInput u = braking_policy(v_vehicle, params, dt);
    out.push_back({s, u});
    if (s.v.norm() < 1e-12) break;
    const Vec3 a_vehicle =
        (u.thrust / params.mass) * tilt_axis(u.roll, u.pitch) - Vec3(0, 0, kGravity);
    const Vec3 a_world = R * a_vehicle;
    s.p += s.v * dt + 0.5 * dt * dt * a_world;
    s.v += a_world * dt;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Polynomial surrogate of the stopping distance.

inline int monomial_count(int degree) {
  return (degree + 1) * (degree + 2) * (degree + 3) / 6;
}

// Exponent triples ordered by total degree, then lexicographically. The
// ordering makes the first monomial_count(d) entries exactly the degree-d
// basis, so one normal-equations build serves every lower degree.
inline std::vector<std::array<int, 3>> monomial_exponents(int degree) {
  std::vector<std::array<int, 3>> exps;
  for (int d = 0; d <= degree; ++d)
    for (int i = d; i >= 0; --i)
      for (int j = d - i; j >= 0; --j) exps.push_back({i, j, d - i - j});
  return exps;
}

struct BrakingPolynomial {
  int degree = 6;
  double fit_radius = 3.0;  // ball of velocities the fit covers
  std::vector<std::array<int, 3>> exponents;
  VecX coefficients;  // acts on raw velocity components
  double rmse = 0.0;
  // Grid extremes of (true - polynomial); max_underestimate > 0 means the
  // surrogate reports less distance than physically needed somewhere, which
  // is the direction the terminal margin must absorb.
  double max_underestimate = 0.0;
  double max_overestimate = 0.0;

  double eval(const Vec3& v) const {
    double px[16], py[16], pz[16];
    px[0] = py[0] = pz[0] = 1.0;
    for (int k = 1; k <= degree; ++k) {
      px[k] = px[k - 1] * v.x();
      py[k] = py[k - 1] * v.y();
      pz[k] = pz[k - 1] * v.z();
    }
    double acc = 0.0;
    for (size_t m = 0; m < exponents.size(); ++m)
      acc += coefficients[static_cast<Eigen::Index>(m)] *
             px[exponents[m][0]] * py[exponents[m][1]] * pz[exponents[m][2]];
    return acc;
  }

  Vec3 gradient(const Vec3& v) const {
    double px[16], py[16], pz[16];
    px[0] = py[0] = pz[0] = 1.0;
    for (int k = 1; k <= degree; ++k) {
      px[k] = px[k - 1] * v.x();
      py[k] = py[k - 1] * v.y();
      pz[k] = pz[k - 1] * v.z();
    }
    Vec3 grad = Vec3::Zero();
    for (size_t m = 0; m < exponents.size(); ++m) {
      const double cm = coefficients[static_cast<Eigen::Index>(m)];
      const int i = exponents[m][0], j = exponents[m][1], k = exponents[m][2];
      if (i > 0) grad.x() += cm * i * px[i - 1] * py[j] * pz[k];
      if (j > 0) grad.y() += cm * j * px[i] * py[j - 1] * pz[k];
      if (k > 0) grad.z() += cm * k * px[i] * py[j] * pz[k - 1];
    }
    return grad;
  }
};

struct BrakingFitReport {
  std::vector<int> degrees;
  std::vector<double> rmse;       // one per degree
  std::vector<int> coefficients;  // basis size per degree
  BrakingPolynomial chosen;
};

// Least-squares fit of braking_distance over a velocity grid filling the ball
// |v| <= radius. Normal equations are accumulated once at max_degree in
// normalized coordinates (v / radius) for conditioning; leading blocks give
// the lower-degree fits. Coefficients are rescaled to act on raw velocities.
inline BrakingFitReport fit_braking_polynomial(const VehicleParams& params, int chosen_degree = 6,
                                               int max_degree = 7, double radius = 3.0,
                                               double grid_step = 0.05) {
  const auto exps = monomial_exponents(max_degree);
  const int n = static_cast<int>(exps.size());
  MatX ata = MatX::Zero(n, n);
  VecX atb = VecX::Zero(n);
  double btb = 0.0;
  std::int64_t count = 0;

  const int half = static_cast<int>(std::floor(radius / grid_step + 1e-9));
  const int chunk = 4096;
  MatX phi(chunk, n);
  VecX rhs(chunk);
  int fill = 0;
  const auto flush = [&]() {
    if (fill == 0) return;
    const auto block = phi.topRows(fill);
    ata.selfadjointView<Eigen::Lower>().rankUpdate(block.transpose(), 1.0);
    atb.noalias() += block.transpose() * rhs.head(fill);
    fill = 0;
  };

  double px[16], py[16], pz[16];
  px[0] = py[0] = pz[0] = 1.0;
  for (int ix = -half; ix <= half; ++ix)
    for (int iy = -half; iy <= half; ++iy)
      for (int iz = -half; iz <= half; ++iz) {
        const Vec3 v(ix * grid_step, iy * grid_step, iz * grid_step);
        if (v.squaredNorm() > radius * radius + 1e-12) continue;
        const Vec3 w = v / radius;
        for (int k = 1; k <= max_degree; ++k) {
          px[k] = px[k - 1] * w.x();
          py[k] = py[k - 1] * w.y();
          pz[k] = pz[k - 1] * w.z();
        }
        for (int m = 0; m < n; ++m)
          phi(fill, m) = px[exps[m][0]] * py[exps[m][1]] * pz[exps[m][2]];
        const double d = braking_distance(v, params);
        rhs[fill] = d;
        btb += d * d;
        ++count;
        if (++fill == chunk) flush();
      }
  flush();
  ata.triangularView<Eigen::StrictlyUpper>() = ata.transpose();

  BrakingFitReport report;
  for (int d = 1; d <= max_degree; ++d) {
    const int nd = monomial_count(d);
    const MatX ata_d = ata.topLeftCorner(nd, nd);
    const VecX atb_d = atb.head(nd);
    VecX coef = ata_d.ldlt().solve(atb_d);
    coef += ata_d.ldlt().solve(atb_d - ata_d * coef);  // one refinement pass
    const double sq = coef.dot(ata_d * coef) - 2.0 * coef.dot(atb_d) + btb;
    const double rmse = std::sqrt(std::max(0.0, sq) / static_cast<double>(count));
    report.degrees.push_back(d);
    report.coefficients.push_back(nd);
    report.rmse.push_back(rmse);
    if (d == chosen_degree) {
      report.chosen.degree = d;
      report.chosen.fit_radius = radius;
      report.chosen.exponents.assign(exps.begin(), exps.begin() + nd);
      report.chosen.coefficients = coef;
      // descale: coefficient for v^e acting on raw velocity
      for (int m = 0; m < nd; ++m) {
        const int total = exps[m][0] + exps[m][1] + exps[m][2];
        report.chosen.coefficients[m] /= std::pow(radius, total);
      }
      report.chosen.rmse = rmse;
    }
  }
  if (report.chosen.coefficients.size() == 0)
    throw std::runtime_error("braking fit: chosen degree above max degree");

  // Signed error extremes of the chosen surrogate over the same grid.
  double max_under = 0.0, max_over = 0.0;
  for (int ix = -half; ix <= half; ++ix)
    for (int iy = -half; iy <= half; ++iy)
      for (int iz = -half; iz <= half; ++iz) {
        const Vec3 v(ix * grid_step, iy * grid_step, iz * grid_step);
        if (v.squaredNorm() > radius * radius + 1e-12) continue;
        const double err = braking_distance(v, params) - report.chosen.eval(v);
        max_under = std::max(max_under, err);
        max_over = std::max(max_over, -err);
      }
  report.chosen.max_underestimate = max_under;
  report.chosen.max_overestimate = max_over;
  return report;
}

// ---------------------------------------------------------------------------
// Terminal cost coefficient.

struct StageWeights {
  double q_heading = 20.0;
  Vec3 q_velocity = Vec3(5.0, 5.0, 5.0);
  double r_thrust = 0.04;
  double r_roll = 50.0;
  double r_pitch = 50.0;
  double r_yaw_rate = 5.0;
};

// Quadratic stage cost around hover at the velocity reference, heading error
// entering as the half-angle sine. thrust_z = T cos(roll) cos(pitch).
inline double stage_cost(const VehicleState& x, const ControlInput& u, const StageWeights& w,
                         const VehicleParams& params, const Vec3& v_ref, double qw_ref,
                         double qz_ref) {
  const double ez = heading_error(qw_ref, qz_ref, x.qw, x.qz);
  const Vec3 dv = x.v - v_ref;
  const double tz = u.thrust * std::cos(u.roll) * std::cos(u.pitch);
  const double dtz = tz - params.hover_thrust();
  return w.q_heading * ez * ez + w.q_velocity.cwiseProduct(dv).dot(dv) +
         w.r_thrust * dtz * dtz + w.r_roll * u.roll * u.roll + w.r_pitch * u.pitch * u.pitch +
         w.r_yaw_rate * u.yaw_rate * u.yaw_rate;
}

struct TerminalCoefficient {
  double p = 0.0;           // terminal weight on |v|^2
  double stage_bound = 0.0; // sup of the stage cost over the admissible region
  double min_decel = 0.0;   // worst-direction max deceleration, deflated
  double r_tilde = 0.0;     // quadratic bound coefficient on the stop-step input cost
  double v_bar = 0.0;
  double v_ref_bar = 0.0;
  double dt = 0.0;
};

namespace detail {

// Input cost of a candidate stopping action relative to the squared speed it
// cancels in one step. The inverse input map gives |v|^2 = dt^2 |a|^2 with
// m^2 |a|^2 = T^2 - 2 T m g cos(roll) cos(pitch) + m^2 g^2, which vanishes
// only at hover where the input cost vanishes too; those points are skipped.
// The thrust term is penalized through its vertical projection, matching the
// stage cost, so the resulting bound covers it exactly.
inline double stop_step_quotient(double thrust, double roll, double pitch,
                                 const StageWeights& w, const VehicleParams& params, double dt) {
  const double mg = params.hover_thrust();
  const double ct = std::cos(roll) * std::cos(pitch);
  const double denom = dt * dt * (thrust * thrust - 2.0 * thrust * mg * ct + mg * mg);
  if (denom < 1e-9) return -1.0;
  const double m2 = params.mass * params.mass;
  const double tz = thrust * ct;
  const double num =
      m2 * (w.r_roll * roll * roll + w.r_pitch * pitch * pitch +
            w.r_thrust * (tz - mg) * (tz - mg));
  return num / denom;
}

}  // namespace detail

// Coefficient p making p |v|^2 a discrete control Lyapunov certificate for
// the sampled braking policy: V(next) - V(cur) <= -stage cost along braking.
// Two regimes. Far from standstill the per-step descent is at least
// (a_min dt)^2, so p >= stage_sup / (a_min dt)^2 suffices. Within one step of
// standstill the policy commands the exact stop, whose input cost admits the
// quadratic bound r_tilde |v|^2 (with the velocity reference zeroed by the
// reference governor there), so p >= max diag(Q) + r_tilde suffices. p is the
// max of the two. Searched quantities are padded by the safety factor in the
// conservative direction; the analytic stage bound is exact and unpadded.
inline TerminalCoefficient terminal_coefficient(const StageWeights& w, const VehicleParams& params,
                                                double v_bar, double v_ref_bar, double dt,
                                                double safety = 1.02) {
  TerminalCoefficient out;
  out.v_bar = v_bar;
  out.v_ref_bar = v_ref_bar;
  out.dt = dt;

  // Worst-direction deceleration (speed-independent) over a Fibonacci sphere
  // plus pattern refinement, deflated by the safety factor.
  double a_min = std::numeric_limits<double>::infinity();
  Vec3 dir_min = Vec3::UnitX();
  const int n_dirs = 20000;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n_dirs; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n_dirs;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double ang = golden * i;
    const Vec3 u(r * std::cos(ang), r * std::sin(ang), z);
    const double a = braking_accel(u, params).decel;
    if (a < a_min) {
      a_min = a;
      dir_min = u;
    }
  }
  {
    double step = 0.05;
    while (step > 1e-7) {
      bool improved = false;
      for (int ax = 0; ax < 3; ++ax)
        for (int sgn = -1; sgn <= 1; sgn += 2) {
          Vec3 cand = dir_min + sgn * step * Vec3::Unit(ax);
          cand.normalize();
          const double a = braking_accel(cand, params).decel;
          if (a < a_min) {
            a_min = a;
            dir_min = cand;
            improved = true;
          }
        }
      if (!improved) step *= 0.5;
    }
  }
  out.min_decel = a_min / safety;

  // Exact stage cost supremum: terms separate, each is maximized on its own
  // interval. Heading error is a half-angle sine, bounded by 1. The velocity
  // term concentrates on the largest weight with v and v_ref anti-aligned
  // along that axis. thrust_z = T cos(roll) cos(pitch) ranges over
  // [T_min cos(roll_max) cos(pitch_max), T_max].
  {
    const double mg = params.hover_thrust();
    const double spread = v_bar + v_ref_bar;
    const double tz_lo =
        params.bounds.thrust_min * std::cos(params.bounds.roll_max) * std::cos(params.bounds.pitch_max);
    const double dtz = std::max(mg - tz_lo, params.bounds.thrust_max - mg);
    out.stage_bound = w.q_heading + w.q_velocity.maxCoeff() * spread * spread +
                      w.r_thrust * dtz * dtz +
                      w.r_roll * params.bounds.roll_max * params.bounds.roll_max +
                      w.r_pitch * params.bounds.pitch_max * params.bounds.pitch_max +
                      w.r_yaw_rate * params.bounds.yaw_rate_max * params.bounds.yaw_rate_max;
  }

  // Quotient supremum over the admissible action box, dense grid then pattern
  // refinement, inflated by the safety factor.
  {
    double best = 0.0;
    double bT = params.hover_thrust(), broll = 0.0, bpitch = 0.0;
    const int n = 200;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n; ++j)
        for (int k = 0; k <= n; ++k) {
          const double T = params.bounds.thrust_min +
                           (params.bounds.thrust_max - params.bounds.thrust_min) * i / n;
          const double roll = -params.bounds.roll_max + 2.0 * params.bounds.roll_max * j / n;
          const double pitch = -params.bounds.pitch_max + 2.0 * params.bounds.pitch_max * k / n;
          const double q = detail::stop_step_quotient(T, roll, pitch, w, params, dt);
          if (q > best) {
            best = q;
            bT = T;
            broll = roll;
            bpitch = pitch;
          }
        }
    double stepT = (params.bounds.thrust_max - params.bounds.thrust_min) / n;
    double stepA = 2.0 * params.bounds.roll_max / n;
    while (stepT > 1e-9 || stepA > 1e-10) {
      bool improved = false;
      const double candT[2] = {bT - stepT, bT + stepT};
      for (double T : candT) {
        T = std::clamp(T, params.bounds.thrust_min, params.bounds.thrust_max);
        const double q = detail::stop_step_quotient(T, broll, bpitch, w, params, dt);
        if (q > best) {
          best = q;
          bT = T;
          improved = true;
        }
      }
      const double candR[2] = {broll - stepA, broll + stepA};
      for (double r : candR) {
        r = std::clamp(r, -params.bounds.roll_max, params.bounds.roll_max);
        const double q = detail::stop_step_quotient(bT, r, bpitch, w, params, dt);
        if (q > best) {
          best = q;
          broll = r;
          improved = true;
        }
      }
      const double candP[2] = {bpitch - stepA, bpitch + stepA};
      for (double pch : candP) {
        pch = std::clamp(pch, -params.bounds.pitch_max, params.bounds.pitch_max);
        const double q = detail::stop_step_quotient(bT, broll, pch, w, params, dt);
        if (q > best) {
          best = q;
          bpitch = pch;
          improved = true;
        }
      }
      if (!improved) {
        stepT *= 0.5;
        stepA *= 0.5;
      }
    }
    out.r_tilde = best * safety;
  }

  const double far_branch = out.stage_bound / (out.min_decel * out.min_decel * dt * dt);
  const double q_norm = std::max(w.q_heading, w.q_velocity.maxCoeff());
  const double near_branch = q_norm + out.r_tilde;
  out.p = std::max(far_branch, near_branch);
  if (out.p <= 0.0) out.p = std::numeric_limits<double>::min();
  return out;
}

}  // namespace sdfmpc
