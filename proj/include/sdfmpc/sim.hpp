#pragma once

// Closed-loop rollouts: the true plant integrates at a fast physics rate while
// the NMPC runs at the control rate on a drifted, noisy estimate re-expressed
// in the latest observation frame. Captures re-anchor that frame with one
// control period of latency. Failure is ground-truth penetration of an
// obstacle; every random draw comes from a named per-rollout stream so records
// are bit-identical per seed.

#include "sdfmpc/braking.hpp"
#include "sdfmpc/core.hpp"
#include "sdfmpc/dynamics.hpp"
#include "sdfmpc/field.hpp"
#include "sdfmpc/formats.hpp"
#include "sdfmpc/net.hpp"
#include "sdfmpc/nlp.hpp"
#include "sdfmpc/poisson.hpp"
#include "sdfmpc/render.hpp"
#include "sdfmpc/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sdfmpc {

// ---------------------------------------------------------------------------
// Reference generators.

struct ReferenceCommand {
  Vec3 v_ref = Vec3::Zero();
  double qw_ref = 1.0, qz_ref = 0.0;
};

// Obstacle-agnostic goal seeking: full speed along the straight line to the
// goal, linear taper to zero inside 1 m, heading aligned with the motion.
inline ReferenceCommand reference_policy(const Vec3& p, double current_yaw, const Vec3& goal,
                                         double v_ref_mag) {
  ReferenceCommand cmd;
  const Vec3 to_goal = goal - p;
  const double dist = to_goal.norm();
  double yaw = current_yaw;
  if (dist > 1e-9) {
    cmd.v_ref = (v_ref_mag * std::min(1.0, dist)) * (to_goal / dist);
    if (std::hypot(to_goal.x(), to_goal.y()) > 1e-9) yaw = std::atan2(to_goal.y(), to_goal.x());
  }
  cmd.qw_ref = std::cos(0.5 * yaw);
  cmd.qz_ref = std::sin(0.5 * yaw);
  return cmd;
}

// Scripted adversary: aims a fixed-magnitude velocity reference at the nearest
// obstacle centroid; falls back to the current heading in an empty scene.
inline ReferenceCommand adversarial_policy(const VehicleState& x, const SceneSpec& scene,
                                           double v_ref_mag, std::uint64_t /*seed*/) {
  ReferenceCommand cmd;
  double yaw = x.yaw();
  if (scene.primitives.empty()) {
    cmd.v_ref = v_ref_mag * Vec3(std::cos(yaw), std::sin(yaw), 0.0);
  } else {
    const Primitive* nearest = &scene.primitives[0];
    double best = (nearest->center - x.p).squaredNorm();
    for (const Primitive& prim : scene.primitives) {
      const double d2 = (prim.center - x.p).squaredNorm();
      if (d2 < best) {
        best = d2;
        nearest = &prim;
      }
    }
    const Vec3 dir = nearest->center - x.p;
    const double dist = dir.norm();
    if (dist > 1e-9) {
      cmd.v_ref = v_ref_mag * (dir / dist);
      if (std::hypot(dir.x(), dir.y()) > 1e-9) yaw = std::atan2(dir.y(), dir.x());
    }
  }
  cmd.qw_ref = std::cos(0.5 * yaw);
  cmd.qz_ref = std::sin(0.5 * yaw);
  return cmd;
}

// ---------------------------------------------------------------------------
// Odometry drift.

struct DriftParams {
  double vel_noise_std = 0.0;    // white noise on velocity / yaw-rate channels
  double random_walk_std = 0.0;  // bias increment per sqrt(s) on the same channels

  bool any() const { return vel_noise_std > 0.0 || random_walk_std > 0.0; }
};

// Velocity and yaw-rate channels carry white noise plus an integrated
// random-walk bias; position and heading are integrated from the corrupted
// channels; tilt passes through exactly. The error channels are integrated
// separately so zero parameters reproduce the truth bit-exactly.
class DriftModel {
 public:
  DriftModel(const DriftParams& params, std::uint64_t seed)
      : params_(params), rng_(rng_stream(seed, "drift")) {}

  void reset(const VehicleState& truth) {
    est_ = truth;
    e_p_.setZero();
    e_yaw_ = 0.0;
    bias_v_.setZero();
    bias_w_ = 0.0;
  }

  const VehicleState& estimate() const { return est_; }

  void step(const VehicleState& truth, double true_yaw_rate, double dt) {
    if (!params_.any()) {
      est_ = truth;
      return;
    }
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double walk = params_.random_walk_std * std::sqrt(dt);
    bias_v_ += walk * Vec3(gauss(rng_), gauss(rng_), gauss(rng_));
    bias_w_ += walk * gauss(rng_);
    const Vec3 white_v =
        params_.vel_noise_std * Vec3(gauss(rng_), gauss(rng_), gauss(rng_));
    const double white_w = params_.vel_noise_std * gauss(rng_);
    e_p_ += (bias_v_ + white_v) * dt;
    e_yaw_ += (bias_w_ + white_w) * dt;
    est_ = make_state(truth.p + e_p_, truth.yaw() + e_yaw_, truth.v + bias_v_ + white_v);
    (void)true_yaw_rate;  // heading error integrates the corrupted rate directly
  }

 private:
  DriftParams params_;
  std::mt19937_64 rng_;
  VehicleState est_;
  Vec3 e_p_ = Vec3::Zero();
  double e_yaw_ = 0.0;
  Vec3 bias_v_ = Vec3::Zero();
  double bias_w_ = 0.0;
};

// RMSE of relative position error per delta of traveled (true) distance, as a
// percentage of delta. Constant offsets cancel by construction.
inline double compute_rpe(const std::vector<Vec3>& est, const std::vector<Vec3>& truth,
                          double delta = 10.0) {
  if (est.size() != truth.size()) throw std::invalid_argument("compute_rpe: length mismatch");
  if (truth.size() < 2) throw std::invalid_argument("compute_rpe: trajectory too short");
  std::vector<double> arc(truth.size(), 0.0);
  for (size_t i = 1; i < truth.size(); ++i)
    arc[i] = arc[i - 1] + (truth[i] - truth[i - 1]).norm();
  if (arc.back() < delta)
    throw std::invalid_argument("compute_rpe: trajectory shorter than delta");
  double sq = 0.0;
  long n = 0;
  size_t j = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    while (j < truth.size() && arc[j] - arc[i] < delta) ++j;
    if (j == truth.size()) break;
    const Vec3 err = (est[j] - est[i]) - (truth[j] - truth[i]);
    sq += err.squaredNorm();
    ++n;
  }
  return 100.0 * std::sqrt(sq / static_cast<double>(n)) / delta;
}

// ---------------------------------------------------------------------------
// Scene generation.

struct PillarSceneParams {
  Vec3 area_lo = Vec3(2.0, -4.0, 0.0);
  Vec3 area_hi = Vec3(9.0, 4.0, 0.0);  // planar region of pillar centers
  double d_min = 1.2;                  // Poisson-disc spacing, m
  double radius_min = 0.12, radius_max = 0.30;
  double height = 6.0, center_z = 1.5;
  double clear_radius = 1.2;  // keep-out around start and goal, m
};

inline SceneSpec make_pillar_scene(const PillarSceneParams& params, const Vec3& start,
                                   const Vec3& goal, std::uint64_t seed) {
  SceneSpec scene;
  scene.bounds_min = params.area_lo - Vec3(2, 2, 0);
  scene.bounds_max = params.area_hi + Vec3(2, 2, params.height);
  const auto centers =
      poisson_disc_sample({params.area_lo, params.area_hi}, params.d_min, seed);
  auto rng = rng_stream(seed, "pillar-radius");
  std::uniform_real_distribution<double> radius(params.radius_min, params.radius_max);
  for (const Vec3& c : centers) {
    const double r = radius(rng);  // drawn before the keep-out test to keep streams aligned
    if (std::hypot(c.x() - start.x(), c.y() - start.y()) < params.clear_radius) continue;
    if (std::hypot(c.x() - goal.x(), c.y() - goal.y()) < params.clear_radius) continue;
    Primitive prim;
    prim.shape = Shape::kCylinder;
    prim.center = Vec3(c.x(), c.y(), params.center_z);
    prim.dims = Vec3(r, 0.0, params.height);
    scene.primitives.push_back(prim);
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Rollout configuration and record.

struct NoiseParams {
  double pos_std = 0.03;     // m, measurement noise on the estimated position
  double vel_std = 0.05;     // m/s, measurement noise on the estimated velocity
  double yaw_std = 0.03;     // rad, measurement noise on the estimated heading
  double obs_std = 0.01;     // m, range noise on rendered observations
  double wrench_std = 0.05;  // m/s^2, disturbance acceleration on the plant
};

struct RolloutConfig {
  SceneSpec scene;
  std::function<SceneSpec(std::uint64_t)> scene_gen;  // per-seed scene when set
  Vec3 start = Vec3(0, 0, 1.5);
  double start_yaw = 0.0;
  Vec3 goal = Vec3(10, 0, 1.5);
  double v_ref_mag = 1.5;     // m/s
  double timeout = 30.0;      // s
  double goal_radius = 0.5;   // m, success threshold on the true position
  double physics_dt = 0.005;  // s
  double control_dt = 0.075;  // s, equals the NLP node spacing
  double sensor_period = 0.225;  // s, must be a multiple of control_dt
  NoiseParams noise;
  DriftParams drift;
  bool neural_field = false;
  bool adversarial = false;
  bool use_rti = true;
  int image_width = 64, image_height = 48;
  // Invoked after every solver call with the raw solution, before the braking
  // fallback decision; runs on the rollout's worker thread.
  std::function<void(const NmpcSolver&, const NlpSolution&, const References&)> solve_observer;
};

struct SimAssets {
  VehicleParams params;
  FrustumSpec frustum;
  BrakingPolynomial poly;
  NlpConfig nlp;
  SensorMount mount;
  double t_sdf = 1.0;
  const Encoder* encoder = nullptr;   // neural mode only
  const SineMlp* field_net = nullptr;  // neural mode only
};

enum class Outcome { kSuccess, kFailure, kTimeout };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::kSuccess: return "success";
    case Outcome::kFailure: return "failure";
    case Outcome::kTimeout: return "timeout";
  }
  return "?";
}

struct TraceRow {
  double t = 0.0;
  VehicleState true_state;  // world frame
  VehicleState est_state;   // drifted odometry estimate, world frame
  ControlInput input;
  NlpStatus status = NlpStatus::kConverged;
  bool braking_fallback = false;
  double field_value = 0.0;  // controller's field at its own position
  double true_sdf = 0.0;
};

struct RolloutRecord {
  Outcome outcome = Outcome::kTimeout;
  double duration = 0.0;
  double avg_speed = 0.0;
  double p90_speed = 0.0;
  double min_field_value = 0.0;
  double min_true_sdf = 0.0;
  double rpe_percent = -1.0;  // -1 when the path is shorter than the RPE delta
  std::vector<TraceRow> trace;  // one row per control tick
};

// Constant extra acceleration superposes exactly on the velocity double
// integrator, so the disturbance is injected in closed form after the step.
inline VehicleState plant_step(const VehicleState& x, const ControlInput& u,
                               const VehicleParams& params, double dt,
                               const Vec3& accel_disturbance) {
  VehicleState next = rk4_step(x, u, params, dt);
  next.v += accel_disturbance * dt;
  next.p += (0.5 * dt * dt) * accel_disturbance;
  return next;
}

// ---------------------------------------------------------------------------
// Rollout.

namespace detail {

struct SimAnchor {
  std::unique_ptr<ConstraintField> field;
  ObservationFrame frame;
  Vec3 p_est = Vec3::Zero();  // estimated capture pose; the controller's origin
  double yaw_est = 0.0;
};

}  // namespace detail

inline RolloutRecord run_rollout(const RolloutConfig& cfg, const SimAssets& assets,
                                 std::uint64_t seed) {
  if (cfg.timeout <= 0.0) throw std::invalid_argument("run_rollout: timeout must be positive");
  if (cfg.control_dt < cfg.physics_dt)
    throw std::invalid_argument("run_rollout: control_dt below physics_dt");
  const long n_sub = std::lround(cfg.control_dt / cfg.physics_dt);
  if (std::abs(n_sub * cfg.physics_dt - cfg.control_dt) > 1e-9)
    throw std::invalid_argument("run_rollout: control_dt not a multiple of physics_dt");
  const long sensor_every = std::lround(cfg.sensor_period / cfg.control_dt);
  if (sensor_every < 1 || std::abs(sensor_every * cfg.control_dt - cfg.sensor_period) > 1e-9)
    throw std::invalid_argument("run_rollout: sensor_period not a multiple of control_dt");
  if (cfg.neural_field && (!assets.encoder || !assets.field_net))
    throw std::invalid_argument("run_rollout: neural mode needs encoder and field checkpoints");

  SceneSpec scene = cfg.scene_gen ? cfg.scene_gen(seed) : cfg.scene;
  if (scene_sdf(scene, cfg.start) <= assets.params.radius)
    throw std::invalid_argument("run_rollout: start position is not collision-free");

  auto wrench_rng = rng_stream(seed, "wrench");
  auto state_rng = rng_stream(seed, "state-noise");
  auto obs_rng = rng_stream(seed, "obs-noise");
  std::normal_distribution<double> gauss(0.0, 1.0);
  DriftModel drift(cfg.drift, seed);

  VehicleState x_true = make_state(cfg.start, cfg.start_yaw, Vec3::Zero());
  drift.reset(x_true);

  NmpcSolver solver(assets.nlp, assets.params, assets.poly, assets.frustum);

  const auto capture = [&](double roll0, double pitch0) {
    detail::SimAnchor anchor;
    const double yaw = x_true.yaw();
    const Mat3 r_b0 = rot_y(pitch0) * rot_x(roll0);
    Pose sensor_pose;
    sensor_pose.R = rot_z(yaw) * r_b0 * assets.mount.r_bs;
    sensor_pose.t = x_true.p + rot_z(yaw) * (r_b0 * assets.mount.p_bs);
    anchor.frame = ObservationFrame::from_tilt(roll0, pitch0, assets.mount);
    if (cfg.neural_field) {
      RenderOptions opt;
      opt.noise_std = cfg.noise.obs_std;
      const RangeImage img =
          render_range_image(scene, sensor_pose, assets.frustum, cfg.image_width,
                             cfg.image_height, opt, &obs_rng);
      anchor.field = std::make_unique<NeuralConstraintField>(
          assets.field_net, latent_code(*assets.encoder, img), assets.t_sdf);
    } else {
      anchor.field =
          std::make_unique<AnalyticSceneField>(scene, sensor_pose, assets.frustum, assets.t_sdf);
    }
    anchor.p_est = drift.estimate().p;
    anchor.yaw_est = drift.estimate().yaw();
    return anchor;
  };

  detail::SimAnchor active = capture(0.0, 0.0);  // pre-takeoff observation, active at once
  std::optional<detail::SimAnchor> pending;
  long pending_tick = -1;

  RolloutRecord rec;
  std::vector<double> speeds;
  std::vector<Vec3> est_path, true_path;
  rec.min_true_sdf = scene_sdf(scene, x_true.p);
  rec.min_field_value = std::numeric_limits<double>::infinity();
  speeds.push_back(x_true.v.norm());

  NlpSolution last_sol;
  bool have_sol = false;
  ControlInput u_prev = acceleration_input(Vec3::Zero(), assets.params);  // hover, zero tilt
  double t = 0.0;
  bool done = false;
  const long max_ticks = static_cast<long>(std::ceil(cfg.timeout / cfg.control_dt)) + 2;

  for (long k = 0; k < max_ticks && !done; ++k) {
    if (k > 0 && k % sensor_every == 0) {
      pending = capture(u_prev.roll, u_prev.pitch);  // tilt held over the previous period
      pending_tick = k + 1;
    }
    if (pending && k >= pending_tick) {
      if (have_sol) {
        const Mat3 r_old_t = rot_z(active.yaw_est).transpose();
        transform_solution(last_sol, r_old_t * (pending->p_est - active.p_est),
                           pending->yaw_est - active.yaw_est);
      }
      active = std::move(*pending);
      pending.reset();
    }

    // Estimated state in the anchor frame, plus per-tick measurement noise.
    const VehicleState est = drift.estimate();
    const Vec3 p_meas =
        est.p + cfg.noise.pos_std * Vec3(gauss(state_rng), gauss(state_rng), gauss(state_rng));
    const Vec3 v_meas =
        est.v + cfg.noise.vel_std * Vec3(gauss(state_rng), gauss(state_rng), gauss(state_rng));
    const double yaw_meas = est.yaw() + cfg.noise.yaw_std * gauss(state_rng);
    const Mat3 r_anchor_t = rot_z(active.yaw_est).transpose();
    const VehicleState x0 = make_state(r_anchor_t * (p_meas - active.p_est),
                                       yaw_meas - active.yaw_est, r_anchor_t * v_meas);

    References refs;
    if (cfg.adversarial) {
      const ReferenceCommand cmd = adversarial_policy(x_true, scene, cfg.v_ref_mag, seed);
      const double yaw_ref_world = 2.0 * std::atan2(cmd.qz_ref, cmd.qw_ref);
      refs.v_ref = r_anchor_t * cmd.v_ref;
      refs.qw_ref = std::cos(0.5 * (yaw_ref_world - active.yaw_est));
      refs.qz_ref = std::sin(0.5 * (yaw_ref_world - active.yaw_est));
    } else {
      const Vec3 goal_anchor = r_anchor_t * (cfg.goal - active.p_est);
      const ReferenceCommand cmd =
          reference_policy(x0.p, x0.yaw(), goal_anchor, cfg.v_ref_mag);
      refs.v_ref = cmd.v_ref;
      refs.qw_ref = cmd.qw_ref;
      refs.qz_ref = cmd.qz_ref;
    }

    if (!have_sol || !cfg.use_rti)
      last_sol = solver.solve(x0, *active.field, active.frame, refs);
    else
      last_sol = solver.rti_step(last_sol, x0, *active.field, active.frame, refs);
    have_sol = true;
    if (cfg.solve_observer) cfg.solve_observer(solver, last_sol, refs);

    ControlInput u = last_sol.inputs[0];
    const bool fallback = last_sol.status == NlpStatus::kInfeasibleQp;
    if (fallback) {
      const Vec3 v_vehicle = rot_z(x0.yaw()).transpose() * x0.v;
      u = braking_policy(v_vehicle, assets.params, cfg.control_dt);
    }

    TraceRow row;
    row.t = t;
    row.true_state = x_true;
    row.est_state = est;
    row.input = u;
    row.status = last_sol.status;
    row.braking_fallback = fallback;
    row.field_value = active.field->eval(active.frame.to_observation(x0.p)).value;
    row.true_sdf = scene_sdf(scene, x_true.p);
    rec.trace.push_back(row);
    rec.min_field_value = std::min(rec.min_field_value, row.field_value);
    est_path.push_back(est.p);
    true_path.push_back(x_true.p);

    for (long i = 0; i < n_sub; ++i) {
      const Vec3 disturbance =
          cfg.noise.wrench_std * Vec3(gauss(wrench_rng), gauss(wrench_rng), gauss(wrench_rng));
      x_true = plant_step(x_true, u, assets.params, cfg.physics_dt, disturbance);
      drift.step(x_true, u.yaw_rate, cfg.physics_dt);
      t += cfg.physics_dt;
      speeds.push_back(x_true.v.norm());
      const double sdf = scene_sdf(scene, x_true.p);
      rec.min_true_sdf = std::min(rec.min_true_sdf, sdf);
      if (sdf < 0.0) {
        rec.outcome = Outcome::kFailure;
        done = true;
        break;
      }
      if ((x_true.p - cfg.goal).norm() <= cfg.goal_radius) {
        rec.outcome = Outcome::kSuccess;
        done = true;
        break;
      }
      if (t >= cfg.timeout - 1e-9) {
        rec.outcome = Outcome::kTimeout;
        done = true;
        break;
      }
    }
    u_prev = u;
  }

  rec.duration = t;
  est_path.push_back(drift.estimate().p);
  true_path.push_back(x_true.p);
  double sum = 0.0;
  for (double s : speeds) sum += s;
  rec.avg_speed = sum / static_cast<double>(speeds.size());
  std::vector<double> sorted = speeds;
  const size_t q = static_cast<size_t>(0.9 * (sorted.size() - 1));
  std::nth_element(sorted.begin(), sorted.begin() + q, sorted.end());
  rec.p90_speed = sorted[q];

  double arc = 0.0;
  for (size_t i = 1; i < true_path.size(); ++i) arc += (true_path[i] - true_path[i - 1]).norm();
  if (arc >= 10.0) rec.rpe_percent = compute_rpe(est_path, true_path, 10.0);
  return rec;
}

// ---------------------------------------------------------------------------
// Suites.

struct SuiteOverride {
  std::string label;
  std::function<void(RolloutConfig&)> apply;
};

struct SuiteRow {
  std::string label;
  int seeds = 0;
  double success_rate = 0.0, failure_rate = 0.0, timeout_rate = 0.0;
  double mean_avg_speed = 0.0, mean_p90_speed = 0.0;
  double mean_min_field = 0.0, mean_min_true_sdf = 0.0;
  double mean_rpe = 0.0;  // over rollouts long enough to measure
};

struct SuiteResult {
  std::vector<SuiteRow> rows;
  std::vector<std::vector<RolloutRecord>> records;  // [row][seed]
};

inline std::uint64_t rollout_seed(std::uint64_t base_seed, int index) {
  return splitmix64(stream_seed(base_seed, "rollout") + static_cast<std::uint64_t>(index));
}

inline SuiteRow aggregate_row(const std::string& label,
                              const std::vector<RolloutRecord>& records) {
  SuiteRow row;
  row.label = label;
  row.seeds = static_cast<int>(records.size());
  int n_rpe = 0;
  for (const RolloutRecord& r : records) {
    switch (r.outcome) {
      case Outcome::kSuccess: row.success_rate += 1; break;
      case Outcome::kFailure: row.failure_rate += 1; break;
      case Outcome::kTimeout: row.timeout_rate += 1; break;
    }
    row.mean_avg_speed += r.avg_speed;
    row.mean_p90_speed += r.p90_speed;
    row.mean_min_field += r.min_field_value;
    row.mean_min_true_sdf += r.min_true_sdf;
    if (r.rpe_percent >= 0.0) {
      row.mean_rpe += r.rpe_percent;
      ++n_rpe;
    }
  }
  const double n = static_cast<double>(records.size());
  row.success_rate /= n;
  row.failure_rate /= n;
  row.timeout_rate /= n;
  row.mean_avg_speed /= n;
  row.mean_p90_speed /= n;
  row.mean_min_field /= n;
  row.mean_min_true_sdf /= n;
  if (n_rpe > 0) row.mean_rpe /= n_rpe;
  return row;
}

// One row per override set (plus the baseline when overrides is empty is the
// caller's choice: pass an identity override). Seeds are shared across rows so
// row-to-row comparisons are paired.
inline SuiteResult run_suite(const RolloutConfig& base, const SimAssets& assets,
                             std::uint64_t base_seed, int n_seeds,
                             const std::vector<SuiteOverride>& overrides, int jobs = 1) {
  if (n_seeds < 1) throw std::invalid_argument("run_suite: need at least one seed");
  SuiteResult result;
  for (const SuiteOverride& ov : overrides) {
    RolloutConfig cfg = base;
    if (ov.apply) ov.apply(cfg);
    std::vector<RolloutRecord> records(static_cast<size_t>(n_seeds));
    std::vector<std::exception_ptr> errors(static_cast<size_t>(n_seeds));
    const int workers = std::max(1, std::min(jobs, n_seeds));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w]() {
        for (int k = w; k < n_seeds; k += workers) {
          try {
            records[k] = run_rollout(cfg, assets, rollout_seed(base_seed, k));
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
    for (std::thread& th : pool) th.join();
    for (const auto& err : errors)
      if (err) std::rethrow_exception(err);
    result.rows.push_back(aggregate_row(ov.label, records));
    result.records.push_back(std::move(records));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Artifacts.

inline void save_metrics_csv(const SuiteResult& result, const std::string& path) {
  CsvTable table;
  table.header = {"label",          "seeds",         "success_rate",     "failure_rate",
                  "timeout_rate",   "mean_avg_speed", "mean_p90_speed",  "mean_min_field",
                  "mean_min_true_sdf", "mean_rpe"};
  for (const SuiteRow& row : result.rows)
    table.rows.push_back({row.label, std::to_string(row.seeds), format_double(row.success_rate),
                          format_double(row.failure_rate), format_double(row.timeout_rate),
                          format_double(row.mean_avg_speed), format_double(row.mean_p90_speed),
                          format_double(row.mean_min_field),
                          format_double(row.mean_min_true_sdf), format_double(row.mean_rpe)});
  save_csv(table, path);
}

inline void save_trace_jsonl(const RolloutRecord& rec, const std::string& path) {
  std::vector<nlohmann::json> rows;
  rows.reserve(rec.trace.size());
  for (const TraceRow& r : rec.trace) {
    nlohmann::json j;
    j["t"] = r.t;
    j["p"] = {r.true_state.p.x(), r.true_state.p.y(), r.true_state.p.z()};
    j["yaw"] = r.true_state.yaw();
    j["v"] = {r.true_state.v.x(), r.true_state.v.y(), r.true_state.v.z()};
    j["est_p"] = {r.est_state.p.x(), r.est_state.p.y(), r.est_state.p.z()};
    j["est_yaw"] = r.est_state.yaw();
    j["est_v"] = {r.est_state.v.x(), r.est_state.v.y(), r.est_state.v.z()};
    j["u"] = {r.input.thrust, r.input.roll, r.input.pitch, r.input.yaw_rate};
    j["status"] = to_string(r.status);
    j["braking_fallback"] = r.braking_fallback;
    j["field_value"] = r.field_value;
    j["true_sdf"] = r.true_sdf;
    rows.push_back(std::move(j));
  }
  save_jsonl(rows, path);
}

}  // namespace sdfmpc
