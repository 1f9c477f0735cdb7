// Acceptance gate. Each invocation runs one numbered criterion and prints a
// single pass/fail verdict line on stdout; diagnostics go to stderr. Criteria
// 6-8 additionally record the worst per-solve cost-audit gap in a shared state
// directory, which criterion 10 reads back.
//
// Usage: acceptance <criterion 1..10>

#include "sdfmpc/braking.hpp"
#include "sdfmpc/checkpoint.hpp"
#include "sdfmpc/core.hpp"
#include "sdfmpc/field.hpp"
#include "sdfmpc/formats.hpp"
#include "sdfmpc/net.hpp"
#include "sdfmpc/nlp.hpp"
#include "sdfmpc/oracle.hpp"
#include "sdfmpc/render.hpp"
#include "sdfmpc/scene.hpp"
#include "sdfmpc/sim.hpp"
#include "sdfmpc/train.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace sdfmpc;

namespace {

int g_failures = 0;

bool check_impl(bool ok, const char* file, int line, const std::string& msg) {
  if (!ok) {
    ++g_failures;
    std::fprintf(stderr, "[FAIL] %s:%d %s\n", file, line, msg.c_str());
  }
  return ok;
}

#define ACHECK(cond, msg)                                    \
  do {                                                       \
    std::ostringstream oss_;                                 \
    oss_ << msg;                                             \
    check_impl((cond), __FILE__, __LINE__, oss_.str());      \
  } while (0)

fs::path state_dir() {
  const fs::path dir = [] {
    if (const char* p = std::getenv("SDFMPC_ACCEPT_STATE_DIR")) return fs::path(p);
    return fs::path(SDFMPC_ACCEPT_STATE_DIR);
  }();
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// Shared pieces.

// Drift parameter cells calibrated so the measured relative position error
// lands near 5% and 10% of distance traveled (checked inside criterion 8).
constexpr double kDrift5Walk = 0.035;
constexpr double kDrift10Walk = 0.075;

BrakingPolynomial default_poly() {
  return fit_braking_polynomial(VehicleParams{}, 6, 6, 3.0, 0.05).chosen;
}

// Independent re-evaluation of a reported solution's cost: horizon cost of the
// published trajectory plus the slack penalties at the published slack values.
double cost_audit_gap(const NmpcSolver& solver, const NlpConfig& cfg, const NlpSolution& sol,
                      const References& refs) {
  double j = solver.trajectory_cost(sol.states, sol.inputs, refs);
  for (int i = 0; i < sol.sdf_slack.size(); ++i)
    j += cfg.sdf_l1 * sol.sdf_slack[i] + cfg.sdf_l2 * sol.sdf_slack[i] * sol.sdf_slack[i];
  j += cfg.fov_l1 * (sol.fov_az_slack.sum() + sol.fov_el_slack.sum());
  j += cfg.sdf_l1 * sol.terminal_slack.sum() + cfg.sdf_l2 * sol.terminal_slack.squaredNorm();
  return std::abs(j - sol.cost);
}

struct Auditor {
  NlpConfig cfg;
  double max_gap = 0.0;
  long solves = 0;

  void observe(const NmpcSolver& solver, const NlpSolution& sol, const References& refs) {
    max_gap = std::max(max_gap, cost_audit_gap(solver, cfg, sol, refs));
    ++solves;
  }
  void save(const std::string& name) const {
    CsvTable t;
    t.header = {"max_gap", "solves"};
    t.rows.push_back({format_double(max_gap), std::to_string(solves)});
    save_csv(t, (state_dir() / name).string());
    std::fprintf(stderr, "audit: %ld solves, max gap %.3e\n", solves, max_gap);
  }
};

// Pillar suite shared by criteria 6-8: per-seed procedural scene, defaults
// everywhere else (1.2 m spacing, 1.5 m/s reference, stock solver weights).
RolloutConfig pillar_config() {
  RolloutConfig cfg;
  const Vec3 start = cfg.start, goal = cfg.goal;
  cfg.scene_gen = [start, goal](std::uint64_t seed) {
    return make_pillar_scene(PillarSceneParams{}, start, goal, seed);
  };
  return cfg;
}

int count_outcomes(const std::vector<RolloutRecord>& records, Outcome o) {
  int n = 0;
  for (const RolloutRecord& r : records)
    if (r.outcome == o) ++n;
  return n;
}

Vec3 from_spherical(double az, double el, double r) {
  return r * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

// Rendered toy corpus for the learning criteria: procedural pillar scenes
// observed from poses near the start keep-out, byte-deterministic per seed.
std::vector<RangeImage> render_corpus(int scenes, int poses, std::uint64_t seed, int width,
                                      int height) {
  std::vector<RangeImage> images;
  const Vec3 start(0, 0, 1.5), goal(11, 0, 1.5);
  for (int s = 0; s < scenes; ++s) {
    const std::uint64_t scene_seed = splitmix64(stream_seed(seed, "corpus") + s);
    const SceneSpec scene = make_pillar_scene(PillarSceneParams{}, start, goal, scene_seed);
    auto rng = rng_stream(scene_seed, "corpus-pose");
    std::uniform_real_distribution<double> uxy(-0.5, 0.5), uz(1.2, 1.8), uyaw(-0.4, 0.4);
    RenderOptions opt;
    opt.noise_std = 0.01;
    for (int k = 0; k < poses; ++k) {
      Pose pose;
      pose.t = Vec3(uxy(rng), uxy(rng), uz(rng)) + Vec3(0, 0, 0);
      pose.t.z() = std::clamp(pose.t.z(), 1.2, 1.8);
      pose.R = rot_z(uyaw(rng));
      images.push_back(render_range_image(scene, pose, FrustumSpec{}, width, height, opt, &rng));
    }
  }
  return images;
}

// ---------------------------------------------------------------------------
// 1. Braking-polynomial table: coefficient counts and the RMSE trend.

void criterion_1() {
  const BrakingFitReport report = fit_braking_polynomial(VehicleParams{}, 6, 7, 3.0, 0.05);
  const std::vector<int> want_counts = {20, 35, 56, 84, 120};
  double prev_rmse = std::numeric_limits<double>::infinity();
  double rmse6 = -1.0;
  for (int degree = 3; degree <= 7; ++degree) {
    int idx = -1;
    for (size_t i = 0; i < report.degrees.size(); ++i)
      if (report.degrees[i] == degree) idx = static_cast<int>(i);
    ACHECK(idx >= 0, "degree " << degree << " missing from the fit report");
    if (idx < 0) continue;
    ACHECK(report.coefficients[idx] == want_counts[degree - 3],
           "degree " << degree << ": " << report.coefficients[idx] << " coefficients, expected "
                     << want_counts[degree - 3]);
    ACHECK(report.rmse[idx] <= prev_rmse + 1e-12,
           "rmse increased at degree " << degree << ": " << report.rmse[idx] << " after "
                                       << prev_rmse);
    prev_rmse = report.rmse[idx];
    if (degree == 6) rmse6 = report.rmse[idx];
    std::fprintf(stderr, "degree %d: %d coeffs, rmse %.4f m\n", degree,
                 report.coefficients[idx], report.rmse[idx]);
  }
  ACHECK(rmse6 >= 0.0 && rmse6 <= 0.10, "degree-6 rmse " << rmse6 << " m exceeds 0.10 m");
}

// ---------------------------------------------------------------------------
// 2. Eikonal property of the pixel-space distance oracle: finite-difference
// gradient norm within [0.8, 1.2] for 95% of 10,000 in-band points per scene.

void criterion_2() {
  const FrustumSpec frustum;
  const Vec3 start(0, 0, 1.5), goal(11, 0, 1.5);
  for (int s = 0; s < 10; ++s) {
    const std::uint64_t seed = splitmix64(stream_seed(90210, "eikonal") + s);
    const SceneSpec scene = make_pillar_scene(PillarSceneParams{}, start, goal, seed);
    auto rng = rng_stream(seed, "eikonal-pose");
    std::uniform_real_distribution<double> uxy(-0.4, 0.4), uz(1.3, 1.7), uyaw(-0.3, 0.3);
    Pose pose;
    pose.t = Vec3(uxy(rng), uxy(rng), uz(rng));
    pose.R = rot_z(uyaw(rng));
    RenderOptions opt;
    opt.noise_std = 0.0;
    const RangeImage img = render_range_image(scene, pose, frustum, 128, 96, opt, &rng);
    const DistanceOracle oracle(img, 1.0);

    std::uniform_real_distribution<double> uaz(-0.82 * frustum.alpha_h, 0.82 * frustum.alpha_h);
    std::uniform_real_distribution<double> uel(-0.82 * frustum.alpha_v, 0.82 * frustum.alpha_v);
    std::uniform_real_distribution<double> urho(0.25, 0.9 * frustum.d_max);
    const double h = 0.02;
    const int want = 10000;
    int accepted = 0, ok = 0;
    long draws = 0;
    while (accepted < want && draws < 400000) {
      ++draws;
      const Vec3 p = from_spherical(uaz(rng), uel(rng), urho(rng));
      if (std::abs(oracle.value_only(p)) > 0.75) continue;  // off the truncation clamp
      ++accepted;
      Vec3 g;
      for (int a = 0; a < 3; ++a) {
        Vec3 dp = Vec3::Zero();
        dp[a] = h;
        g[a] = (oracle.value_only(p + dp) - oracle.value_only(p - dp)) / (2 * h);
      }
      const double n = g.norm();
      if (n > 0.8 && n < 1.2) ++ok;
    }
    ACHECK(accepted == want,
           "scene " << s << ": only " << accepted << " in-band points after " << draws
                    << " draws");
    ACHECK(ok >= 95 * want / 100,
           "scene " << s << ": " << ok << "/" << want << " gradient norms inside [0.8, 1.2]");
    std::fprintf(stderr, "scene %d: %d/%d in-band gradients ok\n", s, ok, accepted);
  }
}

// ---------------------------------------------------------------------------
// 3. Network gradient fidelity: analytic spatial gradient against central
// differences, and training-loss parameter gradients against perturbation.

void criterion_3() {
  {
    const SineMlp net = SineMlp::make(EmbeddingSpec{}, 8, {32, 32, 24, 16}, 2024);
    auto rng = rng_stream(303, "spatial");
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      VecX z(8);
      for (int i = 0; i < 8; ++i) z[i] = 0.5 * gauss(rng);
      const Vec3 p(2 * gauss(rng), 2 * gauss(rng), 2 * gauss(rng));
      Vec3 grad;
      sdf_eval(net, z, p, &grad);
      for (int d = 0; d < 3; ++d) {
        Vec3 dp = Vec3::Zero();
        dp[d] = h;
        const double fd = (sdf_eval(net, z, p + dp) - sdf_eval(net, z, p - dp)) / (2 * h);
        worst = std::max(worst, std::abs(grad[d] - fd));
      }
    }
    ACHECK(worst < 1e-5, "spatial gradient: max component error " << worst);
    std::fprintf(stderr, "spatial gradient max component error %.3e\n", worst);
  }

  {
    SineMlp net = SineMlp::make(EmbeddingSpec{1}, 4, {8, 8, 8, 8}, 7);
    auto rng = rng_stream(303, "params");
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int m = 6;
    MatX pts(3, m);
    VecX z(4);
    Eigen::RowVectorXd tv(m);
    MatX tg(3, m);
    for (int i = 0; i < pts.size(); ++i) pts.data()[i] = 1.5 * gauss(rng);
    for (int i = 0; i < 4; ++i) z[i] = 0.5 * gauss(rng);
    for (int i = 0; i < m; ++i) tv[i] = 0.5 * gauss(rng);
    for (int i = 0; i < tg.size(); ++i) tg.data()[i] = gauss(rng);
    const double lv = 1.0, lg = 0.5;

    const auto loss = [&](const SineMlp& n) {
      MlpTrace tr;
      mlp_forward(n, pts, z, tr);
      return lv * (tr.value - tv).squaredNorm() / m + lg * (tr.grad - tg).squaredNorm() / m;
    };

    MlpTrace tr;
    mlp_forward(net, pts, z, tr);
    MlpGrads g;
    g.init_zero(net);
    mlp_backward(net, tr, (2.0 * lv / m) * (tr.value - tv), (2.0 * lg / m) * (tr.grad - tg), g);
    const std::vector<const LayerGrad*> grads = {&g.l1, &g.l2, &g.l3, &g.l4, &g.head};
    const std::vector<DenseLayer*> layers = net.layers();

    double worst_rel = 0.0;
    const double h = 1e-6;
    for (size_t li = 0; li < layers.size(); ++li) {
      DenseLayer& l = *layers[li];
      for (int wi = 0; wi < l.w.size() + l.b.size(); ++wi) {
        double* slot = wi < l.w.size() ? l.w.data() + wi : l.b.data() + (wi - l.w.size());
        const double analytic = wi < static_cast<int>(grads[li]->w.size())
                                    ? grads[li]->w.data()[wi]
                                    : grads[li]->b.data()[wi - grads[li]->w.size()];
        const double saved = *slot;
        *slot = saved + h;
        const double up = loss(net);
        *slot = saved - h;
        const double dn = loss(net);
        *slot = saved;
        const double fd = (up - dn) / (2 * h);
        worst_rel = std::max(worst_rel, std::abs(analytic - fd) / std::max(std::abs(fd), 1e-4));
      }
    }
    ACHECK(worst_rel < 1e-4, "parameter gradients: max relative error " << worst_rel);
    std::fprintf(stderr, "parameter gradient max relative error %.3e\n", worst_rel);
  }
}

// ---------------------------------------------------------------------------
// 4. Recursive feasibility: from a terminal state feasible with the true
// stopping distance, one braking step keeps every constraint satisfied with
// zero slack under the solver's own (surrogate + guard) margins.

void criterion_4() {
  const VehicleParams params;
  const NlpConfig cfg;
  const FrustumSpec frustum;
  const BrakingPolynomial poly = default_poly();
  const NmpcSolver solver(cfg, params, poly, frustum);
  const double pad = solver.discrete_pad();
  const double dt = cfg.dt();
  const double margin = params.radius + cfg.epsilon;

  const SceneSpec scene =
      make_pillar_scene(PillarSceneParams{}, Vec3(0, 0, 1.5), Vec3(11, 0, 1.5), 41);
  const AnalyticSceneField field(scene, Pose{}, frustum, 1.0);
  const ObservationFrame frame;

  const double tan_h = std::tan(frustum.alpha_h), tan_v = std::tan(frustum.alpha_v);
  const auto in_fconv = [&](const Vec3& q) {
    return q.x() > 1e-6 && std::abs(q.y()) <= q.x() * tan_h - 1e-6 &&
           std::abs(q.z()) <= q.x() * tan_v - 1e-6 && q.norm() <= frustum.d_max - 1e-6;
  };

  auto rng = rng_stream(404, "terminal-states");
  std::uniform_real_distribution<double> ux(0.8, 4.2), u01(0.0, 1.0), uyaw(-M_PI, M_PI);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double fit_guard = poly.max_underestimate + poly.max_overestimate;
  int tested = 0;
  long draws = 0;
  while (tested < 200) {
    ACHECK(++draws < 2000000, "start-set sampling starved after " << draws << " draws");
    if (draws >= 2000000) return;

    const double x = ux(rng);
    const Vec3 p(x, (2 * u01(rng) - 1) * 0.85 * x * tan_h,
                 (2 * u01(rng) - 1) * 0.85 * x * tan_v);
    if (p.norm() > 0.9 * frustum.d_max) continue;
    Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    v *= u01(rng) * 2.2 / std::max(v.norm(), 1e-12);
    const double yaw = uyaw(rng);
    const VehicleState x_n = make_state(p, yaw, v);

    const Vec3 v_vehicle = rot_z(yaw).transpose() * v;
    const double d_true = braking_distance(v_vehicle, params);
    const double reach = d_true + pad + fit_guard + 0.01;

    // Strong start set: true-stopping-distance terminal margin plus the
    // surrogate guards, and the whole standstill segment inside a convex
    // inner frustum so the shifted segment stays observable.
    if (field.eval(frame.to_observation(p)).value < margin + reach) continue;
    if (!in_fconv(p)) continue;
    const double speed = v.norm();
    if (speed > 1e-9 && !in_fconv(p + reach * (v / speed))) continue;
    ++tested;

    // The sampled state is feasible for the terminal set with the true d_b.
    ACHECK(field.eval(frame.to_observation(p)).value - d_true - margin >= 0.0,
           "start state violates the true-d_b terminal margin");
    const FovResiduals start_fov = fov_constraints(x_n, frame, frustum);
    ACHECK(start_fov.azimuth >= 0.0 && start_fov.elevation >= 0.0,
           "start state outside the field of view");

    // One step of the braking policy; constant-acceleration dynamics make the
    // integrator step exact.
    const ControlInput u = braking_policy(v_vehicle, params, dt);
    const VehicleBounds& b = params.bounds;
    ACHECK(u.thrust >= b.thrust_min - 1e-9 && u.thrust <= b.thrust_max + 1e-9,
           "braking thrust " << u.thrust << " outside bounds");
    ACHECK(std::abs(u.roll) <= b.roll_max + 1e-9 && std::abs(u.pitch) <= b.pitch_max + 1e-9,
           "braking tilt outside bounds");
    ACHECK(std::abs(u.yaw_rate) <= 1e-12, "braking policy commanded yaw motion");

    const VehicleState x_next = rk4_step(x_n, u, params, dt);
    ACHECK(x_next.v.cwiseAbs().maxCoeff() <= b.vel_max + 1e-9,
           "braked velocity " << x_next.v.transpose() << " leaves the box");
    ACHECK(collision_constraint(field, x_next, frame, params.radius, cfg.epsilon) >= -1e-9,
           "braked state violates the path distance margin");
    const FovResiduals node_fov = fov_constraints(x_next, frame, frustum);
    ACHECK(node_fov.azimuth >= -1e-9 && node_fov.elevation >= -1e-9,
           "braked state leaves the field of view");

    const TerminalResiduals tr =
        terminal_constraints(x_next, field, poly, frame, frustum, margin, pad);
    ACHECK(tr.sdf >= -1e-9, "braked terminal distance margin " << tr.sdf);
    ACHECK(tr.terminal_fov.azimuth >= -1e-9 && tr.terminal_fov.elevation >= -1e-9,
           "braked terminal sensor point leaves the field of view");
    ACHECK(tr.standstill_fov.azimuth >= -1e-9 && tr.standstill_fov.elevation >= -1e-9,
           "braked standstill point leaves the field of view");
    if (g_failures) return;  // one counterexample is conclusive
  }
  std::fprintf(stderr, "200 feasible terminal states verified (%ld draws)\n", draws);
}

// ---------------------------------------------------------------------------
// 5. Lyapunov decrease of the terminal certificate along the braking policy.

void criterion_5() {
  const VehicleParams params;
  const NlpConfig cfg;
  const NmpcSolver solver(cfg, params, default_poly(), FrustumSpec{});
  const StageWeights weights = cfg.stage_weights();
  const double p_coef = solver.terminal_p();
  const double dt = cfg.dt();
  const double v_bar = std::sqrt(3.0) * params.bounds.vel_max;

  auto rng = rng_stream(505, "lyapunov");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0), uyaw(-M_PI, M_PI);

  double worst = -std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 1000; ++trial) {
    Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    // A fifth of the draws concentrate near standstill to exercise the
    // exact-stop branch of the policy.
    const double speed_cap = (trial % 5 == 0) ? 0.5 : v_bar;
    v *= u01(rng) * speed_cap / std::max(v.norm(), 1e-12);
    const double yaw = uyaw(rng);
    const VehicleState x = make_state(Vec3::Zero(), yaw, v);
    const Vec3 v_vehicle = rot_z(yaw).transpose() * v;

    References refs;
    const BrakingSolution sol = braking_accel(v_vehicle, params);
    if (v.norm() <= sol.decel * dt) {
      // Reference governor: at the stopping step both the velocity and the
      // heading references collapse onto the state.
      refs.qw_ref = x.qw;
      refs.qz_ref = x.qz;
    } else {
      Vec3 vr(gauss(rng), gauss(rng), gauss(rng));
      vr *= u01(rng) * params.bounds.vel_max / std::max(vr.norm(), 1e-12);
      refs.v_ref = vr;
      const double ref_yaw = uyaw(rng);
      refs.qw_ref = std::cos(0.5 * ref_yaw);
      refs.qz_ref = std::sin(0.5 * ref_yaw);
    }

    const ControlInput u = braking_policy(v_vehicle, params, dt);
    const VehicleState x_next = rk4_step(x, u, params, dt);
    const double ell = stage_cost(x, u, weights, params, refs.v_ref, refs.qw_ref, refs.qz_ref);
    const double decrease =
        p_coef * (x_next.v.squaredNorm() - x.v.squaredNorm());
    worst = std::max(worst, decrease + ell);
    ACHECK(decrease <= -ell + 1e-9,
           "Lyapunov increase at speed " << v.norm() << ": dV " << decrease << " vs stage "
                                         << ell);
    if (g_failures) return;
  }
  std::fprintf(stderr, "1000 states, worst dV + stage = %.3e (<= 1e-9)\n", worst);
}

// ---------------------------------------------------------------------------
// 6. Closed-loop safety on the analytic field: 50-seed pillar suite.

void criterion_6() {
  SimAssets assets;
  assets.poly = default_poly();
  auto auditor = std::make_shared<Auditor>();
  auditor->cfg = assets.nlp;

  RolloutConfig cfg = pillar_config();
  cfg.solve_observer = [auditor](const NmpcSolver& s, const NlpSolution& sol,
                                 const References& r) { auditor->observe(s, sol, r); };

  const SuiteResult result = run_suite(cfg, assets, 601, 50, {{"baseline", nullptr}}, 1);
  auditor->save("audit_c6.csv");
  const SuiteRow& row = result.rows[0];
  std::fprintf(stderr, "success %.2f failure %.2f timeout %.2f, mean speed %.2f m/s\n",
               row.success_rate, row.failure_rate, row.timeout_rate, row.mean_avg_speed);
  ACHECK(row.failure_rate == 0.0,
         "collisions in the analytic-field suite: failure rate " << row.failure_rate);
  ACHECK(row.success_rate >= 0.95, "success rate " << row.success_rate << " below 0.95");
}

// ---------------------------------------------------------------------------
// 7. Closed-loop sanity on the learned field, including its training.

void criterion_7() {
  const std::vector<RangeImage> corpus = render_corpus(12, 4, 777, 64, 48);

  EncoderTrainConfig ecfg;
  ecfg.epochs = 12;
  ecfg.batch_size = 8;
  ecfg.latent_dim = 16;
  ecfg.widths = {128, 64};
  ecfg.seed = 1;
  const TrainedVae vae = train_encoder(corpus, ecfg);

  SdfTrainConfig scfg;
  scfg.epochs = 25;
  scfg.points_per_image = 256;
  scfg.seed = 1;
  scfg.jobs = 1;
  const SineMlp net = train_sdf(vae.encoder, corpus,
                                SineMlp::make(EmbeddingSpec{}, ecfg.latent_dim,
                                              {96, 96, 64, 48}, 1),
                                scfg);
  {
    const VecX z = latent_code(vae.encoder, corpus[0]);
    const SdfEvalReport rep = evaluate_sdf(net, z, corpus[0], 0.25, 1.0, 1);
    std::fprintf(stderr, "field check: value rmse %.3f m, grad err %.1f deg\n", rep.value_rmse,
                 rep.grad_dir_err_deg);
  }

  SimAssets assets;
  assets.poly = default_poly();
  assets.encoder = &vae.encoder;
  assets.field_net = &net;
  auto auditor = std::make_shared<Auditor>();
  auditor->cfg = assets.nlp;

  RolloutConfig cfg = pillar_config();
  cfg.neural_field = true;
  cfg.solve_observer = [auditor](const NmpcSolver& s, const NlpSolution& sol,
                                 const References& r) { auditor->observe(s, sol, r); };

  const SuiteResult result = run_suite(cfg, assets, 601, 50, {{"neural", nullptr}}, 1);
  auditor->save("audit_c7.csv");
  const SuiteRow& row = result.rows[0];
  std::fprintf(stderr, "success %.2f failure %.2f timeout %.2f\n", row.success_rate,
               row.failure_rate, row.timeout_rate);
  ACHECK(row.failure_rate <= 0.10,
         "learned-field failure rate " << row.failure_rate << " above 0.10");
}

// ---------------------------------------------------------------------------
// 8. Drift resilience: success counts non-increasing across odometry error
// levels near 0%, 5% and 10% of distance traveled.

void criterion_8() {
  SimAssets assets;
  assets.poly = default_poly();
  auto auditor = std::make_shared<Auditor>();
  auditor->cfg = assets.nlp;

  RolloutConfig cfg = pillar_config();
  cfg.solve_observer = [auditor](const NmpcSolver& s, const NlpSolution& sol,
                                 const References& r) { auditor->observe(s, sol, r); };

  const std::vector<SuiteOverride> cells = {
      {"rpe0", nullptr},
      {"rpe5", [](RolloutConfig& c) { c.drift.random_walk_std = kDrift5Walk; }},
      {"rpe10", [](RolloutConfig& c) { c.drift.random_walk_std = kDrift10Walk; }}};
  const SuiteResult result = run_suite(cfg, assets, 808, 10, cells, 1);
  auditor->save("audit_c8.csv");

  std::vector<int> successes;
  for (size_t i = 0; i < result.rows.size(); ++i) {
    const int n = count_outcomes(result.records[i], Outcome::kSuccess);
    successes.push_back(n);
    std::fprintf(stderr, "%s: %d/10 success, mean rpe %.2f%%\n", result.rows[i].label.c_str(), n,
                 result.rows[i].mean_rpe);
  }
  ACHECK(successes[0] >= 9, "drift-free cell succeeded only " << successes[0] << "/10");
  ACHECK(successes[0] >= successes[1] && successes[1] >= successes[2],
         "success counts not non-increasing: " << successes[0] << ", " << successes[1] << ", "
                                               << successes[2]);
  ACHECK(result.rows[0].mean_rpe <= 0.5,
         "drift-free cell reports rpe " << result.rows[0].mean_rpe << "%");
  ACHECK(result.rows[1].mean_rpe >= 2.5 && result.rows[1].mean_rpe <= 7.5,
         "5% cell measured rpe " << result.rows[1].mean_rpe << "% outside [2.5, 7.5]");
  ACHECK(result.rows[2].mean_rpe >= 7.5 && result.rows[2].mean_rpe <= 15.0,
         "10% cell measured rpe " << result.rows[2].mean_rpe << "% outside [7.5, 15]");
}

// ---------------------------------------------------------------------------
// 9. Encoder bias effect: down-weighting the far plane lowers foreground
// reconstruction error under matched seeds.

void criterion_9() {
  const std::vector<RangeImage> corpus = render_corpus(8, 3, 909, 64, 48);

  EncoderTrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.latent_dim = 16;
  cfg.widths = {128, 64};
  cfg.seed = 3;

  EncoderTrainConfig biased = cfg;
  biased.w_bias = 0.01;
  EncoderTrainConfig flat = cfg;
  flat.w_bias = 1.0;

  const TrainedVae vae_biased = train_encoder(corpus, biased);
  const TrainedVae vae_flat = train_encoder(corpus, flat);
  const double rmse_biased = foreground_rmse(vae_biased.encoder, vae_biased.decoder, corpus);
  const double rmse_flat = foreground_rmse(vae_flat.encoder, vae_flat.decoder, corpus);
  std::fprintf(stderr, "foreground rmse: w=0.01 -> %.4f, w=1 -> %.4f\n", rmse_biased, rmse_flat);
  ACHECK(rmse_biased < rmse_flat,
         "biased reconstruction (" << rmse_biased << ") not below the flat one (" << rmse_flat
                                   << ")");
}

// ---------------------------------------------------------------------------
// 10. Cost audit over every solve recorded by criteria 6-8.

void criterion_10() {
  for (const char* name : {"audit_c6.csv", "audit_c7.csv", "audit_c8.csv"}) {
    const fs::path path = state_dir() / name;
    ACHECK(fs::exists(path), name << " missing; run criteria 6-8 first");
    if (!fs::exists(path)) continue;
    const CsvTable t = load_csv(path.string());
    ACHECK(t.rows.size() == 1 && t.rows[0].size() == 2, name << " is malformed");
    if (t.rows.size() != 1) continue;
    const double max_gap = std::stod(t.rows[0][0]);
    const long solves = std::stol(t.rows[0][1]);
    std::fprintf(stderr, "%s: %ld solves, max gap %.3e\n", name, solves, max_gap);
    ACHECK(solves > 0, name << " recorded no solves");
    ACHECK(max_gap <= 1e-9, name << " worst cost-audit gap " << max_gap << " above 1e-9");
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance <criterion 1..10>\n");
    return 2;
  }
  const int n = std::atoi(argv[1]);
  if (n < 1 || n > 10) {
    std::fprintf(stderr, "usage: acceptance <criterion 1..10>\n");
    return 2;
  }
  const auto t0 = std::chrono::steady_clock::now();
  switch (n) {
    case 1: criterion_1(); break;
    case 2: criterion_2(); break;
    case 3: criterion_3(); break;
    case 4: criterion_4(); break;
    case 5: criterion_5(); break;
    case 6: criterion_6(); break;
    case 7: criterion_7(); break;
    case 8: criterion_8(); break;
    case 9: criterion_9(); break;
    case 10: criterion_10(); break;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("criterion %d: %s (%.1f s)\n", n, g_failures == 0 ? "PASS" : "FAIL", secs);
  return g_failures == 0 ? 0 : 1;
}
