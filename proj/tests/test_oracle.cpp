#include <catch2/catch_amalgamated.hpp>

#include "sdfmpc/oracle.hpp"
#include "sdfmpc/render.hpp"
#include "sdfmpc/scene.hpp"

#include <cstdio>
#include <random>

using namespace sdfmpc;

namespace {

SceneSpec wall_scene() {
  SceneSpec scene;
  scene.primitives = {{Shape::kBox, Vec3(4, 0, 0), Vec3(2, 20, 20)}};  // face at x=3
  return scene;
}

SceneSpec sphere_scene() {
  SceneSpec scene;
  scene.primitives = {{Shape::kSphere, Vec3(3, 0, 0), Vec3(1, 0, 0)}};
  return scene;
}

Pose identity_pose() { return Pose{}; }

Vec3 random_in_frustum(const FrustumSpec& f, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uaz(-f.alpha_h, f.alpha_h);
  std::uniform_real_distribution<double> uel(-f.alpha_v, f.alpha_v);
  std::uniform_real_distribution<double> ur(0.3, f.d_max - 0.05);
  return ur(rng) * ray_direction(uaz(rng), uel(rng));
}

}  // namespace

TEST_CASE("trace_ray hits the wall at the analytic range and misses cleanly") {
  const SceneSpec scene = wall_scene();
  CHECK(trace_ray(scene, Vec3::Zero(), Vec3(1, 0, 0), 5.0) == Catch::Approx(3.0).margin(5e-3));
  // oblique ray: range to the x=3 plane scales with 1/cos(az)
  const Vec3 dir = ray_direction(0.4, 0.0);
  CHECK(trace_ray(scene, Vec3::Zero(), dir, 5.0) ==
        Catch::Approx(3.0 / std::cos(0.4)).margin(5e-3));
  const SceneSpec ball = sphere_scene();
  CHECK(trace_ray(ball, Vec3::Zero(), Vec3(0, 1, 0), 5.0) == 5.0);  // miss returns d_max
  CHECK(trace_ray(ball, Vec3::Zero(), Vec3(1, 0, 0), 5.0) == Catch::Approx(2.0).margin(5e-3));
}

TEST_CASE("render is deterministic and rejects a sensor inside an obstacle") {
  const SceneSpec scene = sphere_scene();
  const FrustumSpec frustum;
  RenderOptions opt;
  opt.noise_std = 0.01;
  opt.dropout_prob = 0.05;
  auto rng_a = rng_stream(42, "obs");
  auto rng_b = rng_stream(42, "obs");
  const RangeImage a = render_range_image(scene, identity_pose(), frustum, 32, 24, opt, &rng_a);
  const RangeImage b = render_range_image(scene, identity_pose(), frustum, 32, 24, opt, &rng_b);
  REQUIRE(a.ranges.size() == b.ranges.size());
  CHECK(a.ranges == b.ranges);

  Pose inside;
  inside.t = Vec3(3, 0, 0);  // sphere center
  CHECK_THROWS(render_range_image(scene, inside, frustum, 8, 8));
}

TEST_CASE("range image file round trip is bitwise") {
  const RangeImage img = render_range_image(sphere_scene(), identity_pose(), FrustumSpec{}, 16, 12);
  const std::string path = "oracle_roundtrip.rimg";
  save_range_image(img, path);
  const RangeImage back = load_range_image(path);
  std::remove(path.c_str());
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.frustum.d_max == img.frustum.d_max);
  CHECK(back.ranges == img.ranges);
}

TEST_CASE("occupancy classifies free, occupied, and outside points") {
  const RangeImage img = render_range_image(wall_scene(), identity_pose(), FrustumSpec{}, 64, 48);
  CHECK(occupancy(img, Vec3(2.0, 0, 0)) == Occupancy::kFree);
  CHECK(occupancy(img, Vec3(3.5, 0, 0)) == Occupancy::kOccupied);
  CHECK(occupancy(img, Vec3(-1.0, 0, 0)) == Occupancy::kOutside);
  CHECK(occupancy(img, Vec3(6.0, 0, 0)) == Occupancy::kOutside);  // beyond d_max
}

TEST_CASE("distance transform matches the true sdf on unoccluded geometry") {
  const RangeImage img = render_range_image(wall_scene(), identity_pose(), FrustumSpec{}, 128, 96);
  const DistanceOracle oracle(img, 1.0);
  // interior points straight ahead: true distance is |x - 3|
  for (double x : {2.2, 2.5, 2.8}) {
    const DistanceSample s = oracle.eval(Vec3(x, 0.1, 0.05));
    CHECK(s.value == Catch::Approx(3.0 - x).margin(0.1));
    CHECK(!s.truncated);
    CHECK(s.grad_dir.norm() == Catch::Approx(1.0).margin(1e-9));
    CHECK((s.grad_dir - Vec3(-1, 0, 0)).norm() < 0.2);
  }
  // behind the visible face: negative, magnitude is the depth past the surface
  const DistanceSample inside = oracle.eval(Vec3(3.4, 0, 0));
  CHECK(inside.value == Catch::Approx(-0.4).margin(0.1));
  // far from any surface: clamped and truncated with a zero direction
  const DistanceSample far = oracle.eval(Vec3(0.8, 0, 0));
  CHECK(far.value == 1.0);
  CHECK(far.truncated);
  CHECK(far.grad_dir == Vec3(0, 0, 0));
}

TEST_CASE("sphere scene distances agree with the analytic sdf") {
  const SceneSpec scene = sphere_scene();
  const RangeImage img = render_range_image(scene, identity_pose(), FrustumSpec{}, 128, 96);
  const DistanceOracle oracle(img, 1.0);
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int i = 0; checked < 80; ++i) {
    REQUIRE(i < 20000);
    const Vec3 p = random_in_frustum(img.frustum, rng);
    const double truth = scene_sdf(scene, p);
    if (std::abs(truth) > 0.85) continue;  // keep clear of the truncation band
    // skip points whose nearest sphere point is occluded from the sensor
    const Vec3 nearest = Vec3(3, 0, 0) + (p - Vec3(3, 0, 0)).normalized();
    if (nearest.normalized().dot((nearest - Vec3(3, 0, 0)).normalized()) > -0.2) continue;
    ++checked;
    const double got = oracle.eval(p).value;
    CHECK(got == Catch::Approx(truth).margin(0.12));
  }
}

TEST_CASE("finite-difference gradient magnitude stays near one") {
  const RangeImage img =
      render_range_image(sphere_scene(), identity_pose(), FrustumSpec{}, 128, 96);
  const DistanceOracle oracle(img, 1.0);
  std::mt19937_64 rng(9);
  const double h = 0.02;
  int total = 0, ok = 0;
  while (total < 400) {
    const Vec3 p = random_in_frustum(img.frustum, rng);
    const DistanceSample s = oracle.eval(p);
    if (std::abs(s.value) > 0.75) continue;  // stay off the clamp
    ++total;
    Vec3 g;
    for (int a = 0; a < 3; ++a) {
      Vec3 dp = Vec3::Zero();
      dp[a] = h;
      g[a] = (oracle.value_only(p + dp) - oracle.value_only(p - dp)) / (2 * h);
    }
    if (g.norm() > 0.8 && g.norm() < 1.2) ++ok;
  }
  CHECK(ok >= 380);  // 95%
}

TEST_CASE("block pruning is bit-identical to the exhaustive transform") {
  const SceneSpec scene = sphere_scene();
  const RangeImage img = render_range_image(scene, identity_pose(), FrustumSpec{}, 64, 48);
  const DistanceOracle pruned(img, 1.0, /*use_pruning=*/true);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> coord(-1.0, 6.0);
  for (int i = 0; i < 300; ++i) {
    const Vec3 p(coord(rng), coord(rng), coord(rng));
    const DistanceSample a = pruned.eval(p);
    const DistanceSample b = distance_transform(img, p, 1.0);
    CHECK(a.value == b.value);
    CHECK(a.grad_dir == b.grad_dir);
    CHECK(a.truncated == b.truncated);
  }
}

TEST_CASE("eval_batch with worker threads equals the sequential map") {
  const RangeImage img =
      render_range_image(sphere_scene(), identity_pose(), FrustumSpec{}, 64, 48);
  const DistanceOracle oracle(img, 1.0);
  std::mt19937_64 rng(17);
  std::vector<Vec3> points;
  for (int i = 0; i < 257; ++i) points.push_back(random_in_frustum(img.frustum, rng));
  const auto par = oracle.eval_batch(points, 3);
  REQUIRE(par.size() == points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    const DistanceSample s = oracle.eval(points[i]);
    CHECK(par[i].value == s.value);
    CHECK(par[i].grad_dir == s.grad_dir);
  }
}
