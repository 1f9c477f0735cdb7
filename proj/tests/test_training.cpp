#include <catch2/catch_amalgamated.hpp>

#include "sdfmpc/formats.hpp"
#include "sdfmpc/train.hpp"

#include <cstdio>
#include <random>

using namespace sdfmpc;

namespace {

// Flatten every parameter of the tiny sine network for finite differencing.
std::vector<double*> mlp_params(SineMlp& net) {
  std::vector<double*> out;
  for (DenseLayer* l : net.layers()) {
    for (int i = 0; i < l->w.size(); ++i) out.push_back(l->w.data() + i);
    for (int i = 0; i < l->b.size(); ++i) out.push_back(l->b.data() + i);
  }
  return out;
}

std::vector<const double*> mlp_grad_entries(const MlpGrads& g) {
  std::vector<const double*> out;
  const LayerGrad* gs[] = {&g.l1, &g.l2, &g.l3, &g.l4, &g.head};
  for (const LayerGrad* lg : gs) {
    for (int i = 0; i < lg->w.size(); ++i) out.push_back(lg->w.data() + i);
    for (int i = 0; i < lg->b.size(); ++i) out.push_back(lg->b.data() + i);
  }
  return out;
}

double sdf_batch_loss(const SineMlp& net, const MatX& pts, const VecX& z,
                      const Eigen::RowVectorXd& tv, const MatX& tg, double lv, double lg) {
  MlpTrace tr;
  mlp_forward(net, pts, z, tr);
  const Eigen::RowVectorXd rv = tr.value - tv;
  const MatX rg = tr.grad - tg;
  return lv * rv.squaredNorm() + lg * rg.squaredNorm();
}

std::vector<RangeImage> sphere_dataset(int count, double base_x, int width, int height) {
  SceneSpec scene;
  scene.primitives = {{Shape::kSphere, Vec3(base_x, 0, 0), Vec3(1.0, 0, 0)}};
  std::vector<RangeImage> images;
  for (int i = 0; i < count; ++i) {
    Pose pose;
    pose.t = Vec3(0, -0.3 + 0.06 * i, 0.05 * i - 0.1);
    images.push_back(render_range_image(scene, pose, FrustumSpec{}, width, height));
  }
  return images;
}

}  // namespace

TEST_CASE("sgd update applies classical momentum") {
  DenseLayer layer;
  layer.w = MatX::Ones(1, 1);
  layer.b = VecX::Zero(1);
  LayerGrad vel, grad;
  vel.init_zero(layer);
  grad.init_zero(layer);
  grad.w(0, 0) = 1.0;

  sgd_update(layer, vel, grad, 0.1, 0.9);
  CHECK(layer.w(0, 0) == Catch::Approx(0.9).margin(1e-15));
  sgd_update(layer, vel, grad, 0.1, 0.9);
  // velocity: -0.1, then 0.9 * -0.1 - 0.1 = -0.19
  CHECK(layer.w(0, 0) == Catch::Approx(0.71).margin(1e-15));
}

TEST_CASE("loss csv has the documented schema") {
  std::vector<LossRecord> rec = {{0, "train", "recon", 1.0 / 3.0}, {0, "val", "kld", 0.5}};
  save_loss_csv(rec, "loss_test.csv");
  const CsvTable t = load_csv("loss_test.csv");
  std::remove("loss_test.csv");
  CHECK(t.header == std::vector<std::string>{"epoch", "split", "loss_name", "value"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][0] == "0");
  CHECK(t.rows[0][1] == "train");
  CHECK(std::stod(t.rows[0][3]) == 1.0 / 3.0);
}

TEST_CASE("sine network parameter gradients match finite differences") {
  SineMlp net = SineMlp::make(EmbeddingSpec{}, 3, {8, 8, 8, 8}, 5);
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n01(0.0, 1.0);
  VecX z(3);
  for (int i = 0; i < 3; ++i) z[i] = 0.4 * n01(rng);
  MatX pts(3, 5);
  for (int i = 0; i < pts.size(); ++i) pts.data()[i] = 1.5 * n01(rng);
  Eigen::RowVectorXd tv(5);
  MatX tg(3, 5);
  for (int i = 0; i < 5; ++i) tv[i] = 0.5 * n01(rng);
  for (int i = 0; i < tg.size(); ++i) tg.data()[i] = 0.5 * n01(rng);
  const double lv = 1.0, lg = 0.5;

  MlpTrace tr;
  mlp_forward(net, pts, z, tr);
  MlpGrads grads;
  grads.init_zero(net);
  const Eigen::RowVectorXd dvalue = 2.0 * lv * (tr.value - tv);
  const MatX dgrad = 2.0 * lg * (tr.grad - tg);
  mlp_backward(net, tr, dvalue, dgrad, grads);

  const auto params = mlp_params(net);
  const auto entries = mlp_grad_entries(grads);
  REQUIRE(params.size() == entries.size());
  const double h = 1e-6;
  for (size_t i = 0; i < params.size(); ++i) {
    const double saved = *params[i];
    *params[i] = saved + h;
    const double up = sdf_batch_loss(net, pts, z, tv, tg, lv, lg);
    *params[i] = saved - h;
    const double dn = sdf_batch_loss(net, pts, z, tv, tg, lv, lg);
    *params[i] = saved;
    const double fd = (up - dn) / (2 * h);
    const double scale = std::max({1.0, std::abs(fd), std::abs(*entries[i])});
    CHECK(std::abs(*entries[i] - fd) <= 1e-4 * scale);
  }
}

TEST_CASE("vae parameter gradients match finite differences through the reparam") {
  Encoder enc = Encoder::make(6, 4, 3, {12, 8}, 9);
  Decoder dec = Decoder::make(3, {8, 12}, 24, 11);
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n01(0.0, 1.0);
  MatX x(24, 4), eps(3, 4);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = (i % 7 == 0) ? 0.0 : u01(rng);
  for (int i = 0; i < eps.size(); ++i) eps.data()[i] = n01(rng);
  const double w_bias = 0.01, beta = 0.7;

  const auto loss_fn = [&]() {
    EncoderTrace etr;
    encoder_forward_batch(enc, x, etr);
    const MatX zb = etr.mu + etr.sigma.cwiseProduct(eps);
    DecoderTrace dtr;
    decoder_forward_batch(dec, zb, dtr);
    return biased_reconstruction_loss(dtr.out, x, w_bias) +
           kld_loss(etr.mu, etr.logstd, beta);
  };

  // analytic pass, mirroring the training step with the noise held fixed
  EncoderTrace etr;
  encoder_forward_batch(enc, x, etr);
  const MatX zb = etr.mu + etr.sigma.cwiseProduct(eps);
  DecoderTrace dtr;
  decoder_forward_batch(dec, zb, dtr);
  MatX d_out, d_mu, d_logstd;
  biased_reconstruction_loss(dtr.out, x, w_bias, &d_out);
  kld_loss(etr.mu, etr.logstd, beta, &d_mu, &d_logstd);
  DecoderGrads dg;
  dg.init_zero(dec);
  MatX d_z;
  decoder_backward(dec, dtr, d_out, dg, d_z);
  d_mu += d_z;
  d_logstd += d_z.cwiseProduct(etr.sigma.cwiseProduct(eps));  // dz/dlogstd = sigma eps
  EncoderGrads eg;
  eg.init_zero(enc);
  encoder_backward(enc, etr, d_mu, d_logstd, eg);

  std::vector<std::pair<double*, const double*>> pairs;
  for (size_t i = 0; i < enc.hidden.size(); ++i) {
    for (int k = 0; k < enc.hidden[i].w.size(); ++k)
      pairs.push_back({enc.hidden[i].w.data() + k, eg.hidden[i].w.data() + k});
    for (int k = 0; k < enc.hidden[i].b.size(); ++k)
      pairs.push_back({enc.hidden[i].b.data() + k, eg.hidden[i].b.data() + k});
  }
  for (int k = 0; k < enc.mu_head.w.size(); ++k)
    pairs.push_back({enc.mu_head.w.data() + k, eg.mu_head.w.data() + k});
  for (int k = 0; k < enc.logstd_head.w.size(); ++k)
    pairs.push_back({enc.logstd_head.w.data() + k, eg.logstd_head.w.data() + k});
  for (size_t i = 0; i < dec.hidden.size(); ++i)
    for (int k = 0; k < dec.hidden[i].w.size(); ++k)
      pairs.push_back({dec.hidden[i].w.data() + k, dg.hidden[i].w.data() + k});
  for (int k = 0; k < dec.out.w.size(); ++k)
    pairs.push_back({dec.out.w.data() + k, dg.out.w.data() + k});
  for (int k = 0; k < dec.out.b.size(); ++k)
    pairs.push_back({dec.out.b.data() + k, dg.out.b.data() + k});

  const double h = 1e-6;
  for (auto& [param, grad] : pairs) {
    const double saved = *param;
    *param = saved + h;
    const double up = loss_fn();
    *param = saved - h;
    const double dn = loss_fn();
    *param = saved;
    const double fd = (up - dn) / (2 * h);
    const double scale = std::max({1.0, std::abs(fd), std::abs(*grad)});
    CHECK(std::abs(*grad - fd) <= 1e-4 * scale);
  }
}

TEST_CASE("training point sampler fills its quotas and regions") {
  SceneSpec scene;
  scene.primitives = {{Shape::kSphere, Vec3(3, 0, 0), Vec3(1, 0, 0)}};
  const RangeImage img = render_range_image(scene, Pose{}, FrustumSpec{}, 32, 24);
  const double t_sdf = 1.0;

  for (int n : {7, 64, 256, 1001}) {
    const TrainingPointSet set = sample_training_points(img, n, 42, t_sdf);
    REQUIRE(static_cast<int>(set.points.size()) == n);
    const std::array<double, 4> ratios = {0.4, 0.35, 0.2, 0.05};
    int total = 0;
    for (int c = 0; c < 4; ++c) {
      CHECK(std::abs(set.counts[c] - ratios[c] * n) <= 1.0);
      total += set.counts[c];
    }
    CHECK(total == n);
  }

  const TrainingPointSet set = sample_training_points(img, 400, 42, t_sdf);
  int idx = 0;
  for (int i = 0; i < set.counts[0]; ++i, ++idx)
    CHECK(in_frustum(img.frustum, set.points[idx]));
  for (int i = 0; i < set.counts[1]; ++i, ++idx)
    CHECK(set.points[idx].norm() <= t_sdf + 1e-12);
  // near-surface points sit within 2 t_sdf of some back-projected hit
  std::vector<Vec3> hits;
  for (int row = 0; row < img.height; ++row)
    for (int col = 0; col < img.width; ++col) {
      const float r = img.at(row, col);
      if (r > 0.0f && r < static_cast<float>(img.frustum.d_max))
        hits.push_back(static_cast<double>(r) *
                       ray_direction(img.azimuth_of_col(col), img.elevation_of_row(row)));
    }
  REQUIRE(!hits.empty());
  for (int i = 0; i < set.counts[2]; ++i, ++idx) {
    double best = 1e9;
    for (const Vec3& hit : hits) best = std::min(best, (set.points[idx] - hit).norm());
    CHECK(best <= 2.0 * t_sdf + 1e-9);
  }
  for (int i = 0; i < set.counts[3]; ++i, ++idx)
    CHECK(set.points[idx].norm() == Catch::Approx(1.1 * img.frustum.d_max).margin(1e-9));

  // deterministic per seed
  const TrainingPointSet again = sample_training_points(img, 400, 42, t_sdf);
  REQUIRE(again.points.size() == set.points.size());
  for (size_t i = 0; i < set.points.size(); ++i) CHECK(again.points[i] == set.points[i]);
  const TrainingPointSet other = sample_training_points(img, 400, 43, t_sdf);
  bool any_diff = false;
  for (size_t i = 0; i < set.points.size(); ++i)
    if (other.points[i] != set.points[i]) any_diff = true;
  CHECK(any_diff);

  CHECK_THROWS(sample_training_points(img, 0, 1, t_sdf));
}

TEST_CASE("encoder training learns below the constant-mean baseline") {
  const auto images = sphere_dataset(60, 3.0, 24, 18);
  EncoderTrainConfig cfg;
  cfg.epochs = 25;
  cfg.lr = 2e-3;
  cfg.batch_size = 8;
  cfg.latent_dim = 8;
  cfg.widths = {64, 32};
  cfg.beta_norm = 0.05;
  cfg.seed = 5;
  std::vector<LossRecord> log;
  const TrainedVae vae = train_encoder(images, cfg, &log);

  // masked MSE of the deterministic reconstruction against the best constant
  double sum = 0.0;
  long count = 0;
  for (const RangeImage& img : images) {
    const VecX x = encoder_input(img);
    for (int i = 0; i < x.size(); ++i)
      if (x[i] != 0.0) {
        sum += x[i];
        ++count;
      }
  }
  const double mean = sum / count;
  double base_sq = 0.0, model_sq = 0.0;
  for (const RangeImage& img : images) {
    const VecX x = encoder_input(img);
    DecoderTrace tr;
    decoder_forward_batch(vae.decoder, latent_code(vae.encoder, img), tr);
    for (int i = 0; i < x.size(); ++i)
      if (x[i] != 0.0) {
        base_sq += (x[i] - mean) * (x[i] - mean);
        model_sq += (tr.out(i, 0) - x[i]) * (tr.out(i, 0) - x[i]);
      }
  }
  CHECK(model_sq / count < base_sq / count);

  // log carries train and val rows for every epoch
  int train_rows = 0, val_rows = 0;
  for (const LossRecord& r : log) {
    if (r.split == "train") ++train_rows;
    if (r.split == "val") ++val_rows;
  }
  CHECK(train_rows == cfg.epochs * 3);
  CHECK(val_rows == cfg.epochs * 3);

  CHECK_THROWS(train_encoder({}, cfg));
  EncoderTrainConfig diverge = cfg;
  diverge.epochs = 4;
  diverge.lr = 1e6;
  CHECK_THROWS_AS(train_encoder(images, diverge), std::runtime_error);
}

TEST_CASE("epoch losses fall monotonically at a conservative step") {
  const auto images = sphere_dataset(12, 3.0, 16, 12);
  EncoderTrainConfig cfg;
  cfg.epochs = 6;
  cfg.lr = 1e-4;
  cfg.batch_size = 4;
  cfg.latent_dim = 4;
  cfg.widths = {32, 16};
  cfg.seed = 7;
  std::vector<LossRecord> log;
  train_encoder(images, cfg, &log);
  std::vector<double> totals;
  for (const LossRecord& r : log)
    if (r.split == "train" && r.loss_name == "total") totals.push_back(r.value);
  REQUIRE(static_cast<int>(totals.size()) == cfg.epochs);
  for (size_t i = 1; i < totals.size(); ++i) CHECK(totals[i] <= totals[i - 1] * 1.05);

  // same invariant for the field stage
  Encoder frozen = Encoder::make(16, 12, 4, {16, 8}, 21);
  SineMlp net = SineMlp::make(EmbeddingSpec{}, 4, {32, 32, 24, 16}, 23);
  SdfTrainConfig scfg;
  scfg.epochs = 5;
  scfg.lr = 1e-4;
  scfg.points_per_image = 64;
  scfg.seed = 9;
  std::vector<LossRecord> slog;
  train_sdf(frozen, images, net, scfg, &slog);
  std::vector<double> stotals;
  for (const LossRecord& r : slog)
    if (r.loss_name == "total") stotals.push_back(r.value);
  REQUIRE(static_cast<int>(stotals.size()) == scfg.epochs);
  for (size_t i = 1; i < stotals.size(); ++i) CHECK(stotals[i] <= stotals[i - 1] * 1.05);
}

TEST_CASE("field stage fits one observation below a quarter of the band") {
  SceneSpec scene;
  scene.primitives = {{Shape::kSphere, Vec3(3, 0, 0), Vec3(1, 0, 0)}};
  std::vector<RangeImage> images;
  for (int i = 0; i < 4; ++i)
    images.push_back(render_range_image(scene, Pose{}, FrustumSpec{}, 32, 24));

  Encoder frozen = Encoder::make(32, 24, 4, {16, 8}, 31);
  SineMlp net = SineMlp::make(EmbeddingSpec{}, 4, {64, 64, 48, 32}, 33);
  const VecX z = latent_code(frozen, images[0]);
  const SdfEvalReport before = evaluate_sdf(net, z, images[0], 0.25);

  SdfTrainConfig cfg;
  cfg.epochs = 120;
  cfg.lr = 2e-3;
  cfg.points_per_image = 512;
  cfg.seed = 3;
  const SineMlp trained = train_sdf(frozen, images, std::move(net), cfg);

  const SdfEvalReport after = evaluate_sdf(trained, z, images[0], 0.25);
  CHECK(after.n_value > 1000);
  CHECK(after.n_grad > 0);
  CHECK(after.n_grad <= after.n_value);
  CHECK(after.value_rmse < before.value_rmse);
  CHECK(after.value_rmse < 0.25);
  CHECK(after.grad_dir_err_deg < 60.0);
}
