#pragma once

// Training loops for the distance field: the variational encoder/decoder pair
// over range images (stage one) and the latent-conditioned sine MLP regressed
// against the range-image distance transform (stage two, encoder frozen).
// Plain momentum SGD throughout; every randomized step draws from a named
// stream so artifacts are byte-identical per seed.

#include "sdfmpc/core.hpp"
#include "sdfmpc/net.hpp"
#include "sdfmpc/oracle.hpp"
#include "sdfmpc/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdfmpc {

// ---------------------------------------------------------------------------
// Loss bookkeeping.

struct LossRecord {
  int epoch = 0;
  std::string split;      // "train" or "val"
  std::string loss_name;  // "recon", "kld", "value_mse", "grad_mse", "total"
  double value = 0.0;
};

inline void save_loss_csv(const std::vector<LossRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open loss log for writing: " + path);
  out << "epoch,split,loss_name,value\n";
  char buf[64];
  for (const LossRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    out << r.epoch << ',' << r.split << ',' << r.loss_name << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Gradient buffers and the SGD step shared by both stages.

struct EncoderGrads {
  std::vector<LayerGrad> hidden;
  LayerGrad mu_head, logstd_head;

  void init_zero(const Encoder& e) {
    hidden.assign(e.hidden.size(), {});
    for (size_t i = 0; i < e.hidden.size(); ++i) hidden[i].init_zero(e.hidden[i]);
    mu_head.init_zero(e.mu_head);
    logstd_head.init_zero(e.logstd_head);
  }
};

struct DecoderGrads {
  std::vector<LayerGrad> hidden;
  LayerGrad out;

  void init_zero(const Decoder& d) {
    hidden.assign(d.hidden.size(), {});
    for (size_t i = 0; i < d.hidden.size(); ++i) hidden[i].init_zero(d.hidden[i]);
    out.init_zero(d.out);
  }
};

inline void sgd_update(DenseLayer& layer, LayerGrad& vel, const LayerGrad& grad, double lr,
                       double momentum) {
  vel.w = momentum * vel.w - lr * grad.w;
  vel.b = momentum * vel.b - lr * grad.b;
  layer.w += vel.w;
  layer.b += vel.b;
}

// Reverse pass through the decoder. d_out is dL/d(sigmoid output); returns
// dL/dz through the out-parameter.
inline void decoder_backward(const Decoder& d, const DecoderTrace& tr, const MatX& d_out,
                             DecoderGrads& g, MatX& d_z) {
  MatX dpre = d_out.array() * tr.out.array() * (1.0 - tr.out.array());
  const MatX& last_in = d.hidden.empty() ? tr.z : tr.act.back();
  g.out.w.noalias() += dpre * last_in.transpose();
  g.out.b += dpre.rowwise().sum();
  MatX dcur = d.out.w.transpose() * dpre;
  for (int i = static_cast<int>(d.hidden.size()) - 1; i >= 0; --i) {
    dpre = dcur.array() * (1.0 - tr.act[i].array().square());
    const MatX& in = (i == 0) ? tr.z : tr.act[i - 1];
    g.hidden[i].w.noalias() += dpre * in.transpose();
    g.hidden[i].b += dpre.rowwise().sum();
    dcur = d.hidden[i].w.transpose() * dpre;
  }
  d_z = dcur;
}

// Reverse pass through the encoder given head sensitivities.
inline void encoder_backward(const Encoder& e, const EncoderTrace& tr, const MatX& d_mu,
                             const MatX& d_logstd, EncoderGrads& g) {
  const MatX& last_act = e.hidden.empty() ? tr.x0 : tr.act.back();
  g.mu_head.w.noalias() += d_mu * last_act.transpose();
  g.mu_head.b += d_mu.rowwise().sum();
  g.logstd_head.w.noalias() += d_logstd * last_act.transpose();
  g.logstd_head.b += d_logstd.rowwise().sum();
  MatX dcur = e.mu_head.w.transpose() * d_mu + e.logstd_head.w.transpose() * d_logstd;
  for (int i = static_cast<int>(e.hidden.size()) - 1; i >= 0; --i) {
    MatX dpre = dcur.array() * (1.0 - tr.act[i].array().square());
    const MatX& in = (i == 0) ? tr.x0 : tr.act[i - 1];
    g.hidden[i].w.noalias() += dpre * in.transpose();
    g.hidden[i].b += dpre.rowwise().sum();
    dcur = e.hidden[i].w.transpose() * dpre;
  }
}

// ---------------------------------------------------------------------------
// Stage one: variational encoder/decoder on range images.

struct EncoderTrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  double momentum = 0.9;
  int batch_size = 16;
  double w_bias = 0.01;    // reconstruction bias weight at the far plane
  double beta_norm = 1.0;  // normalized KLD scale
  int latent_dim = 16;
  std::vector<int> widths = {256, 128};  // encoder hidden; decoder mirrors them
  std::uint64_t seed = 1;
};

struct TrainedVae {
  Encoder encoder;
  Decoder decoder;
};

namespace detail {

// Deterministic split losses (inference path z = mu), per image.
inline void vae_split_losses(const Encoder& e, const Decoder& d, const MatX& x, double w_bias,
                             double beta, double& recon, double& kld) {
  EncoderTrace etr;
  encoder_forward_batch(e, x, etr);
  DecoderTrace dtr;
  decoder_forward_batch(d, etr.mu, dtr);
  const double m = static_cast<double>(x.cols());
  recon = biased_reconstruction_loss(dtr.out, x, w_bias) / m;
  kld = kld_loss(etr.mu, etr.logstd, beta) / m;
}

}  // namespace detail

// Trains the pair on biased reconstruction + KLD with reparameterized latent
// draws. Logs per-epoch train/validation losses on the deterministic path.
inline TrainedVae train_encoder(const std::vector<RangeImage>& dataset,
                                const EncoderTrainConfig& cfg,
                                std::vector<LossRecord>* log = nullptr) {
  if (dataset.empty()) throw std::invalid_argument("train_encoder: empty dataset");
  const int width = dataset[0].width, height = dataset[0].height;
  for (const RangeImage& img : dataset)
    if (img.width != width || img.height != height)
      throw std::invalid_argument("train_encoder: mixed image shapes");

  const Eigen::Index n = static_cast<Eigen::Index>(dataset.size());
  const Eigen::Index dim = static_cast<Eigen::Index>(width) * height;
  MatX data(dim, n);
  for (Eigen::Index i = 0; i < n; ++i) data.col(i) = encoder_input(dataset[i]);

  // 85/15 split on a shuffled index set.
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  {
    auto rng = rng_stream(cfg.seed, "encoder-split");
    std::shuffle(order.begin(), order.end(), rng);
  }
  Eigen::Index n_val = static_cast<Eigen::Index>(std::lround(0.15 * static_cast<double>(n)));
  n_val = std::min(n_val, n - 1);
  const Eigen::Index n_train = n - n_val;
  MatX train_x(dim, n_train), val_x(dim, std::max<Eigen::Index>(n_val, 0));
  for (Eigen::Index i = 0; i < n_train; ++i) train_x.col(i) = data.col(order[i]);
  for (Eigen::Index i = 0; i < n_val; ++i) val_x.col(i) = data.col(order[n_train + i]);

  TrainedVae vae;
  vae.encoder = Encoder::make(width, height, cfg.latent_dim, cfg.widths, cfg.seed);
  std::vector<int> dec_widths(cfg.widths.rbegin(), cfg.widths.rend());
  vae.decoder = Decoder::make(cfg.latent_dim, dec_widths, static_cast<int>(dim), cfg.seed);

  EncoderGrads evel, eg;
  DecoderGrads dvel, dg;
  evel.init_zero(vae.encoder);
  dvel.init_zero(vae.decoder);

  auto rng = rng_stream(cfg.seed, "encoder-train");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Eigen::Index> idx(static_cast<size_t>(n_train));
  std::iota(idx.begin(), idx.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (Eigen::Index start = 0; start < n_train; start += cfg.batch_size) {
      const Eigen::Index m = std::min<Eigen::Index>(cfg.batch_size, n_train - start);
      MatX x(dim, m);
      for (Eigen::Index j = 0; j < m; ++j) x.col(j) = train_x.col(idx[start + j]);

      EncoderTrace etr;
      encoder_forward_batch(vae.encoder, x, etr);
      MatX eps(cfg.latent_dim, m);
      for (Eigen::Index k = 0; k < eps.size(); ++k) eps.data()[k] = gauss(rng);
      const MatX z = etr.mu + etr.sigma.cwiseProduct(eps);
      DecoderTrace dtr;
      decoder_forward_batch(vae.decoder, z, dtr);

      MatX d_out, d_mu, d_logstd;
      const double recon = biased_reconstruction_loss(dtr.out, x, cfg.w_bias, &d_out);
      const double kld = kld_loss(etr.mu, etr.logstd, cfg.beta_norm, &d_mu, &d_logstd);
      if (!std::isfinite(recon + kld))
        throw std::runtime_error("train_encoder: loss diverged");
      const double inv_m = 1.0 / static_cast<double>(m);
      d_out *= inv_m;
      d_mu *= inv_m;
      d_logstd *= inv_m;

      eg.init_zero(vae.encoder);
      dg.init_zero(vae.decoder);
      MatX d_z;
      decoder_backward(vae.decoder, dtr, d_out, dg, d_z);
      d_mu += d_z;  // z = mu + sigma (*) eps
      d_logstd += d_z.cwiseProduct(etr.sigma).cwiseProduct(eps);
      encoder_backward(vae.encoder, etr, d_mu, d_logstd, eg);

      for (size_t i = 0; i < vae.encoder.hidden.size(); ++i)
        sgd_update(vae.encoder.hidden[i], evel.hidden[i], eg.hidden[i], cfg.lr, cfg.momentum);
      sgd_update(vae.encoder.mu_head, evel.mu_head, eg.mu_head, cfg.lr, cfg.momentum);
      sgd_update(vae.encoder.logstd_head, evel.logstd_head, eg.logstd_head, cfg.lr, cfg.momentum);
      for (size_t i = 0; i < vae.decoder.hidden.size(); ++i)
        sgd_update(vae.decoder.hidden[i], dvel.hidden[i], dg.hidden[i], cfg.lr, cfg.momentum);
      sgd_update(vae.decoder.out, dvel.out, dg.out, cfg.lr, cfg.momentum);
    }

    if (log) {
      double recon, kld;
      detail::vae_split_losses(vae.encoder, vae.decoder, train_x, cfg.w_bias, cfg.beta_norm,
                               recon, kld);
      if (!std::isfinite(recon + kld))
        throw std::runtime_error("train_encoder: loss diverged");
      log->push_back({epoch, "train", "recon", recon});
      log->push_back({epoch, "train", "kld", kld});
      log->push_back({epoch, "train", "total", recon + kld});
      if (n_val > 0) {
        detail::vae_split_losses(vae.encoder, vae.decoder, val_x, cfg.w_bias, cfg.beta_norm,
                                 recon, kld);
        log->push_back({epoch, "val", "recon", recon});
        log->push_back({epoch, "val", "kld", kld});
        log->push_back({epoch, "val", "total", recon + kld});
      }
    }
  }
  return vae;
}

// RMSE of the deterministic reconstruction over foreground pixels (targets
// strictly between the invalid level and the far plane).
inline double foreground_rmse(const Encoder& e, const Decoder& d,
                              const std::vector<RangeImage>& images) {
  double sq = 0.0;
  long count = 0;
  for (const RangeImage& img : images) {
    const VecX x = encoder_input(img);
    EncoderTrace etr;
    encoder_forward_batch(e, x, etr);
    DecoderTrace dtr;
    decoder_forward_batch(d, etr.mu, dtr);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double o = x[i];
      if (o <= 0.0 || o >= 1.0 - 1e-9) continue;
      const double err = dtr.out(i, 0) - o;
      sq += err * err;
      ++count;
    }
  }
  return count == 0 ? 0.0 : std::sqrt(sq / static_cast<double>(count));
}

// ---------------------------------------------------------------------------
// Field training point sampler.

struct TrainingPointSet {
  std::vector<Vec3> points;      // stored category by category
  std::array<int, 4> counts{};   // in-frustum, origin ball, near surface, boundary ball
};

namespace detail {

inline Vec3 random_unit(std::mt19937_64& rng, std::normal_distribution<double>& gauss) {
  for (;;) {
    const Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    const double norm = v.norm();
    if (norm > 1e-12) return v / norm;
  }
}

}  // namespace detail

// Draws n points around the observation in the sensor frame with category
// quotas 0.4 / 0.35 / 0.2 / 0.05 (largest-remainder rounding, each count
// within one of its quota): uniform in-frustum, ball of radius t_sdf at the
// origin, within 2 t_sdf of back-projected hit pixels, and on a sphere
// strictly containing the frustum.
inline TrainingPointSet sample_training_points(const RangeImage& obs, int n, std::uint64_t seed,
                                               double t_sdf = 1.0) {
  if (n <= 0) throw std::invalid_argument("sample_training_points: n must be positive");
  const std::array<double, 4> ratios = {0.4, 0.35, 0.2, 0.05};
  std::array<int, 4> counts{};
  std::array<double, 4> frac{};
  int assigned = 0;
  for (int c = 0; c < 4; ++c) {
    const double quota = ratios[c] * n;
    counts[c] = static_cast<int>(std::floor(quota));
    frac[c] = quota - counts[c];
    assigned += counts[c];
  }
  std::array<int, 4> by_frac = {0, 1, 2, 3};
  std::stable_sort(by_frac.begin(), by_frac.end(),
                   [&](int a, int b) { return frac[a] > frac[b]; });
  for (int k = 0; k < n - assigned; ++k) ++counts[by_frac[k % 4]];

  auto rng = rng_stream(seed, "sample-points");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const FrustumSpec& f = obs.frustum;

  TrainingPointSet out;
  out.counts = counts;
  out.points.reserve(static_cast<size_t>(n));

  for (int k = 0; k < counts[0]; ++k) {
    const double az = (2.0 * unit(rng) - 1.0) * f.alpha_h;
    const double el = (2.0 * unit(rng) - 1.0) * f.alpha_v;
    const double r = std::max(1e-6, unit(rng) * f.d_max);
    out.points.push_back(r * ray_direction(az, el));
  }
  for (int k = 0; k < counts[1]; ++k) {
    const double r = t_sdf * std::cbrt(unit(rng));
    out.points.push_back(r * detail::random_unit(rng, gauss));
  }

  // Back-projected hit pixels; pixels at the far plane carry no surface.
  std::vector<Vec3> surface;
  surface.reserve(obs.ranges.size());
  const float far_plane = static_cast<float>(f.d_max);
  for (int row = 0; row < obs.height; ++row)
    for (int col = 0; col < obs.width; ++col) {
      const float r = obs.at(row, col);
      if (r > 0.f && r < far_plane)
        surface.push_back(static_cast<double>(r) *
                          ray_direction(obs.azimuth_of_col(col), obs.elevation_of_row(row)));
    }
  if (surface.empty()) {
    for (int k = 0; k < counts[2]; ++k) {  // featureless view: fall back to in-frustum draws
      const double az = (2.0 * unit(rng) - 1.0) * f.alpha_h;
      const double el = (2.0 * unit(rng) - 1.0) * f.alpha_v;
      const double r = std::max(1e-6, unit(rng) * f.d_max);
      out.points.push_back(r * ray_direction(az, el));
    }
  } else {
    std::uniform_int_distribution<size_t> pick(0, surface.size() - 1);
    for (int k = 0; k < counts[2]; ++k) {
      const Vec3& anchor = surface[pick(rng)];
      const double r = 2.0 * t_sdf * 0.999 * std::cbrt(unit(rng));
      out.points.push_back(anchor + r * detail::random_unit(rng, gauss));
    }
  }

  const double boundary_radius = 1.1 * f.d_max;  // strictly contains the frustum
  for (int k = 0; k < counts[3]; ++k)
    out.points.push_back(boundary_radius * detail::random_unit(rng, gauss));
  return out;
}

// ---------------------------------------------------------------------------
// Stage two: distance field regression against the range-image transform.

struct SdfTrainConfig {
  int epochs = 40;
  double lr = 1e-3;
  double momentum = 0.9;
  double lambda_value = 1.0;
  double lambda_grad = 0.5;
  int points_per_image = 256;
  double t_sdf = 1.0;
  std::uint64_t seed = 1;
  int jobs = 1;
};

// Regresses value and spatial gradient of the truncated distance transform;
// the encoder only supplies frozen latent codes. Returns the trained MLP.
inline SineMlp train_sdf(const Encoder& encoder, const std::vector<RangeImage>& dataset,
                         SineMlp net, const SdfTrainConfig& cfg,
                         std::vector<LossRecord>* log = nullptr) {
  if (dataset.empty()) throw std::invalid_argument("train_sdf: empty dataset");

  struct ImageBatch {
    VecX z;
    MatX points;        // 3 x m
    Eigen::RowVectorXd target_value;
    MatX target_grad;   // 3 x m, zero where the transform is truncated
  };
  std::vector<ImageBatch> batches(dataset.size());
  const std::uint64_t point_seed = stream_seed(cfg.seed, "sdf-points");
  for (size_t i = 0; i < dataset.size(); ++i) {
    ImageBatch& b = batches[i];
    b.z = latent_code(encoder, dataset[i]);
    const TrainingPointSet ps =
        sample_training_points(dataset[i], cfg.points_per_image,
                               splitmix64(point_seed + i), cfg.t_sdf);
    const Eigen::Index m = static_cast<Eigen::Index>(ps.points.size());
    b.points.resize(3, m);
    for (Eigen::Index k = 0; k < m; ++k) b.points.col(k) = ps.points[k];
    DistanceOracle oracle(dataset[i], cfg.t_sdf);
    const std::vector<DistanceSample> samples = oracle.eval_batch(ps.points, cfg.jobs);
    b.target_value.resize(m);
    b.target_grad.resize(3, m);
    for (Eigen::Index k = 0; k < m; ++k) {
      b.target_value[k] = samples[k].value;
      b.target_grad.col(k) = samples[k].grad_dir;
    }
  }

  MlpGrads vel;
  vel.init_zero(net);
  std::vector<size_t> order(batches.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = rng_stream(cfg.seed, "sdf-train");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_v = 0.0, epoch_g = 0.0;
    for (size_t i : order) {
      const ImageBatch& b = batches[i];
      const double m = static_cast<double>(b.points.cols());
      MlpTrace tr;
      mlp_forward(net, b.points, b.z, tr);
      const Eigen::RowVectorXd rv = tr.value - b.target_value;
      const MatX rg = tr.grad - b.target_grad;
      const double loss_v = rv.squaredNorm() / m;
      const double loss_g = rg.squaredNorm() / m;
      if (!std::isfinite(loss_v + loss_g)) throw std::runtime_error("train_sdf: loss diverged");
      epoch_v += loss_v;
      epoch_g += loss_g;

      MlpGrads g;
      g.init_zero(net);
      mlp_backward(net, tr, (2.0 * cfg.lambda_value / m) * rv, (2.0 * cfg.lambda_grad / m) * rg,
                   g);
      sgd_update(net.l1, vel.l1, g.l1, cfg.lr, cfg.momentum);
      sgd_update(net.l2, vel.l2, g.l2, cfg.lr, cfg.momentum);
      sgd_update(net.l3, vel.l3, g.l3, cfg.lr, cfg.momentum);
      sgd_update(net.l4, vel.l4, g.l4, cfg.lr, cfg.momentum);
      sgd_update(net.head, vel.head, g.head, cfg.lr, cfg.momentum);
    }
    if (log) {
      const double n = static_cast<double>(batches.size());
      log->push_back({epoch, "train", "value_mse", epoch_v / n});
      log->push_back({epoch, "train", "grad_mse", epoch_g / n});
      log->push_back({epoch, "train", "total",
                      (cfg.lambda_value * epoch_v + cfg.lambda_grad * epoch_g) / n});
    }
  }
  return net;
}

// ---------------------------------------------------------------------------
// Held-out evaluation on an in-frustum grid.

struct SdfEvalReport {
  double value_rmse = 0.0;        // m, against the oracle over the whole grid
  double grad_dir_err_deg = 0.0;  // mean angle where the oracle is untruncated
  long n_value = 0;
  long n_grad = 0;
};

inline SdfEvalReport evaluate_sdf(const SineMlp& net, const VecX& z, const RangeImage& img,
                                  double grid_step = 0.1, double t_sdf = 1.0, int jobs = 1) {
  const FrustumSpec& f = img.frustum;
  std::vector<Vec3> grid;
  const double y_max = f.d_max * std::sin(f.alpha_h);
  const double z_max = f.d_max * std::sin(f.alpha_v);
  for (double x = 0.5 * grid_step; x <= f.d_max; x += grid_step)
    for (double y = -y_max; y <= y_max; y += grid_step)
      for (double zc = -z_max; zc <= z_max; zc += grid_step) {
        const Vec3 p(x, y, zc);
        if (in_frustum(f, p)) grid.push_back(p);
      }
  SdfEvalReport rep;
  if (grid.empty()) return rep;

  DistanceOracle oracle(img, t_sdf);
  const std::vector<DistanceSample> target = oracle.eval_batch(grid, jobs);

  double sq = 0.0, angle_sum = 0.0;
  const Eigen::Index chunk = 2048;
  MlpTrace tr;
  for (Eigen::Index start = 0; start < static_cast<Eigen::Index>(grid.size()); start += chunk) {
    const Eigen::Index m = std::min<Eigen::Index>(chunk, grid.size() - start);
    MatX pts(3, m);
    for (Eigen::Index k = 0; k < m; ++k) pts.col(k) = grid[start + k];
    mlp_forward(net, pts, z, tr);
    for (Eigen::Index k = 0; k < m; ++k) {
      const DistanceSample& t = target[start + k];
      const double err = tr.value[k] - t.value;
      sq += err * err;
      ++rep.n_value;
      if (std::abs(t.value) >= t_sdf || t.grad_dir.norm() < 0.5) continue;
      const Vec3 g = tr.grad.col(k);
      const double gnorm = g.norm();
      double angle = 90.0;
      if (gnorm > 1e-12) {
        const double c = std::clamp(g.dot(t.grad_dir) / gnorm, -1.0, 1.0);
        angle = std::acos(c) * 180.0 / M_PI;
      }
      angle_sum += angle;
      ++rep.n_grad;
    }
  }
  rep.value_rmse = std::sqrt(sq / static_cast<double>(rep.n_value));
  if (rep.n_grad > 0) rep.grad_dir_err_deg = angle_sum / static_cast<double>(rep.n_grad);
  return rep;
}

}  // namespace sdfmpc
