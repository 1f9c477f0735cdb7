#pragma once

// Trainable distance field: off-axis positional embedding, sine-activated MLP
// conditioned on a latent code, and the small variational encoder/decoder pair
// that produces the code from a range image.
//
// All network math runs in double precision and is batched column-per-sample.
// Spatial gradients are computed by forward tangent propagation (three
// directional derivatives alongside the value), and parameter gradients of
// losses on both the value and the spatial gradient are obtained by reverse
// mode over that extended computation.

#include "sdfmpc/core.hpp"
#include "sdfmpc/render.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdfmpc {

// ---------------------------------------------------------------------------
// Positional embedding.

inline Eigen::Matrix<double, 12, 3> icosahedron_axes() {
  const double g = (1.0 + std::sqrt(5.0)) / 2.0;
  Eigen::Matrix<double, 12, 3> a;
  a << 0, 1, g, 0, -1, g, 0, 1, -g, 0, -1, -g,
       1, g, 0, -1, g, 0, 1, -g, 0, -1, -g, 0,
       g, 0, 1, g, 0, -1, -g, 0, 1, -g, 0, -1;
  for (int r = 0; r < 12; ++r) a.row(r).normalize();
  return a;
}

struct EmbeddingSpec {
  int bands = 2;  // frequency bands l = 0..bands-1 with scale 2^l
  Eigen::Matrix<double, 12, 3> axes = icosahedron_axes();

  int dim() const { return 3 + 24 * bands; }
};

// Per column p: [p; sin(2^l A p); cos(2^l A p)] for each band l.
inline MatX embed_points(const EmbeddingSpec& spec, const MatX& points) {
  const Eigen::Index b = points.cols();
  MatX out(spec.dim(), b);
  out.topRows(3) = points;
  MatX proj = spec.axes * points;  // 12 x b, scaled per band below
  Eigen::Index row = 3;
  for (int l = 0; l < spec.bands; ++l) {
    const double scale = std::pow(2.0, l);
    out.middleRows(row, 12) = (scale * proj).array().sin();
    out.middleRows(row + 12, 12) = (scale * proj).array().cos();
    row += 24;
  }
  return out;
}

// Tangents d(embedding)/dp in direction-major layout: [d/dx | d/dy | d/dz],
// each block dim() x b.
inline MatX embed_tangents(const EmbeddingSpec& spec, const MatX& points) {
  const Eigen::Index b = points.cols();
  MatX out = MatX::Zero(spec.dim(), 3 * b);
  for (int d = 0; d < 3; ++d) out.block(d, d * b, 1, b).setOnes();
  const MatX proj = spec.axes * points;
  for (int l = 0; l < spec.bands; ++l) {
    const double scale = std::pow(2.0, l);
    const MatX sp = (scale * proj).array().sin();
    const MatX cp = (scale * proj).array().cos();
    const Eigen::Index row = 3 + 24 * l;
    for (int d = 0; d < 3; ++d) {
      const VecX ad = scale * spec.axes.col(d);
      out.block(row, d * b, 12, b) = cp.array().colwise() * ad.array();
      out.block(row + 12, d * b, 12, b) = (-sp).array().colwise() * ad.array();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layers.

struct DenseLayer {
  MatX w;
  VecX b;

  void init(int rows, int cols, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / cols);
    std::uniform_real_distribution<double> u(-bound, bound);
    w.resize(rows, cols);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    b = VecX::Zero(rows);
  }
  MatX apply(const MatX& x) const { return (w * x).colwise() + b; }
};

struct LayerGrad {
  MatX w;
  VecX b;
  void init_zero(const DenseLayer& l) {
    w = MatX::Zero(l.w.rows(), l.w.cols());
    b = VecX::Zero(l.b.size());
  }
};

// ---------------------------------------------------------------------------
// Sine MLP with input skip into the third hidden layer.

struct SineMlp {
  EmbeddingSpec embedding;
  int latent_dim = 16;
  std::vector<int> widths = {256, 256, 128, 64};  // 4 hidden layers
  DenseLayer l1, l2, l3, l4, head;                // l3 sees [h2; input]

  int input_dim() const { return embedding.dim() + latent_dim; }

  static SineMlp make(const EmbeddingSpec& spec, int latent_dim, const std::vector<int>& widths,
                      std::uint64_t seed) {
    if (widths.size() != 4) throw std::invalid_argument("sine mlp: need 4 hidden widths");
    SineMlp m;
    m.embedding = spec;
    m.latent_dim = latent_dim;
    m.widths = widths;
    auto rng = rng_stream(seed, "sine-mlp-init");
    const int d = m.input_dim();
    m.l1.init(widths[0], d, rng);
    m.l2.init(widths[1], widths[0], rng);
    m.l3.init(widths[2], widths[1] + d, rng);
    m.l4.init(widths[3], widths[2], rng);
    m.head.init(1, widths[3], rng);
    return m;
  }

  std::vector<DenseLayer*> layers() { return {&l1, &l2, &l3, &l4, &head}; }
  std::vector<const DenseLayer*> layers() const { return {&l1, &l2, &l3, &l4, &head}; }
};

struct MlpGrads {
  LayerGrad l1, l2, l3, l4, head;
  void init_zero(const SineMlp& m) {
    l1.init_zero(m.l1);
    l2.init_zero(m.l2);
    l3.init_zero(m.l3);
    l4.init_zero(m.l4);
    head.init_zero(m.head);
  }
};

// Cached activations of a batched forward pass with spatial tangents.
// Tangent matrices use the direction-major layout of embed_tangents.
struct MlpTrace {
  MatX x0, x0_tan;          // input and its spatial tangents
  MatX a1, a2, a3, a4;      // pre-activations
  MatX t1, t2, t3, t4;      // pre-activation tangents
  MatX u1, u2, u3, u4;      // sine outputs
  MatX v1, v2, v3, v4;      // sine output tangents
  Eigen::RowVectorXd value;  // 1 x b
  MatX grad;                 // 3 x b spatial gradient
};

namespace detail {

// u = sin(a); tangent v = cos(a) (*) t, broadcast over the 3 direction blocks.
inline void sine_forward(const MatX& a, const MatX& t, MatX& u, MatX& v) {
  u = a.array().sin();
  const MatX c = a.array().cos();
  const Eigen::Index b = a.cols();
  v.resize(a.rows(), 3 * b);
  for (int d = 0; d < 3; ++d)
    v.middleCols(d * b, b) = c.array() * t.middleCols(d * b, b).array();
}

// Tangent of a dense layer: rows of w applied to each direction block.
inline MatX layer_tangent(const DenseLayer& l, const MatX& tan_in) { return l.w * tan_in; }

}  // namespace detail

// Forward pass over a 3 x b batch of points sharing one latent code.
inline void mlp_forward(const SineMlp& m, const MatX& points, const VecX& z, MlpTrace& tr) {
  if (z.size() != m.latent_dim) throw std::invalid_argument("sine mlp: latent size mismatch");
  const Eigen::Index b = points.cols();
  const int ed = m.embedding.dim();
  tr.x0.resize(m.input_dim(), b);
  tr.x0.topRows(ed) = embed_points(m.embedding, points);
  tr.x0.bottomRows(m.latent_dim).colwise() = z;
  tr.x0_tan = MatX::Zero(m.input_dim(), 3 * b);
  tr.x0_tan.topRows(ed) = embed_tangents(m.embedding, points);

  tr.a1 = m.l1.apply(tr.x0);
  tr.t1 = detail::layer_tangent(m.l1, tr.x0_tan);
  detail::sine_forward(tr.a1, tr.t1, tr.u1, tr.v1);

  tr.a2 = m.l2.apply(tr.u1);
  tr.t2 = detail::layer_tangent(m.l2, tr.v1);
  detail::sine_forward(tr.a2, tr.t2, tr.u2, tr.v2);

  MatX skip_in(m.widths[1] + m.input_dim(), b);
  skip_in.topRows(m.widths[1]) = tr.u2;
  skip_in.bottomRows(m.input_dim()) = tr.x0;
  MatX skip_tan(skip_in.rows(), 3 * b);
  skip_tan.topRows(m.widths[1]) = tr.v2;
  skip_tan.bottomRows(m.input_dim()) = tr.x0_tan;
  tr.a3 = m.l3.apply(skip_in);
  tr.t3 = detail::layer_tangent(m.l3, skip_tan);
  detail::sine_forward(tr.a3, tr.t3, tr.u3, tr.v3);

  tr.a4 = m.l4.apply(tr.u3);
  tr.t4 = detail::layer_tangent(m.l4, tr.v3);
  detail::sine_forward(tr.a4, tr.t4, tr.u4, tr.v4);

  tr.value = m.head.apply(tr.u4).row(0);
  const MatX gr = m.head.w * tr.v4;  // 1 x 3b
  tr.grad.resize(3, b);
  for (int d = 0; d < 3; ++d) tr.grad.row(d) = gr.middleCols(d * b, b);
}

namespace detail {

// Reverse step through u = sin(a), v = cos(a) (*) t given upstream
// sensitivities (ru = dL/du, sv = dL/dv); produces (ra = dL/da, st = dL/dt).
inline void sine_backward(const MatX& a, const MatX& t, const MatX& ru, const MatX& sv, MatX& ra,
                          MatX& st) {
  const Eigen::Index b = a.cols();
  const MatX c = a.array().cos();
  const MatX s = a.array().sin();
  ra = ru.array() * c.array();
  st.resize(a.rows(), 3 * b);
  for (int d = 0; d < 3; ++d) {
    ra.array() -= s.array() * (sv.middleCols(d * b, b).array() * t.middleCols(d * b, b).array());
    st.middleCols(d * b, b) = c.array() * sv.middleCols(d * b, b).array();
  }
}

inline void accumulate_layer(LayerGrad& g, const MatX& ra, const MatX& st, const MatX& u_in,
                             const MatX& tan_in) {
  g.w.noalias() += ra * u_in.transpose();
  g.w.noalias() += st * tan_in.transpose();
  g.b += ra.rowwise().sum();
}

}  // namespace detail

// Reverse mode over the extended (value + tangent) graph. dvalue is 1 x b,
// dgrad is 3 x b; both in the same sample order as the forward pass.
inline void mlp_backward(const SineMlp& m, const MlpTrace& tr, const Eigen::RowVectorXd& dvalue,
                         const MatX& dgrad, MlpGrads& g) {
  const Eigen::Index b = tr.value.cols();
  MatX sv_head(1, 3 * b);  // dL/d(head tangent output)
  for (int d = 0; d < 3; ++d) sv_head.middleCols(d * b, b) = dgrad.row(d);

  g.head.w.noalias() += dvalue * tr.u4.transpose();
  g.head.w.noalias() += sv_head * tr.v4.transpose();
  g.head.b[0] += dvalue.sum();
  MatX ru = m.head.w.transpose() * dvalue;  // dL/du4
  MatX sv = m.head.w.transpose() * sv_head;  // dL/dv4

  MatX ra, st;
  detail::sine_backward(tr.a4, tr.t4, ru, sv, ra, st);
  detail::accumulate_layer(g.l4, ra, st, tr.u3, tr.v3);
  ru = m.l4.w.transpose() * ra;
  sv = m.l4.w.transpose() * st;

  detail::sine_backward(tr.a3, tr.t3, ru, sv, ra, st);
  {
    MatX skip_in(m.widths[1] + m.input_dim(), b);
    skip_in.topRows(m.widths[1]) = tr.u2;
    skip_in.bottomRows(m.input_dim()) = tr.x0;
    MatX skip_tan(skip_in.rows(), 3 * b);
    skip_tan.topRows(m.widths[1]) = tr.v2;
    skip_tan.bottomRows(m.input_dim()) = tr.x0_tan;
    detail::accumulate_layer(g.l3, ra, st, skip_in, skip_tan);
  }
  ru = (m.l3.w.transpose() * ra).topRows(m.widths[1]);  // input branch carries no parameters
  sv = (m.l3.w.transpose() * st).topRows(m.widths[1]);

  detail::sine_backward(tr.a2, tr.t2, ru, sv, ra, st);
  detail::accumulate_layer(g.l2, ra, st, tr.u1, tr.v1);
  ru = m.l2.w.transpose() * ra;
  sv = m.l2.w.transpose() * st;

  detail::sine_backward(tr.a1, tr.t1, ru, sv, ra, st);
  detail::accumulate_layer(g.l1, ra, st, tr.x0, tr.x0_tan);
}

// Single-point convenience: value and analytic spatial gradient.
inline double sdf_eval(const SineMlp& m, const VecX& z, const Vec3& p, Vec3* grad = nullptr) {
  MlpTrace tr;
  MatX pts(3, 1);
  pts.col(0) = p;
  mlp_forward(m, pts, z, tr);
  if (grad) *grad = tr.grad.col(0);
  return tr.value[0];
}

// ---------------------------------------------------------------------------
// Variational encoder / decoder on range images.

// Flattened ranges normalized by the far plane; invalid pixels stay 0.
inline VecX encoder_input(const RangeImage& img) {
  VecX out(static_cast<Eigen::Index>(img.ranges.size()));
  for (size_t i = 0; i < img.ranges.size(); ++i) out[i] = img.ranges[i] / img.frustum.d_max;
  return out;
}

struct Encoder {
  int input_width = 64, input_height = 48;
  int latent_dim = 16;
  std::vector<int> widths = {256, 128};  // tanh hidden layers
  std::vector<DenseLayer> hidden;
  DenseLayer mu_head, logstd_head;

  int input_dim() const { return input_width * input_height; }

  static Encoder make(int input_width, int input_height, int latent_dim,
                      const std::vector<int>& widths, std::uint64_t seed) {
    Encoder e;
    e.input_width = input_width;
    e.input_height = input_height;
    e.latent_dim = latent_dim;
    e.widths = widths;
    auto rng = rng_stream(seed, "encoder-init");
    int prev = e.input_dim();
    for (int wdt : widths) {
      DenseLayer l;
      l.init(wdt, prev, rng);
      e.hidden.push_back(l);
      prev = wdt;
    }
    e.mu_head.init(latent_dim, prev, rng);
    e.logstd_head.init(latent_dim, prev, rng);
    return e;
  }
};

struct Decoder {
  std::vector<int> widths = {128, 256};  // tanh hidden layers
  std::vector<DenseLayer> hidden;
  DenseLayer out;  // sigmoid output over pixels

  static Decoder make(int latent_dim, const std::vector<int>& widths, int output_dim,
                      std::uint64_t seed) {
    Decoder d;
    d.widths = widths;
    auto rng = rng_stream(seed, "decoder-init");
    int prev = latent_dim;
    for (int wdt : widths) {
      DenseLayer l;
      l.init(wdt, prev, rng);
      d.hidden.push_back(l);
      prev = wdt;
    }
    d.out.init(output_dim, prev, rng);
    return d;
  }
};

struct EncoderTrace {
  MatX x0;
  std::vector<MatX> pre, act;  // tanh layers
  MatX mu, logstd, sigma;
};

inline void encoder_forward_batch(const Encoder& e, const MatX& x, EncoderTrace& tr) {
  if (x.rows() != e.input_dim()) throw std::invalid_argument("encoder: input shape mismatch");
  tr.x0 = x;
  tr.pre.assign(e.hidden.size(), {});
  tr.act.assign(e.hidden.size(), {});
  const MatX* cur = &tr.x0;
  for (size_t i = 0; i < e.hidden.size(); ++i) {
    tr.pre[i] = e.hidden[i].apply(*cur);
    tr.act[i] = tr.pre[i].array().tanh();
    cur = &tr.act[i];
  }
  tr.mu = e.mu_head.apply(*cur);
  tr.logstd = e.logstd_head.apply(*cur);
  tr.sigma = tr.logstd.array().exp();
}

// Deterministic single-image code: the mean of the latent Gaussian.
inline void encoder_forward(const Encoder& e, const RangeImage& img, VecX& mu, VecX& sigma) {
  if (img.width != e.input_width || img.height != e.input_height)
    throw std::invalid_argument("encoder: image shape mismatch");
  EncoderTrace tr;
  encoder_forward_batch(e, encoder_input(img), tr);
  mu = tr.mu.col(0);
  sigma = tr.sigma.col(0);
}

inline VecX latent_code(const Encoder& e, const RangeImage& img) {
  VecX mu, sigma;
  encoder_forward(e, img, mu, sigma);
  return mu;
}

struct DecoderTrace {
  MatX z;
  std::vector<MatX> pre, act;
  MatX out_pre, out;  // sigmoid output
};

inline void decoder_forward_batch(const Decoder& d, const MatX& z, DecoderTrace& tr) {
  tr.z = z;
  tr.pre.assign(d.hidden.size(), {});
  tr.act.assign(d.hidden.size(), {});
  const MatX* cur = &tr.z;
  for (size_t i = 0; i < d.hidden.size(); ++i) {
    tr.pre[i] = d.hidden[i].apply(*cur);
    tr.act[i] = tr.pre[i].array().tanh();
    cur = &tr.act[i];
  }
  tr.out_pre = d.out.apply(*cur);
  tr.out = 1.0 / (1.0 + (-tr.out_pre).array().exp());
}

// ---------------------------------------------------------------------------
// Losses.

// Sum over valid (nonzero-target) pixels of (o^2 (w-1) + 1) (d - o)^2: weight
// 1 where the target is near, w where it saturates at the far plane.
inline double biased_reconstruction_loss(const MatX& decoded, const MatX& target, double w,
                                         MatX* d_decoded = nullptr) {
  if (decoded.rows() != target.rows() || decoded.cols() != target.cols())
    throw std::invalid_argument("reconstruction loss: shape mismatch");
  double loss = 0.0;
  if (d_decoded) d_decoded->setZero(decoded.rows(), decoded.cols());
  for (Eigen::Index j = 0; j < target.cols(); ++j)
    for (Eigen::Index i = 0; i < target.rows(); ++i) {
      const double o = target(i, j);
      if (o == 0.0) continue;
      const double weight = o * o * (w - 1.0) + 1.0;
      const double err = decoded(i, j) - o;
      loss += weight * err * err;
      if (d_decoded) (*d_decoded)(i, j) = 2.0 * weight * err;
    }
  return loss;
}

// -(beta/2) sum(1 + log sigma^2 - mu^2 - sigma^2), zero exactly at the
// standard normal.
inline double kld_loss(const MatX& mu, const MatX& logstd, double beta, MatX* d_mu = nullptr,
                       MatX* d_logstd = nullptr) {
  const MatX sig2 = (2.0 * logstd).array().exp();
  const double loss =
      -(beta / 2.0) *
      (1.0 + 2.0 * logstd.array() - mu.array().square() - sig2.array()).sum();
  if (d_mu) *d_mu = beta * mu;
  if (d_logstd) *d_logstd = beta * (sig2.array() - 1.0);
  return loss;
}

}  // namespace sdfmpc
