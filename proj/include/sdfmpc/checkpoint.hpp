#pragma once

// Artifact I/O: network checkpoints (JSON header + f32 parameter blob) and the
// braking polynomial (plain JSON). Blob layout is layer-ordered, each layer as
// column-major weights followed by the bias. Little-endian, like the range
// image format.

#include "sdfmpc/braking.hpp"
#include "sdfmpc/net.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdfmpc {

namespace detail {

inline void blob_append(std::vector<float>& blob, const DenseLayer& l) {
  for (Eigen::Index i = 0; i < l.w.size(); ++i)
    blob.push_back(static_cast<float>(l.w.data()[i]));
  for (Eigen::Index i = 0; i < l.b.size(); ++i)
    blob.push_back(static_cast<float>(l.b[i]));
}

inline void blob_read(const std::vector<float>& blob, size_t& pos, DenseLayer& l, int rows,
                      int cols) {
  l.w.resize(rows, cols);
  l.b.resize(rows);
  const size_t need = static_cast<size_t>(rows) * cols + rows;
  if (pos + need > blob.size()) throw std::runtime_error("checkpoint: blob too short");
  for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = blob[pos++];
  for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = blob[pos++];
}

inline void write_checkpoint(const std::string& path, const nlohmann::json& header,
                             const std::vector<float>& blob) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  const std::string hdr = header.dump();
  const char magic[4] = {'S', 'D', 'F', 'C'};
  const std::uint32_t hlen = static_cast<std::uint32_t>(hdr.size());
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline nlohmann::json read_checkpoint(const std::string& path, std::vector<float>& blob) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  std::uint32_t hlen = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&hlen), 4);
  if (!in || std::memcmp(magic, "SDFC", 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::string hdr(hlen, '\0');
  in.read(hdr.data(), hlen);
  if (!in) throw std::runtime_error("checkpoint header truncated: " + path);
  std::vector<char> rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (rest.size() % sizeof(float) != 0)
    throw std::runtime_error("checkpoint blob misaligned: " + path);
  blob.resize(rest.size() / sizeof(float));
  std::memcpy(blob.data(), rest.data(), rest.size());
  return nlohmann::json::parse(hdr);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Distance field MLP.

inline void save_field_checkpoint(const SineMlp& m, const std::string& path) {
  nlohmann::json header;
  header["architecture"] = "sine-mlp";
  header["widths"] = m.widths;
  header["L"] = m.embedding.bands;
  header["latent-dim"] = m.latent_dim;
  std::vector<float> blob;
  for (const DenseLayer* l : m.layers()) detail::blob_append(blob, *l);
  detail::write_checkpoint(path, header, blob);
}

inline SineMlp load_field_checkpoint(const std::string& path) {
  std::vector<float> blob;
  const nlohmann::json header = detail::read_checkpoint(path, blob);
  if (header.at("architecture") != "sine-mlp")
    throw std::runtime_error("checkpoint architecture mismatch: " + path);
  SineMlp m;
  m.embedding.bands = header.at("L").get<int>();
  m.latent_dim = header.at("latent-dim").get<int>();
  m.widths = header.at("widths").get<std::vector<int>>();
  if (m.widths.size() != 4) throw std::runtime_error("checkpoint: need 4 hidden widths");
  size_t pos = 0;
  const int d = m.input_dim();
  detail::blob_read(blob, pos, m.l1, m.widths[0], d);
  detail::blob_read(blob, pos, m.l2, m.widths[1], m.widths[0]);
  detail::blob_read(blob, pos, m.l3, m.widths[2], m.widths[1] + d);
  detail::blob_read(blob, pos, m.l4, m.widths[3], m.widths[2]);
  detail::blob_read(blob, pos, m.head, 1, m.widths[3]);
  if (pos != blob.size()) throw std::runtime_error("checkpoint: trailing blob data: " + path);
  return m;
}

// ---------------------------------------------------------------------------
// Variational encoder / decoder.

inline void save_encoder_checkpoint(const Encoder& e, const std::string& path) {
  nlohmann::json header;
  header["architecture"] = "vae-encoder";
  header["widths"] = e.widths;
  header["L"] = 0;
  header["latent-dim"] = e.latent_dim;
  header["input-width"] = e.input_width;
  header["input-height"] = e.input_height;
  std::vector<float> blob;
  for (const DenseLayer& l : e.hidden) detail::blob_append(blob, l);
  detail::blob_append(blob, e.mu_head);
  detail::blob_append(blob, e.logstd_head);
  detail::write_checkpoint(path, header, blob);
}

inline Encoder load_encoder_checkpoint(const std::string& path) {
  std::vector<float> blob;
  const nlohmann::json header = detail::read_checkpoint(path, blob);
  if (header.at("architecture") != "vae-encoder")
    throw std::runtime_error("checkpoint architecture mismatch: " + path);
  Encoder e;
  e.widths = header.at("widths").get<std::vector<int>>();
  e.latent_dim = header.at("latent-dim").get<int>();
  e.input_width = header.at("input-width").get<int>();
  e.input_height = header.at("input-height").get<int>();
  size_t pos = 0;
  int prev = e.input_dim();
  e.hidden.resize(e.widths.size());
  for (size_t i = 0; i < e.widths.size(); ++i) {
    detail::blob_read(blob, pos, e.hidden[i], e.widths[i], prev);
    prev = e.widths[i];
  }
  detail::blob_read(blob, pos, e.mu_head, e.latent_dim, prev);
  detail::blob_read(blob, pos, e.logstd_head, e.latent_dim, prev);
  if (pos != blob.size()) throw std::runtime_error("checkpoint: trailing blob data: " + path);
  return e;
}

inline void save_decoder_checkpoint(const Decoder& d, int latent_dim, const std::string& path) {
  nlohmann::json header;
  header["architecture"] = "vae-decoder";
  header["widths"] = d.widths;
  header["L"] = 0;
  header["latent-dim"] = latent_dim;
  header["output-dim"] = static_cast<int>(d.out.w.rows());
  std::vector<float> blob;
  for (const DenseLayer& l : d.hidden) detail::blob_append(blob, l);
  detail::blob_append(blob, d.out);
  detail::write_checkpoint(path, header, blob);
}

inline Decoder load_decoder_checkpoint(const std::string& path) {
  std::vector<float> blob;
  const nlohmann::json header = detail::read_checkpoint(path, blob);
  if (header.at("architecture") != "vae-decoder")
    throw std::runtime_error("checkpoint architecture mismatch: " + path);
  Decoder d;
  d.widths = header.at("widths").get<std::vector<int>>();
  const int latent_dim = header.at("latent-dim").get<int>();
  const int output_dim = header.at("output-dim").get<int>();
  size_t pos = 0;
  int prev = latent_dim;
  d.hidden.resize(d.widths.size());
  for (size_t i = 0; i < d.widths.size(); ++i) {
    detail::blob_read(blob, pos, d.hidden[i], d.widths[i], prev);
    prev = d.widths[i];
  }
  detail::blob_read(blob, pos, d.out, output_dim, prev);
  if (pos != blob.size()) throw std::runtime_error("checkpoint: trailing blob data: " + path);
  return d;
}

// ---------------------------------------------------------------------------
// Braking polynomial artifact.

inline void save_braking_polynomial(const BrakingPolynomial& poly, const std::string& path) {
  nlohmann::json j;
  j["degree"] = poly.degree;
  j["fit_radius"] = poly.fit_radius;
  j["rmse"] = poly.rmse;
  j["max_underestimate"] = poly.max_underestimate;
  j["max_overestimate"] = poly.max_overestimate;
  j["exponents"] = nlohmann::json::array();
  for (const auto& e : poly.exponents) j["exponents"].push_back({e[0], e[1], e[2]});
  j["coefficients"] = std::vector<double>(poly.coefficients.data(),
                                          poly.coefficients.data() + poly.coefficients.size());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open polynomial artifact for writing: " + path);
  out << j.dump(2) << "\n";
}

inline BrakingPolynomial load_braking_polynomial(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open polynomial artifact: " + path);
  nlohmann::json j;
  in >> j;
  BrakingPolynomial poly;
  poly.degree = j.at("degree").get<int>();
  poly.fit_radius = j.at("fit_radius").get<double>();
  poly.rmse = j.at("rmse").get<double>();
  poly.max_underestimate = j.at("max_underestimate").get<double>();
  poly.max_overestimate = j.at("max_overestimate").get<double>();
  poly.exponents.clear();
  for (const auto& e : j.at("exponents"))
    poly.exponents.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>()});
  const auto coeffs = j.at("coefficients").get<std::vector<double>>();
  poly.coefficients = Eigen::Map<const VecX>(coeffs.data(),
                                             static_cast<Eigen::Index>(coeffs.size()));
  if (poly.exponents.size() != static_cast<size_t>(poly.coefficients.size()))
    throw std::runtime_error("polynomial artifact: exponent/coefficient mismatch: " + path);
  return poly;
}

}  // namespace sdfmpc
