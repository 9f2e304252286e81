// SPDX-License-Identifier: Apache-2.0
#include "image_encoder.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <numeric>
#include <sstream>

#include "io_util.hpp"

namespace polysearch {

FeatureMap::FeatureMap(Eigen::Index channels, Eigen::Index height, Eigen::Index width)
    : height_(height), width_(width), values_(Matrix::Zero(channels, height * width)) {
  if (channels < 1 || height < 1 || width < 1) throw ValidationError("feature map dimensions must be >= 1");
}

FeatureMap::FeatureMap(Eigen::Index height, Eigen::Index width, Matrix values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (values_.rows() < 1 || height < 1 || width < 1) throw ValidationError("feature map dimensions must be >= 1");
  if (values_.cols() != height * width) throw ValidationError("feature map values do not match H*W");
  if (!values_.allFinite()) throw ValidationError("feature map has non-finite values");
}

namespace {

constexpr std::size_t kHeaderBytes = 16;

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace

FeatureMap FeatureMap::decode(std::string_view bytes) {
  if (bytes.size() < kHeaderBytes) throw ValidationError("FMAP payload shorter than its 16-byte header");
  if (bytes.substr(0, 4) != "FMAP") throw ValidationError("FMAP payload has wrong magic bytes");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t c = read_u32_le(p + 4);
  const std::uint64_t h = read_u32_le(p + 8);
  const std::uint64_t w = read_u32_le(p + 12);
  if (c == 0 || h == 0 || w == 0) throw ValidationError("FMAP dimensions must be >= 1");
  const std::uint64_t count = c * h * w;
  if (count > (std::uint64_t{1} << 32)) throw ValidationError("FMAP dimensions are implausibly large");
  if (bytes.size() != kHeaderBytes + 4 * count)
    throw ValidationError("FMAP payload has " + std::to_string(bytes.size() - kHeaderBytes) + " data bytes, expected " +
                          std::to_string(4 * count));
  const auto hw = static_cast<Eigen::Index>(h * w);
  Matrix values(static_cast<Eigen::Index>(c), hw);
  const unsigned char* data = p + kHeaderBytes;
  for (Eigen::Index ch = 0; ch < static_cast<Eigen::Index>(c); ++ch) {
    for (Eigen::Index l = 0; l < hw; ++l) {
      const std::uint32_t bits = read_u32_le(data + 4 * (ch * hw + l));
      values(ch, l) = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return FeatureMap(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w), std::move(values));
}

std::string FeatureMap::encode() const {
  std::string out = "FMAP";
  out.reserve(kHeaderBytes + 4 * static_cast<std::size_t>(values_.size()));
  write_u32_le(out, static_cast<std::uint32_t>(channels()));
  write_u32_le(out, static_cast<std::uint32_t>(height_));
  write_u32_le(out, static_cast<std::uint32_t>(width_));
  for (Eigen::Index ch = 0; ch < channels(); ++ch)
    for (Eigen::Index l = 0; l < locations(); ++l)
      write_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(values_(ch, l))));
  return out;
}

FeatureMap FeatureMap::load(const std::filesystem::path& path) {
  try {
    return decode(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void FeatureMap::save(const std::filesystem::path& path) const { write_text_file(path, encode()); }

Vector weldon_pool(const Matrix& activations, int k_pos, int k_neg, WeldonSelection* selection) {
  const Eigen::Index locations = activations.cols();
  if (k_pos < 1 || k_neg < 1 || k_pos > locations || k_neg > locations)
    throw ValidationError("Weldon counts k+=" + std::to_string(k_pos) + ", k-=" + std::to_string(k_neg) +
                          " must lie in [1, " + std::to_string(locations) + "]");
  const Eigen::Index channels = activations.rows();
  Vector signature(channels);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(locations));
  if (selection) {
    selection->top.assign(static_cast<std::size_t>(channels), {});
    selection->bottom.assign(static_cast<std::size_t>(channels), {});
  }
  for (Eigen::Index c = 0; c < channels; ++c) {
    auto value = [&](Eigen::Index l) { return activations(c, l); };
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::partial_sort(order.begin(), order.begin() + k_pos, order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return value(a) > value(b) || (value(a) == value(b) && a < b);
    });
    double high = 0.0;
    for (int i = 0; i < k_pos; ++i) high += value(order[static_cast<std::size_t>(i)]);
    if (selection) selection->top[static_cast<std::size_t>(c)].assign(order.begin(), order.begin() + k_pos);

    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::partial_sort(order.begin(), order.begin() + k_neg, order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return value(a) < value(b) || (value(a) == value(b) && a < b);
    });
    double low = 0.0;
    for (int i = 0; i < k_neg; ++i) low += value(order[static_cast<std::size_t>(i)]);
    if (selection) selection->bottom[static_cast<std::size_t>(c)].assign(order.begin(), order.begin() + k_neg);

    signature[c] = high / k_pos + low / k_neg;
  }
  return signature;
}

ImageEncoderParams ImageEncoderParams::init(Eigen::Index channels, Eigen::Index joint_dim, int k_pos, int k_neg,
                                            std::mt19937_64& rng) {
  ImageEncoderParams p;
  p.adapter_w = Matrix::Identity(channels, channels);
  p.adapter_b = Vector::Zero(channels);
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  std::uniform_real_distribution<double> uni(-bound, bound);
  p.proj_w = Matrix::NullaryExpr(joint_dim, channels, [&] { return uni(rng); });
  p.proj_b = Vector::Zero(joint_dim);
  p.k_pos = k_pos;
  p.k_neg = k_neg;
  return p;
}

ImageEncoderParams ImageEncoderParams::zeros_like() const {
  ImageEncoderParams g;
  g.adapter_w = Matrix::Zero(adapter_w.rows(), adapter_w.cols());
  g.adapter_b = Vector::Zero(adapter_b.size());
  g.proj_w = Matrix::Zero(proj_w.rows(), proj_w.cols());
  g.proj_b = Vector::Zero(proj_b.size());
  g.k_pos = k_pos;
  g.k_neg = k_neg;
  return g;
}

namespace {

// Column-at-a-time so each location's result does not depend on its position
// in the grid (keeps pooling exactly permutation invariant).
Matrix adapt(const Matrix& values, const ImageEncoderParams& params) {
  Matrix out(values.rows(), values.cols());
  for (Eigen::Index l = 0; l < values.cols(); ++l) out.col(l).noalias() = params.adapter_w * values.col(l) + params.adapter_b;
  return out;
}

}  // namespace

JointVector encode_image(const FeatureMap& fm, const ImageEncoderParams& params, ImageTrace* trace) {
  if (fm.channels() != params.channels())
    throw ValidationError("feature map has " + std::to_string(fm.channels()) + " channels, encoder expects " +
                          std::to_string(params.channels()));
  ImageTrace local;
  ImageTrace& t = trace ? *trace : local;
  t.adapted = adapt(fm.values(), params);
  t.signature = weldon_pool(t.adapted, params.k_pos, params.k_neg, trace ? &t.selection : nullptr);
  t.projected = params.proj_w * t.signature + params.proj_b;
  return JointVector::normalize(t.projected);
}

Matrix backward_image(const FeatureMap& fm, const ImageEncoderParams& params, const ImageTrace& trace,
                      const Vector& d_output, ImageEncoderParams& grads) {
  const double norm = trace.projected.norm();
  const Vector v = trace.projected / norm;
  const Vector d_projected = (d_output - v * v.dot(d_output)) / norm;
  grads.proj_w.noalias() += d_projected * trace.signature.transpose();
  grads.proj_b += d_projected;
  const Vector d_signature = params.proj_w.transpose() * d_projected;

  Matrix d_adapted = Matrix::Zero(trace.adapted.rows(), trace.adapted.cols());
  for (Eigen::Index c = 0; c < d_adapted.rows(); ++c) {
    const auto cu = static_cast<std::size_t>(c);
    for (Eigen::Index l : trace.selection.top[cu]) d_adapted(c, l) += d_signature[c] / params.k_pos;
    for (Eigen::Index l : trace.selection.bottom[cu]) d_adapted(c, l) += d_signature[c] / params.k_neg;
  }
  grads.adapter_w.noalias() += d_adapted * fm.values().transpose();
  grads.adapter_b += d_adapted.rowwise().sum();
  return params.adapter_w.transpose() * d_adapted;
}

Matrix heatmap(const JointVector& text, const FeatureMap& fm, const ImageEncoderParams& params) {
  if (fm.channels() != params.channels()) throw ValidationError("feature map channel count does not match the encoder");
  if (text.dim() != params.joint_dim()) throw ValidationError("text vector dimension does not match the encoder");
  Matrix map(fm.height(), fm.width());
  for (Eigen::Index h = 0; h < fm.height(); ++h) {
    for (Eigen::Index w = 0; w < fm.width(); ++w) {
      const Vector column = fm.values().col(h * fm.width() + w);
      const Vector projected = params.proj_w * (params.adapter_w * column + params.adapter_b) + params.proj_b;
      const double n = projected.norm();
      map(h, w) = n > 0.0 ? dot(text.values(), Vector(projected / n)) : 0.0;
    }
  }
  return map;
}

std::string heatmap_to_pgm(const Matrix& map) {
  std::ostringstream out;
  out << "P2\n" << map.cols() << " " << map.rows() << "\n255\n";
  for (Eigen::Index h = 0; h < map.rows(); ++h) {
    for (Eigen::Index w = 0; w < map.cols(); ++w) {
      const double v = std::clamp(map(h, w), -1.0, 1.0);
      out << (w ? " " : "") << static_cast<int>(std::lround((v + 1.0) * 127.5));
    }
    out << "\n";
  }
  return out.str();
}

std::string heatmap_to_json(const Matrix& map) {
  std::ostringstream out;
  out.precision(17);
  out << "[";
  for (Eigen::Index h = 0; h < map.rows(); ++h) {
    out << (h ? "," : "") << "[";
    for (Eigen::Index w = 0; w < map.cols(); ++w) out << (w ? "," : "") << map(h, w);
    out << "]";
  }
  out << "]";
  return out.str();
}

}  // namespace polysearch
