// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"

namespace polysearch {

/// C x H x W grid of convolutional activations. Stored as a C x (H*W)
/// matrix; spatial position (h, w) is column h*W + w.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(Eigen::Index channels, Eigen::Index height, Eigen::Index width);
  FeatureMap(Eigen::Index height, Eigen::Index width, Matrix values);

  Eigen::Index channels() const { return values_.rows(); }
  Eigen::Index height() const { return height_; }
  Eigen::Index width() const { return width_; }
  Eigen::Index locations() const { return height_ * width_; }

  double operator()(Eigen::Index c, Eigen::Index h, Eigen::Index w) const { return values_(c, h * width_ + w); }
  double& operator()(Eigen::Index c, Eigen::Index h, Eigen::Index w) { return values_(c, h * width_ + w); }

  const Matrix& values() const { return values_; }
  Matrix& values() { return values_; }

  /// "FMAP", then u32 LE C, H, W, then C*H*W f32 LE in (c, h, w) order.
  static FeatureMap decode(std::string_view bytes);
  std::string encode() const;
  static FeatureMap load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  Eigen::Index height_ = 0;
  Eigen::Index width_ = 0;
  Matrix values_;
};

/// Default Weldon extreme count for a grid with `locations` cells.
inline int default_weldon_k(Eigen::Index locations) {
  return static_cast<int>(std::max<Eigen::Index>(1, locations / 10));
}

/// Spatial indices selected per channel by Weldon pooling.
struct WeldonSelection {
  std::vector<std::vector<Eigen::Index>> top;     // k_pos per channel, value desc
  std::vector<std::vector<Eigen::Index>> bottom;  // k_neg per channel, value asc
};

/// Per channel: mean of the k_pos largest plus mean of the k_neg smallest
/// spatial activations. Ties go to the lowest flat index. `activations` is
/// C x L.
Vector weldon_pool(const Matrix& activations, int k_pos, int k_neg, WeldonSelection* selection = nullptr);
inline Vector weldon_pool(const FeatureMap& fm, int k_pos, int k_neg) { return weldon_pool(fm.values(), k_pos, k_neg); }

/// Image path parameters: a 1x1 channel adapter (identity at init, trained
/// only when fine-tuning), Weldon pooling, then an affine projection to d.
struct ImageEncoderParams {
  Matrix adapter_w;  // C x C
  Vector adapter_b;  // C
  Matrix proj_w;     // d x C
  Vector proj_b;     // d
  int k_pos = 1;
  int k_neg = 1;

  static ImageEncoderParams init(Eigen::Index channels, Eigen::Index joint_dim, int k_pos, int k_neg, std::mt19937_64& rng);

  Eigen::Index channels() const { return proj_w.cols(); }
  Eigen::Index joint_dim() const { return proj_w.rows(); }

  ImageEncoderParams zeros_like() const;

  template <class F, class... P>
  static void for_each_tensor(F&& f, P&... p) {
    f("image.adapter.w", p.adapter_w...);
    f("image.adapter.b", p.adapter_b...);
    f("image.proj.w", p.proj_w...);
    f("image.proj.b", p.proj_b...);
  }
};

/// Intermediate values kept for the backward pass.
struct ImageTrace {
  Matrix adapted;  // C x L
  WeldonSelection selection;
  Vector signature;  // C
  Vector projected;  // d, before normalization
};

/// weldon_pool -> affine projection -> L2 normalization.
JointVector encode_image(const FeatureMap& fm, const ImageEncoderParams& params, ImageTrace* trace = nullptr);

/// Accumulates gradients of a scalar into `grads` given dL/d(output). Returns
/// dL/d(feature map values), C x L.
Matrix backward_image(const FeatureMap& fm, const ImageEncoderParams& params, const ImageTrace& trace,
                      const Vector& d_output, ImageEncoderParams& grads);

/// H x W map of t . normalize(project(adapt(column))) for every location.
Matrix heatmap(const JointVector& text, const FeatureMap& fm, const ImageEncoderParams& params);

/// Plain PGM (P2), values in [-1, 1] scaled to 0..255.
std::string heatmap_to_pgm(const Matrix& map);
std::string heatmap_to_json(const Matrix& map);

}  // namespace polysearch
