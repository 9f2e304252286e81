// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"

namespace polysearch {

inline constexpr double kDefaultMargin = 0.2;

/// max(0, margin - x.y + x.z). Throws ValidationError on non-finite inputs
/// or a non-positive margin.
double triplet_loss(const JointVector& x, const JointVector& y, const JointVector& z, double margin = kDefaultMargin);

/// Outcome of the in-batch hardest-negative loss.
struct BatchLoss {
  double value = 0.0;
  /// Per entry: batch index of the caption chosen from U (unrelated captions)
  /// and of the image chosen from D (images of other ids).
  std::vector<std::size_t> negative_caption;
  std::vector<std::size_t> negative_image;
  /// dLoss/d(vector) per entry; filled only when requested.
  std::vector<Vector> d_images;
  std::vector<Vector> d_captions;
};

/// Sum over entries p of
///   max_{z in U_p} loss(image_p, caption_p, z) + max_{z in D_p} loss(caption_p, image_p, z)
/// where U_p/D_p are the captions/images of entries whose image id differs
/// from entry p's. Entry p pairs `images[p]` with `captions[p]`; an image id
/// may appear on several entries. The hardest negative is the most similar
/// one; ties go to the lowest batch index. The hinge contributes no gradient
/// at exactly zero.
///
/// Throws ValidationError when fewer than two distinct image ids are present.
BatchLoss batch_loss(std::span<const std::string> image_ids, std::span<const JointVector> images,
                     std::span<const JointVector> captions, double margin = kDefaultMargin,
                     bool with_gradients = false);

}  // namespace polysearch
