// SPDX-License-Identifier: Apache-2.0
#include "loss.hpp"

#include <limits>
#include <set>

namespace polysearch {
namespace {

double hinge(double margin, double positive, double negative) {
  return std::max(0.0, margin - positive + negative);
}

}  // namespace

double triplet_loss(const JointVector& x, const JointVector& y, const JointVector& z, double margin) {
  if (!(margin > 0.0) || !std::isfinite(margin)) throw ValidationError("triplet margin must be positive and finite");
  if (!x.values().allFinite() || !y.values().allFinite() || !z.values().allFinite())
    throw ValidationError("triplet loss received non-finite inputs");
  if (x.dim() != y.dim() || x.dim() != z.dim()) throw ValidationError("triplet loss inputs differ in dimension");
  return hinge(margin, x.dot(y), x.dot(z));
}

BatchLoss batch_loss(std::span<const std::string> image_ids, std::span<const JointVector> images,
                     std::span<const JointVector> captions, double margin, bool with_gradients) {
  const std::size_t n = image_ids.size();
  if (images.size() != n || captions.size() != n) throw ValidationError("batch arrays differ in length");
  if (!(margin > 0.0) || !std::isfinite(margin)) throw ValidationError("triplet margin must be positive and finite");
  if (std::set<std::string_view>(image_ids.begin(), image_ids.end()).size() < 2)
    throw ValidationError("batch needs at least two distinct image ids for negative mining");

  BatchLoss out;
  out.negative_caption.resize(n);
  out.negative_image.resize(n);
  if (with_gradients) {
    const Eigen::Index d = images[0].dim();
    out.d_images.assign(n, Vector::Zero(d));
    out.d_captions.assign(n, Vector::Zero(d));
  }

  // Pairwise image.caption similarities; entry (p, q) = images[p] . captions[q].
  std::vector<double> sim(n * n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = 0; q < n; ++q) sim[p * n + q] = images[p].dot(captions[q]);

  for (std::size_t p = 0; p < n; ++p) {
    const double positive = sim[p * n + p];

    // Hardest unrelated caption for image p.
    std::size_t best_caption = n;
    double best_caption_sim = -std::numeric_limits<double>::infinity();
    // Hardest other image for caption p.
    std::size_t best_image = n;
    double best_image_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < n; ++q) {
      if (image_ids[q] == image_ids[p]) continue;
      if (sim[p * n + q] > best_caption_sim) {
        best_caption_sim = sim[p * n + q];
        best_caption = q;
      }
      if (sim[q * n + p] > best_image_sim) {
        best_image_sim = sim[q * n + p];
        best_image = q;
      }
    }
    if (best_caption == n || best_image == n || image_ids[best_caption] == image_ids[p] ||
        image_ids[best_image] == image_ids[p])
      throw std::logic_error("negative mining selected a negative sharing the anchor's image id");
    out.negative_caption[p] = best_caption;
    out.negative_image[p] = best_image;

    const double caption_term = hinge(margin, positive, best_caption_sim);
    const double image_term = hinge(margin, positive, best_image_sim);
    out.value += caption_term + image_term;

    if (with_gradients) {
      if (caption_term > 0.0) {
        out.d_images[p] += captions[best_caption].values() - captions[p].values();
        out.d_captions[p] -= images[p].values();
        out.d_captions[best_caption] += images[p].values();
      }
      if (image_term > 0.0) {
        out.d_captions[p] += images[best_image].values() - images[p].values();
        out.d_images[p] -= captions[p].values();
        out.d_images[best_image] += captions[p].values();
      }
    }
  }
  if (!std::isfinite(out.value)) throw NumericError("batch loss is not finite");
  return out;
}

}  // namespace polysearch
