// SPDX-License-Identifier: Apache-2.0
#include "gradcheck.hpp"

#include <algorithm>
#include <random>

#include "loss.hpp"
#include "model.hpp"
#include "trainer.hpp"

namespace polysearch {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

double central_difference(const std::function<double()>& f, double& x, double step) {
  const double saved = x;
  x = saved + step;
  const double plus = f();
  x = saved - step;
  const double minus = f();
  x = saved;
  return (plus - minus) / (2.0 * step);
}

namespace {

class Checker {
 public:
  Checker(std::string component, double tolerance) {
    report_.component = std::move(component);
    report_.tolerance = tolerance;
  }

  // Compares every entry of `values` against the matching `analytic` entry.
  template <class T, class G>
  void compare(const std::string& name, T& values, const G& analytic, const std::function<double()>& f) {
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      const double numeric = central_difference(f, values.data()[i]);
      const double err = relative_error(analytic.data()[i], numeric);
      ++report_.checked;
      if (err > report_.max_relative_error || report_.worst_entry.empty()) {
        report_.max_relative_error = err;
        report_.worst_entry = name + "[" + std::to_string(i) + "]";
      }
    }
  }

  GradCheckReport finish() {
    report_.passed = report_.max_relative_error < report_.tolerance;
    return report_;
  }

 private:
  GradCheckReport report_;
};

Vector random_unit(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v = Vector::NullaryExpr(d, [&] { return g(rng); });
  return v / v.norm();
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  return Matrix::NullaryExpr(r, c, [&] { return g(rng); });
}

ImageEncoderParams small_image_params(std::mt19937_64& rng, Eigen::Index channels, Eigen::Index joint) {
  ImageEncoderParams p = ImageEncoderParams::init(channels, joint, 2, 2, rng);
  p.adapter_w += 0.3 * random_matrix(channels, channels, rng);
  p.adapter_b = 0.1 * random_matrix(channels, 1, rng);
  p.proj_b = 0.1 * random_matrix(joint, 1, rng);
  return p;
}

TextEncoderParams small_text_params(std::mt19937_64& rng, double dropout) {
  TextEncoderParams p = TextEncoderParams::init(4, 5, 3, dropout, rng);
  for (auto& l : p.layers) {
    l.b_forget = 0.5 * random_matrix(l.hidden_dim(), 1, rng);
    l.b_reset = 0.5 * random_matrix(l.hidden_dim(), 1, rng);
  }
  p.proj_b = 0.1 * random_matrix(p.joint_dim(), 1, rng);
  return p;
}

GradCheckReport check_text(double tolerance, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TextEncoderParams params = small_text_params(rng, 0.25);
  Matrix inputs = random_matrix(4, 3, rng);
  const Vector target = random_unit(params.joint_dim(), rng);
  const std::uint64_t mask_seed = seed + 17;

  auto readout = [&] {
    std::mt19937_64 mask_rng(mask_seed);
    return encode_vectors(inputs, params, Mode::kTrain, &mask_rng).values().dot(target);
  };

  TextTrace trace;
  std::mt19937_64 mask_rng(mask_seed);
  encode_vectors(inputs, params, Mode::kTrain, &mask_rng, &trace);
  TextEncoderParams grads = params.zeros_like();
  const Matrix d_inputs = backward_text(params, trace, target, grads);

  Checker checker("text", tolerance);
  TextEncoderParams::for_each_tensor(
      [&](const std::string& name, auto& value, const auto& grad) { checker.compare(name, value, grad, readout); },
      params, grads);
  checker.compare("inputs", inputs, d_inputs, readout);
  return checker.finish();
}

GradCheckReport check_image(double tolerance, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ImageEncoderParams params = small_image_params(rng, 4, 3);
  FeatureMap fm(3, 3, random_matrix(4, 9, rng));
  const Vector target = random_unit(params.joint_dim(), rng);
  auto readout = [&] { return encode_image(fm, params).values().dot(target); };

  ImageTrace trace;
  encode_image(fm, params, &trace);
  ImageEncoderParams grads = params.zeros_like();
  const Matrix d_fm = backward_image(fm, params, trace, target, grads);

  Checker checker("image", tolerance);
  ImageEncoderParams::for_each_tensor(
      [&](const std::string& name, auto& value, const auto& grad) { checker.compare(name, value, grad, readout); },
      params, grads);
  checker.compare("feature_map", fm.values(), d_fm, readout);
  return checker.finish();
}

// True when every hinge is active and every mining decision is separated by
// more than `gap`, so the loss is linear around the point.
bool away_from_kinks(const std::vector<std::string>& ids, const std::vector<Vector>& images,
                     const std::vector<Vector>& captions, double margin, double gap) {
  const std::size_t n = ids.size();
  for (std::size_t p = 0; p < n; ++p) {
    std::vector<double> cap_sims;
    std::vector<double> img_sims;
    for (std::size_t q = 0; q < n; ++q) {
      if (ids[q] == ids[p]) continue;
      cap_sims.push_back(images[p].dot(captions[q]));
      img_sims.push_back(captions[p].dot(images[q]));
    }
    for (auto* sims : {&cap_sims, &img_sims}) {
      std::sort(sims->rbegin(), sims->rend());
      if (sims->size() > 1 && (*sims)[0] - (*sims)[1] < gap) return false;
      if (margin - images[p].dot(captions[p]) + (*sims)[0] < gap) return false;
    }
  }
  return true;
}

GradCheckReport check_loss(double tolerance, std::uint64_t seed) {
  const std::vector<std::string> ids = {"a", "a", "b", "c", "d"};
  const Eigen::Index d = 6;
  std::mt19937_64 rng(seed);
  std::vector<Vector> images;
  std::vector<Vector> captions;
  for (int attempt = 0;; ++attempt) {
    images.clear();
    captions.clear();
    for (std::size_t p = 0; p < ids.size(); ++p) {
      images.push_back(p == 1 ? images[0] : random_unit(d, rng));
      captions.push_back(random_unit(d, rng));
    }
    if (away_from_kinks(ids, images, captions, kDefaultMargin, 1e-3)) break;
    if (attempt > 10000) throw std::runtime_error("could not find a kink-free point for the loss check");
  }

  auto evaluate = [&] {
    std::vector<JointVector> iv;
    std::vector<JointVector> cv;
    for (const auto& v : images) iv.push_back(JointVector::from_unit(v));
    for (const auto& v : captions) cv.push_back(JointVector::from_unit(v));
    return batch_loss(ids, iv, cv, kDefaultMargin, true);
  };
  const BatchLoss analytic = evaluate();
  auto value = [&] { return evaluate().value; };

  Checker checker("loss", tolerance);
  for (std::size_t p = 0; p < ids.size(); ++p) {
    // images[1] aliases images[0] in value but is an independent input here.
    checker.compare("image" + std::to_string(p), images[p], analytic.d_images[p], value);
    checker.compare("caption" + std::to_string(p), captions[p], analytic.d_captions[p], value);
  }
  return checker.finish();
}

GradCheckReport check_full(double tolerance, std::uint64_t seed) {
  // A wide margin keeps every hinge active so the loss is smooth nearby.
  constexpr double kMargin = 1.0;
  std::mt19937_64 rng(seed);
  ModelParams params{small_text_params(rng, 0.0), small_image_params(rng, 4, 3)};
  std::vector<FeatureMap> maps;
  for (int i = 0; i < 3; ++i) maps.emplace_back(3, 3, random_matrix(4, 9, rng));
  std::vector<Matrix> sentences;
  for (int i = 0; i < 4; ++i) sentences.push_back(random_matrix(4, 2 + i % 2, rng));

  BatchInputs batch;
  batch.image_ids = {"x", "y", "x", "z"};
  const std::vector<int> map_of = {0, 1, 0, 2};
  for (std::size_t p = 0; p < 4; ++p) {
    batch.images.push_back(&maps[static_cast<std::size_t>(map_of[p])]);
    batch.captions.push_back(&sentences[p]);
  }

  const BatchStep step = batch_forward_backward(params, batch, kMargin, Mode::kEval, nullptr);
  auto value = [&] {
    std::vector<JointVector> iv;
    std::vector<JointVector> cv;
    for (std::size_t p = 0; p < 4; ++p) {
      iv.push_back(encode_image(*batch.images[p], params.image));
      cv.push_back(encode_vectors(*batch.captions[p], params.text, Mode::kEval));
    }
    return batch_loss(batch.image_ids, iv, cv, kMargin).value;
  };

  Checker checker("full", tolerance);
  ModelParams::for_each_tensor(
      [&](const std::string& name, auto& v, const auto& g) { checker.compare(name, v, g, value); }, params,
      step.grads);
  return checker.finish();
}

}  // namespace

GradCheckReport gradient_check(std::string_view component, double tolerance, std::uint64_t seed) {
  if (component == "text") return check_text(tolerance, seed);
  if (component == "image") return check_image(tolerance, seed);
  if (component == "loss") return check_loss(tolerance, seed);
  if (component == "full") return check_full(tolerance, seed);
  throw ValidationError("unknown gradient-check component '" + std::string(component) +
                        "' (expected text, image, loss or full)");
}

}  // namespace polysearch
