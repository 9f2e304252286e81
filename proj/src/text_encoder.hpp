// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <vector>

#include "common.hpp"
#include "embeddings.hpp"
#include "tokenizer.hpp"

namespace polysearch {

/// One simple recurrent unit layer:
///   x~_t = W x_t
///   f_t  = sigmoid(W_f x_t + b_f)
///   r_t  = sigmoid(W_r x_t + b_r)
///   c_t  = f_t * c_{t-1} + (1 - f_t) * x~_t,   c_0 = 0
///   h_t  = r_t * tanh(c_t) + (1 - r_t) * s_t
/// where s_t = x_t when the input width equals the hidden width, otherwise
/// s_t = W_s x_t (`w_skip` is empty in the first case).
struct SruLayer {
  Matrix w;         // H x in
  Matrix w_forget;  // H x in
  Matrix w_reset;   // H x in
  Matrix w_skip;    // H x in, or 0 x 0
  Vector b_forget;  // H
  Vector b_reset;   // H

  static SruLayer init(Eigen::Index input_dim, Eigen::Index hidden_dim, std::mt19937_64& rng);
  SruLayer zeros_like() const;
  Eigen::Index input_dim() const { return w.cols(); }
  Eigen::Index hidden_dim() const { return w.rows(); }
  bool has_skip() const { return w_skip.size() > 0; }
};

/// Per-timestep values of one layer, one column per step.
struct SruTrace {
  Matrix x, x_tilde, forget, reset, cell, tanh_cell, skip;
};

/// Runs one layer over `inputs` (in x T). Throws ValidationError on an empty
/// sequence or width mismatch.
Matrix sru_forward(const SruLayer& layer, const Matrix& inputs, SruTrace* trace = nullptr);

/// Accumulates parameter gradients into `grads` and returns dL/d(inputs)
/// given dL/d(outputs) (H x T).
Matrix sru_backward(const SruLayer& layer, const SruTrace& trace, const Matrix& d_outputs, SruLayer& grads);

enum class Mode { kTrain, kEval };

/// Four stacked SRU layers, last-timestep summary, affine projection to d.
struct TextEncoderParams {
  static constexpr int kLayers = 4;

  std::vector<SruLayer> layers;  // kLayers entries
  Matrix proj_w;                 // d x H
  Vector proj_b;                 // d
  double dropout = 0.25;

  static TextEncoderParams init(Eigen::Index input_dim, Eigen::Index hidden_dim, Eigen::Index joint_dim,
                                double dropout, std::mt19937_64& rng);
  TextEncoderParams zeros_like() const;

  Eigen::Index input_dim() const { return layers.front().input_dim(); }
  Eigen::Index hidden_dim() const { return layers.front().hidden_dim(); }
  Eigen::Index joint_dim() const { return proj_w.rows(); }

  template <class F, class... P>
  static void for_each_tensor(F&& f, P&... p) {
    for (int i = 0; i < kLayers; ++i) {
      const std::string prefix = "text.layer" + std::to_string(i) + ".";
      const auto ui = static_cast<std::size_t>(i);
      f(prefix + "w", p.layers[ui].w...);
      f(prefix + "w_forget", p.layers[ui].w_forget...);
      f(prefix + "w_reset", p.layers[ui].w_reset...);
      f(prefix + "w_skip", p.layers[ui].w_skip...);
      f(prefix + "b_forget", p.layers[ui].b_forget...);
      f(prefix + "b_reset", p.layers[ui].b_reset...);
    }
    f(std::string("text.proj.w"), p.proj_w...);
    f(std::string("text.proj.b"), p.proj_b...);
  }
};

struct TextTrace {
  std::vector<SruTrace> layers;
  std::vector<Matrix> dropout_masks;  // between consecutive layers; empty in eval mode
  Vector summary;                     // top layer, last timestep
  Vector projected;                   // before normalization
};

/// Token vectors (E x T) -> JointVector. `rng` is required in train mode.
JointVector encode_vectors(const Matrix& inputs, const TextEncoderParams& params, Mode mode,
                           std::mt19937_64* rng = nullptr, TextTrace* trace = nullptr);

/// Accumulates gradients into `grads`; returns dL/d(inputs) (E x T).
Matrix backward_text(const TextEncoderParams& params, const TextTrace& trace, const Vector& d_output,
                     TextEncoderParams& grads);

/// Looks tokens up in the shared word space, dropping OOV tokens with a
/// warning. Returns an E x T matrix; throws ValidationError when every token
/// is OOV or the language is unknown.
Matrix resolve_tokens(const TokenSequence& seq, const WordSpace& words);

/// resolve_tokens + encode_vectors.
JointVector encode_sentence(const TokenSequence& seq, const WordSpace& words, const TextEncoderParams& params,
                            Mode mode = Mode::kEval, std::mt19937_64* rng = nullptr, TextTrace* trace = nullptr);

}  // namespace polysearch
