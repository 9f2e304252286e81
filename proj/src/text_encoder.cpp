// SPDX-License-Identifier: Apache-2.0
#include "text_encoder.hpp"

#include "log.hpp"

namespace polysearch {
namespace {

Matrix sigmoid(const Matrix& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(-bound, bound);
  return Matrix::NullaryExpr(rows, cols, [&] { return uni(rng); });
}

}  // namespace

SruLayer SruLayer::init(Eigen::Index input_dim, Eigen::Index hidden_dim, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
  SruLayer l;
  l.w = uniform_matrix(hidden_dim, input_dim, bound, rng);
  l.w_forget = uniform_matrix(hidden_dim, input_dim, bound, rng);
  l.w_reset = uniform_matrix(hidden_dim, input_dim, bound, rng);
  l.w_skip = input_dim == hidden_dim ? Matrix() : uniform_matrix(hidden_dim, input_dim, bound, rng);
  l.b_forget = Vector::Zero(hidden_dim);
  l.b_reset = Vector::Zero(hidden_dim);
  return l;
}

SruLayer SruLayer::zeros_like() const {
  SruLayer g;
  g.w = Matrix::Zero(w.rows(), w.cols());
  g.w_forget = Matrix::Zero(w_forget.rows(), w_forget.cols());
  g.w_reset = Matrix::Zero(w_reset.rows(), w_reset.cols());
  g.w_skip = Matrix::Zero(w_skip.rows(), w_skip.cols());
  g.b_forget = Vector::Zero(b_forget.size());
  g.b_reset = Vector::Zero(b_reset.size());
  return g;
}

Matrix sru_forward(const SruLayer& layer, const Matrix& inputs, SruTrace* trace) {
  if (inputs.cols() == 0) throw ValidationError("SRU layer received an empty sequence");
  if (inputs.rows() != layer.input_dim())
    throw ValidationError("SRU layer expects " + std::to_string(layer.input_dim()) + "-dim inputs, got " +
                          std::to_string(inputs.rows()));
  if (!layer.has_skip() && layer.input_dim() != layer.hidden_dim())
    throw ValidationError("SRU layer without skip projection needs input width == hidden width");

  SruTrace local;
  SruTrace& t = trace ? *trace : local;
  const Eigen::Index steps = inputs.cols();
  const Eigen::Index hidden = layer.hidden_dim();
  t.x = inputs;
  t.x_tilde = layer.w * inputs;
  t.forget = sigmoid((layer.w_forget * inputs).colwise() + layer.b_forget);
  t.reset = sigmoid((layer.w_reset * inputs).colwise() + layer.b_reset);
  t.skip = layer.has_skip() ? Matrix(layer.w_skip * inputs) : inputs;
  t.cell.resize(hidden, steps);
  t.tanh_cell.resize(hidden, steps);

  Matrix out(hidden, steps);
  Vector cell = Vector::Zero(hidden);
  for (Eigen::Index s = 0; s < steps; ++s) {
    const auto f = t.forget.col(s).array();
    cell = (f * cell.array() + (1.0 - f) * t.x_tilde.col(s).array()).matrix();
    t.cell.col(s) = cell;
    t.tanh_cell.col(s) = cell.array().tanh().matrix();
    const auto r = t.reset.col(s).array();
    out.col(s) = (r * t.tanh_cell.col(s).array() + (1.0 - r) * t.skip.col(s).array()).matrix();
  }
  return out;
}

Matrix sru_backward(const SruLayer& layer, const SruTrace& trace, const Matrix& d_outputs, SruLayer& grads) {
  const Eigen::Index steps = trace.x.cols();
  const Eigen::Index hidden = layer.hidden_dim();
  Matrix d_x_tilde(hidden, steps);
  Matrix d_forget_pre(hidden, steps);
  Matrix d_reset_pre(hidden, steps);
  Matrix d_skip(hidden, steps);

  Vector d_cell_next = Vector::Zero(hidden);
  for (Eigen::Index s = steps - 1; s >= 0; --s) {
    const auto dh = d_outputs.col(s).array();
    const auto r = trace.reset.col(s).array();
    const auto f = trace.forget.col(s).array();
    const auto tc = trace.tanh_cell.col(s).array();
    const Eigen::ArrayXd d_cell = d_cell_next.array() + dh * r * (1.0 - tc * tc);
    d_reset_pre.col(s) = (dh * (tc - trace.skip.col(s).array()) * r * (1.0 - r)).matrix();
    d_skip.col(s) = (dh * (1.0 - r)).matrix();
    const Eigen::ArrayXd cell_prev = s > 0 ? Eigen::ArrayXd(trace.cell.col(s - 1).array()) : Eigen::ArrayXd::Zero(hidden);
    d_forget_pre.col(s) = (d_cell * (cell_prev - trace.x_tilde.col(s).array()) * f * (1.0 - f)).matrix();
    d_x_tilde.col(s) = (d_cell * (1.0 - f)).matrix();
    d_cell_next = (d_cell * f).matrix();
  }

  const Matrix xt = trace.x.transpose();
  grads.w.noalias() += d_x_tilde * xt;
  grads.w_forget.noalias() += d_forget_pre * xt;
  grads.w_reset.noalias() += d_reset_pre * xt;
  grads.b_forget += d_forget_pre.rowwise().sum();
  grads.b_reset += d_reset_pre.rowwise().sum();

  Matrix d_inputs = layer.w.transpose() * d_x_tilde;
  d_inputs.noalias() += layer.w_forget.transpose() * d_forget_pre;
  d_inputs.noalias() += layer.w_reset.transpose() * d_reset_pre;
  if (layer.has_skip()) {
    grads.w_skip.noalias() += d_skip * xt;
    d_inputs.noalias() += layer.w_skip.transpose() * d_skip;
  } else {
    d_inputs += d_skip;
  }
  return d_inputs;
}

TextEncoderParams TextEncoderParams::init(Eigen::Index input_dim, Eigen::Index hidden_dim, Eigen::Index joint_dim,
                                          double dropout, std::mt19937_64& rng) {
  if (input_dim < 1 || hidden_dim < 1 || joint_dim < 1) throw ValidationError("encoder dimensions must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("dropout rate must lie in [0, 1)");
  TextEncoderParams p;
  for (int i = 0; i < kLayers; ++i) p.layers.push_back(SruLayer::init(i == 0 ? input_dim : hidden_dim, hidden_dim, rng));
  p.proj_w = uniform_matrix(joint_dim, hidden_dim, 1.0 / std::sqrt(static_cast<double>(hidden_dim)), rng);
  p.proj_b = Vector::Zero(joint_dim);
  p.dropout = dropout;
  return p;
}

TextEncoderParams TextEncoderParams::zeros_like() const {
  TextEncoderParams g;
  for (const auto& l : layers) g.layers.push_back(l.zeros_like());
  g.proj_w = Matrix::Zero(proj_w.rows(), proj_w.cols());
  g.proj_b = Vector::Zero(proj_b.size());
  g.dropout = dropout;
  return g;
}

JointVector encode_vectors(const Matrix& inputs, const TextEncoderParams& params, Mode mode, std::mt19937_64* rng,
                           TextTrace* trace) {
  if (static_cast<int>(params.layers.size()) != TextEncoderParams::kLayers)
    throw ValidationError("text encoder must have exactly 4 layers");
  if (inputs.cols() == 0) throw ValidationError("cannot encode an empty sentence");
  const bool use_dropout = mode == Mode::kTrain && params.dropout > 0.0;
  if (use_dropout && rng == nullptr) throw std::invalid_argument("train-mode encoding requires an RNG");

  TextTrace local;
  TextTrace& t = trace ? *trace : local;
  t.layers.assign(params.layers.size(), {});
  t.dropout_masks.clear();

  Matrix h = inputs;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    h = sru_forward(params.layers[i], h, &t.layers[i]);
    if (use_dropout && i + 1 < params.layers.size()) {
      const double keep = 1.0 - params.dropout;
      std::bernoulli_distribution coin(keep);
      Matrix mask = Matrix::NullaryExpr(h.rows(), h.cols(), [&] { return coin(*rng) ? 1.0 / keep : 0.0; });
      h = h.cwiseProduct(mask);
      t.dropout_masks.push_back(std::move(mask));
    }
  }
  t.summary = h.col(h.cols() - 1);
  t.projected = params.proj_w * t.summary + params.proj_b;
  return JointVector::normalize(t.projected);
}

Matrix backward_text(const TextEncoderParams& params, const TextTrace& trace, const Vector& d_output,
                     TextEncoderParams& grads) {
  const double norm = trace.projected.norm();
  const Vector v = trace.projected / norm;
  const Vector d_projected = (d_output - v * v.dot(d_output)) / norm;
  grads.proj_w.noalias() += d_projected * trace.summary.transpose();
  grads.proj_b += d_projected;

  const Eigen::Index steps = trace.layers.back().x.cols();
  Matrix d_h = Matrix::Zero(params.hidden_dim(), steps);
  d_h.col(steps - 1) = params.proj_w.transpose() * d_projected;
  for (std::size_t i = params.layers.size(); i-- > 0;) {
    if (!trace.dropout_masks.empty() && i + 1 < params.layers.size()) d_h = d_h.cwiseProduct(trace.dropout_masks[i]);
    d_h = sru_backward(params.layers[i], trace.layers[i], d_h, grads.layers[i]);
  }
  return d_h;
}

Matrix resolve_tokens(const TokenSequence& seq, const WordSpace& words) {
  if (!words.has_language(seq.lang)) throw ValidationError("language '" + seq.lang + "' is not loaded");
  const EmbeddingTable& table = words.table(seq.lang);
  std::vector<Eigen::Index> rows;
  rows.reserve(seq.tokens.size());
  for (const auto& tok : seq.tokens) {
    if (auto r = table.row_of(tok))
      rows.push_back(*r);
    else
      log().debug("dropping out-of-vocabulary token '{}' ({})", tok, seq.lang);
  }
  if (rows.empty()) {
    std::string sentence;
    for (const auto& tok : seq.tokens) sentence += (sentence.empty() ? "" : " ") + tok;
    throw ValidationError("every token is out of vocabulary in " + seq.lang + " sentence '" + sentence + "'");
  }
  if (rows.size() < seq.tokens.size())
    log().warn("dropped {} out-of-vocabulary token(s) from a {} sentence", seq.tokens.size() - rows.size(), seq.lang);
  Matrix out(table.dim(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = table.vectors().col(rows[i]);
  return out;
}

JointVector encode_sentence(const TokenSequence& seq, const WordSpace& words, const TextEncoderParams& params, Mode mode,
                            std::mt19937_64* rng, TextTrace* trace) {
  return encode_vectors(resolve_tokens(seq, words), params, mode, rng, trace);
}

}  // namespace polysearch
