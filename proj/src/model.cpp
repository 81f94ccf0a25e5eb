#include "biaslens/model.hpp"

#include <algorithm>
#include <cmath>

#include "biaslens/hash.hpp"
#include "biaslens/rng.hpp"

namespace biaslens {

void ModelInfo::validate() const {
  if (n_layers < 1) throw InvalidArgument("model: n_layers must be >= 1 (got " + std::to_string(n_layers) + ")");
  if (hidden_dim < 1) throw InvalidArgument("model: hidden_dim must be >= 1 (got " + std::to_string(hidden_dim) + ")");
}

std::vector<double> LayerwiseModel::token_logprobs(std::string_view, std::string_view) {
  throw InvalidArgument("model '" + info().name + "' does not provide token log probabilities");
}

std::string LayerwiseModel::fingerprint() const {
  const auto& i = info();
  return i.name + ":" + std::to_string(i.n_layers) + "x" + std::to_string(i.hidden_dim);
}

std::vector<Vector> forward_all(LayerwiseModel& model, std::string_view text) {
  const auto& info = model.info();
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(info.n_layers));
  out.push_back(model.encode(text));
  for (int l = 1; l < info.n_layers; ++l) {
    out.push_back(model.layer_forward(l, out.back()));
  }
  return out;
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

namespace {

double spectral_norm(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

Matrix gaussian_matrix(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  // column-major fill order is part of the determinism contract
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = rng.normal();
  return m;
}

}  // namespace

ToyLm::ToyLm(std::uint64_t seed, int n_layers, int hidden_dim) : seed_(seed) {
  if (n_layers < 1) throw InvalidArgument("toy_create: n_layers must be >= 1 (got " + std::to_string(n_layers) + ")");
  if (hidden_dim < 2) throw InvalidArgument("toy_create: hidden_dim must be >= 2 (got " + std::to_string(hidden_dim) + ")");
  info_ = ModelInfo{n_layers, hidden_dim, "toy-lm"};

  Rng rng(mix64(seed ^ 0x746f792d6c6dULL));
  const int width = mlp_width();
  layers_.reserve(static_cast<std::size_t>(n_layers - 1));
  for (int l = 1; l < n_layers; ++l) {
    Matrix w1 = gaussian_matrix(rng, width, hidden_dim);
    Matrix w2 = gaussian_matrix(rng, hidden_dim, width);
    w1 /= spectral_norm(w1);
    w2 /= spectral_norm(w2);
    const double gain = kMaxGain * rng.uniform(0.5, 1.0);
    layers_.push_back(Layer{std::move(w1), std::move(w2), gain});
  }
}

Vector ToyLm::token_embedding(std::string_view token) const {
  const std::uint64_t key = mix64(fnv1a(token) ^ mix64(seed_));
  const int d = info_.hidden_dim;
  const double scale = std::sqrt(3.0 / d);  // unit expected squared norm
  Vector e(d);
  for (int i = 0; i < d; ++i) {
    const double u = static_cast<double>(mix64(key + static_cast<std::uint64_t>(i)) >> 11) * 0x1.0p-53;
    e(i) = (2.0 * u - 1.0) * scale;
  }
  return e;
}

Vector ToyLm::embed_text(std::string_view text) const {
  const auto tokens = whitespace_tokens(text);
  if (tokens.empty()) throw InvalidArgument("encode: empty text");
  Vector acc = Vector::Zero(info_.hidden_dim);
  double weight = 1.0;
  for (auto it = tokens.rbegin(); it != tokens.rend(); ++it) {
    acc += weight * token_embedding(*it);
    weight *= kPositionDecay;
  }
  return acc;
}

Vector ToyLm::apply_layer(int layer, const Vector& activation) const {
  if (layer < 1 || layer >= info_.n_layers) {
    throw InvalidArgument("layer_forward: layer " + std::to_string(layer) + " outside [1, " +
                          std::to_string(info_.n_layers - 1) + "]");
  }
  if (activation.size() != info_.hidden_dim) {
    throw InvalidArgument("layer_forward: activation has dimension " + std::to_string(activation.size()) +
                          ", model expects " + std::to_string(info_.hidden_dim));
  }
  const auto& L = layers_[static_cast<std::size_t>(layer - 1)];
  return activation + L.gain * (L.w2 * (L.w1 * activation).array().tanh().matrix());
}

double ToyLm::residual_bound() const { return kMaxGain * std::sqrt(static_cast<double>(mlp_width())); }

std::vector<double> ToyLm::token_logprobs(std::string_view prompt, std::string_view continuation) {
  // Toy scoring: each continuation token's logit is its alignment with the
  // running context; log-probability via a softplus so values stay <= 0.
  const auto cont = whitespace_tokens(continuation);
  if (cont.empty()) throw InvalidArgument("token_logprobs: empty continuation");
  std::string context(prompt);
  std::vector<double> out;
  out.reserve(cont.size());
  for (const auto& tok : cont) {
    const Vector ctx = whitespace_tokens(context).empty() ? Vector::Zero(info_.hidden_dim) : embed_text(context);
    const double logit = ctx.dot(token_embedding(tok));
    out.push_back(-(std::max(-logit, 0.0) + std::log1p(std::exp(-std::abs(logit)))));
    context += " ";
    context += tok;
  }
  return out;
}

std::string ToyLm::fingerprint() const {
  return "toy-lm:seed=" + std::to_string(seed_) + ":" + std::to_string(info_.n_layers) + "x" +
         std::to_string(info_.hidden_dim);
}

}  // namespace biaslens
