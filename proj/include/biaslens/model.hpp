#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "biaslens/numerics.hpp"

namespace biaslens {

struct ModelInfo {
  int n_layers = 0;
  int hidden_dim = 0;
  std::string name;

  void validate() const;
  bool same_shape(const ModelInfo& o) const { return n_layers == o.n_layers && hidden_dim == o.hidden_dim; }
};

/// A model seen as a chain of per-layer maps over the last-token activation.
///
/// Layer indices are 1-based. `encode` yields a^(1); `layer_forward(l, a)`
/// maps a^(l) to a^(l+1) for l in [1, n_layers - 1].
class LayerwiseModel {
 public:
  virtual ~LayerwiseModel() = default;

  virtual const ModelInfo& info() const = 0;
  virtual Vector encode(std::string_view text) = 0;
  virtual Vector layer_forward(int layer, const Vector& activation) = 0;

  /// Per-token log probabilities of `continuation` given `prompt`.
  /// Optional; the default throws.
  virtual std::vector<double> token_logprobs(std::string_view prompt, std::string_view continuation);

  /// True when calls may be issued concurrently from several threads.
  virtual bool thread_safe() const { return false; }
  virtual bool deterministic() const { return true; }

  /// Stable identity string used in provenance hashes.
  virtual std::string fingerprint() const;
};

/// Activations a^(1)..a^(n) for `text`.
std::vector<Vector> forward_all(LayerwiseModel& model, std::string_view text);

std::vector<std::string> whitespace_tokens(std::string_view text);

/// Deterministic residual-MLP stand-in for a transformer's last-token stream:
///
///   a^(l+1) = a^(l) + g_l * W2_l * tanh(W1_l * a^(l))
///
/// with ||W1_l||_2 = ||W2_l||_2 = 1 and g_l <= 0.9, so each residual branch
/// is 0.9-Lipschitz and bounded by 0.9 * sqrt(width).
class ToyLm final : public LayerwiseModel {
 public:
  static constexpr double kPositionDecay = 0.9;
  static constexpr double kMaxGain = 0.9;

  ToyLm(std::uint64_t seed, int n_layers, int hidden_dim);

  const ModelInfo& info() const override { return info_; }
  Vector encode(std::string_view text) override { return embed_text(text); }
  Vector layer_forward(int layer, const Vector& activation) override { return apply_layer(layer, activation); }
  std::vector<double> token_logprobs(std::string_view prompt, std::string_view continuation) override;
  bool thread_safe() const override { return true; }
  std::string fingerprint() const override;

  Vector embed_text(std::string_view text) const;
  Vector apply_layer(int layer, const Vector& activation) const;
  /// Embedding row for a single token (keyed by the model seed).
  Vector token_embedding(std::string_view token) const;

  std::uint64_t seed() const { return seed_; }
  int mlp_width() const { return 2 * info_.hidden_dim; }
  /// Upper bound on ||a^(l+1) - a^(l)|| for any input.
  double residual_bound() const;

 private:
  struct Layer {
    Matrix w1;  // width x d
    Matrix w2;  // d x width
    double gain;
  };

  std::uint64_t seed_;
  ModelInfo info_;
  std::vector<Layer> layers_;  // n_layers - 1 maps
};

inline ToyLm toy_create(std::uint64_t seed, int n_layers, int hidden_dim) {
  return ToyLm(seed, n_layers, hidden_dim);
}

}  // namespace biaslens
