#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "biaslens/numerics.hpp"

namespace biaslens {

/// Encoder half of a JumpReLU sparse autoencoder: z = JumpReLU_theta(W a + b).
struct SaeEncoder {
  Matrix w;      // k x d
  Vector b;      // k
  Vector theta;  // k, per-feature thresholds >= 0

  int features() const { return static_cast<int>(w.rows()); }
  int input_dim() const { return static_cast<int>(w.cols()); }
  void validate() const;
  std::string content_hash() const;
  bool operator==(const SaeEncoder& o) const { return w == o.w && b == o.b && theta == o.theta; }
};

/// Keeps h_i = (W a + b)_i when h_i > theta_i, else 0.
Vector sae_encode(const SaeEncoder& enc, const Vector& a);

struct ConceptProvenance {
  std::string prompt;
  std::string model;
  std::string cav_hash;
  std::string sae_hash;
};

/// Unit-normalised SAE code shift produced by steering toward one concept.
struct ConceptVector {
  std::string concept_name;
  Vector values;
  ConceptProvenance provenance;
};

/// values = l2_normalize(z_steer) - l2_normalize(z_ori).
ConceptVector concept_vector(const std::string& concept_name, const Vector& z_ori, const Vector& z_steer,
                             ConceptProvenance provenance = {});

struct SalienceVariants {
  double original;               // z_ori
  double steered;                // z_steer
  double difference;             // z_steer - z_ori
  double normalized_difference;  // Norm(z_steer) - Norm(z_ori)
};

SalienceVariants salience_variants(const Vector& z_ori, const Vector& z_steer, const Mask& relevant);

/// Generated encoder with a known set of concept-relevant features.
struct SyntheticSae {
  SaeEncoder encoder;
  Mask relevant;
  Vector concept_direction;  // unit vector in input space
};

struct SyntheticSaeOptions {
  double relevant_noise = 0.15;       // off-axis jitter of planted rows
  double irrelevant_leak = 0.05;      // max |cos| between irrelevant rows and the concept axis
  double threshold = 0.5;             // JumpReLU threshold for every feature
};

/// Plants `n_relevant` rows nearly parallel to a random concept direction;
/// the remaining rows are close to orthogonal to it. Entries are float-exact
/// so the encoder survives the on-disk format unchanged.
SyntheticSae generate_synthetic_sae(std::uint64_t seed, int k, int d, int n_relevant,
                                    const SyntheticSaeOptions& options = {});

std::vector<std::uint8_t> serialize_sae(const SaeEncoder& enc);
SaeEncoder deserialize_sae(std::vector<std::uint8_t> bytes);
void save_sae(const SaeEncoder& enc, const std::filesystem::path& path);
SaeEncoder load_sae(const std::filesystem::path& path);

}  // namespace biaslens
