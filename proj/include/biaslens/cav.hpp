#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "biaslens/model.hpp"
#include "biaslens/probe.hpp"

namespace biaslens {

double sigmoid(double z);
double logit(double p);

/// Ridge-penalised logistic regression fitted by full-batch gradient
/// descent with Armijo backtracking.
struct TrainOptions {
  double ridge = 1.0;        // lambda in lambda/(2N) * ||w||^2
  double grad_tol = 1e-6;    // stop when the gradient's max-abs entry falls below this
  int max_iterations = 2000;
  double test_fraction = 0.2;
  int min_per_class = 10;
};

struct LayerClassifier {
  Vector w;
  double b = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Objective after each accepted step (index 0 is the starting point).
  std::vector<double> loss_history;
};

/// Stratified, seeded train/test partition. Depends only on the label
/// multiset layout, not on which class is called 1.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
Split stratified_split(std::span<const int> labels, std::uint64_t seed, double test_fraction);

LayerClassifier train_layer_classifier(const Matrix& activations, std::span<const int> labels,
                                       std::uint64_t split_seed, const TrainOptions& options = {});

struct Cav {
  int layer = 0;
  Vector direction;  // unit norm
  double scale = 0.0;  // ||w||
  double bias = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;

  /// Affine classifier score s * (v . a) + b.
  double score(const Vector& a) const;
  bool operator==(const Cav&) const = default;
};

/// Positive-class probability sigmoid(s * (v . a) + b).
double cav_confidence(const Cav& cav, const Vector& a);

struct CavStack {
  std::string concept_name;
  std::vector<Cav> cavs;  // layers 1..n in order
  ModelInfo model_info;

  void validate() const;
  const Cav& layer(int l) const { return cavs.at(static_cast<std::size_t>(l - 1)); }
  std::string content_hash() const;
  double mean_test_accuracy() const;
};

CavStack derive_cav_stack(const ActivationSet& set, std::uint64_t split_seed, int jobs = 1,
                          const TrainOptions& options = {});

std::vector<std::uint8_t> serialize_cavs(const CavStack& stack);
CavStack deserialize_cavs(std::vector<std::uint8_t> bytes);
void save_cavs(const CavStack& stack, const std::filesystem::path& path);
CavStack load_cavs(const std::filesystem::path& path);

}  // namespace biaslens
