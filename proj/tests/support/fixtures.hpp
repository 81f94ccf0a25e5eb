#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "biaslens/cav.hpp"
#include "biaslens/hash.hpp"
#include "biaslens/model.hpp"
#include "biaslens/probe.hpp"
#include "biaslens/rng.hpp"
#include "biaslens/sae.hpp"

namespace fixtures {

using biaslens::Vector;

/// A model whose every prompt encodes to the same activation and whose
/// layers are the identity.
class FixedModel final : public biaslens::LayerwiseModel {
 public:
  FixedModel(Vector a, int n_layers) : a_(std::move(a)), info_{n_layers, static_cast<int>(a_.size()), "fixed"} {}
  const biaslens::ModelInfo& info() const override { return info_; }
  Vector encode(std::string_view) override { return a_; }
  Vector layer_forward(int, const Vector& v) override { return v; }
  bool thread_safe() const override { return true; }

 private:
  Vector a_;
  biaslens::ModelInfo info_;
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("biaslens-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Vector random_unit(biaslens::Rng& rng, int d) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return v.normalized();
}

inline Vector random_gaussian(biaslens::Rng& rng, int d, double sd = 1.0) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = sd * rng.normal();
  return v;
}

/// Layer-1 activations with a hard margin along a random direction u:
/// u.x >= gap/2 for positives and <= -gap/2 for negatives, isotropic noise
/// elsewhere. Deeper layers come from pushing each point through `model`.
inline biaslens::ActivationSet separable_activation_set(std::uint64_t seed, biaslens::ToyLm& model, int n_per_class,
                                                        double gap, double noise_sd) {
  biaslens::Rng rng(seed);
  const int d = model.info().hidden_dim;
  const int L = model.info().n_layers;
  const Vector u = random_unit(rng, d);
  std::vector<Vector> layer1;
  std::vector<int> labels;
  for (int label : {1, 0}) {
    for (int i = 0; i < n_per_class; ++i) {
      Vector x = random_gaussian(rng, d, noise_sd);
      x -= u * u.dot(x);
      const double along = gap / 2.0 + std::abs(rng.normal()) * noise_sd;
      x += (label == 1 ? along : -along) * u;
      layer1.push_back(x);
      labels.push_back(label);
    }
  }
  biaslens::ActivationSet set;
  set.model_info = model.info();
  set.concept_name = "synthetic-" + std::to_string(seed);
  std::vector<std::vector<Vector>> per_layer(static_cast<std::size_t>(L));
  for (const auto& x : layer1) {
    Vector a = x;
    for (int l = 1; l <= L; ++l) {
      per_layer[static_cast<std::size_t>(l - 1)].push_back(a);
      if (l < L) a = model.apply_layer(l, a);
    }
  }
  for (int l = 1; l <= L; ++l) {
    for (std::size_t i = 0; i < layer1.size(); ++i) {
      set.records.push_back({l, labels[i], per_layer[static_cast<std::size_t>(l - 1)][i].cast<float>()});
    }
  }
  return set;
}

/// A planted SAE together with one unsteered / steered activation pair. The
/// unsteered activation has no component along the concept direction.
struct SalienceInstance {
  biaslens::SyntheticSae sae;
  Vector a_ori;
  Vector a_steer;
};

inline SalienceInstance planted_salience_instance(std::uint64_t seed, int k = 128, int d = 16, int n_relevant = 12,
                                                  double ori_norm = 12.0, double push = 2.0, double relevant_noise = 0.5) {
  biaslens::SyntheticSaeOptions opts;
  opts.relevant_noise = relevant_noise;
  SalienceInstance inst{biaslens::generate_synthetic_sae(seed, k, d, n_relevant, opts), Vector(), Vector()};
  biaslens::Rng rng(biaslens::mix64(seed) ^ 0x5a11e4ceULL);
  const Vector& u = inst.sae.concept_direction;
  Vector a = random_gaussian(rng, d);
  a -= u * u.dot(a);
  inst.a_ori = a.normalized() * ori_norm;
  inst.a_steer = inst.a_ori + push * u;
  return inst;
}

}  // namespace fixtures
