#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "biaslens/cav.hpp"
#include "biaslens/model.hpp"

namespace biaslens {

struct SteerConfig {
  double tau = 0.999;
  double delta = 1.0;
  int max_steps_per_layer = 10'000;

  void validate() const;
};

struct SteerTrace {
  Vector a_ori_final;
  Vector a_steer_final;
  std::vector<int> steps_per_layer;
  std::vector<double> confidences_after;
  /// Per-layer activations: unsteered a^(l), and a^(l) once layer l reached tau.
  std::vector<Vector> layer_ori;
  std::vector<Vector> layer_steer;
  SteerConfig config;
  /// Confidence after every individual step, per layer; filled only when requested.
  std::vector<std::vector<double>> step_confidences;
};

/// Layer-by-layer concept injection: at each layer the activation is pushed
/// along the CAV in steps of `delta` until the layer classifier reports at
/// least `tau`, then propagated to the next layer.
SteerTrace steer(LayerwiseModel& model, const CavStack& stack, std::string_view prompt, const SteerConfig& cfg = {},
                 bool record_steps = false);

/// Last-layer activations (unsteered, steered).
std::pair<Vector, Vector> paired_last_activations(const SteerTrace& trace);

/// Per layer: `layer=<l> steps=<k> conf=<c>`, then that layer's `a_ori=` and `a_steer=` vectors.
std::string format_trace(const SteerTrace& trace);

}  // namespace biaslens
