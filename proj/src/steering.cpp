#include "biaslens/steering.hpp"

#include <cstdio>

#include "biaslens/bridge.hpp"

namespace biaslens {

void SteerConfig::validate() const {
  if (!(tau > 0.5 && tau < 1.0)) throw InvalidArgument("steer: tau must lie in (0.5, 1)");
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InvalidArgument("steer: delta must be positive");
  if (max_steps_per_layer < 1) throw InvalidArgument("steer: max_steps_per_layer must be >= 1");
}

SteerTrace steer(LayerwiseModel& model, const CavStack& stack, std::string_view prompt, const SteerConfig& cfg,
                 bool record_steps) {
  cfg.validate();
  stack.validate();
  const auto& info = model.info();
  if (!info.same_shape(stack.model_info)) {
    throw InvalidArgument("steer: CAV stack shape " + std::to_string(stack.model_info.n_layers) + "x" +
                          std::to_string(stack.model_info.hidden_dim) + " does not match model " +
                          std::to_string(info.n_layers) + "x" + std::to_string(info.hidden_dim));
  }

  SteerTrace trace;
  trace.config = cfg;
  trace.layer_ori = forward_all(model, prompt);
  trace.a_ori_final = trace.layer_ori.back();

  Vector a = model.encode(prompt);
  for (int l = 1; l <= info.n_layers; ++l) {
    const Cav& cav = stack.layer(l);
    const Vector step = cfg.delta * cav.direction;
    std::vector<double> per_step;
    int steps = 0;
    double conf = cav_confidence(cav, a);
    while (conf < cfg.tau) {
      if (steps == cfg.max_steps_per_layer) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6g", conf);
        throw SteeringError(l, conf,
                            "steer: layer " + std::to_string(l) + " did not reach tau after " +
                                std::to_string(steps) + " steps (confidence " + buf + ")");
      }
      a += step;
      ++steps;
      conf = cav_confidence(cav, a);
      if (record_steps) per_step.push_back(conf);
    }
    trace.steps_per_layer.push_back(steps);
    trace.confidences_after.push_back(conf);
    trace.layer_steer.push_back(a);
    if (record_steps) trace.step_confidences.push_back(std::move(per_step));
    if (l < info.n_layers) a = model.layer_forward(l, a);
  }
  trace.a_steer_final = std::move(a);
  return trace;
}

std::pair<Vector, Vector> paired_last_activations(const SteerTrace& trace) {
  if (trace.a_ori_final.size() == 0 || trace.a_ori_final.size() != trace.a_steer_final.size() ||
      trace.steps_per_layer.empty()) {
    throw InvalidArgument("paired_last_activations: incomplete steering trace");
  }
  return {trace.a_ori_final, trace.a_steer_final};
}

std::string format_trace(const SteerTrace& trace) {
  std::string out;
  char buf[96];
  for (std::size_t i = 0; i < trace.steps_per_layer.size(); ++i) {
    std::snprintf(buf, sizeof buf, "layer=%zu steps=%d conf=%.9g\n", i + 1, trace.steps_per_layer[i],
                  trace.confidences_after[i]);
    out += buf;
    out += "a_ori=" + bridge::format_vector(trace.layer_ori.at(i)) + "\n";
    out += "a_steer=" + bridge::format_vector(trace.layer_steer.at(i)) + "\n";
  }
  return out;
}

}  // namespace biaslens
