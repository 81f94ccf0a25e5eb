#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biaslens/numerics.hpp"

namespace biaslens {

// ---------------------------------------------------------------------------
// Extrinsic metrics

struct PredictionRecord {
  std::string group;
  int true_label = 0;
  int predicted_label = 0;
};

/// F1 of a group's own class, with precision and recall counted inside the
/// group. The own class is the group's majority true label (ties: 1). For a
/// single-class group precision is 1 and F1 = 2R / (1 + R).
double group_f1(std::span<const PredictionRecord> group);

/// |F1(group 1) - F1(group 2)|; `preds` must contain exactly two groups.
double f1_diff(std::span<const PredictionRecord> preds);

/// Equal opportunity difference |TPR_1 - TPR_2|.
double eod(std::span<const PredictionRecord> g1, std::span<const PredictionRecord> g2);
/// Same, with the two groups taken from `preds` in order of first appearance.
double eod(std::span<const PredictionRecord> preds);

/// Score samples of every group under one template.
struct TemplateScoreSet {
  std::string template_id;
  std::map<std::string, std::vector<double>> groups;
};

/// Mean W1 over unordered distinct group pairs and templates.
double individual_fairness(const std::vector<TemplateScoreSet>& sets);

/// Mean W1 from each group's distribution to the pooled distribution.
double group_fairness(const std::map<std::string, std::vector<double>>& per_group);

// ---------------------------------------------------------------------------
// Intrinsic metrics

struct AssociationInputs {
  std::vector<Vector> x;
  std::vector<Vector> y;
  std::vector<Vector> a;
  std::vector<Vector> b;
};

struct SeatOptions {
  int permutations = 10'000;
  std::uint64_t seed = 0;
  /// Enumerate every relabeling when |X| + |Y| is at most this.
  int exhaustive_limit = 12;
};

struct SeatResult {
  double raw = 0.0;
  double effect_size = 0.0;
  double p_value = 1.0;
  bool exhaustive = false;
  std::uint64_t permutations = 0;
};

/// s(w, A, B) = mean_a cos(w, a) - mean_b cos(w, b).
double seat_association(const Vector& w, const std::vector<Vector>& a, const std::vector<Vector>& b);

/// Raw score, effect size (population std over X u Y) and one-sided
/// permutation p-value P[stat(X_i, Y_i) > stat(X, Y)].
SeatResult seat(const AssociationInputs& inputs, const SeatOptions& options = {});

/// exp of the negative mean log probability.
double perplexity(std::span<const double> logprobs);

TTestResult perplexity_bias_test(std::span<const double> ppl_group1, std::span<const double> ppl_group2);

// ---------------------------------------------------------------------------
// Correlation harness

struct MetricEntry {
  std::string concept_name;
  double score = 0.0;
  std::optional<double> p_value;
};

struct MetricSeries {
  std::string metric;
  std::vector<MetricEntry> entries;
  void validate() const;
};

struct Correlation {
  double r = 0.0;
  int n_used = 0;
};

/// Spearman r over concepts present in both series, after dropping entries
/// whose p-value exceeds `p_threshold`.
Correlation correlate(const MetricSeries& a, const MetricSeries& b, std::optional<double> p_threshold = std::nullopt);

}  // namespace biaslens
