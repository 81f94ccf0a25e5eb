#include "biaslens/behavioral.hpp"

#include <cmath>
#include <numeric>
#include <set>

#include "biaslens/rng.hpp"

namespace biaslens {

namespace {

std::vector<std::vector<PredictionRecord>> split_groups(std::span<const PredictionRecord> preds) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<PredictionRecord>> by_group;
  for (const auto& p : preds) {
    if ((p.true_label != 0 && p.true_label != 1) || (p.predicted_label != 0 && p.predicted_label != 1)) {
      throw InvalidArgument("prediction labels must be 0 or 1 (group '" + p.group + "')");
    }
    auto [it, inserted] = by_group.try_emplace(p.group);
    if (inserted) order.push_back(p.group);
    it->second.push_back(p);
  }
  std::vector<std::vector<PredictionRecord>> out;
  for (const auto& g : order) out.push_back(std::move(by_group[g]));
  return out;
}

double tpr(std::span<const PredictionRecord> g, int index) {
  std::size_t tp = 0, fn = 0;
  for (const auto& r : g) {
    if (r.true_label != 1) continue;
    (r.predicted_label == 1 ? tp : fn)++;
  }
  if (tp + fn == 0) {
    const std::string name = g.empty() ? "#" + std::to_string(index) : g.front().group;
    throw InvalidArgument("eod: group '" + name + "' has no positive ground truth");
  }
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

}  // namespace

double group_f1(std::span<const PredictionRecord> group) {
  if (group.empty()) throw InvalidArgument("f1: empty group");
  std::size_t ones = 0;
  for (const auto& r : group) ones += (r.true_label == 1);
  const int own = (2 * ones >= group.size()) ? 1 : 0;
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& r : group) {
    const bool actual = r.true_label == own;
    const bool predicted = r.predicted_label == own;
    if (actual && predicted) ++tp;
    else if (!actual && predicted) ++fp;
    else if (actual && !predicted) ++fn;
  }
  if (tp + fn == 0) throw InvalidArgument("f1: group '" + group.front().group + "' has no records of its own class");
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

double f1_diff(std::span<const PredictionRecord> preds) {
  const auto groups = split_groups(preds);
  if (groups.size() != 2) {
    throw InvalidArgument("f1_diff: expected exactly 2 groups, found " + std::to_string(groups.size()));
  }
  return std::abs(group_f1(groups[0]) - group_f1(groups[1]));
}

double eod(std::span<const PredictionRecord> g1, std::span<const PredictionRecord> g2) {
  return std::abs(tpr(g1, 1) - tpr(g2, 2));
}

double eod(std::span<const PredictionRecord> preds) {
  const auto groups = split_groups(preds);
  if (groups.size() != 2) throw InvalidArgument("eod: expected exactly 2 groups, found " + std::to_string(groups.size()));
  return eod(groups[0], groups[1]);
}

double individual_fairness(const std::vector<TemplateScoreSet>& sets) {
  if (sets.empty()) throw InvalidArgument("individual_fairness: no templates");
  std::set<std::string> names;
  for (const auto& [g, _] : sets.front().groups) names.insert(g);
  if (names.size() < 2) throw InvalidArgument("individual_fairness: need at least 2 groups");
  double total = 0.0;
  for (const auto& set : sets) {
    std::set<std::string> these;
    for (const auto& [g, _] : set.groups) these.insert(g);
    if (these != names) {
      throw InvalidArgument("individual_fairness: template '" + set.template_id + "' has a different group set");
    }
    for (auto i = set.groups.begin(); i != set.groups.end(); ++i) {
      for (auto j = std::next(i); j != set.groups.end(); ++j) {
        total += wasserstein1(i->second, j->second);
      }
    }
  }
  const double m = static_cast<double>(sets.size());
  const double a = static_cast<double>(names.size());
  return 2.0 * total / (m * a * (a - 1.0));
}

double group_fairness(const std::map<std::string, std::vector<double>>& per_group) {
  if (per_group.empty()) throw InvalidArgument("group_fairness: no groups");
  std::vector<double> pool;
  for (const auto& [g, samples] : per_group) {
    if (samples.empty()) throw InvalidArgument("group_fairness: group '" + g + "' is empty");
    pool.insert(pool.end(), samples.begin(), samples.end());
  }
  double total = 0.0;
  for (const auto& [g, samples] : per_group) total += wasserstein1(samples, pool);
  return total / static_cast<double>(per_group.size());
}

double seat_association(const Vector& w, const std::vector<Vector>& a, const std::vector<Vector>& b) {
  double sa = 0.0, sb = 0.0;
  for (const auto& v : a) sa += cosine(w, v);
  for (const auto& v : b) sb += cosine(w, v);
  return sa / static_cast<double>(a.size()) - sb / static_cast<double>(b.size());
}

namespace {

double split_stat(const std::vector<double>& s, const std::vector<char>& in_x, std::size_t nx) {
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) (in_x[i] ? sx : sy) += s[i];
  return sx / static_cast<double>(nx) - sy / static_cast<double>(s.size() - nx);
}

}  // namespace

SeatResult seat(const AssociationInputs& in, const SeatOptions& options) {
  if (in.x.empty() || in.y.empty() || in.a.empty() || in.b.empty()) {
    throw InvalidArgument("seat: X, Y, A and B must all be non-empty");
  }
  const auto dim = in.x.front().size();
  for (const auto* list : {&in.x, &in.y, &in.a, &in.b}) {
    for (const auto& v : *list) {
      if (v.size() != dim) throw InvalidArgument("seat: embeddings differ in dimension");
      if (!(v.norm() > 0.0)) throw InvalidArgument("seat: zero embedding vector");
    }
  }

  const std::size_t nx = in.x.size();
  std::vector<double> s;
  s.reserve(nx + in.y.size());
  for (const auto& v : in.x) s.push_back(seat_association(v, in.a, in.b));
  for (const auto& v : in.y) s.push_back(seat_association(v, in.a, in.b));

  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  double var = 0.0;
  for (double v : s) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(s.size()));
  if (!(sd > 1e-15)) throw InvalidArgument("seat: association scores have zero standard deviation");

  std::vector<char> in_x(s.size(), 0);
  std::fill(in_x.begin(), in_x.begin() + static_cast<std::ptrdiff_t>(nx), 1);

  SeatResult out;
  out.raw = split_stat(s, in_x, nx);
  out.effect_size = out.raw / sd;

  const double cut = out.raw + 1e-12 * std::max(1.0, std::abs(out.raw));
  std::uint64_t above = 0;
  if (static_cast<int>(s.size()) <= options.exhaustive_limit) {
    // all C(n, |X|) relabelings, via prev_permutation over the membership mask
    std::vector<char> mask = in_x;
    std::sort(mask.begin(), mask.end(), std::greater<>());
    std::uint64_t total = 0;
    do {
      ++total;
      above += split_stat(s, mask, nx) > cut;
    } while (std::prev_permutation(mask.begin(), mask.end()));
    out.exhaustive = true;
    out.permutations = total;
  } else {
    if (options.permutations < 1) throw InvalidArgument("seat: permutations must be positive");
    Rng rng(options.seed);
    std::vector<std::size_t> idx(s.size());
    std::vector<char> mask(s.size());
    for (int p = 0; p < options.permutations; ++p) {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      rng.shuffle(idx.begin(), idx.end());
      std::fill(mask.begin(), mask.end(), 0);
      for (std::size_t k = 0; k < nx; ++k) mask[idx[k]] = 1;
      above += split_stat(s, mask, nx) > cut;
    }
    out.permutations = static_cast<std::uint64_t>(options.permutations);
  }
  out.p_value = static_cast<double>(above) / static_cast<double>(out.permutations);
  return out;
}

double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) throw InvalidArgument("perplexity: empty log-probability list");
  double sum = 0.0;
  for (double lp : logprobs) {
    if (!std::isfinite(lp)) throw InvalidArgument("perplexity: non-finite log probability");
    if (lp > 0.0) throw InvalidArgument("perplexity: positive log probability");
    sum += lp;
  }
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

TTestResult perplexity_bias_test(std::span<const double> ppl_group1, std::span<const double> ppl_group2) {
  return student_t_two_sample(ppl_group1, ppl_group2);
}

void MetricSeries::validate() const {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.concept_name).second) {
      throw InvalidArgument("metric series '" + metric + "': duplicate concept '" + e.concept_name + "'");
    }
    if (!std::isfinite(e.score)) throw InvalidArgument("metric series '" + metric + "': non-finite score");
    if (e.p_value && !(*e.p_value >= 0.0 && *e.p_value <= 1.0)) {
      throw InvalidArgument("metric series '" + metric + "': p-value outside [0, 1] for '" + e.concept_name + "'");
    }
  }
}

Correlation correlate(const MetricSeries& a, const MetricSeries& b, std::optional<double> p_threshold) {
  a.validate();
  b.validate();
  auto keep = [&](const MetricEntry& e) { return !(p_threshold && e.p_value && *e.p_value > *p_threshold); };
  std::map<std::string, const MetricEntry*> in_b;
  for (const auto& e : b.entries)
    if (keep(e)) in_b[e.concept_name] = &e;
  // Align on the lexicographic concept order so the result is argument-order independent.
  std::map<std::string, std::pair<double, double>> aligned;
  for (const auto& e : a.entries) {
    if (!keep(e)) continue;
    if (auto it = in_b.find(e.concept_name); it != in_b.end()) aligned[e.concept_name] = {e.score, it->second->score};
  }
  if (aligned.size() < 2) {
    throw InvalidArgument("correlate: only " + std::to_string(aligned.size()) + " shared concepts survive filtering");
  }
  std::vector<double> xs, ys;
  for (const auto& [_, v] : aligned) {
    xs.push_back(v.first);
    ys.push_back(v.second);
  }
  return {spearman(xs, ys), static_cast<int>(aligned.size())};
}

}  // namespace biaslens
