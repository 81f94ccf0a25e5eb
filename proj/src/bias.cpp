#include "biaslens/bias.hpp"

#include <cmath>
#include <cstdio>
#include <json.hpp>

namespace biaslens {

namespace {

void check_comparable(const ConceptVector& a, const ConceptVector& b) {
  if (a.provenance.sae_hash != b.provenance.sae_hash || a.provenance.model != b.provenance.model) {
    throw ProvenanceError("concept vectors '" + a.concept_name + "' and '" + b.concept_name +
                          "' come from different models or SAEs and cannot be compared");
  }
}

double safe_cosine(const ConceptVector& a, const ConceptVector& b) {
  if (a.values.size() != b.values.size()) {
    throw InvalidArgument("bias_score: concept vectors '" + a.concept_name + "' and '" + b.concept_name +
                          "' differ in dimension");
  }
  for (const auto* c : {&a, &b}) {
    if (!(c->values.norm() > 0.0)) throw InvalidArgument("bias_score: concept vector '" + c->concept_name + "' is zero");
  }
  return cosine(a.values, b.values);
}

double round6(double x) { return std::round(x * 1e6) / 1e6; }

}  // namespace

BiasScore bias_score(const ConceptVector& target, const ConceptVector& ref1, const ConceptVector& ref2) {
  check_comparable(target, ref1);
  check_comparable(target, ref2);
  BiasScore s;
  s.target = target.concept_name;
  s.ref1 = ref1.concept_name;
  s.ref2 = ref2.concept_name;
  s.cos1 = safe_cosine(target, ref1);
  s.cos2 = safe_cosine(target, ref2);
  s.score = std::abs(s.cos1 - s.cos2);
  return s;
}

std::optional<int> BiasGrid::top1(int column) const {
  if (cells.rows() == 0) return std::nullopt;
  int best = 0;
  for (int r = 1; r < cells.rows(); ++r)
    if (cells(r, column) > cells(best, column)) best = r;
  return best;
}

std::optional<int> BiasGrid::top2(int column) const {
  if (cells.rows() < 2) return std::nullopt;
  const int first = *top1(column);
  int best = -1;
  for (int r = 0; r < cells.rows(); ++r) {
    if (r == first) continue;
    if (best < 0 || cells(r, column) > cells(best, column)) best = r;
  }
  return best;
}

BiasGrid bias_grid(const ConceptMap& concepts, const std::vector<std::string>& targets,
                   const std::vector<RefPair>& ref_pairs, GridMetadata metadata) {
  if (targets.empty() || ref_pairs.empty()) throw InvalidArgument("bias_grid: need at least one target and one pair");
  auto find = [&](const std::string& name) -> const ConceptVector& {
    auto it = concepts.find(name);
    if (it == concepts.end()) throw InvalidArgument("bias_grid: missing concept '" + name + "'");
    return it->second;
  };
  BiasGrid grid;
  grid.targets = targets;
  grid.ref_pairs = ref_pairs;
  grid.metadata = std::move(metadata);
  const auto rows = static_cast<Eigen::Index>(ref_pairs.size());
  const auto cols = static_cast<Eigen::Index>(targets.size());
  grid.cells.resize(rows, cols);
  grid.cos1.resize(rows, cols);
  grid.cos2.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& pair = ref_pairs[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto s = bias_score(find(targets[static_cast<std::size_t>(c)]), find(pair.ref1), find(pair.ref2));
      grid.cells(r, c) = s.score;
      grid.cos1(r, c) = s.cos1;
      grid.cos2(r, c) = s.cos2;
    }
  }
  return grid;
}

BiasGrid mean_grid(const std::vector<BiasGrid>& grids, GridMetadata metadata) {
  if (grids.empty()) throw InvalidArgument("mean_grid: no grids");
  BiasGrid out = grids.front();
  for (std::size_t i = 1; i < grids.size(); ++i) {
    const auto& g = grids[i];
    if (g.targets != out.targets || g.ref_pairs != out.ref_pairs) {
      throw InvalidArgument("mean_grid: grids have different labels");
    }
    out.cells += g.cells;
    out.cos1 += g.cos1;
    out.cos2 += g.cos2;
  }
  const double n = static_cast<double>(grids.size());
  out.cells /= n;
  out.cos1 /= n;
  out.cos2 /= n;
  out.metadata = std::move(metadata);
  return out;
}

std::string grid_report_json(const BiasGrid& grid) {
  using nlohmann::ordered_json;
  ordered_json meta;
  meta["model"] = grid.metadata.model;
  meta["prompt"] = grid.metadata.prompt;
  ordered_json hashes = ordered_json::object();
  for (const auto& [k, v] : grid.metadata.hashes) hashes[k] = v;
  meta["hashes"] = hashes;
  if (!grid.metadata.note.empty()) meta["note"] = grid.metadata.note;

  ordered_json doc;
  doc["metadata"] = meta;
  doc["targets"] = grid.targets;
  ordered_json pairs = ordered_json::array();
  for (const auto& p : grid.ref_pairs) pairs.push_back({p.ref1, p.ref2});
  doc["ref_pairs"] = pairs;
  ordered_json cells = ordered_json::array();
  for (Eigen::Index r = 0; r < grid.cells.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < grid.cells.cols(); ++c) row.push_back(round6(grid.cells(r, c)));
    cells.push_back(row);
  }
  doc["cells"] = cells;
  ordered_json markers = ordered_json::array();
  for (int c = 0; c < grid.cells.cols(); ++c) {
    ordered_json m;
    m["target"] = grid.targets[static_cast<std::size_t>(c)];
    const auto t1 = grid.top1(c);
    const auto t2 = grid.top2(c);
    m["top1"] = t1 ? ordered_json(grid.ref_pairs[static_cast<std::size_t>(*t1)].label()) : ordered_json(nullptr);
    m["top2"] = t2 ? ordered_json(grid.ref_pairs[static_cast<std::size_t>(*t2)].label()) : ordered_json(nullptr);
    markers.push_back(m);
  }
  doc["markers"] = markers;
  return doc.dump(2) + "\n";
}

std::string grid_csv(const BiasGrid& grid) {
  std::string out = "ref_pair,target,score,cos1,cos2\n";
  char buf[128];
  for (Eigen::Index r = 0; r < grid.cells.rows(); ++r) {
    for (Eigen::Index c = 0; c < grid.cells.cols(); ++c) {
      std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f\n", grid.cells(r, c), grid.cos1(r, c), grid.cos2(r, c));
      out += grid.ref_pairs[static_cast<std::size_t>(r)].label() + "," + grid.targets[static_cast<std::size_t>(c)] + buf;
    }
  }
  return out;
}

}  // namespace biaslens
