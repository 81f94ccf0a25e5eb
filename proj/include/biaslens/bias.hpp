#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biaslens/sae.hpp"

namespace biaslens {

/// |cos(target, ref1) - cos(target, ref2)|, in [0, 2].
struct BiasScore {
  std::string target;
  std::string ref1;
  std::string ref2;
  double score = 0.0;
  double cos1 = 0.0;
  double cos2 = 0.0;
};

BiasScore bias_score(const ConceptVector& target, const ConceptVector& ref1, const ConceptVector& ref2);

struct RefPair {
  std::string ref1;
  std::string ref2;
  std::string label() const { return ref1 + "/" + ref2; }
  bool operator==(const RefPair&) const = default;
};

struct GridMetadata {
  std::string model;
  std::string prompt;
  std::map<std::string, std::string> hashes;  // stage / artifact -> content hash
  std::string note;
};

/// Rows are reference pairs, columns are targets.
struct BiasGrid {
  std::vector<std::string> targets;
  std::vector<RefPair> ref_pairs;
  Matrix cells;
  Matrix cos1;
  Matrix cos2;
  GridMetadata metadata;

  /// Row index of the highest / second-highest score in a column (ties favour the earlier row).
  std::optional<int> top1(int column) const;
  std::optional<int> top2(int column) const;
};

using ConceptMap = std::map<std::string, ConceptVector>;

BiasGrid bias_grid(const ConceptMap& concepts, const std::vector<std::string>& targets,
                   const std::vector<RefPair>& ref_pairs, GridMetadata metadata = {});

/// Element-wise mean of grids sharing targets and reference pairs.
BiasGrid mean_grid(const std::vector<BiasGrid>& grids, GridMetadata metadata);

/// JSON document with metadata, labels, 6-decimal cells and top-1/top-2 markers.
std::string grid_report_json(const BiasGrid& grid);
/// `ref_pair,target,score,cos1,cos2` rows.
std::string grid_csv(const BiasGrid& grid);

}  // namespace biaslens
