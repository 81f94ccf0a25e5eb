#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "biaslens/behavioral.hpp"

namespace biaslens::csv {

/// Header row plus data rows; quoted fields may contain commas.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index of `name`; throws if absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

Table parse(std::string_view text);
Table read(const std::filesystem::path& path);

// Schemas: see README "Metric input files".
std::vector<PredictionRecord> predictions(const Table& t);            // group,true_label,predicted_label
std::vector<TemplateScoreSet> template_scores(const Table& t);         // template,group,score
AssociationInputs associations(const Table& t);                        // set,index,v0,v1,...
std::map<std::string, std::vector<double>> perplexities(const Table& t);  // group,ppl | group,logprobs
MetricSeries metric_series(const Table& t, std::string name);         // concept,score[,p_value]

}  // namespace biaslens::csv
