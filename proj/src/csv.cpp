#include "biaslens/csv.hpp"

#include <charconv>

#include "biaslens/binary_io.hpp"

namespace biaslens::csv {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      out.push_back(was_quoted ? field : trim(field));
      field.clear();
      was_quoted = false;
    } else {
      field.push_back(c);
    }
  }
  if (quoted) throw InvalidArgument("csv line " + std::to_string(line_no) + ": unterminated quote");
  out.push_back(was_quoted ? field : trim(field));
  return out;
}

double to_double(const std::string& s, std::size_t row, std::string_view col) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw InvalidArgument("csv row " + std::to_string(row) + ", column '" + std::string(col) + "': not a number: '" + s + "'");
  }
  return v;
}

int to_label(const std::string& s, std::size_t row, std::string_view col) {
  if (s == "0") return 0;
  if (s == "1") return 1;
  throw InvalidArgument("csv row " + std::to_string(row) + ", column '" + std::string(col) + "': expected 0 or 1, got '" + s + "'");
}

}  // namespace

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw InvalidArgument("csv: missing required column '" + std::string(name) + "'");
}

bool Table::has_column(std::string_view name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

Table parse(std::string_view text) {
  Table t;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(start, nl - start);
    ++line_no;
    start = nl + 1;
    if (trim(line).empty()) continue;
    auto fields = split_line(line, line_no);
    if (t.header.empty()) {
      t.header = std::move(fields);
    } else {
      if (fields.size() != t.header.size()) {
        throw InvalidArgument("csv line " + std::to_string(line_no) + ": " + std::to_string(fields.size()) +
                              " fields, header has " + std::to_string(t.header.size()));
      }
      t.rows.push_back(std::move(fields));
    }
  }
  if (t.header.empty()) throw InvalidArgument("csv: missing header row");
  return t;
}

Table read(const std::filesystem::path& path) { return parse(io::read_text(path)); }

std::vector<PredictionRecord> predictions(const Table& t) {
  const auto g = t.column("group"), y = t.column("true_label"), p = t.column("predicted_label");
  std::vector<PredictionRecord> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    out.push_back({row[g], to_label(row[y], r + 1, "true_label"), to_label(row[p], r + 1, "predicted_label")});
  }
  return out;
}

std::vector<TemplateScoreSet> template_scores(const Table& t) {
  const auto m = t.column("template"), g = t.column("group"), s = t.column("score");
  std::vector<TemplateScoreSet> out;
  std::map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    auto [it, inserted] = index.try_emplace(row[m], out.size());
    if (inserted) out.push_back({row[m], {}});
    out[it->second].groups[row[g]].push_back(to_double(row[s], r + 1, "score"));
  }
  return out;
}

AssociationInputs associations(const Table& t) {
  const auto set_col = t.column("set");
  const auto idx_col = t.column("index");
  std::vector<std::size_t> value_cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c].size() > 1 && t.header[c][0] == 'v') value_cols.push_back(c);
  }
  if (value_cols.empty()) throw InvalidArgument("csv: association file has no v0.. columns");
  std::map<std::string, std::map<long, Vector>> sets;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto& name = row[set_col];
    if (name != "X" && name != "Y" && name != "A" && name != "B") {
      throw InvalidArgument("csv row " + std::to_string(r + 1) + ": set must be X, Y, A or B");
    }
    Vector v(static_cast<Eigen::Index>(value_cols.size()));
    for (std::size_t k = 0; k < value_cols.size(); ++k) {
      v(static_cast<Eigen::Index>(k)) = to_double(row[value_cols[k]], r + 1, t.header[value_cols[k]]);
    }
    const auto index = static_cast<long>(to_double(row[idx_col], r + 1, "index"));
    if (!sets[name].emplace(index, std::move(v)).second) {
      throw InvalidArgument("csv row " + std::to_string(r + 1) + ": duplicate index in set " + name);
    }
  }
  AssociationInputs in;
  auto collect = [&](const char* name, std::vector<Vector>& dst) {
    for (auto& [_, v] : sets[name]) dst.push_back(v);
  };
  collect("X", in.x);
  collect("Y", in.y);
  collect("A", in.a);
  collect("B", in.b);
  return in;
}

std::map<std::string, std::vector<double>> perplexities(const Table& t) {
  const auto g = t.column("group");
  std::map<std::string, std::vector<double>> out;
  if (t.has_column("ppl")) {
    const auto p = t.column("ppl");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const double v = to_double(t.rows[r][p], r + 1, "ppl");
      if (!(v > 0.0)) throw InvalidArgument("csv row " + std::to_string(r + 1) + ": perplexity must be positive");
      out[t.rows[r][g]].push_back(v);
    }
    return out;
  }
  const auto lp = t.column("logprobs");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::vector<double> values;
    const std::string& cell = t.rows[r][lp];
    std::size_t start = 0;
    while (start <= cell.size()) {
      auto semi = cell.find(';', start);
      if (semi == std::string::npos) semi = cell.size();
      const std::string item = trim(std::string_view(cell).substr(start, semi - start));
      if (!item.empty()) values.push_back(to_double(item, r + 1, "logprobs"));
      start = semi + 1;
    }
    out[t.rows[r][g]].push_back(perplexity(values));
  }
  return out;
}

MetricSeries metric_series(const Table& t, std::string name) {
  const auto c = t.column("concept"), s = t.column("score");
  const bool has_p = t.has_column("p_value");
  MetricSeries series;
  series.metric = std::move(name);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    MetricEntry e{row[c], to_double(row[s], r + 1, "score"), std::nullopt};
    if (has_p) {
      const auto& cell = row[t.column("p_value")];
      if (!cell.empty()) e.p_value = to_double(cell, r + 1, "p_value");
    }
    series.entries.push_back(std::move(e));
  }
  series.validate();
  return series;
}

}  // namespace biaslens::csv
