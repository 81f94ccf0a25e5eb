#include <CLI11.hpp>
#include <cstdio>
#include <functional>
#include <iostream>
#include <json.hpp>

#include "biaslens/behavioral.hpp"
#include "biaslens/binary_io.hpp"
#include "biaslens/csv.hpp"
#include "biaslens/error.hpp"
#include "biaslens/pipeline.hpp"

namespace {

using namespace biaslens;
using nlohmann::ordered_json;

enum ExitCode { kOk = 0, kConfigError = 2, kStageError = 3, kProvenanceError = 4 };

int guarded(const std::function<void()>& body) {
  try {
    body();
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error at " << (e.field().empty() ? "/" : e.field()) << ": " << e.what() << "\n";
    return kConfigError;
  } catch (const ProvenanceError& e) {
    std::cerr << "provenance mismatch: " << e.what() << "\n";
    return kProvenanceError;
  } catch (const StageError& e) {
    std::cerr << "stage " << e.stage();
    if (!e.concept_name().empty()) std::cerr << " [" << e.concept_name() << "]";
    std::cerr << " failed: " << e.what() << "\n";
    return kStageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageError;
  }
}

void write_json(const std::string& out, const ordered_json& doc) {
  const std::string text = doc.dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    io::write_text(out, text);
  }
}

ordered_json run_metric(const std::string& name, const csv::Table& table, const SeatOptions& seat_opts) {
  ordered_json doc;
  doc["metric"] = name;
  if (name == "f1diff" || name == "eod") {
    const auto preds = csv::predictions(table);
    doc["value"] = name == "f1diff" ? f1_diff(preds) : eod(preds);
  } else if (name == "if") {
    doc["value"] = individual_fairness(csv::template_scores(table));
  } else if (name == "gf") {
    std::map<std::string, std::vector<double>> pooled;
    for (const auto& set : csv::template_scores(table)) {
      for (const auto& [g, v] : set.groups) pooled[g].insert(pooled[g].end(), v.begin(), v.end());
    }
    doc["value"] = group_fairness(pooled);
  } else if (name == "seat") {
    const auto r = seat(csv::associations(table), seat_opts);
    doc["raw"] = r.raw;
    doc["effect_size"] = r.effect_size;
    doc["p_value"] = r.p_value;
    doc["exhaustive"] = r.exhaustive;
    doc["permutations"] = r.permutations;
  } else if (name == "ppl") {
    const auto groups = csv::perplexities(table);
    if (groups.size() != 2) throw InvalidArgument("ppl needs exactly two groups, found " + std::to_string(groups.size()));
    const auto& g1 = groups.begin()->second;
    const auto& g2 = std::next(groups.begin())->second;
    const auto r = perplexity_bias_test(g1, g2);
    doc["groups"] = {groups.begin()->first, std::next(groups.begin())->first};
    doc["t"] = r.t;
    doc["p_value"] = r.p;
    doc["df"] = r.df;
  }
  return doc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BiasLens: representation-level bias evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  int jobs = 1;
  auto add_config = [&](CLI::App* cmd) { cmd->add_option("--config", config_path, "run configuration (JSON)")->required(); };
  auto add_jobs = [&](CLI::App* cmd) { cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber); };

  auto* probe_cmd = app.add_subcommand("probe-gen", "generate probe corpora");
  add_config(probe_cmd);
  auto* extract_cmd = app.add_subcommand("extract", "collect per-layer activations for each probe corpus");
  add_config(extract_cmd);
  add_jobs(extract_cmd);
  auto* cav_cmd = app.add_subcommand("cav-train", "train one CAV per layer per concept");
  add_config(cav_cmd);
  add_jobs(cav_cmd);
  auto* steer_cmd = app.add_subcommand("steer", "steer a prompt toward every concept");
  add_config(steer_cmd);
  add_jobs(steer_cmd);
  std::string prompt_id;
  bool trace = false;
  steer_cmd->add_option("--prompt-id", prompt_id)->required();
  steer_cmd->add_flag("--trace", trace, "also write a per-layer trace file");
  auto* concept_cmd = app.add_subcommand("concept", "encode steered activations into concept vectors");
  add_config(concept_cmd);
  add_jobs(concept_cmd);
  auto* grid_cmd = app.add_subcommand("bias-grid", "score targets against reference pairs");
  add_config(grid_cmd);
  auto* run_cmd = app.add_subcommand("run", "all pipeline stages for every prompt");
  add_config(run_cmd);
  add_jobs(run_cmd);

  auto* metrics_cmd = app.add_subcommand("metrics", "behavioral bias metrics from CSV input");
  std::string metric_name, in_path, out_path;
  SeatOptions seat_opts;
  metrics_cmd->add_option("metric", metric_name)->required()->check(CLI::IsMember({"f1diff", "eod", "if", "gf", "seat", "ppl"}));
  metrics_cmd->add_option("--in", in_path)->required()->check(CLI::ExistingFile);
  metrics_cmd->add_option("--out", out_path, "output JSON (default stdout)");
  metrics_cmd->add_option("--seed", seat_opts.seed, "seat: permutation seed");
  metrics_cmd->add_option("--permutations", seat_opts.permutations, "seat: sampled permutations");

  auto* corr_cmd = app.add_subcommand("correlate", "Spearman correlation between two metric series");
  std::string a_path, b_path;
  std::optional<double> p_threshold;
  corr_cmd->add_option("--a", a_path)->required()->check(CLI::ExistingFile);
  corr_cmd->add_option("--b", b_path)->required()->check(CLI::ExistingFile);
  corr_cmd->add_option("--p-threshold", p_threshold);
  corr_cmd->add_option("--out", out_path, "output JSON (default stdout)");

  auto* report_cmd = app.add_subcommand("report", "verify provenance and render report tables");
  std::string run_dir;
  report_cmd->add_option("--run", run_dir)->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  auto with_config = [&](const std::function<void(const RunConfig&)>& f) {
    return guarded([&] {
      const auto cfg = RunConfig::load(config_path);
      f(cfg);
    });
  };

  if (*probe_cmd) {
    return with_config([](const RunConfig& cfg) {
      OutputLock lock(cfg.output_dir);
      stages::probe_gen(cfg);
    });
  }
  if (*extract_cmd) {
    return with_config([&](const RunConfig& cfg) {
      OutputLock lock(cfg.output_dir);
      auto model = make_model(cfg);
      stages::extract(cfg, *model, jobs);
    });
  }
  if (*cav_cmd) {
    return with_config([&](const RunConfig& cfg) {
      OutputLock lock(cfg.output_dir);
      stages::cav_train(cfg, jobs);
    });
  }
  if (*steer_cmd) {
    return with_config([&](const RunConfig& cfg) {
      (void)cfg.prompt(prompt_id);
      OutputLock lock(cfg.output_dir);
      auto model = make_model(cfg);
      stages::steer(cfg, *model, prompt_id, trace, jobs);
    });
  }
  if (*concept_cmd) {
    return with_config([&](const RunConfig& cfg) {
      OutputLock lock(cfg.output_dir);
      stages::concept_vectors(cfg, jobs);
    });
  }
  if (*grid_cmd) {
    return with_config([](const RunConfig& cfg) {
      OutputLock lock(cfg.output_dir);
      const auto grids = stages::bias_grid(cfg);
      for (const auto& g : grids) std::cout << grid_csv(g);
    });
  }
  if (*run_cmd) {
    return with_config([&](const RunConfig& cfg) {
      auto model = make_model(cfg);
      run_pipeline(cfg, *model, jobs);
      std::cout << "wrote " << (cfg.output_dir / "grid").string() << "\n";
    });
  }
  if (*metrics_cmd) {
    return guarded([&] { write_json(out_path, run_metric(metric_name, csv::read(in_path), seat_opts)); });
  }
  if (*corr_cmd) {
    return guarded([&] {
      const auto a = csv::metric_series(csv::read(a_path), a_path);
      const auto b = csv::metric_series(csv::read(b_path), b_path);
      const auto c = correlate(a, b, p_threshold);
      ordered_json doc;
      doc["r"] = c.r;
      doc["n_used"] = c.n_used;
      write_json(out_path, doc);
    });
  }
  if (*report_cmd) {
    return guarded([&] {
      OutputLock lock(run_dir);
      const auto summary = render_report(run_dir);
      std::cout << "wrote " << summary.files.size() << " report files (" << summary.salience_curves
                << " salience curves)\n";
    });
  }
  return kOk;
}
