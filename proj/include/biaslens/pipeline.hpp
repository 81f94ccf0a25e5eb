#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "biaslens/bias.hpp"
#include "biaslens/cav.hpp"
#include "biaslens/model.hpp"
#include "biaslens/probe.hpp"
#include "biaslens/sae.hpp"
#include "biaslens/steering.hpp"

namespace biaslens {

struct ToyModelSpec {
  std::uint64_t seed = 0;
  int layers = 0;
  int dim = 0;
};

struct ConceptSpec {
  std::string name;
  TemplatePool pool;
  int n_per_class = kDefaultProbeSize;
  /// When set, this concept reuses another concept's probes and CAVs under a new name.
  std::string same_as;
};

struct SyntheticSaeSpec {
  std::uint64_t seed = 0;
  int k = 0;
  int n_relevant = 0;
};

/// Parsed and validated run configuration (JSON document, see README).
struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<ToyModelSpec> toy;
  std::string bridge_endpoint;
  std::vector<ConceptSpec> concepts;
  TemplatePool negatives = default_distractor_pool();
  std::vector<std::pair<std::string, std::string>> prompts;  // id -> text, sorted by id
  SteerConfig steer;
  std::optional<SyntheticSaeSpec> synthetic_sae;
  std::filesystem::path sae_path;
  std::filesystem::path relevance_mask_path;
  std::vector<std::string> targets;
  std::vector<RefPair> ref_pairs;
  std::filesystem::path output_dir;
  std::string config_hash;
  /// Config document as parsed, plus the directory relative paths resolve against.
  std::string source_json;
  std::filesystem::path base_dir;

  static RunConfig parse(const std::string& json_text, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);

  const ConceptSpec& concept_spec(const std::string& name) const;
  /// Concept whose probes/CAVs back `name` (follows same_as).
  const std::string& source_concept(const std::string& name) const;
  const std::string& prompt(const std::string& id) const;
  std::vector<std::string> concept_names() const;
};

std::unique_ptr<LayerwiseModel> make_model(const RunConfig& cfg);

/// Exclusive lock on an output directory, released on destruction.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

std::string hash_file(const std::filesystem::path& path);

/// Pipeline stages. Each reads its inputs from and writes its outputs to
/// cfg.output_dir, embedding the config hash and input hashes in a
/// `<artifact>.meta.json` sidecar next to every output.
namespace stages {

void probe_gen(const RunConfig& cfg);
void extract(const RunConfig& cfg, LayerwiseModel& model, int jobs = 1);
void cav_train(const RunConfig& cfg, int jobs = 1);
void steer(const RunConfig& cfg, LayerwiseModel& model, const std::string& prompt_id, bool trace = false, int jobs = 1);
void concept_vectors(const RunConfig& cfg, int jobs = 1);
std::vector<BiasGrid> bias_grid(const RunConfig& cfg);

}  // namespace stages

struct ReportSummary {
  std::vector<std::filesystem::path> files;
  int salience_curves = 0;
};

/// Verifies every artifact's recorded hashes against the files on disk
/// (ProvenanceError on mismatch) and renders the report directory.
ReportSummary render_report(const std::filesystem::path& run_dir);

/// All stages in order; returns one grid per prompt (plus the mean grid when
/// several prompts are configured).
std::vector<BiasGrid> run_pipeline(const RunConfig& cfg, LayerwiseModel& model, int jobs = 1);

}  // namespace biaslens
