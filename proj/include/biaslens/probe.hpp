#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "biaslens/model.hpp"

namespace biaslens {

/// Sentence templates with `{slot}` placeholders and the words each slot draws from.
struct TemplatePool {
  std::vector<std::string> templates;
  std::map<std::string, std::vector<std::string>> lexicon;

  /// Number of distinct template fillings (saturates at 2^62).
  std::uint64_t combinations() const;
};

/// Packaged concept-free sentence pool used for negatives.
const TemplatePool& default_distractor_pool();

struct ProbeCorpus {
  std::string concept_name;
  std::vector<std::string> positives;
  std::vector<std::string> negatives;

  void validate() const;
  std::string content_hash() const;
  bool operator==(const ProbeCorpus&) const = default;
};

inline constexpr int kDefaultProbeSize = 150;
inline constexpr std::size_t kMaxProbeTokens = 25;

ProbeCorpus generate_probe(const std::string& concept_name, const TemplatePool& positives, std::uint64_t seed,
                           int n_per_class = kDefaultProbeSize,
                           const TemplatePool& negatives = default_distractor_pool());

/// Writes `<concept>.pos.txt` and `<concept>.neg.txt` into `dir`.
void save_corpus(const ProbeCorpus& corpus, const std::filesystem::path& dir);
ProbeCorpus load_corpus(const std::filesystem::path& dir, const std::string& concept_name);

struct ActivationRecord {
  int layer = 0;  // 1-based
  int label = 0;  // 1 = concept present
  VectorX<float> activation;

  bool operator==(const ActivationRecord& o) const {
    return layer == o.layer && label == o.label && activation.size() == o.activation.size() &&
           activation.cwiseEqual(o.activation).all();
  }
};

struct ActivationSet {
  ModelInfo model_info;
  std::vector<ActivationRecord> records;
  std::string concept_name;
  std::string corpus_hash;

  void validate() const;
  /// Design matrix (one row per record of `layer`) and its labels.
  std::pair<Matrix, std::vector<int>> layer_data(int layer) const;

  /// Equality over shape and records; provenance strings live in sidecar metadata.
  bool same_payload(const ActivationSet& o) const {
    return model_info.same_shape(o.model_info) && records == o.records;
  }
};

/// One record per (sentence, layer), grouped by layer, positives first.
ActivationSet extract_activation_set(LayerwiseModel& model, const ProbeCorpus& corpus, int jobs = 1);

void save_activations(const ActivationSet& set, const std::filesystem::path& path);
ActivationSet load_activations(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_activations(const ActivationSet& set);
ActivationSet deserialize_activations(std::vector<std::uint8_t> bytes);

}  // namespace biaslens
