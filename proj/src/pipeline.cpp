#include "biaslens/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>

#include "biaslens/binary_io.hpp"
#include "biaslens/bridge.hpp"
#include "biaslens/hash.hpp"
#include "biaslens/parallel.hpp"

namespace biaslens {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

const json& require(const json& j, const std::string& key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(path + "/" + key, "required field is missing");
  return *it;
}

std::uint64_t as_seed(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer seed");
  return j.is_number_unsigned() ? j.get<std::uint64_t>() : static_cast<std::uint64_t>(j.get<std::int64_t>());
}

int as_positive_int(const json& j, const std::string& path) {
  if (!j.is_number_integer() || j.get<std::int64_t>() < 1) throw ConfigError(path, "expected a positive integer");
  return j.get<int>();
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string() || j.get<std::string>().empty()) throw ConfigError(path, "expected a non-empty string");
  return j.get<std::string>();
}

std::vector<std::string> as_strings(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_string(j[i], path + "/" + std::to_string(i)));
  return out;
}

void merge_lexicon(const json& j, const std::string& path, std::map<std::string, std::vector<std::string>>& dst) {
  if (!j.is_object()) throw ConfigError(path, "expected an object mapping slot names to word lists");
  for (auto it = j.begin(); it != j.end(); ++it) dst[it.key()] = as_strings(it.value(), path + "/" + it.key());
}

bool valid_identifier(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return s != "." && s != "..";
}

}  // namespace

RunConfig RunConfig::parse(const std::string& json_text, const fs::path& base_dir) {
  json root = json::parse(json_text, nullptr, false);
  if (root.is_discarded() || !root.is_object()) throw ConfigError("", "config is not a JSON object");

  RunConfig cfg;
  cfg.seed = as_seed(require(root, "seed", ""), "/seed");
  cfg.output_dir = base_dir / as_string(require(root, "output_dir", ""), "/output_dir");

  const json& model = require(root, "model", "");
  if (auto toy = model.find("toy"); toy != model.end()) {
    cfg.toy = ToyModelSpec{as_seed(require(*toy, "seed", "/model/toy"), "/model/toy/seed"),
                           as_positive_int(require(*toy, "layers", "/model/toy"), "/model/toy/layers"),
                           as_positive_int(require(*toy, "dim", "/model/toy"), "/model/toy/dim")};
    if (cfg.toy->dim < 2) throw ConfigError("/model/toy/dim", "must be >= 2");
  } else if (auto br = model.find("bridge"); br != model.end()) {
    cfg.bridge_endpoint = as_string(*br, "/model/bridge");
  } else {
    throw ConfigError("/model", "expected either 'toy' or 'bridge'");
  }

  std::map<std::string, std::vector<std::string>> shared_lexicon;
  if (auto lex = root.find("lexicon"); lex != root.end()) merge_lexicon(*lex, "/lexicon", shared_lexicon);

  if (auto neg = root.find("negatives"); neg != root.end()) {
    cfg.negatives.templates = as_strings(require(*neg, "templates", "/negatives"), "/negatives/templates");
    cfg.negatives.lexicon.clear();
    merge_lexicon(require(*neg, "lexicon", "/negatives"), "/negatives/lexicon", cfg.negatives.lexicon);
  }

  const json& concepts = require(root, "concepts", "");
  if (!concepts.is_array() || concepts.empty()) throw ConfigError("/concepts", "expected a non-empty array");
  std::set<std::string> names;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    const std::string path = "/concepts/" + std::to_string(i);
    const json& c = concepts[i];
    ConceptSpec spec;
    spec.name = as_string(require(c, "name", path), path + "/name");
    if (!valid_identifier(spec.name)) throw ConfigError(path + "/name", "identifier may use [A-Za-z0-9_.-] only");
    if (!names.insert(spec.name).second) throw ConfigError(path + "/name", "duplicate concept '" + spec.name + "'");
    if (auto same = c.find("same_as"); same != c.end()) {
      spec.same_as = as_string(*same, path + "/same_as");
    } else {
      spec.pool.templates = as_strings(require(c, "templates", path), path + "/templates");
      spec.pool.lexicon = shared_lexicon;
      if (auto lex = c.find("lexicon"); lex != c.end()) merge_lexicon(*lex, path + "/lexicon", spec.pool.lexicon);
      if (auto n = c.find("n_per_class"); n != c.end()) spec.n_per_class = as_positive_int(*n, path + "/n_per_class");
      try {
        (void)spec.pool.combinations();
      } catch (const InvalidArgument& e) {
        throw ConfigError(path + "/templates", e.what());
      }
    }
    cfg.concepts.push_back(std::move(spec));
  }
  for (std::size_t i = 0; i < cfg.concepts.size(); ++i) {
    const auto& s = cfg.concepts[i];
    if (s.same_as.empty()) continue;
    const std::string path = "/concepts/" + std::to_string(i) + "/same_as";
    if (!names.count(s.same_as)) throw ConfigError(path, "unknown concept '" + s.same_as + "'");
    if (!cfg.concept_spec(s.same_as).same_as.empty()) throw ConfigError(path, "same_as must name a concept with templates");
  }

  const json& prompts = require(root, "prompts", "");
  if (!prompts.is_object() || prompts.empty()) throw ConfigError("/prompts", "expected a non-empty object of id -> text");
  for (auto it = prompts.begin(); it != prompts.end(); ++it) {
    if (!valid_identifier(it.key())) throw ConfigError("/prompts/" + it.key(), "invalid prompt id");
    cfg.prompts.emplace_back(it.key(), as_string(it.value(), "/prompts/" + it.key()));
  }

  if (auto st = root.find("steer"); st != root.end()) {
    if (auto t = st->find("tau"); t != st->end()) cfg.steer.tau = t->get<double>();
    if (auto d = st->find("delta"); d != st->end()) cfg.steer.delta = d->get<double>();
    if (auto m = st->find("max_steps_per_layer"); m != st->end()) {
      cfg.steer.max_steps_per_layer = as_positive_int(*m, "/steer/max_steps_per_layer");
    }
    try {
      cfg.steer.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError("/steer", e.what());
    }
  }

  const json& sae = require(root, "sae", "");
  if (auto syn = sae.find("synthetic"); syn != sae.end()) {
    cfg.synthetic_sae = SyntheticSaeSpec{as_seed(require(*syn, "seed", "/sae/synthetic"), "/sae/synthetic/seed"),
                                         as_positive_int(require(*syn, "k", "/sae/synthetic"), "/sae/synthetic/k"),
                                         as_positive_int(require(*syn, "n_relevant", "/sae/synthetic"),
                                                         "/sae/synthetic/n_relevant")};
    if (cfg.toy && cfg.synthetic_sae->k <= cfg.toy->dim) throw ConfigError("/sae/synthetic/k", "must exceed the model dimension");
    if (cfg.synthetic_sae->n_relevant > cfg.synthetic_sae->k) throw ConfigError("/sae/synthetic/n_relevant", "exceeds k");
  } else if (auto p = sae.find("path"); p != sae.end()) {
    cfg.sae_path = base_dir / as_string(*p, "/sae/path");
    if (!fs::exists(cfg.sae_path)) throw ConfigError("/sae/path", "file not found: " + cfg.sae_path.string());
    if (auto m = sae.find("relevance_mask"); m != sae.end()) {
      cfg.relevance_mask_path = base_dir / as_string(*m, "/sae/relevance_mask");
      if (!fs::exists(cfg.relevance_mask_path)) {
        throw ConfigError("/sae/relevance_mask", "file not found: " + cfg.relevance_mask_path.string());
      }
    }
  } else {
    throw ConfigError("/sae", "expected either 'synthetic' or 'path'");
  }

  const json& grid = require(root, "grid", "");
  cfg.targets = as_strings(require(grid, "targets", "/grid"), "/grid/targets");
  for (std::size_t i = 0; i < cfg.targets.size(); ++i) {
    if (!names.count(cfg.targets[i])) throw ConfigError("/grid/targets/" + std::to_string(i), "unknown concept '" + cfg.targets[i] + "'");
  }
  const json& pairs = require(grid, "ref_pairs", "/grid");
  if (!pairs.is_array() || pairs.empty()) throw ConfigError("/grid/ref_pairs", "expected a non-empty array of pairs");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string path = "/grid/ref_pairs/" + std::to_string(i);
    const auto p = as_strings(pairs[i], path);
    if (p.size() != 2) throw ConfigError(path, "a reference pair has exactly two concepts");
    for (const auto& n : p) {
      if (!names.count(n)) throw ConfigError(path, "unknown concept '" + n + "'");
    }
    cfg.ref_pairs.push_back({p[0], p[1]});
  }

  json hashed = root;
  hashed.erase("output_dir");
  cfg.config_hash = hex64(fnv1a(hashed.dump()));
  cfg.source_json = root.dump();
  cfg.base_dir = base_dir;
  return cfg;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const FormatError& e) {
    throw ConfigError("", e.what());
  }
  return parse(text, fs::absolute(path).parent_path());
}

const ConceptSpec& RunConfig::concept_spec(const std::string& name) const {
  for (const auto& c : concepts)
    if (c.name == name) return c;
  throw ConfigError("/concepts", "unknown concept '" + name + "'");
}

const std::string& RunConfig::source_concept(const std::string& name) const {
  const auto& spec = concept_spec(name);
  return spec.same_as.empty() ? spec.name : spec.same_as;
}

const std::string& RunConfig::prompt(const std::string& id) const {
  for (const auto& [k, v] : prompts)
    if (k == id) return v;
  throw ConfigError("/prompts/" + id, "unknown prompt id");
}

std::vector<std::string> RunConfig::concept_names() const {
  std::vector<std::string> out;
  for (const auto& c : concepts) out.push_back(c.name);
  return out;
}

std::unique_ptr<LayerwiseModel> make_model(const RunConfig& cfg) {
  if (cfg.toy) return std::make_unique<ToyLm>(cfg.toy->seed, cfg.toy->layers, cfg.toy->dim);
  return bridge::bridge_connect(cfg.bridge_endpoint);
}

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".biaslens.lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw StageError("lock", "", "output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
  }
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::string hash_file(const fs::path& path) {
  const auto bytes = io::read_file(path);
  return hex64(fnv1a(bytes));
}

// ---------------------------------------------------------------------------
// Artifact bookkeeping

namespace {

using Inputs = std::map<std::string, std::string>;

fs::path meta_path(const fs::path& artifact) { return artifact.string() + ".meta.json"; }

std::string rel(const RunConfig& cfg, const fs::path& p) { return fs::relative(p, cfg.output_dir).generic_string(); }

void write_run_record(const RunConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  ordered_json j;
  j["config_hash"] = cfg.config_hash;
  j["base_dir"] = fs::absolute(cfg.base_dir).generic_string();
  j["config"] = json::parse(cfg.source_json);
  io::write_text(cfg.output_dir / "run.json", j.dump(2) + "\n");
}

std::string write_artifact(const RunConfig& cfg, const fs::path& path, const std::vector<std::uint8_t>& bytes,
                           const std::string& stage, const Inputs& inputs) {
  fs::create_directories(path.parent_path());
  io::write_file(path, bytes);
  const std::string h = hex64(fnv1a(bytes));
  ordered_json meta;
  meta["stage"] = stage;
  meta["config_hash"] = cfg.config_hash;
  meta["inputs"] = inputs;
  meta["output"] = h;
  io::write_text(meta_path(path), meta.dump(2) + "\n");
  return h;
}

std::vector<std::uint8_t> to_bytes(const std::string& s) { return {s.begin(), s.end()}; }

std::string need_input(const RunConfig& cfg, const fs::path& path, const std::string& stage, const std::string& producer,
                       const std::string& concept_name) {
  if (!fs::exists(path)) {
    throw StageError(stage, concept_name, "missing input " + rel(cfg, path) + "; run `" + producer + "` first");
  }
  return hash_file(path);
}

template <typename F>
auto stage_guard(const std::string& stage, const std::string& concept_name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const ProvenanceError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, concept_name, e.what());
  }
}

std::vector<std::string> source_concepts(const RunConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& c : cfg.concepts)
    if (c.same_as.empty()) out.push_back(c.name);
  return out;
}

fs::path probe_dir(const RunConfig& cfg) { return cfg.output_dir / "probes"; }
fs::path activation_path(const RunConfig& cfg, const std::string& c) { return cfg.output_dir / "activations" / (c + ".blac"); }
fs::path cav_path(const RunConfig& cfg, const std::string& c) { return cfg.output_dir / "cavs" / (c + ".blcv"); }
fs::path steer_path(const RunConfig& cfg, const std::string& p, const std::string& c) {
  return cfg.output_dir / "steer" / p / (c + ".json");
}
fs::path concept_path(const RunConfig& cfg, const std::string& p, const std::string& c) {
  return cfg.output_dir / "concepts" / p / (c + ".json");
}
fs::path sae_file(const RunConfig& cfg) { return cfg.output_dir / "sae" / "encoder.blsa"; }
fs::path mask_file(const RunConfig& cfg) { return cfg.output_dir / "sae" / "relevant.txt"; }

Vector json_vector(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Mask parse_mask(const std::string& text, int k) {
  Mask m;
  for (char c : text) {
    if (c == '0' || c == '1') m.push_back(c == '1');
  }
  if (static_cast<int>(m.size()) != k) {
    throw InvalidArgument("relevance mask has " + std::to_string(m.size()) + " entries, SAE has " + std::to_string(k) + " features");
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stages

namespace stages {

void probe_gen(const RunConfig& cfg) {
  write_run_record(cfg);
  for (const auto& name : source_concepts(cfg)) {
    stage_guard("probe-gen", name, [&] {
      const auto& spec = cfg.concept_spec(name);
      const auto corpus = generate_probe(name, spec.pool, cfg.seed, spec.n_per_class, cfg.negatives);
      std::string pos, neg;
      for (const auto& s : corpus.positives) pos += s + "\n";
      for (const auto& s : corpus.negatives) neg += s + "\n";
      write_artifact(cfg, probe_dir(cfg) / (name + ".pos.txt"), to_bytes(pos), "probe-gen", {});
      write_artifact(cfg, probe_dir(cfg) / (name + ".neg.txt"), to_bytes(neg), "probe-gen", {});
    });
  }
}

void extract(const RunConfig& cfg, LayerwiseModel& model, int jobs) {
  write_run_record(cfg);
  for (const auto& name : source_concepts(cfg)) {
    stage_guard("extract", name, [&] {
      const auto pos = probe_dir(cfg) / (name + ".pos.txt");
      const auto neg = probe_dir(cfg) / (name + ".neg.txt");
      Inputs in{{rel(cfg, pos), need_input(cfg, pos, "extract", "probe-gen", name)},
                {rel(cfg, neg), need_input(cfg, neg, "extract", "probe-gen", name)}};
      const auto corpus = load_corpus(probe_dir(cfg), name);
      const auto set = extract_activation_set(model, corpus, jobs);
      write_artifact(cfg, activation_path(cfg, name), serialize_activations(set), "extract", in);
    });
  }
}

void cav_train(const RunConfig& cfg, int jobs) {
  write_run_record(cfg);
  for (const auto& name : source_concepts(cfg)) {
    stage_guard("cav-train", name, [&] {
      const auto src = activation_path(cfg, name);
      Inputs in{{rel(cfg, src), need_input(cfg, src, "cav-train", "extract", name)}};
      auto set = load_activations(src);
      set.concept_name = name;
      const auto stack = derive_cav_stack(set, cfg.seed, jobs);
      write_artifact(cfg, cav_path(cfg, name), serialize_cavs(stack), "cav-train", in);
    });
  }
}

void steer(const RunConfig& cfg, LayerwiseModel& model, const std::string& prompt_id, bool trace, int jobs) {
  const std::string& prompt = cfg.prompt(prompt_id);
  write_run_record(cfg);
  const auto names = cfg.concept_names();
  parallel_for(names.size(), model.thread_safe() ? jobs : 1, [&](std::size_t i) {
    const auto& name = names[i];
    stage_guard("steer", name, [&] {
      const auto& source = cfg.source_concept(name);
      const auto src = cav_path(cfg, source);
      Inputs in{{rel(cfg, src), need_input(cfg, src, "steer", "cav-train", source)}};
      const auto stack = load_cavs(src);
      const auto result = biaslens::steer(model, stack, prompt, cfg.steer);
      ordered_json doc;
      doc["concept"] = name;
      doc["prompt_id"] = prompt_id;
      doc["prompt"] = prompt;
      doc["model"] = model.fingerprint();
      doc["config_hash"] = cfg.config_hash;
      doc["tau"] = cfg.steer.tau;
      doc["delta"] = cfg.steer.delta;
      doc["max_steps_per_layer"] = cfg.steer.max_steps_per_layer;
      doc["steps_per_layer"] = result.steps_per_layer;
      doc["confidences_after"] = result.confidences_after;
      doc["a_ori"] = to_std(result.a_ori_final);
      doc["a_steer"] = to_std(result.a_steer_final);
      const auto out = steer_path(cfg, prompt_id, name);
      write_artifact(cfg, out, to_bytes(doc.dump(2) + "\n"), "steer", in);
      if (trace) {
        io::write_text(cfg.output_dir / "steer" / prompt_id / (name + ".trace.txt"), format_trace(result));
      }
    });
  });
}

void concept_vectors(const RunConfig& cfg, int jobs) {
  write_run_record(cfg);
  // Resolve the encoder first; its input dimension must match the activations.
  const auto names = cfg.concept_names();
  const auto first_steer = steer_path(cfg, cfg.prompts.front().first, names.front());
  need_input(cfg, first_steer, "concept", "steer", names.front());
  const int dim = static_cast<int>(json::parse(io::read_text(first_steer)).at("a_ori").size());

  std::string sae_hash;
  SaeEncoder enc;
  stage_guard("concept", "", [&] {
    if (cfg.synthetic_sae) {
      const auto syn = generate_synthetic_sae(cfg.synthetic_sae->seed, cfg.synthetic_sae->k, dim, cfg.synthetic_sae->n_relevant);
      enc = syn.encoder;
      sae_hash = write_artifact(cfg, sae_file(cfg), serialize_sae(enc), "concept", {});
      std::string mask;
      for (bool b : syn.relevant) mask += b ? "1\n" : "0\n";
      write_artifact(cfg, mask_file(cfg), to_bytes(mask), "concept", {});
    } else {
      enc = load_sae(cfg.sae_path);
      sae_hash = hash_file(cfg.sae_path);
    }
    if (enc.input_dim() != dim) {
      throw InvalidArgument("SAE input dimension " + std::to_string(enc.input_dim()) + " != model hidden dimension " +
                            std::to_string(dim));
    }
  });

  std::vector<std::pair<std::string, std::string>> work;
  for (const auto& [pid, _] : cfg.prompts)
    for (const auto& n : names) work.emplace_back(pid, n);

  parallel_for(work.size(), jobs, [&](std::size_t i) {
    const auto& [pid, name] = work[i];
    stage_guard("concept", name, [&] {
      const auto src = steer_path(cfg, pid, name);
      Inputs in{{rel(cfg, src), need_input(cfg, src, "concept", "steer", name)}};
      in[cfg.synthetic_sae ? rel(cfg, sae_file(cfg)) : "external:" + cfg.sae_path.filename().string()] = sae_hash;
      const json st = json::parse(io::read_text(src));
      const Vector z_ori = sae_encode(enc, json_vector(st.at("a_ori")));
      const Vector z_steer = sae_encode(enc, json_vector(st.at("a_steer")));
      const std::string cav_hash = hash_file(cav_path(cfg, cfg.source_concept(name)));
      const auto cv = concept_vector(name, z_ori, z_steer,
                                     {st.at("prompt").get<std::string>(), st.at("model").get<std::string>(), cav_hash, sae_hash});
      ordered_json doc;
      doc["concept"] = name;
      doc["prompt_id"] = pid;
      doc["provenance"] = {{"prompt", cv.provenance.prompt},
                           {"model", cv.provenance.model},
                           {"cav_hash", cv.provenance.cav_hash},
                           {"sae_hash", cv.provenance.sae_hash}};
      doc["config_hash"] = cfg.config_hash;
      doc["values"] = to_std(cv.values);
      doc["z_ori"] = to_std(z_ori);
      doc["z_steer"] = to_std(z_steer);
      write_artifact(cfg, concept_path(cfg, pid, name), to_bytes(doc.dump(2) + "\n"), "concept", in);
    });
  });
}

namespace {

ConceptVector load_concept_vector(const fs::path& path) {
  const json doc = json::parse(io::read_text(path));
  ConceptVector cv;
  cv.concept_name = doc.at("concept").get<std::string>();
  cv.values = json_vector(doc.at("values"));
  const auto& p = doc.at("provenance");
  cv.provenance = {p.at("prompt").get<std::string>(), p.at("model").get<std::string>(), p.at("cav_hash").get<std::string>(),
                   p.at("sae_hash").get<std::string>()};
  return cv;
}

}  // namespace

std::vector<BiasGrid> bias_grid(const RunConfig& cfg) {
  write_run_record(cfg);
  std::set<std::string> needed(cfg.targets.begin(), cfg.targets.end());
  for (const auto& p : cfg.ref_pairs) {
    needed.insert(p.ref1);
    needed.insert(p.ref2);
  }
  std::vector<BiasGrid> grids;
  for (const auto& [pid, prompt] : cfg.prompts) {
    ConceptMap vectors;
    Inputs in;
    for (const auto& name : needed) {
      const auto path = concept_path(cfg, pid, name);
      in[rel(cfg, path)] = need_input(cfg, path, "bias-grid", "concept", name);
      vectors.emplace(name, load_concept_vector(path));
    }
    GridMetadata meta;
    meta.model = vectors.begin()->second.provenance.model;
    meta.prompt = prompt;
    meta.hashes = in;
    meta.hashes["config"] = cfg.config_hash;
    auto grid = stage_guard("bias-grid", "", [&] { return biaslens::bias_grid(vectors, cfg.targets, cfg.ref_pairs, meta); });
    const auto base = cfg.output_dir / "grid" / pid;
    write_artifact(cfg, base.string() + ".json", to_bytes(grid_report_json(grid)), "bias-grid", in);
    write_artifact(cfg, base.string() + ".csv", to_bytes(grid_csv(grid)), "bias-grid", in);
    grids.push_back(std::move(grid));
  }
  if (grids.size() > 1) {
    GridMetadata meta;
    meta.model = grids.front().metadata.model;
    meta.prompt = "mean over " + std::to_string(grids.size()) + " prompts";
    meta.note = "extension: element-wise mean of the per-prompt grids";
    Inputs in;
    for (const auto& [pid, _] : cfg.prompts) {
      const auto p = cfg.output_dir / "grid" / (pid + ".json");
      in[rel(cfg, p)] = hash_file(p);
    }
    meta.hashes = in;
    meta.hashes["config"] = cfg.config_hash;
    auto mean = mean_grid(grids, meta);
    write_artifact(cfg, cfg.output_dir / "grid" / "mean.json", to_bytes(grid_report_json(mean)), "bias-grid", in);
    write_artifact(cfg, cfg.output_dir / "grid" / "mean.csv", to_bytes(grid_csv(mean)), "bias-grid", in);
    grids.push_back(std::move(mean));
  }
  return grids;
}

}  // namespace stages

// ---------------------------------------------------------------------------
// Report

namespace {

void verify_provenance(const fs::path& run_dir, const std::string& config_hash) {
  std::vector<fs::path> metas;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    const auto p = entry.path();
    if (!entry.is_regular_file()) continue;
    if (fs::relative(p, run_dir).begin()->string() == "report") continue;
    const auto name = p.filename().string();
    if (name.size() > 10 && name.ends_with(".meta.json")) metas.push_back(p);
  }
  std::sort(metas.begin(), metas.end());
  if (metas.empty()) throw ProvenanceError("no artifacts found under " + run_dir.string());
  for (const auto& m : metas) {
    const json meta = json::parse(io::read_text(m));
    const std::string artifact_name = m.string().substr(0, m.string().size() - std::string(".meta.json").size());
    const fs::path artifact(artifact_name);
    const auto label = fs::relative(artifact, run_dir).generic_string();
    if (meta.at("config_hash").get<std::string>() != config_hash) {
      throw ProvenanceError(label + " was produced under config " + meta.at("config_hash").get<std::string>() +
                            ", run is " + config_hash);
    }
    if (!fs::exists(artifact) || hash_file(artifact) != meta.at("output").get<std::string>()) {
      throw ProvenanceError(label + " does not match its recorded hash");
    }
    for (const auto& [input, h] : meta.at("inputs").items()) {
      if (input.rfind("external:", 0) == 0) continue;
      const auto p = run_dir / input;
      if (!fs::exists(p) || hash_file(p) != h.get<std::string>()) {
        throw ProvenanceError(label + " was built from a different version of " + input);
      }
    }
  }
}

}  // namespace

ReportSummary render_report(const fs::path& run_dir) {
  const auto run_file = run_dir / "run.json";
  if (!fs::exists(run_file)) throw StageError("report", "", "no run.json in " + run_dir.string());
  const json run = json::parse(io::read_text(run_file));
  const std::string config_hash = run.at("config_hash").get<std::string>();
  verify_provenance(run_dir, config_hash);

  RunConfig cfg;
  try {
    cfg = RunConfig::parse(run.at("config").dump(), run.at("base_dir").get<std::string>());
  } catch (const ConfigError&) {
    // An external SAE may have moved since the run; the report only needs
    // names from the config, so fall back to a placeholder encoder spec.
    json c = run.at("config");
    c["sae"] = json{{"synthetic", {{"seed", 0}, {"k", 1 << 20}, {"n_relevant", 1}}}};
    cfg = RunConfig::parse(c.dump(), run.at("base_dir").get<std::string>());
  }
  cfg.output_dir = run_dir;
  cfg.config_hash = config_hash;

  const fs::path out = run_dir / "report";
  fs::create_directories(out);
  ReportSummary summary;
  auto emit = [&](const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    io::write_text(p, text);
    summary.files.push_back(p);
  };

  // Grid documents and a combined score table.
  std::string scores = "prompt_id,ref_pair,target,score,cos1,cos2\n";
  std::vector<std::string> grid_ids;
  for (const auto& [pid, _] : cfg.prompts) grid_ids.push_back(pid);
  if (cfg.prompts.size() > 1) grid_ids.push_back("mean");
  for (const auto& pid : grid_ids) {
    const auto g = run_dir / "grid" / (pid + ".json");
    if (!fs::exists(g)) throw StageError("report", "", "missing grid/" + pid + ".json; run `bias-grid` first");
    emit(out / ("grid_" + pid + ".json"), io::read_text(g));
    const auto csv_text = io::read_text(run_dir / "grid" / (pid + ".csv"));
    std::size_t start = csv_text.find('\n') + 1;
    while (start < csv_text.size()) {
      const auto nl = csv_text.find('\n', start);
      scores += pid + "," + csv_text.substr(start, nl - start) + "\n";
      start = nl + 1;
    }
  }
  emit(out / "bias_scores.csv", scores);

  // CAV accuracy per layer.
  std::string acc = "concept,layer,train_accuracy,test_accuracy,scale\n";
  char buf[160];
  for (const auto& name : cfg.concept_names()) {
    const auto& source = cfg.source_concept(name);
    const auto stack = load_cavs(cav_path(cfg, source));
    for (const auto& c : stack.cavs) {
      std::snprintf(buf, sizeof buf, ",%d,%.6f,%.6f,%.6f\n", c.layer, c.train_accuracy, c.test_accuracy, c.scale);
      acc += name + buf;
    }
  }
  emit(out / "cav_accuracy.csv", acc);

  // Steering step counts.
  std::string steps = "prompt_id,concept,layer,steps,confidence\n";
  for (const auto& [pid, _] : cfg.prompts) {
    for (const auto& name : cfg.concept_names()) {
      const json st = json::parse(io::read_text(steer_path(cfg, pid, name)));
      const auto& s = st.at("steps_per_layer");
      const auto& c = st.at("confidences_after");
      for (std::size_t l = 0; l < s.size(); ++l) {
        std::snprintf(buf, sizeof buf, ",%zu,%d,%.9f\n", l + 1, s[l].get<int>(), c[l].get<double>());
        steps += pid + "," + name + buf;
      }
    }
  }
  emit(out / "steering.csv", steps);

  // Salience curves need a relevance mask.
  std::optional<Mask> mask;
  if (fs::exists(mask_file(cfg))) {
    const auto text = io::read_text(mask_file(cfg));
    mask = parse_mask(text, static_cast<int>(std::count(text.begin(), text.end(), '\n')));
  } else if (!cfg.relevance_mask_path.empty() && fs::exists(cfg.relevance_mask_path)) {
    const auto text = io::read_text(cfg.relevance_mask_path);
    mask = parse_mask(text, static_cast<int>(std::count_if(text.begin(), text.end(), [](char ch) { return ch == '0' || ch == '1'; })));
  }
  if (mask) {
    std::string aucs = "prompt_id,concept,original,steered,difference,normalized_difference\n";
    for (const auto& [pid, _] : cfg.prompts) {
      for (const auto& name : cfg.concept_names()) {
        const json doc = json::parse(io::read_text(concept_path(cfg, pid, name)));
        const Vector z_ori = json_vector(doc.at("z_ori"));
        const Vector z_steer = json_vector(doc.at("z_steer"));
        const Vector diff = z_steer - z_ori;
        const Vector ndiff = json_vector(doc.at("values"));
        const std::pair<const char*, const Vector*> variants[] = {
            {"original", &z_ori}, {"steered", &z_steer}, {"difference", &diff}, {"normalized_difference", &ndiff}};
        std::string curve = "variant,x,y\n";
        std::string row = pid + "," + name;
        for (const auto& [label, v] : variants) {
          for (const auto& [x, y] : salience_curve(as_span(*v), *mask)) {
            std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", label, x, y);
            curve += buf;
          }
          std::snprintf(buf, sizeof buf, ",%.6f", salience_auc(as_span(*v), *mask));
          row += buf;
        }
        emit(out / "salience" / pid / (name + ".csv"), curve);
        aucs += row + "\n";
        ++summary.salience_curves;
      }
    }
    emit(out / "salience_auc.csv", aucs);
  }
  return summary;
}

std::vector<BiasGrid> run_pipeline(const RunConfig& cfg, LayerwiseModel& model, int jobs) {
  OutputLock lock(cfg.output_dir);
  stages::probe_gen(cfg);
  stages::extract(cfg, model, jobs);
  stages::cav_train(cfg, jobs);
  for (const auto& [pid, _] : cfg.prompts) stages::steer(cfg, model, pid, false, jobs);
  stages::concept_vectors(cfg, jobs);
  return stages::bias_grid(cfg);
}

}  // namespace biaslens
