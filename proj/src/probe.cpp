#include "biaslens/probe.hpp"

#include <fstream>
#include <set>
#include <unordered_set>
#include <variant>

#include "biaslens/binary_io.hpp"
#include "biaslens/hash.hpp"
#include "biaslens/parallel.hpp"
#include "biaslens/rng.hpp"

namespace biaslens {

namespace {

constexpr std::uint64_t kSaturate = std::uint64_t{1} << 62;
constexpr std::uint64_t kEnumerateLimit = 1'000'000;

struct Segment {
  bool is_slot;
  std::string text;  // literal text or slot name
};

std::vector<Segment> parse_template(const std::string& tpl) {
  std::vector<Segment> out;
  std::string literal;
  for (std::size_t i = 0; i < tpl.size(); ++i) {
    if (tpl[i] == '{') {
      const auto close = tpl.find('}', i);
      if (close == std::string::npos) throw InvalidArgument("template has unterminated slot: " + tpl);
      if (!literal.empty()) out.push_back({false, std::exchange(literal, {})});
      out.push_back({true, tpl.substr(i + 1, close - i - 1)});
      i = close;
    } else {
      literal.push_back(tpl[i]);
    }
  }
  if (!literal.empty()) out.push_back({false, literal});
  return out;
}

std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b) {
  if (a == 0 || b == 0) return 0;
  if (a > kSaturate / b) return kSaturate;
  return a * b;
}

/// Flattened view of a pool: combination index -> sentence.
class PoolIndex {
 public:
  explicit PoolIndex(const TemplatePool& pool) : pool_(pool) {
    if (pool.templates.empty()) throw InvalidArgument("template pool is empty");
    for (const auto& tpl : pool.templates) {
      if (tpl.find('\n') != std::string::npos) throw InvalidArgument("template contains a newline: " + tpl);
      auto segs = parse_template(tpl);
      std::uint64_t count = 1;
      for (const auto& s : segs) {
        if (!s.is_slot) continue;
        auto it = pool.lexicon.find(s.text);
        if (it == pool.lexicon.end() || it->second.empty()) {
          throw InvalidArgument("empty lexicon slot '{" + s.text + "}' referenced by template: " + tpl);
        }
        for (const auto& w : it->second) {
          if (w.find('\n') != std::string::npos) throw InvalidArgument("lexicon entry contains a newline");
        }
        count = sat_mul(count, it->second.size());
      }
      parsed_.push_back(std::move(segs));
      counts_.push_back(count);
      total_ = std::min(kSaturate, total_ + count);
    }
  }

  std::uint64_t total() const { return total_; }

  std::string sentence(std::uint64_t index) const {
    std::size_t t = 0;
    while (index >= counts_[t]) {
      index -= counts_[t];
      ++t;
    }
    std::string out;
    for (const auto& s : parsed_[t]) {
      if (!s.is_slot) {
        out += s.text;
        continue;
      }
      const auto& words = pool_.lexicon.at(s.text);
      out += words[index % words.size()];
      index /= words.size();
    }
    return out;
  }

 private:
  const TemplatePool& pool_;
  std::vector<std::vector<Segment>> parsed_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

bool acceptable(const std::string& s) {
  const auto tokens = whitespace_tokens(s);
  return !tokens.empty() && tokens.size() <= kMaxProbeTokens;
}

std::vector<std::string> draw(const TemplatePool& pool, Rng& rng, int n, const std::unordered_set<std::string>& exclude,
                              const char* cls) {
  PoolIndex index(pool);
  const auto need = static_cast<std::uint64_t>(n);
  if (index.total() < need) {
    throw InvalidArgument(std::string(cls) + " pool has only " + std::to_string(index.total()) +
                          " template/lexicon combinations but " + std::to_string(n) + " are required (deficit " +
                          std::to_string(need - index.total()) + ")");
  }
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  auto consider = [&](std::uint64_t i) {
    std::string s = index.sentence(i);
    if (!acceptable(s) || exclude.count(s) || !seen.insert(s).second) return;
    out.push_back(std::move(s));
  };

  if (index.total() <= kEnumerateLimit) {
    std::vector<std::uint64_t> order(index.total());
    for (std::uint64_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    for (std::uint64_t i : order) {
      consider(i);
      if (out.size() == need) break;
    }
  } else {
    std::unordered_set<std::uint64_t> used;
    const std::uint64_t max_attempts = 64 * need + 4096;
    for (std::uint64_t attempt = 0; attempt < max_attempts && out.size() < need; ++attempt) {
      const auto i = rng.below(index.total());
      if (used.insert(i).second) consider(i);
    }
  }
  if (out.size() < need) {
    throw InvalidArgument(std::string(cls) + " pool yields only " + std::to_string(out.size()) +
                          " distinct admissible sentences, " + std::to_string(n) + " required (deficit " +
                          std::to_string(need - out.size()) + ")");
  }
  return out;
}

}  // namespace

std::uint64_t TemplatePool::combinations() const { return PoolIndex(*this).total(); }

const TemplatePool& default_distractor_pool() {
  static const TemplatePool pool{
      {
          "The {weather} forecast for {day} mentions {amount} rain near the {place}.",
          "A {adjective} {vehicle} was parked beside the {place} on {day}.",
          "The recipe calls for {amount} cups of {ingredient} and a pinch of salt.",
          "Traffic on the {road} was {adjective} during the {time} commute.",
          "The {object} on the shelf has been {state} since {day}.",
          "Local officials plan to repaint the {place} before the {season}.",
          "The {time} train to the {place} was {state} again.",
          "Volunteers collected {amount} bags of leaves along the {road}.",
      },
      {
          {"weather", {"cloudy", "windy", "humid", "mild", "chilly", "foggy", "sunny", "stormy"}},
          {"day", {"Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"}},
          {"amount", {"light", "heavy", "scattered", "steady", "little", "some", "two", "three"}},
          {"place", {"harbor", "library", "bridge", "stadium", "museum", "market", "station", "park", "river"}},
          {"adjective", {"red", "quiet", "slow", "old", "rusty", "busy", "small", "heavy"}},
          {"vehicle", {"truck", "bicycle", "van", "scooter", "bus", "tractor"}},
          {"ingredient", {"flour", "rice", "sugar", "oats", "milk", "lentils", "water"}},
          {"road", {"highway", "ring road", "main street", "bypass", "avenue", "canal path"}},
          {"time", {"morning", "evening", "late", "early", "midday", "weekend"}},
          {"object", {"lamp", "clock", "vase", "radio", "globe", "kettle", "atlas"}},
          {"state", {"dusty", "broken", "unused", "delayed", "repaired", "crowded", "missing"}},
          {"season", {"winter", "summer", "spring", "autumn", "holidays"}},
      }};
  return pool;
}

void ProbeCorpus::validate() const {
  if (positives.empty() || negatives.empty()) {
    throw InvalidArgument("probe corpus '" + concept_name + "' needs non-empty positives and negatives");
  }
  std::unordered_set<std::string> pos(positives.begin(), positives.end());
  for (const auto& s : negatives) {
    if (pos.count(s)) throw InvalidArgument("probe corpus '" + concept_name + "': sentence in both classes: " + s);
  }
}

std::string ProbeCorpus::content_hash() const {
  Fnv1a h;
  h.update(concept_name).update(std::string_view("\0", 1));
  for (const auto* list : {&positives, &negatives}) {
    h.update_pod(static_cast<std::uint64_t>(list->size()));
    for (const auto& s : *list) h.update(s).update(std::string_view("\n", 1));
  }
  return hex64(h.digest());
}

ProbeCorpus generate_probe(const std::string& concept_name, const TemplatePool& positives, std::uint64_t seed,
                           int n_per_class, const TemplatePool& negatives) {
  if (concept_name.empty()) throw InvalidArgument("generate_probe: empty concept identifier");
  if (n_per_class < 1) throw InvalidArgument("generate_probe: n_per_class must be positive");
  Rng rng(mix64(seed ^ fnv1a(concept_name)));
  ProbeCorpus corpus;
  corpus.concept_name = concept_name;
  corpus.positives = draw(positives, rng, n_per_class, {}, "positive");
  const std::unordered_set<std::string> exclude(corpus.positives.begin(), corpus.positives.end());
  corpus.negatives = draw(negatives, rng, n_per_class, exclude, "negative");
  return corpus;
}

namespace {

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) {
    text += l;
    text.push_back('\n');
  }
  io::write_text(path, text);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  const std::string text = io::read_text(path);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(std::move(line));
    start = nl + 1;
  }
  return out;
}

}  // namespace

void save_corpus(const ProbeCorpus& corpus, const std::filesystem::path& dir) {
  corpus.validate();
  std::filesystem::create_directories(dir);
  write_lines(dir / (corpus.concept_name + ".pos.txt"), corpus.positives);
  write_lines(dir / (corpus.concept_name + ".neg.txt"), corpus.negatives);
}

ProbeCorpus load_corpus(const std::filesystem::path& dir, const std::string& concept_name) {
  ProbeCorpus c;
  c.concept_name = concept_name;
  c.positives = read_lines(dir / (concept_name + ".pos.txt"));
  c.negatives = read_lines(dir / (concept_name + ".neg.txt"));
  c.validate();
  return c;
}

void ActivationSet::validate() const {
  model_info.validate();
  std::map<int, std::pair<bool, bool>> seen;
  for (const auto& r : records) {
    if (r.layer < 1 || r.layer > model_info.n_layers) {
      throw InvalidArgument("activation record layer " + std::to_string(r.layer) + " outside [1, " +
                            std::to_string(model_info.n_layers) + "]");
    }
    if (r.label != 0 && r.label != 1) throw InvalidArgument("activation record label must be 0 or 1");
    if (r.activation.size() != model_info.hidden_dim) {
      throw InvalidArgument("activation record has dimension " + std::to_string(r.activation.size()) +
                            ", expected " + std::to_string(model_info.hidden_dim));
    }
    auto& s = seen[r.layer];
    (r.label ? s.second : s.first) = true;
  }
  for (const auto& [layer, s] : seen) {
    if (!s.first || !s.second) {
      throw InvalidArgument("layer " + std::to_string(layer) + " lacks one of the two labels");
    }
  }
}

std::pair<Matrix, std::vector<int>> ActivationSet::layer_data(int layer) const {
  std::vector<const ActivationRecord*> rows;
  for (const auto& r : records)
    if (r.layer == layer) rows.push_back(&r);
  Matrix x(static_cast<Eigen::Index>(rows.size()), model_info.hidden_dim);
  std::vector<int> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = rows[i]->activation.cast<double>().transpose();
    y[i] = rows[i]->label;
  }
  return {std::move(x), std::move(y)};
}

ActivationSet extract_activation_set(LayerwiseModel& model, const ProbeCorpus& corpus, int jobs) {
  corpus.validate();
  const auto& info = model.info();
  std::vector<std::pair<const std::string*, int>> sentences;
  for (const auto& s : corpus.positives) sentences.emplace_back(&s, 1);
  for (const auto& s : corpus.negatives) sentences.emplace_back(&s, 0);

  std::vector<std::vector<Vector>> acts(sentences.size());
  parallel_for(sentences.size(), model.thread_safe() ? jobs : 1, [&](std::size_t i) {
    try {
      acts[i] = forward_all(model, *sentences[i].first);
    } catch (const std::exception& e) {
      throw Error("extraction failed for sentence \"" + *sentences[i].first + "\": " + e.what());
    }
  });

  ActivationSet set;
  set.model_info = info;
  set.concept_name = corpus.concept_name;
  set.corpus_hash = corpus.content_hash();
  set.records.reserve(sentences.size() * static_cast<std::size_t>(info.n_layers));
  for (int l = 1; l <= info.n_layers; ++l) {
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      const Vector& a = acts[i][static_cast<std::size_t>(l - 1)];
      if (a.size() != info.hidden_dim || !a.allFinite()) {
        throw Error("extraction produced an invalid activation for sentence \"" + *sentences[i].first + "\"");
      }
      set.records.push_back({l, sentences[i].second, a.cast<float>()});
    }
  }
  return set;
}

namespace {
constexpr std::string_view kActMagic = "BLAC";
constexpr std::uint16_t kActVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_activations(const ActivationSet& set) {
  set.validate();
  io::ByteWriter w;
  w.magic(kActMagic);
  w.u16(kActVersion);
  w.u32(static_cast<std::uint32_t>(set.model_info.n_layers));
  w.u32(static_cast<std::uint32_t>(set.model_info.hidden_dim));
  w.u64(set.records.size());
  for (const auto& r : set.records) {
    w.u32(static_cast<std::uint32_t>(r.layer));
    w.u8(static_cast<std::uint8_t>(r.label));
    w.u8(0);
    w.u8(0);
    w.u8(0);
    for (Eigen::Index i = 0; i < r.activation.size(); ++i) w.f32(r.activation(i));
  }
  w.seal();
  return w.bytes();
}

ActivationSet deserialize_activations(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kActMagic);
  r.expect_version(kActVersion);
  ActivationSet set;
  const auto header_at = r.offset();
  set.model_info.n_layers = static_cast<int>(r.u32());
  set.model_info.hidden_dim = static_cast<int>(r.u32());
  set.model_info.name = "loaded";
  const auto n_records = r.u64();
  if (set.model_info.n_layers < 1 || set.model_info.hidden_dim < 1) {
    throw FormatError(FormatError::Kind::Shape, header_at, "non-positive n_layers/hidden_dim in header");
  }
  const std::uint64_t record_bytes = 8 + 4 * static_cast<std::uint64_t>(set.model_info.hidden_dim);
  if (n_records > (r.size() / record_bytes) + 1) {
    throw FormatError(FormatError::Kind::Truncated, r.size(),
                      "truncated file: header declares " + std::to_string(n_records) + " records");
  }
  r.expect_exact_remaining(n_records * record_bytes);
  r.verify_trailing_checksum();
  set.records.reserve(n_records);
  for (std::uint64_t k = 0; k < n_records; ++k) {
    const auto at = r.offset();
    ActivationRecord rec;
    rec.layer = static_cast<int>(r.u32());
    rec.label = r.u8();
    r.skip(3);
    if (rec.layer < 1 || rec.layer > set.model_info.n_layers || rec.label > 1) {
      throw FormatError(FormatError::Kind::Shape, at, "record " + std::to_string(k) + " has invalid layer/label");
    }
    rec.activation.resize(set.model_info.hidden_dim);
    for (int i = 0; i < set.model_info.hidden_dim; ++i) rec.activation(i) = r.f32();
    set.records.push_back(std::move(rec));
  }
  return set;
}

void save_activations(const ActivationSet& set, const std::filesystem::path& path) {
  io::write_file(path, serialize_activations(set));
}

ActivationSet load_activations(const std::filesystem::path& path) { return deserialize_activations(io::read_file(path)); }

}  // namespace biaslens
