#include "mbatf/corpus.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "mbatf/errors.hpp"
#include "mbatf/random.hpp"

namespace mbatf {

void validate_instance(const Instance& instance) {
  const std::size_t n = instance.tokens.size();
  if (n == 0) throw DataError("instance has no tokens");
  for (const auto& [name, span] : {std::pair{"head", instance.head}, std::pair{"tail", instance.tail}}) {
    if (!(span.start < span.end && span.end <= n)) {
      throw DataError(std::string(name) + " span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                      ") invalid for " + std::to_string(n) + " tokens");
    }
  }
  if (instance.head == instance.tail) throw DataError("head and tail spans are identical");
}

std::size_t RelationCorpus::instance_count() const {
  std::size_t n = 0;
  for (const auto& [_, list] : relations) n += list.size();
  return n;
}

namespace {

TokenSpan parse_mention(const nlohmann::json& mention) {
  if (!mention.is_array() || mention.size() < 3 || !mention[2].is_array() || mention[2].empty()) {
    throw DataError("mention must be [name, id, [[positions]]]");
  }
  const auto& positions = mention[2][0];
  if (!positions.is_array() || positions.empty()) throw DataError("mention has an empty position list");
  std::size_t lo = static_cast<std::size_t>(-1), hi = 0;
  for (const auto& p : positions) {
    if (!p.is_number_integer() || p.get<long long>() < 0) throw DataError("mention position must be a non-negative integer");
    const auto v = p.get<std::size_t>();
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi + 1};
}

nlohmann::ordered_json mention_json(const Instance& instance, const TokenSpan& span) {
  std::string name;
  nlohmann::ordered_json positions = nlohmann::ordered_json::array();
  for (std::size_t i = span.start; i < span.end; ++i) {
    if (i > span.start) name += ' ';
    name += instance.tokens[i];
    positions.push_back(i);
  }
  return nlohmann::ordered_json::array({name, "", nlohmann::ordered_json::array({positions})});
}

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Line source over plain or gzip-compressed text.
class LineReader {
 public:
  explicit LineReader(const std::string& path) {
    if (path.size() > 3 && path.ends_with(".gz")) {
      gz_ = gzopen(path.c_str(), "rb");
      if (!gz_) throw DataError("cannot open " + path);
    } else {
      plain_ = std::make_unique<std::ifstream>(path);
      if (!*plain_) throw DataError("cannot open " + path);
    }
  }
  ~LineReader() {
    if (gz_) gzclose(gz_);
  }
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  bool next(std::string& line) {
    if (plain_) return static_cast<bool>(std::getline(*plain_, line));
    line.clear();
    char buf[8192];
    while (gzgets(gz_, buf, sizeof(buf))) {
      line += buf;
      if (!line.empty() && line.back() == '\n') {
        line.pop_back();
        return true;
      }
    }
    return !line.empty();
  }

 private:
  gzFile gz_ = nullptr;
  std::unique_ptr<std::ifstream> plain_;
};

}  // namespace

RelationCorpus parse_fewrel_json(const nlohmann::json& doc, const std::string& domain) {
  if (!doc.is_object()) throw DataError("FewRel corpus must be a JSON object of relation -> instances");
  if (doc.empty()) throw DataError("no relations");
  RelationCorpus corpus;
  corpus.domain = domain;
  for (const auto& [relation, records] : doc.items()) {
    if (!records.is_array() || records.empty()) {
      throw DataError("relation " + relation + ": expected a non-empty array of instances");
    }
    auto& list = corpus.relations[relation];
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& rec = records[i];
      try {
        if (!rec.is_object()) throw DataError("record is not an object");
        for (const char* field : {"tokens", "h", "t"}) {
          if (!rec.contains(field)) throw DataError(std::string("missing field \"") + field + "\"");
        }
        if (!rec["tokens"].is_array()) throw DataError("\"tokens\" must be an array of strings");
        Instance inst;
        for (const auto& tok : rec["tokens"]) {
          if (!tok.is_string()) throw DataError("\"tokens\" must be an array of strings");
          inst.tokens.push_back(tok.get<std::string>());
        }
        inst.head = parse_mention(rec["h"]);
        inst.tail = parse_mention(rec["t"]);
        inst.relation = relation;
        validate_instance(inst);
        list.push_back(std::move(inst));
      } catch (const DataError& e) {
        throw DataError("relation " + relation + ", instance " + std::to_string(i) + ": " + e.what());
      }
    }
  }
  return corpus;
}

RelationCorpus load_fewrel_json(const std::string& path, const std::string& domain) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": malformed JSON: " + e.what());
  }
  try {
    return parse_fewrel_json(doc, domain.empty() ? path : domain);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

nlohmann::ordered_json to_fewrel_json(const RelationCorpus& corpus) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& [relation, list] : corpus.relations) {
    auto& arr = doc[relation] = nlohmann::ordered_json::array();
    for (const auto& inst : list) {
      nlohmann::ordered_json rec;
      rec["tokens"] = inst.tokens;
      rec["h"] = mention_json(inst, inst.head);
      rec["t"] = mention_json(inst, inst.tail);
      arr.push_back(std::move(rec));
    }
  }
  return doc;
}

void save_fewrel_json(const RelationCorpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << to_fewrel_json(corpus).dump() << '\n';
}

EmbeddingTable::EmbeddingTable(std::size_t dim, std::uint64_t seed) : dim_(dim) {
  if (dim == 0) throw ContractError("embedding table: dimension must be positive");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  std::vector<double> unk(dim);
  for (auto& v : unk) v = unit(rng);
  add("<pad>", std::vector<double>(dim, 0.0));
  add("<unk>", unk);
}

int EmbeddingTable::add(const std::string& word, const std::vector<double>& vector) {
  if (vector.size() != dim_) {
    throw ContractError("embedding table: vector of width " + std::to_string(vector.size()) + ", expected " +
                        std::to_string(dim_));
  }
  if (auto it = index_.find(word); it != index_.end()) return it->second;
  const int id = static_cast<int>(rows_++);
  index_.emplace(word, id);
  words_.push_back(word);
  matrix_.insert(matrix_.end(), vector.begin(), vector.end());
  return id;
}

int EmbeddingTable::lookup(const std::string& word) const {
  if (auto it = index_.find(word); it != index_.end() && it->second > kUnk) return it->second;
  if (auto it = index_.find(lowercase(word)); it != index_.end() && it->second > kUnk) return it->second;
  return kUnk;
}

void EmbeddingTable::set_unk(const std::vector<double>& vector) {
  if (vector.size() != dim_) throw ContractError("embedding table: UNK vector has the wrong width");
  std::copy(vector.begin(), vector.end(), matrix_.begin() + static_cast<std::ptrdiff_t>(kUnk * dim_));
}

std::vector<double> EmbeddingTable::row(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= rows_) throw ContractError("embedding table: row out of range");
  auto begin = matrix_.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(id) * dim_);
  return {begin, begin + static_cast<std::ptrdiff_t>(dim_)};
}

EmbeddingTable load_glove(const std::string& path, std::size_t expected_dim, std::uint64_t seed) {
  EmbeddingTable table(expected_dim, seed);
  LineReader reader(path);
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> vec;
  vec.reserve(expected_dim);
  while (reader.next(line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    vec.clear();
    std::string tok;
    while (fields >> tok) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw DataError(path + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
      }
      vec.push_back(v);
    }
    if (vec.size() != expected_dim) {
      throw DataError(path + ":" + std::to_string(line_no) + ": row has " + std::to_string(vec.size()) +
                      " values, expected " + std::to_string(expected_dim));
    }
    table.add(word, vec);
  }
  return table;
}

EmbeddingTable random_embedding_table(const std::vector<std::string>& words, std::size_t dim, std::uint64_t seed) {
  EmbeddingTable table(dim, derive_seed(seed, "embedding.unk"));
  Rng rng = make_rng(seed, "embedding.rows");
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  std::vector<std::string> sorted = words;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> vec(dim);
  for (const auto& w : sorted) {
    for (auto& v : vec) v = unit(rng);
    table.add(w, vec);
  }
  return table;
}

EmbeddingTable restrict_table(const EmbeddingTable& table, const std::vector<std::string>& words) {
  EmbeddingTable out(table.dim(), 0);
  out.set_unk(table.row(EmbeddingTable::kUnk));
  std::vector<int> keep;
  for (const auto& w : words) {
    const int id = table.lookup(w);
    if (id > EmbeddingTable::kUnk) keep.push_back(id);
  }
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  for (int id : keep) out.add(table.words()[static_cast<std::size_t>(id)], table.row(id));
  return out;
}

std::vector<std::string> corpus_vocabulary(const std::vector<const RelationCorpus*>& corpora) {
  std::set<std::string> vocab;
  for (const auto* corpus : corpora) {
    for (const auto& [_, list] : corpus->relations) {
      for (const auto& inst : list) vocab.insert(inst.tokens.begin(), inst.tokens.end());
    }
  }
  return {vocab.begin(), vocab.end()};
}

int relative_position_id(std::ptrdiff_t offset, std::size_t max_len) {
  const auto m = static_cast<std::ptrdiff_t>(max_len);
  return static_cast<int>(std::clamp(offset, -m, m) + m);
}

IndexedInstance index_instance(const Instance& instance, const EmbeddingTable& table, std::size_t max_len) {
  if (max_len == 0) throw ContractError("index_instance: max_len must be at least 1");
  validate_instance(instance);
  if (instance.head.end > max_len || instance.tail.end > max_len) {
    throw DataError("entity span ends beyond max_len " + std::to_string(max_len));
  }
  IndexedInstance out;
  out.length = instance.tokens.size();
  out.token_ids.assign(max_len, EmbeddingTable::kPad);
  out.head_pos.assign(max_len, kPositionSentinel);
  out.tail_pos.assign(max_len, kPositionSentinel);
  const std::size_t kept = std::min(max_len, instance.tokens.size());
  for (std::size_t i = 0; i < kept; ++i) {
    out.token_ids[i] = table.lookup(instance.tokens[i]);
    out.head_pos[i] = relative_position_id(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(instance.head.start),
                                           max_len);
    out.tail_pos[i] = relative_position_id(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(instance.tail.start),
                                           max_len);
  }
  return out;
}

IndexedCorpus index_corpus(const RelationCorpus& corpus, const EmbeddingTable& table, std::size_t max_len) {
  IndexedCorpus out;
  out.domain = corpus.domain;
  out.max_len = max_len;
  for (const auto& [relation, list] : corpus.relations) {
    std::vector<IndexedInstance> indexed;
    std::vector<std::size_t> origin;
    indexed.reserve(list.size());
    for (std::size_t i = 0; i < list.size(); ++i) {
      try {
        indexed.push_back(index_instance(list[i], table, max_len));
        origin.push_back(i);
      } catch (const DataError&) {
        ++out.skipped;
      }
    }
    if (indexed.empty()) continue;
    out.relation_ids.push_back(relation);
    out.instances.push_back(std::move(indexed));
    out.origin.push_back(std::move(origin));
  }
  return out;
}

namespace {

struct SynthVocabulary {
  std::vector<std::string> fillers;
  std::vector<std::string> entities;
  std::vector<std::string> source_patterns;
  std::vector<std::string> target_patterns;
};

void check_synth_config(const SynthConfig& config) {
  if (config.n_relations < 2) throw ConfigError("synthetic corpus needs at least 2 relations");
  if (config.instances_per_relation < 1) throw ConfigError("synthetic corpus needs at least 1 instance per relation");
  if (!(config.domain_shift >= 0.0 && config.domain_shift <= 1.0)) {
    throw ConfigError("domain_shift must lie in [0, 1]");
  }
  const std::size_t needed = 4 * config.n_relations + 8;
  if (config.vocab_size < needed) {
    throw ConfigError("vocab_size " + std::to_string(config.vocab_size) + " too small for " +
                      std::to_string(config.n_relations) + " relations (need at least " + std::to_string(needed) + ")");
  }
}

std::string padded(const std::string& prefix, std::size_t i, std::size_t count) {
  std::string digits = std::to_string(i);
  const std::size_t width = std::to_string(count > 0 ? count - 1 : 0).size();
  return prefix + std::string(width - std::min(width, digits.size()), '0') + digits;
}

SynthVocabulary synth_vocabulary(const SynthConfig& config) {
  SynthVocabulary v;
  const std::size_t slots = 2 * config.n_relations;
  const std::size_t rest = config.vocab_size - 2 * slots;
  const std::size_t n_entities = std::max<std::size_t>(2, rest / 3);
  const std::size_t n_fillers = rest - n_entities;
  for (std::size_t i = 0; i < n_fillers; ++i) v.fillers.push_back(padded("w", i, n_fillers));
  for (std::size_t i = 0; i < n_entities; ++i) v.entities.push_back(padded("e", i, n_entities));
  for (std::size_t i = 0; i < slots; ++i) v.source_patterns.push_back(padded("ps", i, slots));
  for (std::size_t i = 0; i < slots; ++i) v.target_patterns.push_back(padded("pt", i, slots));
  return v;
}

using PatternMap = std::map<std::string, std::pair<std::string, std::string>>;

// Source relation r owns slots (2r, 2r+1); target relation r re-pairs (2r+1, 2r+2 mod 2n).
// The first round(shift * 2n) slots of a seeded permutation use target-only words.
std::pair<PatternMap, PatternMap> pattern_maps(const SynthConfig& config, const SynthVocabulary& vocab,
                                               std::uint64_t seed) {
  const std::size_t n = config.n_relations;
  const std::size_t slots = 2 * n;
  Rng rng = make_rng(seed, "synth.shift");
  const auto order = sample_without_replacement(rng, slots, slots);
  const auto n_shifted = static_cast<std::size_t>(std::llround(config.domain_shift * static_cast<double>(slots)));
  std::vector<bool> shifted(slots, false);
  for (std::size_t i = 0; i < n_shifted; ++i) shifted[order[i]] = true;
  auto target_token = [&](std::size_t slot) {
    return shifted[slot] ? vocab.target_patterns[slot] : vocab.source_patterns[slot];
  };
  PatternMap source, target;
  for (std::size_t r = 0; r < n; ++r) {
    source[padded("src_r", r, n)] = {vocab.source_patterns[2 * r], vocab.source_patterns[2 * r + 1]};
    target[padded("tgt_r", r, n)] = {target_token(2 * r + 1), target_token((2 * r + 2) % slots)};
  }
  return {source, target};
}

RelationCorpus synth_corpus(const std::string& domain, const PatternMap& patterns, const SynthVocabulary& vocab,
                            std::size_t per_relation, Rng& rng) {
  RelationCorpus corpus;
  corpus.domain = domain;
  auto pick = [&rng](const std::vector<std::string>& words) { return words[uniform_index(rng, words.size())]; };
  auto count = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  for (const auto& [relation, pattern] : patterns) {
    auto& list = corpus.relations[relation];
    for (std::size_t i = 0; i < per_relation; ++i) {
      Instance inst;
      inst.relation = relation;
      auto& toks = inst.tokens;
      for (std::size_t k = count(0, 3); k > 0; --k) toks.push_back(pick(vocab.fillers));
      inst.head.start = toks.size();
      for (std::size_t k = count(1, 2); k > 0; --k) toks.push_back(pick(vocab.entities));
      inst.head.end = toks.size();
      toks.push_back(pattern.first);
      for (std::size_t k = count(0, 2); k > 0; --k) toks.push_back(pick(vocab.fillers));
      toks.push_back(pattern.second);
      inst.tail.start = toks.size();
      for (std::size_t k = count(1, 2); k > 0; --k) toks.push_back(pick(vocab.entities));
      inst.tail.end = toks.size();
      for (std::size_t k = count(0, 3); k > 0; --k) toks.push_back(pick(vocab.fillers));
      list.push_back(std::move(inst));
    }
  }
  return corpus;
}

}  // namespace

std::pair<RelationCorpus, RelationCorpus> synth_generate(const SynthConfig& config, std::uint64_t seed) {
  check_synth_config(config);
  const auto vocab = synth_vocabulary(config);
  const auto [source_patterns, target_patterns] = pattern_maps(config, vocab, seed);
  Rng source_rng = make_rng(seed, "synth.source");
  Rng target_rng = make_rng(seed, "synth.target");
  return {synth_corpus("synthetic-source", source_patterns, vocab, config.instances_per_relation, source_rng),
          synth_corpus("synthetic-target", target_patterns, vocab, config.instances_per_relation, target_rng)};
}

std::map<std::string, std::pair<std::string, std::string>> synth_patterns(const SynthConfig& config,
                                                                         std::uint64_t seed) {
  check_synth_config(config);
  const auto vocab = synth_vocabulary(config);
  auto [source, target] = pattern_maps(config, vocab, seed);
  source.merge(target);
  return source;
}

}  // namespace mbatf
