#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

namespace mbatf {

// Token interval [start, end).
struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

// One labeled sentence with its head and tail entity mentions.
struct Instance {
  std::vector<std::string> tokens;
  TokenSpan head;
  TokenSpan tail;
  std::string relation;
  friend bool operator==(const Instance&, const Instance&) = default;
};

// Throws DataError when a span is empty, out of range, or head and tail coincide.
void validate_instance(const Instance& instance);

struct RelationCorpus {
  std::string domain;
  std::map<std::string, std::vector<Instance>> relations;

  std::size_t instance_count() const;
  friend bool operator==(const RelationCorpus&, const RelationCorpus&) = default;
};

// FewRel layout: {relation-id: [{"tokens": [...], "h": [name, id, [[pos...]]], "t": ...}]}.
RelationCorpus parse_fewrel_json(const nlohmann::json& doc, const std::string& domain);
RelationCorpus load_fewrel_json(const std::string& path, const std::string& domain = "");
nlohmann::ordered_json to_fewrel_json(const RelationCorpus& corpus);
void save_fewrel_json(const RelationCorpus& corpus, const std::string& path);

// Word vectors with two reserved rows: PAD (all zeros) and UNK.
class EmbeddingTable {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  // Empty vocabulary; UNK is drawn uniformly from [-0.5, 0.5] with `seed`.
  EmbeddingTable(std::size_t dim, std::uint64_t seed);

  // Returns the row of `word`, adding it when new. Duplicate words keep their first vector.
  int add(const std::string& word, const std::vector<double>& vector);
  // Exact match, then lower-cased match, then UNK.
  int lookup(const std::string& word) const;
  bool contains(const std::string& word) const { return index_.contains(word); }
  void set_unk(const std::vector<double>& vector);

  std::size_t dim() const { return dim_; }
  std::size_t vocab_size() const { return rows_; }
  const std::vector<double>& matrix() const { return matrix_; }
  std::vector<double> row(int id) const;
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::size_t dim_;
  std::size_t rows_ = 0;
  std::vector<double> matrix_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// Whitespace-separated "word v1 ... vd" lines; files ending in .gz are decompressed.
EmbeddingTable load_glove(const std::string& path, std::size_t expected_dim, std::uint64_t seed);

// Table over `words` (sorted, deduplicated) with rows drawn uniformly from [-0.5, 0.5].
EmbeddingTable random_embedding_table(const std::vector<std::string>& words, std::size_t dim, std::uint64_t seed);

// Copy of `table` restricted to `words` that it contains (plus PAD/UNK), preserving vectors.
EmbeddingTable restrict_table(const EmbeddingTable& table, const std::vector<std::string>& words);

// Every distinct token of the given corpora, sorted.
std::vector<std::string> corpus_vocabulary(const std::vector<const RelationCorpus*>& corpora);

// Model input for one instance: ids padded or truncated to max_len.
struct IndexedInstance {
  std::vector<int> token_ids;
  std::vector<int> head_pos;
  std::vector<int> tail_pos;
  // Original token count (the encoder clamps it to max_len).
  std::size_t length = 0;
  // Relation index inside the current episode, -1 when unassigned.
  int label = -1;
  friend bool operator==(const IndexedInstance&, const IndexedInstance&) = default;
};

// clip(offset, -max_len, max_len) + max_len.
int relative_position_id(std::ptrdiff_t offset, std::size_t max_len);
// Position id written at padded steps. Padded steps are masked by the encoder.
inline constexpr int kPositionSentinel = 0;

IndexedInstance index_instance(const Instance& instance, const EmbeddingTable& table, std::size_t max_len);

// A corpus converted once to model inputs. Instances whose spans do not survive
// truncation are skipped and counted.
struct IndexedCorpus {
  std::string domain;
  std::vector<std::string> relation_ids;
  std::vector<std::vector<IndexedInstance>> instances;
  // Position of each indexed instance in the original relation list.
  std::vector<std::vector<std::size_t>> origin;
  std::size_t skipped = 0;
  std::size_t max_len = 0;
};

IndexedCorpus index_corpus(const RelationCorpus& corpus, const EmbeddingTable& table, std::size_t max_len);

struct SynthConfig {
  std::size_t n_relations = 8;
  std::size_t instances_per_relation = 60;
  std::size_t vocab_size = 200;
  // Fraction of relation-pattern tokens the target domain replaces with target-only words.
  double domain_shift = 0.5;
};

// Seeded source/target pair. Each relation is signalled by two pattern tokens: one right
// after the head mention and one right before the tail mention. Target relations have
// their own ids and re-pair the source pattern tokens; `domain_shift` of those tokens are
// swapped for words that never occur in the source domain.
std::pair<RelationCorpus, RelationCorpus> synth_generate(const SynthConfig& config, std::uint64_t seed);

// Pattern-token pair of every relation in a synthetic corpus pair, keyed by relation id.
std::map<std::string, std::pair<std::string, std::string>> synth_patterns(const SynthConfig& config,
                                                                         std::uint64_t seed);

}  // namespace mbatf
