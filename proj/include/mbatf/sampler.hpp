#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mbatf/corpus.hpp"
#include "mbatf/random.hpp"

namespace mbatf {

struct EpisodeShape {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  // Query instances per relation.
  std::size_t q_query = 1;
  friend bool operator==(const EpisodeShape&, const EpisodeShape&) = default;
};

// Position of an instance inside an IndexedCorpus.
struct InstanceRef {
  std::size_t relation = 0;
  std::size_t index = 0;
  friend bool operator==(const InstanceRef&, const InstanceRef&) = default;
  friend auto operator<=>(const InstanceRef&, const InstanceRef&) = default;
};

// Source-domain instances from N relations outside the episode. Labels index `relations`.
struct AdversarialSet {
  std::vector<std::string> relations;
  std::vector<InstanceRef> support_refs;
  std::vector<InstanceRef> query_refs;
  std::vector<IndexedInstance> support_part;  // N x K, relation-major
  std::vector<IndexedInstance> query_part;    // N x Q, relation-major
};

// One N-way K-shot task. Instance vectors are relation-major (row r * K + k) and every
// instance's label is its relation's position in `relations`.
struct Episode {
  EpisodeShape shape;
  std::vector<std::string> relations;
  std::vector<InstanceRef> support_refs;
  std::vector<InstanceRef> query_refs;
  std::vector<IndexedInstance> support;
  std::vector<IndexedInstance> query;
  AdversarialSet adversarial;
};

// N source relations not named in `excluded`, K + Q instances each.
AdversarialSet sample_adversarial(const IndexedCorpus& source, const std::vector<std::string>& excluded,
                                  const EpisodeShape& shape, Rng& rng);

// Relations and instances are drawn without replacement; the adversarial set comes from
// `source` and avoids the episode's relations. `corpus` and `source` may be the same object.
Episode sample_episode(const IndexedCorpus& corpus, const IndexedCorpus& source, const EpisodeShape& shape, Rng& rng);

// Reproducible finite sequence of episodes from one seed.
class EpisodeStream {
 public:
  EpisodeStream(const IndexedCorpus& corpus, const IndexedCorpus& source, EpisodeShape shape, std::uint64_t seed,
                std::size_t length);

  std::optional<Episode> next();
  std::size_t remaining() const { return length_ - produced_; }

 private:
  const IndexedCorpus* corpus_;
  const IndexedCorpus* source_;
  EpisodeShape shape_;
  Rng rng_;
  std::size_t length_;
  std::size_t produced_ = 0;
};

// Debug/fixture dump: relation ids plus original instance indices.
nlohmann::ordered_json episode_to_json(const Episode& episode, const IndexedCorpus& corpus,
                                       const IndexedCorpus& source);
Episode episode_from_json(const nlohmann::json& doc, const IndexedCorpus& corpus, const IndexedCorpus& source);

}  // namespace mbatf
