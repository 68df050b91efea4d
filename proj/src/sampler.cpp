#include "mbatf/sampler.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "mbatf/errors.hpp"

namespace mbatf {

namespace {

void check_shape(const EpisodeShape& shape) {
  if (shape.n_way == 0 || shape.k_shot == 0 || shape.q_query == 0) {
    throw ContractError("episode shape needs N, K and Q of at least 1");
  }
}

// Draws K + Q instances from each listed relation, filling support then query.
void draw_instances(const IndexedCorpus& corpus, const std::vector<std::size_t>& relations, const EpisodeShape& shape,
                    Rng& rng, std::vector<InstanceRef>& support_refs, std::vector<InstanceRef>& query_refs,
                    std::vector<IndexedInstance>& support, std::vector<IndexedInstance>& query) {
  const std::size_t per = shape.k_shot + shape.q_query;
  std::vector<std::vector<std::size_t>> picks;
  for (std::size_t r : relations) {
    const auto& pool = corpus.instances[r];
    if (pool.size() < per) {
      throw DataError("relation " + corpus.relation_ids[r] + " in " + corpus.domain + " has " +
                      std::to_string(pool.size()) + " instances, episode needs " + std::to_string(per));
    }
    picks.push_back(sample_without_replacement(rng, pool.size(), per));
  }
  for (std::size_t label = 0; label < relations.size(); ++label) {
    for (std::size_t k = 0; k < shape.k_shot; ++k) {
      const InstanceRef ref{relations[label], picks[label][k]};
      support_refs.push_back(ref);
      support.push_back(corpus.instances[ref.relation][ref.index]);
      support.back().label = static_cast<int>(label);
    }
  }
  for (std::size_t label = 0; label < relations.size(); ++label) {
    for (std::size_t q = 0; q < shape.q_query; ++q) {
      const InstanceRef ref{relations[label], picks[label][shape.k_shot + q]};
      query_refs.push_back(ref);
      query.push_back(corpus.instances[ref.relation][ref.index]);
      query.back().label = static_cast<int>(label);
    }
  }
}

}  // namespace

AdversarialSet sample_adversarial(const IndexedCorpus& source, const std::vector<std::string>& excluded,
                                  const EpisodeShape& shape, Rng& rng) {
  check_shape(shape);
  const std::unordered_set<std::string> skip(excluded.begin(), excluded.end());
  std::vector<std::size_t> eligible;
  for (std::size_t r = 0; r < source.relation_ids.size(); ++r) {
    if (!skip.contains(source.relation_ids[r])) eligible.push_back(r);
  }
  if (eligible.size() < shape.n_way) {
    throw DataError("source corpus has " + std::to_string(eligible.size()) +
                    " relations outside the episode, adversarial set needs " + std::to_string(shape.n_way));
  }
  AdversarialSet adv;
  std::vector<std::size_t> chosen;
  for (std::size_t i : sample_without_replacement(rng, eligible.size(), shape.n_way)) chosen.push_back(eligible[i]);
  for (std::size_t r : chosen) adv.relations.push_back(source.relation_ids[r]);
  draw_instances(source, chosen, shape, rng, adv.support_refs, adv.query_refs, adv.support_part, adv.query_part);
  return adv;
}

Episode sample_episode(const IndexedCorpus& corpus, const IndexedCorpus& source, const EpisodeShape& shape, Rng& rng) {
  check_shape(shape);
  if (corpus.relation_ids.size() < shape.n_way) {
    throw DataError(corpus.domain + " has " + std::to_string(corpus.relation_ids.size()) + " relations, episode needs " +
                    std::to_string(shape.n_way));
  }
  Episode ep;
  ep.shape = shape;
  const auto chosen = sample_without_replacement(rng, corpus.relation_ids.size(), shape.n_way);
  for (std::size_t r : chosen) ep.relations.push_back(corpus.relation_ids[r]);
  draw_instances(corpus, chosen, shape, rng, ep.support_refs, ep.query_refs, ep.support, ep.query);
  ep.adversarial = sample_adversarial(source, ep.relations, shape, rng);
  return ep;
}

EpisodeStream::EpisodeStream(const IndexedCorpus& corpus, const IndexedCorpus& source, EpisodeShape shape,
                             std::uint64_t seed, std::size_t length)
    : corpus_(&corpus), source_(&source), shape_(shape), rng_(seed), length_(length) {
  check_shape(shape_);
}

std::optional<Episode> EpisodeStream::next() {
  if (produced_ == length_) return std::nullopt;
  ++produced_;
  return sample_episode(*corpus_, *source_, shape_, rng_);
}

namespace {

nlohmann::ordered_json refs_json(const std::vector<InstanceRef>& refs, const IndexedCorpus& corpus) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& ref : refs) {
    arr.push_back(nlohmann::ordered_json::array({corpus.relation_ids[ref.relation], corpus.origin[ref.relation][ref.index]}));
  }
  return arr;
}

std::vector<InstanceRef> refs_from_json(const nlohmann::json& arr, const IndexedCorpus& corpus) {
  std::unordered_map<std::string, std::size_t> rel_index;
  for (std::size_t r = 0; r < corpus.relation_ids.size(); ++r) rel_index.emplace(corpus.relation_ids[r], r);
  std::vector<InstanceRef> refs;
  for (const auto& item : arr) {
    const auto id = item.at(0).get<std::string>();
    const auto original = item.at(1).get<std::size_t>();
    auto it = rel_index.find(id);
    if (it == rel_index.end()) throw DataError("episode dump names unknown relation " + id);
    const auto& origin = corpus.origin[it->second];
    auto pos = std::find(origin.begin(), origin.end(), original);
    if (pos == origin.end()) throw DataError("episode dump names unknown instance " + std::to_string(original) + " of " + id);
    refs.push_back({it->second, static_cast<std::size_t>(pos - origin.begin())});
  }
  return refs;
}

void materialise(const IndexedCorpus& corpus, const std::vector<InstanceRef>& refs, std::size_t per_label,
                 std::vector<IndexedInstance>& out) {
  for (std::size_t i = 0; i < refs.size(); ++i) {
    out.push_back(corpus.instances[refs[i].relation][refs[i].index]);
    out.back().label = static_cast<int>(i / per_label);
  }
}

}  // namespace

nlohmann::ordered_json episode_to_json(const Episode& episode, const IndexedCorpus& corpus,
                                       const IndexedCorpus& source) {
  nlohmann::ordered_json doc;
  doc["n_way"] = episode.shape.n_way;
  doc["k_shot"] = episode.shape.k_shot;
  doc["q_query"] = episode.shape.q_query;
  doc["relations"] = episode.relations;
  doc["support"] = refs_json(episode.support_refs, corpus);
  doc["query"] = refs_json(episode.query_refs, corpus);
  doc["adversarial"] = {{"relations", episode.adversarial.relations},
                        {"support", refs_json(episode.adversarial.support_refs, source)},
                        {"query", refs_json(episode.adversarial.query_refs, source)}};
  return doc;
}

Episode episode_from_json(const nlohmann::json& doc, const IndexedCorpus& corpus, const IndexedCorpus& source) {
  Episode ep;
  try {
    ep.shape = {doc.at("n_way").get<std::size_t>(), doc.at("k_shot").get<std::size_t>(),
                doc.at("q_query").get<std::size_t>()};
    ep.relations = doc.at("relations").get<std::vector<std::string>>();
    ep.support_refs = refs_from_json(doc.at("support"), corpus);
    ep.query_refs = refs_from_json(doc.at("query"), corpus);
    const auto& adv = doc.at("adversarial");
    ep.adversarial.relations = adv.at("relations").get<std::vector<std::string>>();
    ep.adversarial.support_refs = refs_from_json(adv.at("support"), source);
    ep.adversarial.query_refs = refs_from_json(adv.at("query"), source);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed episode dump: ") + e.what());
  }
  check_shape(ep.shape);
  materialise(corpus, ep.support_refs, ep.shape.k_shot, ep.support);
  materialise(corpus, ep.query_refs, ep.shape.q_query, ep.query);
  materialise(source, ep.adversarial.support_refs, ep.shape.k_shot, ep.adversarial.support_part);
  materialise(source, ep.adversarial.query_refs, ep.shape.q_query, ep.adversarial.query_part);
  return ep;
}

}  // namespace mbatf
