#include "mbatf/metaloop.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "mbatf/errors.hpp"

namespace mbatf {

void validate(const ModelConfig& config) {
  validate(config.encoder);
  validate(config.scorer);
  if (config.discriminator_hidden == 0) throw ConfigError("discriminator hidden width must be positive");
  if (config.shape.n_way < 1 || config.shape.k_shot < 1 || config.shape.q_query < 1) {
    throw ConfigError("N, K and Q must be at least 1");
  }
  if (!(config.lr >= 0.0) || !std::isfinite(config.lr)) throw ConfigError("learning rate must be finite and >= 0");
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json doc;
  doc["encoder"] = {{"word_dim", c.encoder.word_dim}, {"pos_dim", c.encoder.pos_dim}, {"max_len", c.encoder.max_len},
                    {"window", c.encoder.window},     {"filters", c.encoder.filters}};
  doc["scorer"] = {{"channels", c.scorer.channels}, {"kernel", c.scorer.kernel}};
  doc["discriminator_hidden"] = c.discriminator_hidden;
  doc["n_way"] = c.shape.n_way;
  doc["k_shot"] = c.shape.k_shot;
  doc["q_query"] = c.shape.q_query;
  doc["lr"] = c.lr;
  doc["adv_iters_train"] = c.adv_iters_train;
  doc["adv_iters_test"] = c.adv_iters_test;
  doc["use_meta_adv"] = c.use_meta_adv;
  doc["use_relation_score"] = c.use_relation_score;
  return doc;
}

ModelConfig model_config_from_json(const nlohmann::json& doc) {
  ModelConfig c;
  try {
    const auto& e = doc.at("encoder");
    c.encoder = {e.at("word_dim").get<std::size_t>(), e.at("pos_dim").get<std::size_t>(),
                 e.at("max_len").get<std::size_t>(), e.at("window").get<std::size_t>(),
                 e.at("filters").get<std::size_t>()};
    c.scorer.channels = doc.at("scorer").at("channels").get<std::vector<std::size_t>>();
    c.scorer.kernel = doc.at("scorer").at("kernel").get<std::size_t>();
    c.discriminator_hidden = doc.at("discriminator_hidden").get<std::size_t>();
    c.shape = {doc.at("n_way").get<std::size_t>(), doc.at("k_shot").get<std::size_t>(),
               doc.at("q_query").get<std::size_t>()};
    c.lr = doc.at("lr").get<double>();
    c.adv_iters_train = doc.at("adv_iters_train").get<std::size_t>();
    c.adv_iters_test = doc.at("adv_iters_test").get<std::size_t>();
    c.use_meta_adv = doc.at("use_meta_adv").get<bool>();
    c.use_relation_score = doc.at("use_relation_score").get<bool>();
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed model config: ") + ex.what());
  }
  return c;
}

template <typename Real>
TrainState<Real> init_state(const ModelConfig& config, const EmbeddingTable& table, std::uint64_t seed) {
  validate(config);
  TrainState<Real> state;
  state.config = config;
  state.seed = seed;
  state.vocabulary = table.words();
  Rng enc_rng = make_rng(seed, "init.encoder");
  Rng disc_rng = make_rng(seed, "init.discriminator");
  Rng scorer_rng = make_rng(seed, "init.scorer");
  init_encoder(state.params, config.encoder, table, enc_rng);
  init_discriminator(state.params, {config.encoder.filters, config.discriminator_hidden}, disc_rng);
  init_scorer(state.params, config.scorer, config.shape.k_shot, scorer_rng);
  return state;
}

template <typename Real>
EmbeddingTable embedding_table(const TrainState<Real>& state) {
  const auto& words = state.params.at(encoder_params::kWordEmbedding);
  const std::size_t dim = state.config.encoder.word_dim;
  if (words.dim(0) != state.vocabulary.size() || state.vocabulary.size() < 2) {
    throw DataError("vocabulary has " + std::to_string(state.vocabulary.size()) + " words, embedding has " +
                    std::to_string(words.dim(0)) + " rows");
  }
  auto row = [&](std::size_t r) {
    const auto v = words.values().subspan(r * dim, dim);
    return std::vector<double>(v.begin(), v.end());
  };
  EmbeddingTable table(dim, 0);
  table.set_unk(row(EmbeddingTable::kUnk));
  for (std::size_t r = 2; r < state.vocabulary.size(); ++r) table.add(state.vocabulary[r], row(r));
  return table;
}

namespace {

InstanceBatch batch_of(std::initializer_list<const std::vector<IndexedInstance>*> groups) {
  InstanceBatch batch;
  for (const auto* g : groups) {
    for (const auto& inst : *g) batch.push_back(&inst);
  }
  return batch;
}

std::vector<int> iota_ids(std::size_t from, std::size_t count) {
  std::vector<int> ids(count);
  std::iota(ids.begin(), ids.end(), static_cast<int>(from));
  return ids;
}

std::vector<int> labels_of(const std::vector<IndexedInstance>& instances) {
  std::vector<int> labels;
  labels.reserve(instances.size());
  for (const auto& inst : instances) labels.push_back(inst.label);
  return labels;
}

double accuracy_of(const std::vector<int>& predictions, const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
}

void check_episode(const ModelConfig& config, const std::vector<IndexedInstance>& support,
                   const std::vector<IndexedInstance>& query, std::size_t n_way) {
  const std::size_t k = config.shape.k_shot;
  if (support.empty()) throw ContractError("episode has an empty support set");
  if (support.size() != n_way * k) {
    throw ContractError("support holds " + std::to_string(support.size()) + " instances, model expects N*K = " +
                        std::to_string(n_way * k));
  }
  if (query.empty()) throw ContractError("episode has an empty query set");
}

template <typename Real>
struct ClassificationGraph {
  typename Tape<Real>::Var loss;
  typename Tape<Real>::Var logits;
};

// Prototypes from `support` (relation-major, K per class), cross entropy on `query`.
template <typename Real>
ClassificationGraph<Real> classification_graph(Tape<Real>& tape, ParameterStore<Real>& params, const ModelConfig& cfg,
                                               const std::vector<IndexedInstance>& support,
                                               const std::vector<IndexedInstance>& query, std::size_t n_way) {
  const std::size_t k = cfg.shape.k_shot;
  auto encoded = encode(tape, params, cfg.encoder, batch_of({&support, &query}));
  auto s_emb = tape.gather_rows(encoded, iota_ids(0, support.size()));
  auto q_emb = tape.gather_rows(encoded, iota_ids(support.size(), query.size()));
  auto centroids = prototypes(tape, s_emb, n_way, k);
  std::optional<typename Tape<Real>::Var> scores;
  if (cfg.use_relation_score) scores = score_vectors(tape, params, cfg.scorer, s_emb, n_way, k);
  auto logits = class_logits(tape, q_emb, centroids, scores);
  return {tape.softmax_cross_entropy(logits, labels_of(query)), logits};
}

template <typename Real>
MembershipBatch<Real> membership_graph(Tape<Real>& tape, ParameterStore<Real>& params, const ModelConfig& cfg,
                                       const std::vector<IndexedInstance>& support,
                                       const std::vector<IndexedInstance>& adversarial_support) {
  if (adversarial_support.size() != support.size()) {
    throw ContractError("adversarial support part must match the support size");
  }
  auto encoded = encode(tape, params, cfg.encoder, batch_of({&support, &adversarial_support}));
  return membership_batch(tape, encoded, support.size());
}

struct Classification {
  double loss;
  std::vector<int> predictions;
};

// One SGD step on the encoder, plus the scorer when it is active.
template <typename Real>
Classification classification_step(TrainState<Real>& state, const std::vector<IndexedInstance>& support,
                                   const std::vector<IndexedInstance>& query, std::size_t n_way) {
  const auto& cfg = state.config;
  Tape<Real> tape;
  const auto graph = classification_graph(tape, state.params, cfg, support, query, n_way);
  Classification out{static_cast<double>(tape.scalar(graph.loss)), argmax_rows(tape.value(graph.logits))};
  tape.backward(graph.loss);
  const Real lr = static_cast<Real>(cfg.lr);
  sgd_step(state.params, Role::kEncoder, lr);
  if (cfg.use_relation_score) sgd_step(state.params, Role::kScorer, lr);
  return out;
}

struct Adversarial {
  double d_loss;
  double fool_loss;
};

// Discriminator step on S vs A, then encoder step on the flipped labels, both over one
// encoding of S and A.
template <typename Real>
Adversarial adversarial_step(TrainState<Real>& state, const std::vector<IndexedInstance>& support,
                             const std::vector<IndexedInstance>& adversarial_support) {
  const Real lr = static_cast<Real>(state.config.lr);
  Tape<Real> tape;
  const auto batch = membership_graph(tape, state.params, state.config, support, adversarial_support);
  auto d_loss = discriminator_objective(tape, state.params, batch);
  tape.backward(d_loss);
  sgd_step(state.params, Role::kDiscriminator, lr);
  auto fool = fooling_objective(tape, state.params, batch);
  tape.backward(fool);
  sgd_step(state.params, Role::kEncoder, lr);
  return {static_cast<double>(tape.scalar(d_loss)), static_cast<double>(tape.scalar(fool))};
}

}  // namespace

std::string objective_name(Objective objective) {
  switch (objective) {
    case Objective::kQuery: return "meta-train query";
    case Objective::kDiscriminator: return "meta-train discriminator";
    case Objective::kFooling: return "meta-train fooling";
    case Objective::kAdversarialQuery: return "meta-test adversarial query";
    case Objective::kTestDiscriminator: return "meta-test discriminator";
    case Objective::kTestFooling: return "meta-test fooling";
  }
  throw ContractError("unknown objective");
}

std::vector<Role> objective_roles(Objective objective, const ModelConfig& config) {
  switch (objective) {
    case Objective::kQuery:
    case Objective::kAdversarialQuery:
      if (config.use_relation_score) return {Role::kEncoder, Role::kScorer};
      return {Role::kEncoder};
    case Objective::kDiscriminator:
    case Objective::kTestDiscriminator: return {Role::kDiscriminator};
    case Objective::kFooling:
    case Objective::kTestFooling: return {Role::kEncoder};
  }
  throw ContractError("unknown objective");
}

template <typename Real>
LossBuilder<Real> objective_loss(Objective objective, const ModelConfig& config, const Episode& episode) {
  const std::size_t n_way = episode.relations.size();
  switch (objective) {
    case Objective::kQuery:
    case Objective::kAdversarialQuery: {
      const bool on_adv = objective == Objective::kAdversarialQuery;
      auto support = on_adv ? episode.adversarial.support_part : episode.support;
      auto query = on_adv ? episode.adversarial.query_part : episode.query;
      check_episode(config, support, query, n_way);
      return [config, support = std::move(support), query = std::move(query), n_way](
                 Tape<Real>& tape, ParameterStore<Real>& params) {
        return classification_graph(tape, params, config, support, query, n_way).loss;
      };
    }
    case Objective::kDiscriminator:
    case Objective::kTestDiscriminator:
    case Objective::kFooling:
    case Objective::kTestFooling: {
      const bool discriminator =
          objective == Objective::kDiscriminator || objective == Objective::kTestDiscriminator;
      return [config, support = episode.support, adv = episode.adversarial.support_part, discriminator](
                 Tape<Real>& tape, ParameterStore<Real>& params) {
        const auto batch = membership_graph(tape, params, config, support, adv);
        return discriminator ? discriminator_objective(tape, params, batch) : fooling_objective(tape, params, batch);
      };
    }
  }
  throw ContractError("unknown objective");
}

template <typename Real>
StepMetrics meta_train_step(TrainState<Real>& state, const Episode& episode) {
  const std::size_t n_way = episode.relations.size();
  check_episode(state.config, episode.support, episode.query, n_way);
  StepMetrics m;
  m.episode = ++state.episodes_seen;
  const auto cls = classification_step(state, episode.support, episode.query, n_way);
  m.cls_loss = cls.loss;
  m.query_acc = accuracy_of(cls.predictions, labels_of(episode.query));
  if (state.config.use_meta_adv && state.config.adv_iters_train > 0) {
    double d_sum = 0.0, f_sum = 0.0;
    for (std::size_t i = 0; i < state.config.adv_iters_train; ++i) {
      const auto adv = adversarial_step(state, episode.support, episode.adversarial.support_part);
      d_sum += adv.d_loss;
      f_sum += adv.fool_loss;
    }
    const auto iters = static_cast<double>(state.config.adv_iters_train);
    m.d_loss = d_sum / iters;
    m.fool_loss = f_sum / iters;
  }
  return m;
}

template <typename Real>
Tensor<Real> predict(TrainState<Real>& state, const std::vector<IndexedInstance>& support,
                     const std::vector<IndexedInstance>& queries, std::size_t n_way) {
  const auto& cfg = state.config;
  check_episode(cfg, support, queries, n_way);
  Tape<Real> tape;
  auto encoded = encode(tape, state.params, cfg.encoder, batch_of({&support, &queries}));
  auto s_emb = tape.gather_rows(encoded, iota_ids(0, support.size()));
  auto centroids = prototypes(tape, s_emb, n_way, cfg.shape.k_shot);
  const Tensor<Real> q_emb = [&] {
    const auto& all = tape.value(encoded);
    const std::size_t d = all.dim(1);
    std::vector<Real> rows(all.values().begin() + static_cast<std::ptrdiff_t>(support.size() * d), all.values().end());
    return Tensor<Real>({queries.size(), d}, std::move(rows));
  }();
  if (cfg.use_relation_score) {
    auto scores = score_vectors(tape, state.params, cfg.scorer, s_emb, n_way, cfg.shape.k_shot);
    return classify(q_emb, tape.value(centroids), &tape.value(scores));
  }
  return classify<Real>(q_emb, tape.value(centroids), nullptr);
}

template <typename Real>
TaskResult meta_test_task(const TrainState<Real>& trained, const Episode& episode, const IndexedCorpus& source,
                          std::size_t adv_iters, Rng& rng) {
  if (episode.support.empty()) throw ContractError("meta-test task has an empty support set");
  TrainState<Real> local = trained;
  const std::size_t n_way = episode.relations.size();
  const EpisodeShape shape{n_way, local.config.shape.k_shot, local.config.shape.q_query};
  for (std::size_t i = 0; i < adv_iters; ++i) {
    const auto adv = sample_adversarial(source, episode.relations, shape, rng);
    classification_step(local, adv.support_part, adv.query_part, n_way);
    adversarial_step(local, episode.support, adv.support_part);
  }
  const auto probs = predict(local, episode.support, episode.query, n_way);
  TaskResult result;
  result.predictions = argmax_rows(probs);
  result.accuracy = accuracy_of(result.predictions, labels_of(episode.query));
  return result;
}

EvalReport summarize(std::vector<double> task_accuracies) {
  EvalReport r;
  r.n_tasks = task_accuracies.size();
  if (r.n_tasks == 0) throw ContractError("evaluation needs at least one task");
  const double n = static_cast<double>(r.n_tasks);
  r.mean_accuracy = std::accumulate(task_accuracies.begin(), task_accuracies.end(), 0.0) / n;
  if (r.n_tasks > 1) {
    double ss = 0.0;
    for (double a : task_accuracies) ss += (a - r.mean_accuracy) * (a - r.mean_accuracy);
    r.ci95_half_width = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  r.task_accuracies = std::move(task_accuracies);
  return r;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json doc;
  doc["n_tasks"] = report.n_tasks;
  doc["mean_accuracy"] = report.mean_accuracy;
  doc["ci95_half_width"] = report.ci95_half_width;
  doc["task_accuracies"] = report.task_accuracies;
  return doc;
}

template <typename Real>
EvalReport evaluate(const TrainState<Real>& trained, const std::vector<Episode>& episodes, const IndexedCorpus& source,
                    std::size_t adv_iters, std::uint64_t seed, std::size_t workers) {
  if (episodes.empty()) throw ContractError("evaluation needs at least one task");
  std::vector<double> acc(episodes.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < episodes.size(); i = next++) {
      try {
        Rng rng = make_rng(seed, "meta_test", i);
        acc[i] = meta_test_task(trained, episodes[i], source, adv_iters, rng).accuracy;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(workers, episodes.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return summarize(std::move(acc));
}

template <typename Real>
EvalReport evaluate(const TrainState<Real>& trained, EpisodeStream& stream, std::size_t n_tasks,
                    const IndexedCorpus& source, std::size_t adv_iters, std::uint64_t seed, std::size_t workers) {
  if (n_tasks == 0) throw ContractError("evaluation needs at least one task");
  std::vector<Episode> episodes;
  episodes.reserve(n_tasks);
  for (std::size_t i = 0; i < n_tasks; ++i) {
    auto ep = stream.next();
    if (!ep) throw ContractError("episode stream ended after " + std::to_string(i) + " tasks");
    episodes.push_back(std::move(*ep));
  }
  return evaluate(trained, episodes, source, adv_iters, seed, workers);
}

void SlidingMean::push(double v) {
  values_.push_back(v);
  if (values_.size() > capacity_) values_.pop_front();
}

double SlidingMean::mean() const {
  if (values_.empty()) return 0.0;
  return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
}

MetricsLog::MetricsLog(const std::string& path, const nlohmann::ordered_json& header) : out_(path) {
  if (!out_) throw DataError("cannot write metrics file " + path);
  out_ << nlohmann::ordered_json{{"config", header}}.dump() << '\n';
}

void MetricsLog::write(const StepMetrics& m, double window_acc) {
  nlohmann::ordered_json rec;
  rec["episode"] = m.episode;
  rec["cls_loss"] = m.cls_loss;
  rec["d_loss"] = m.d_loss ? nlohmann::ordered_json(*m.d_loss) : nlohmann::ordered_json(nullptr);
  rec["fool_loss"] = m.fool_loss ? nlohmann::ordered_json(*m.fool_loss) : nlohmann::ordered_json(nullptr);
  rec["query_acc"] = m.query_acc;
  rec["window_acc"] = window_acc;
  out_ << rec.dump() << '\n';
}

#define MBATF_INSTANTIATE(Real)                                                                                 \
  template LossBuilder<Real> objective_loss<Real>(Objective, const ModelConfig&, const Episode&);               \
  template EmbeddingTable embedding_table<Real>(const TrainState<Real>&);                                      \
  template TrainState<Real> init_state<Real>(const ModelConfig&, const EmbeddingTable&, std::uint64_t);         \
  template StepMetrics meta_train_step<Real>(TrainState<Real>&, const Episode&);                                \
  template Tensor<Real> predict<Real>(TrainState<Real>&, const std::vector<IndexedInstance>&,                   \
                                      const std::vector<IndexedInstance>&, std::size_t);                        \
  template TaskResult meta_test_task<Real>(const TrainState<Real>&, const Episode&, const IndexedCorpus&,       \
                                           std::size_t, Rng&);                                                  \
  template EvalReport evaluate<Real>(const TrainState<Real>&, const std::vector<Episode>&, const IndexedCorpus&, \
                                     std::size_t, std::uint64_t, std::size_t);                                  \
  template EvalReport evaluate<Real>(const TrainState<Real>&, EpisodeStream&, std::size_t, const IndexedCorpus&, \
                                     std::size_t, std::uint64_t, std::size_t);

MBATF_INSTANTIATE(float)
MBATF_INSTANTIATE(double)

}  // namespace mbatf
