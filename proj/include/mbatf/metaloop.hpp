#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mbatf/adversary.hpp"
#include "mbatf/encoder.hpp"
#include "mbatf/gradcheck.hpp"
#include "mbatf/protonet.hpp"
#include "mbatf/sampler.hpp"

namespace mbatf {

// Everything that shapes the model and the training procedure.
struct ModelConfig {
  EncoderConfig encoder;
  ScorerConfig scorer;
  std::size_t discriminator_hidden = 230;
  EpisodeShape shape;
  double lr = 0.1;
  std::size_t adv_iters_train = 1;
  std::size_t adv_iters_test = 5;
  // Adversarial iterations during meta-training.
  bool use_meta_adv = true;
  // Scored distance (false: plain squared Euclidean distance).
  bool use_relation_score = true;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const ModelConfig& config);
nlohmann::ordered_json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);

template <typename Real>
struct TrainState {
  ModelConfig config;
  ParameterStore<Real> params;
  std::uint64_t seed = 0;
  std::uint64_t episodes_seen = 0;
  // Word of every row of the word embedding, PAD and UNK first.
  std::vector<std::string> vocabulary;
};

// Fresh parameters for every role; init randomness comes from named sub-streams of `seed`.
template <typename Real>
TrainState<Real> init_state(const ModelConfig& config, const EmbeddingTable& table, std::uint64_t seed);

// The six losses of one meta-training episode and one meta-test adaptation round.
enum class Objective {
  kQuery,                   // prototype loss on Q given S
  kDiscriminator,           // D separates S from A
  kFooling,                 // E fools a frozen D
  kAdversarialQuery,        // prototype loss on A's query part given A's support part
  kTestDiscriminator,       // D separates S_test from A
  kTestFooling,             // E fools a frozen D on S_test vs A
};

inline constexpr std::array<Objective, 6> kObjectives{Objective::kQuery,           Objective::kDiscriminator,
                                                      Objective::kFooling,         Objective::kAdversarialQuery,
                                                      Objective::kTestDiscriminator, Objective::kTestFooling};

std::string objective_name(Objective objective);
// Roles the objective's SGD step updates under `config`.
std::vector<Role> objective_roles(Objective objective, const ModelConfig& config);

// Loss of `objective` on `episode`. For the meta-test objectives the episode's support
// plays S_test. The builder owns copies of the instances it reads.
template <typename Real>
LossBuilder<Real> objective_loss(Objective objective, const ModelConfig& config, const Episode& episode);

// Lookup table over the state's vocabulary holding its current word rows, for indexing
// corpora the model was not trained on.
template <typename Real>
EmbeddingTable embedding_table(const TrainState<Real>& state);

struct StepMetrics {
  std::uint64_t episode = 0;
  double cls_loss = 0.0;
  std::optional<double> d_loss;
  std::optional<double> fool_loss;
  double query_acc = 0.0;
};

// One meta-training episode:
//  (a) prototype classification loss on Q, SGD on encoder and scorer;
//  (b) adv_iters_train rounds on S vs A (re-encoded after (a)): discriminator step, then
//      encoder fooling step. Skipped when use_meta_adv is off.
template <typename Real>
StepMetrics meta_train_step(TrainState<Real>& state, const Episode& episode);

// Class probabilities [|queries|, N] with prototypes (and scores) from `support`.
// Query labels are never read.
template <typename Real>
Tensor<Real> predict(TrainState<Real>& state, const std::vector<IndexedInstance>& support,
                     const std::vector<IndexedInstance>& queries, std::size_t n_way);

struct TaskResult {
  std::vector<int> predictions;
  double accuracy = 0.0;
};

// Test-time adaptation on a private copy of `trained`. Each of adv_iters rounds draws a
// fresh adversarial set from `source` and runs: classification on A (prototypes from
// A.support_part, loss on A.query_part), discriminator step on S_test vs A, encoder
// fooling step. Then predicts Q_test from S_test prototypes.
template <typename Real>
TaskResult meta_test_task(const TrainState<Real>& trained, const Episode& episode, const IndexedCorpus& source,
                          std::size_t adv_iters, Rng& rng);

struct EvalReport {
  std::vector<double> task_accuracies;
  double mean_accuracy = 0.0;
  // 1.96 * sample stdev / sqrt(n); 0 for a single task.
  double ci95_half_width = 0.0;
  std::size_t n_tasks = 0;
};

EvalReport summarize(std::vector<double> task_accuracies);
nlohmann::ordered_json to_json(const EvalReport& report);

// Runs meta_test_task on every episode. Task i draws from the sub-stream (seed, i), so the
// report does not depend on `workers` or on task order.
template <typename Real>
EvalReport evaluate(const TrainState<Real>& trained, const std::vector<Episode>& episodes, const IndexedCorpus& source,
                    std::size_t adv_iters, std::uint64_t seed, std::size_t workers = 1);

// Draws n_tasks episodes from `stream` and evaluates them.
template <typename Real>
EvalReport evaluate(const TrainState<Real>& trained, EpisodeStream& stream, std::size_t n_tasks,
                    const IndexedCorpus& source, std::size_t adv_iters, std::uint64_t seed, std::size_t workers = 1);

// Versioned binary container: parameters, counters, seed and the config snapshot,
// closed by a checksum. Loading is all-or-nothing.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Real>
void save_checkpoint(const TrainState<Real>& state, const std::string& path);
template <typename Real>
TrainState<Real> load_checkpoint(const std::string& path);
// Bytes per stored value (4 or 8).
std::size_t checkpoint_precision(const std::string& path);

// Mean of the most recent `capacity` values.
class SlidingMean {
 public:
  explicit SlidingMean(std::size_t capacity = 100) : capacity_(capacity) {}
  void push(double v);
  double mean() const;
  std::size_t size() const { return values_.size(); }

 private:
  std::size_t capacity_;
  std::deque<double> values_;
};

// JSON-lines training log; the first line echoes the run configuration.
class MetricsLog {
 public:
  MetricsLog(const std::string& path, const nlohmann::ordered_json& header);
  void write(const StepMetrics& metrics, double window_acc);

 private:
  std::ofstream out_;
};

}  // namespace mbatf
