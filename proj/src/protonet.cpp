#include "mbatf/protonet.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mbatf/errors.hpp"

namespace mbatf {

void validate(const ScorerConfig& config) {
  if (config.channels.size() < 2) throw ConfigError("scorer needs at least two layers");
  if (config.channels.back() != 1) throw ConfigError("scorer's last layer must have exactly 1 channel");
  if (config.kernel % 2 == 0) throw ConfigError("scorer kernel height must be odd");
  for (auto c : config.channels) {
    if (c == 0) throw ConfigError("scorer channel counts must be positive");
  }
}

std::string scorer_weight_name(std::size_t layer) { return "scorer.conv" + std::to_string(layer + 1) + "_weight"; }
std::string scorer_bias_name(std::size_t layer) { return "scorer.conv" + std::to_string(layer + 1) + "_bias"; }

template <typename Real>
void init_scorer(ParameterStore<Real>& params, const ScorerConfig& config, std::size_t k_shot, Rng& rng) {
  validate(config);
  if (k_shot == 0) throw ConfigError("scorer needs K >= 1");
  std::size_t in = 1;
  const std::size_t layers = config.channels.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t out = config.channels[l];
    const std::size_t kh = l + 1 == layers ? k_shot : config.kernel;
    const double limit = std::sqrt(6.0 / static_cast<double>(in * kh + out * kh));
    std::uniform_real_distribution<double> xavier(-limit, limit);
    Tensor<Real> w({out, in, kh});
    for (auto& v : w.values()) v = static_cast<Real>(xavier(rng));
    params.add(scorer_weight_name(l), Role::kScorer, std::move(w));
    params.add(scorer_bias_name(l), Role::kScorer, Tensor<Real>({out}, l + 1 == layers ? Real(1) : Real(0)));
    in = out;
  }
}

template <typename Real>
typename Tape<Real>::Var prototypes(Tape<Real>& tape, typename Tape<Real>::Var support, std::size_t n_way,
                                    std::size_t k_shot) {
  const auto& sv = tape.value(support);
  if (k_shot == 0 || n_way == 0) throw ContractError("prototypes: empty relation group");
  if (sv.rank() != 2 || sv.dim(0) != n_way * k_shot) {
    throw ContractError("prototypes: support of shape " + shape_to_string(sv.shape()) + " is not N*K = " +
                        std::to_string(n_way * k_shot) + " rows");
  }
  // Averaging matrix [N, N*K] with 1/K on each relation's block.
  Tensor<Real> avg({n_way, n_way * k_shot});
  for (std::size_t r = 0; r < n_way; ++r) {
    for (std::size_t k = 0; k < k_shot; ++k) avg.at(r, r * k_shot + k) = Real(1) / static_cast<Real>(k_shot);
  }
  return tape.matmul(tape.constant(std::move(avg)), support);
}

template <typename Real>
typename Tape<Real>::Var score_vectors(Tape<Real>& tape, ParameterStore<Real>& params, const ScorerConfig& config,
                                       typename Tape<Real>::Var support, std::size_t n_way, std::size_t k_shot) {
  const auto& sv = tape.value(support);
  if (sv.rank() != 2 || sv.dim(0) != n_way * k_shot || k_shot == 0) {
    throw ContractError("score_vectors: support of shape " + shape_to_string(sv.shape()) + " is not N*K rows");
  }
  const std::size_t d = sv.dim(1);
  const std::size_t layers = config.channels.size();
  if (params.at(scorer_weight_name(layers - 1)).dim(2) != k_shot) {
    throw ContractError("score_vectors: scorer was built for K = " +
                        std::to_string(params.at(scorer_weight_name(layers - 1)).dim(2)) + ", episode has K = " +
                        std::to_string(k_shot));
  }
  auto x = tape.reshape(support, {n_way, 1, k_shot, d});
  for (std::size_t l = 0; l < layers; ++l) {
    const bool last = l + 1 == layers;
    x = tape.conv2d_column(x, tape.parameter(params, scorer_weight_name(l)), tape.parameter(params, scorer_bias_name(l)),
                           last ? 0 : config.kernel / 2);
    x = tape.relu(x);
  }
  return tape.reshape(x, {n_way, d});
}

template <typename Real>
typename Tape<Real>::Var class_logits(Tape<Real>& tape, typename Tape<Real>::Var queries,
                                      typename Tape<Real>::Var centroids,
                                      std::optional<typename Tape<Real>::Var> scores) {
  if (tape.value(centroids).dim(0) == 0) throw ContractError("class_logits: no classes");
  return tape.scale(tape.weighted_sq_distance(queries, centroids, scores), Real(-1));
}

template <typename Real>
Real scored_distance(std::span<const Real> embedding, std::span<const Real> centroid, std::span<const Real> score) {
  if (embedding.size() != centroid.size() || embedding.size() != score.size()) {
    throw ContractError("scored_distance: width mismatch");
  }
  Real acc = 0;
  for (std::size_t i = 0; i < embedding.size(); ++i) {
    const Real diff = embedding[i] - centroid[i];
    acc += score[i] * diff * diff;
  }
  return acc;
}

template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& logits) {
  if (logits.rank() != 2 || logits.dim(1) == 0) throw ContractError("softmax_rows: need [B, N] with N >= 1");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor<Real> out(logits.shape());
  for (std::size_t b = 0; b < rows; ++b) {
    const Real* row = logits.data() + b * cols;
    const Real mx = *std::max_element(row, row + cols);
    Real z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    const Real log_z = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[b * cols + c] = std::exp(row[c] - log_z);
  }
  return out;
}

template <typename Real>
Tensor<Real> classify(const Tensor<Real>& queries, const Tensor<Real>& centroids, const Tensor<Real>* scores) {
  if (centroids.rank() != 2 || centroids.dim(0) == 0) throw ContractError("classify: N must be at least 1");
  if (queries.rank() != 2 || queries.dim(1) != centroids.dim(1)) throw ContractError("classify: width mismatch");
  if (scores && scores->shape() != centroids.shape()) throw ContractError("classify: scores must match centroids");
  const std::size_t batch = queries.dim(0), n = centroids.dim(0), d = centroids.dim(1);
  Tensor<Real> logits({batch, n});
  std::vector<Real> ones(d, Real(1));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < n; ++r) {
      std::span<const Real> score = scores ? scores->values().subspan(r * d, d) : std::span<const Real>(ones);
      logits[b * n + r] =
          -scored_distance<Real>(queries.values().subspan(b * d, d), centroids.values().subspan(r * d, d), score);
    }
  }
  return softmax_rows(logits);
}

template <typename Real>
std::vector<int> argmax_rows(const Tensor<Real>& matrix) {
  const std::size_t rows = matrix.dim(0), cols = matrix.dim(1);
  std::vector<int> out(rows);
  for (std::size_t b = 0; b < rows; ++b) {
    const Real* row = matrix.data() + b * cols;
    out[b] = static_cast<int>(std::max_element(row, row + cols) - row);
  }
  return out;
}

#define MBATF_INSTANTIATE(Real)                                                                                  \
  template void init_scorer<Real>(ParameterStore<Real>&, const ScorerConfig&, std::size_t, Rng&);                \
  template Tape<Real>::Var prototypes<Real>(Tape<Real>&, Tape<Real>::Var, std::size_t, std::size_t);             \
  template Tape<Real>::Var score_vectors<Real>(Tape<Real>&, ParameterStore<Real>&, const ScorerConfig&,          \
                                               Tape<Real>::Var, std::size_t, std::size_t);                       \
  template Tape<Real>::Var class_logits<Real>(Tape<Real>&, Tape<Real>::Var, Tape<Real>::Var,                     \
                                              std::optional<Tape<Real>::Var>);                                   \
  template Real scored_distance<Real>(std::span<const Real>, std::span<const Real>, std::span<const Real>);      \
  template Tensor<Real> softmax_rows<Real>(const Tensor<Real>&);                                                 \
  template Tensor<Real> classify<Real>(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>*);           \
  template std::vector<int> argmax_rows<Real>(const Tensor<Real>&);

MBATF_INSTANTIATE(float)
MBATF_INSTANTIATE(double)

}  // namespace mbatf
