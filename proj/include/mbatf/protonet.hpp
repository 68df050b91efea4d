#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbatf/random.hpp"
#include "mbatf/tape.hpp"

namespace mbatf {

// Relation-scoring CNN over the K x d map of a relation's support encodings.
// Layers 1..n-1 use (kernel, 1) kernels with (kernel / 2, 0) padding; the last layer
// uses a (K, 1) kernel that collapses the shot axis. ReLU after every layer.
struct ScorerConfig {
  std::vector<std::size_t> channels{32, 64, 1};
  std::size_t kernel = 3;
  friend bool operator==(const ScorerConfig&, const ScorerConfig&) = default;
};

void validate(const ScorerConfig& config);

// Learnable parameter names of layer `layer` (0-based).
std::string scorer_weight_name(std::size_t layer);
std::string scorer_bias_name(std::size_t layer);

// The final bias starts at 1 so the initial scores sit near the plain Euclidean metric.
template <typename Real>
void init_scorer(ParameterStore<Real>& params, const ScorerConfig& config, std::size_t k_shot, Rng& rng);

// Class centroids: the mean of each relation's K rows of `support` [N*K, d] (relation-major).
template <typename Real>
typename Tape<Real>::Var prototypes(Tape<Real>& tape, typename Tape<Real>::Var support, std::size_t n_way,
                                    std::size_t k_shot);

// Per-relation score vectors g_r >= 0 -> [N, d].
template <typename Real>
typename Tape<Real>::Var score_vectors(Tape<Real>& tape, ParameterStore<Real>& params, const ScorerConfig& config,
                                       typename Tape<Real>::Var support, std::size_t n_way, std::size_t k_shot);

// Negated scored distances -d(x, c_r) [B, N]; these are the softmax logits of the head.
// Without scores the distance is the plain squared Euclidean distance.
template <typename Real>
typename Tape<Real>::Var class_logits(Tape<Real>& tape, typename Tape<Real>::Var queries,
                                      typename Tape<Real>::Var centroids,
                                      std::optional<typename Tape<Real>::Var> scores);

// sum_i score_i * (x_i - c_i)^2.
template <typename Real>
Real scored_distance(std::span<const Real> embedding, std::span<const Real> centroid, std::span<const Real> score);

// Row-wise softmax of logits [B, N], evaluated in the log domain.
template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& logits);

// Class probabilities p(r | x) = softmax(-d(x, c_r)) for queries [B, d].
template <typename Real>
Tensor<Real> classify(const Tensor<Real>& queries, const Tensor<Real>& centroids, const Tensor<Real>* scores);

// Index of the largest entry of every row.
template <typename Real>
std::vector<int> argmax_rows(const Tensor<Real>& matrix);

}  // namespace mbatf
