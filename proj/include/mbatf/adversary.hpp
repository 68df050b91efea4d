#pragma once

#include <cstddef>
#include <vector>

#include "mbatf/random.hpp"
#include "mbatf/tape.hpp"

namespace mbatf {

// Two-layer MLP D(e) = W2 relu(W1 e + b1) + b2 with logits {member of S, member of A}.
struct DiscriminatorConfig {
  std::size_t input_dim = 230;
  std::size_t hidden_dim = 230;
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

namespace discriminator_params {
inline constexpr const char* kHiddenWeight = "discriminator.hidden_weight";
inline constexpr const char* kHiddenBias = "discriminator.hidden_bias";
inline constexpr const char* kOutputWeight = "discriminator.output_weight";
inline constexpr const char* kOutputBias = "discriminator.output_bias";
}  // namespace discriminator_params

inline constexpr int kMemberOfSupport = 0;
inline constexpr int kMemberOfAdversarial = 1;

template <typename Real>
void init_discriminator(ParameterStore<Real>& params, const DiscriminatorConfig& config, Rng& rng);

// Logits [B, 2]. A frozen discriminator reads its weights as constants, so no gradient
// reaches them.
template <typename Real>
typename Tape<Real>::Var discriminate(Tape<Real>& tape, ParameterStore<Real>& params,
                                      typename Tape<Real>::Var embeddings, bool frozen);

// Embeddings of S followed by embeddings of A's support part, with the indicator 1_S(x).
template <typename Real>
struct MembershipBatch {
  typename Tape<Real>::Var embeddings;
  std::vector<bool> in_support;
};

// Checks the 2NK balance: the first `n_support` rows are S, the remaining rows are A.
template <typename Real>
MembershipBatch<Real> membership_batch(const Tape<Real>& tape, typename Tape<Real>::Var embeddings,
                                       std::size_t n_support);

// Mean cross entropy of the logits against 1_S(x).
template <typename Real>
typename Tape<Real>::Var discriminator_loss(Tape<Real>& tape, typename Tape<Real>::Var logits,
                                            const std::vector<bool>& in_support);

// Mean cross entropy against the flipped indicator 1 - 1_S(x).
template <typename Real>
typename Tape<Real>::Var fooling_loss(Tape<Real>& tape, typename Tape<Real>::Var logits,
                                      const std::vector<bool>& in_support);

// Discriminator objective with the embeddings detached: only discriminator weights get gradients.
template <typename Real>
typename Tape<Real>::Var discriminator_objective(Tape<Real>& tape, ParameterStore<Real>& params,
                                                 const MembershipBatch<Real>& batch);

// Fooling objective with the discriminator frozen: only the encoder gets gradients.
template <typename Real>
typename Tape<Real>::Var fooling_objective(Tape<Real>& tape, ParameterStore<Real>& params,
                                           const MembershipBatch<Real>& batch);

// Fraction of rows whose argmax matches the membership.
template <typename Real>
double membership_accuracy(const Tensor<Real>& logits, const std::vector<bool>& in_support);

}  // namespace mbatf
