#include "mbatf/adversary.hpp"

#include <cmath>
#include <string>

#include "mbatf/errors.hpp"

namespace mbatf {

template <typename Real>
void init_discriminator(ParameterStore<Real>& params, const DiscriminatorConfig& config, Rng& rng) {
  if (config.input_dim == 0 || config.hidden_dim == 0) throw ConfigError("discriminator dimensions must be positive");
  auto xavier = [&rng](std::size_t in, std::size_t out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor<Real> w({in, out});
    for (auto& v : w.values()) v = static_cast<Real>(dist(rng));
    return w;
  };
  using namespace discriminator_params;
  params.add(kHiddenWeight, Role::kDiscriminator, xavier(config.input_dim, config.hidden_dim));
  params.add(kHiddenBias, Role::kDiscriminator, Tensor<Real>({config.hidden_dim}));
  params.add(kOutputWeight, Role::kDiscriminator, xavier(config.hidden_dim, 2));
  params.add(kOutputBias, Role::kDiscriminator, Tensor<Real>({2}));
}

template <typename Real>
typename Tape<Real>::Var discriminate(Tape<Real>& tape, ParameterStore<Real>& params,
                                      typename Tape<Real>::Var embeddings, bool frozen) {
  using namespace discriminator_params;
  const auto& ev = tape.value(embeddings);
  const auto& w1 = params.at(kHiddenWeight);
  if (ev.rank() != 2 || ev.dim(1) != w1.dim(0)) {
    throw ContractError("discriminate: embeddings " + shape_to_string(ev.shape()) + " do not match input width " +
                        std::to_string(w1.dim(0)));
  }
  auto weight = [&](const char* name) {
    return frozen ? tape.constant(params.at(name)) : tape.parameter(params, name);
  };
  auto hidden = tape.relu(tape.add_bias(tape.matmul(embeddings, weight(kHiddenWeight)), weight(kHiddenBias)));
  return tape.add_bias(tape.matmul(hidden, weight(kOutputWeight)), weight(kOutputBias));
}

template <typename Real>
MembershipBatch<Real> membership_batch(const Tape<Real>& tape, typename Tape<Real>::Var embeddings,
                                       std::size_t n_support) {
  const std::size_t rows = tape.value(embeddings).dim(0);
  if (n_support == 0 || rows != 2 * n_support) {
    throw ContractError("membership batch must hold |S| = |A| rows; got " + std::to_string(n_support) + " of " +
                        std::to_string(rows));
  }
  MembershipBatch<Real> batch{embeddings, std::vector<bool>(rows, false)};
  for (std::size_t i = 0; i < n_support; ++i) batch.in_support[i] = true;
  return batch;
}

namespace {

template <typename Real>
typename Tape<Real>::Var membership_ce(Tape<Real>& tape, typename Tape<Real>::Var logits,
                                       const std::vector<bool>& in_support, bool flip) {
  if (in_support.empty()) throw ContractError("membership loss: empty batch");
  std::vector<int> labels(in_support.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = (in_support[i] != flip) ? kMemberOfSupport : kMemberOfAdversarial;
  }
  return tape.softmax_cross_entropy(logits, labels);
}

}  // namespace

template <typename Real>
typename Tape<Real>::Var discriminator_loss(Tape<Real>& tape, typename Tape<Real>::Var logits,
                                            const std::vector<bool>& in_support) {
  return membership_ce(tape, logits, in_support, false);
}

template <typename Real>
typename Tape<Real>::Var fooling_loss(Tape<Real>& tape, typename Tape<Real>::Var logits,
                                      const std::vector<bool>& in_support) {
  return membership_ce(tape, logits, in_support, true);
}

template <typename Real>
typename Tape<Real>::Var discriminator_objective(Tape<Real>& tape, ParameterStore<Real>& params,
                                                 const MembershipBatch<Real>& batch) {
  auto detached = tape.constant(tape.value(batch.embeddings));
  return discriminator_loss(tape, discriminate(tape, params, detached, false), batch.in_support);
}

template <typename Real>
typename Tape<Real>::Var fooling_objective(Tape<Real>& tape, ParameterStore<Real>& params,
                                           const MembershipBatch<Real>& batch) {
  return fooling_loss(tape, discriminate(tape, params, batch.embeddings, true), batch.in_support);
}

template <typename Real>
double membership_accuracy(const Tensor<Real>& logits, const std::vector<bool>& in_support) {
  if (logits.rank() != 2 || logits.dim(1) != 2 || logits.dim(0) != in_support.size() || in_support.empty()) {
    throw ContractError("membership_accuracy: logits must be [B, 2] with one label per row");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < in_support.size(); ++i) {
    const bool says_support = logits.at(i, kMemberOfSupport) >= logits.at(i, kMemberOfAdversarial);
    hits += says_support == in_support[i];
  }
  return static_cast<double>(hits) / static_cast<double>(in_support.size());
}

#define MBATF_INSTANTIATE(Real)                                                                                   \
  template void init_discriminator<Real>(ParameterStore<Real>&, const DiscriminatorConfig&, Rng&);                \
  template Tape<Real>::Var discriminate<Real>(Tape<Real>&, ParameterStore<Real>&, Tape<Real>::Var, bool);         \
  template MembershipBatch<Real> membership_batch<Real>(const Tape<Real>&, Tape<Real>::Var, std::size_t);          \
  template Tape<Real>::Var discriminator_loss<Real>(Tape<Real>&, Tape<Real>::Var, const std::vector<bool>&);      \
  template Tape<Real>::Var fooling_loss<Real>(Tape<Real>&, Tape<Real>::Var, const std::vector<bool>&);            \
  template Tape<Real>::Var discriminator_objective<Real>(Tape<Real>&, ParameterStore<Real>&,                      \
                                                         const MembershipBatch<Real>&);                           \
  template Tape<Real>::Var fooling_objective<Real>(Tape<Real>&, ParameterStore<Real>&, const MembershipBatch<Real>&); \
  template double membership_accuracy<Real>(const Tensor<Real>&, const std::vector<bool>&);

MBATF_INSTANTIATE(float)
MBATF_INSTANTIATE(double)

}  // namespace mbatf
