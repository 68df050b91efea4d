#include "mbatf/encoder.hpp"

#include <cmath>
#include <string>

#include "mbatf/errors.hpp"

namespace mbatf {

void validate(const EncoderConfig& config) {
  if (config.word_dim == 0 || config.pos_dim == 0 || config.max_len == 0 || config.filters == 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (config.window % 2 == 0) throw ConfigError("encoder window must be odd");
}

template <typename Real>
void init_encoder(ParameterStore<Real>& params, const EncoderConfig& config, const EmbeddingTable& table, Rng& rng) {
  validate(config);
  if (table.dim() != config.word_dim) {
    throw ConfigError("embedding table width " + std::to_string(table.dim()) + " differs from word_dim " +
                      std::to_string(config.word_dim));
  }
  const auto& m = table.matrix();
  Tensor<Real> words({table.vocab_size(), config.word_dim});
  for (std::size_t i = 0; i < m.size(); ++i) words[i] = static_cast<Real>(m[i]);
  params.add(encoder_params::kWordEmbedding, Role::kEncoder, std::move(words));

  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  const std::size_t positions = 2 * config.max_len + 1;
  for (const char* name : {encoder_params::kHeadPosition, encoder_params::kTailPosition}) {
    Tensor<Real> pos({positions, config.pos_dim});
    for (auto& v : pos.values()) v = static_cast<Real>(unit(rng));
    params.add(name, Role::kEncoder, std::move(pos));
  }

  const std::size_t fan_in = config.window * config.token_dim();
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + config.filters));
  std::uniform_real_distribution<double> xavier(-limit, limit);
  Tensor<Real> weight({config.filters, fan_in});
  for (auto& v : weight.values()) v = static_cast<Real>(xavier(rng));
  params.add(encoder_params::kConvWeight, Role::kEncoder, std::move(weight));
  params.add(encoder_params::kConvBias, Role::kEncoder, Tensor<Real>({config.filters}));
}

template <typename Real>
typename Tape<Real>::Var encode(Tape<Real>& tape, ParameterStore<Real>& params, const EncoderConfig& config,
                                const InstanceBatch& batch) {
  if (batch.empty()) throw ContractError("encode: empty batch");
  const std::size_t len = config.max_len;
  std::vector<int> words, heads, tails;
  std::vector<std::size_t> lengths;
  words.reserve(batch.size() * len);
  heads.reserve(batch.size() * len);
  tails.reserve(batch.size() * len);
  for (const IndexedInstance* inst : batch) {
    if (inst->token_ids.size() != len || inst->head_pos.size() != len || inst->tail_pos.size() != len) {
      throw ContractError("encode: instance indexed for max_len " + std::to_string(inst->token_ids.size()) +
                          ", encoder expects " + std::to_string(len));
    }
    words.insert(words.end(), inst->token_ids.begin(), inst->token_ids.end());
    heads.insert(heads.end(), inst->head_pos.begin(), inst->head_pos.end());
    tails.insert(tails.end(), inst->tail_pos.begin(), inst->tail_pos.end());
    lengths.push_back(inst->length);
  }
  using Var = typename Tape<Real>::Var;
  const Var parts[] = {
      tape.gather_rows(tape.parameter(params, encoder_params::kWordEmbedding), words),
      tape.gather_rows(tape.parameter(params, encoder_params::kHeadPosition), heads),
      tape.gather_rows(tape.parameter(params, encoder_params::kTailPosition), tails),
  };
  Var tokens = tape.reshape(tape.concat_cols(parts), {batch.size(), len, config.token_dim()});
  Var conv = tape.conv1d_same(tokens, tape.parameter(params, encoder_params::kConvWeight),
                              tape.parameter(params, encoder_params::kConvBias), lengths);
  return tape.relu(tape.max_over_time(conv, lengths));
}

template void init_encoder<float>(ParameterStore<float>&, const EncoderConfig&, const EmbeddingTable&, Rng&);
template void init_encoder<double>(ParameterStore<double>&, const EncoderConfig&, const EmbeddingTable&, Rng&);
template Tape<float>::Var encode<float>(Tape<float>&, ParameterStore<float>&, const EncoderConfig&,
                                        const InstanceBatch&);
template Tape<double>::Var encode<double>(Tape<double>&, ParameterStore<double>&, const EncoderConfig&,
                                          const InstanceBatch&);

}  // namespace mbatf
