#pragma once

#include <cstddef>
#include <vector>

#include "mbatf/corpus.hpp"
#include "mbatf/random.hpp"
#include "mbatf/tape.hpp"

namespace mbatf {

// CNN sentence encoder: [word ; head-position ; tail-position] embeddings per token,
// same-padded convolution, max-pool over the real tokens, ReLU.
struct EncoderConfig {
  std::size_t word_dim = 50;
  std::size_t pos_dim = 5;
  std::size_t max_len = 128;
  std::size_t window = 3;
  std::size_t filters = 230;

  std::size_t token_dim() const { return word_dim + 2 * pos_dim; }
  std::size_t output_dim() const { return filters; }
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void validate(const EncoderConfig& config);

namespace encoder_params {
inline constexpr const char* kWordEmbedding = "encoder.word_embedding";
inline constexpr const char* kHeadPosition = "encoder.head_position";
inline constexpr const char* kTailPosition = "encoder.tail_position";
inline constexpr const char* kConvWeight = "encoder.conv_weight";
inline constexpr const char* kConvBias = "encoder.conv_bias";
}  // namespace encoder_params

using InstanceBatch = std::vector<const IndexedInstance*>;

// Adds the encoder parameters. Word rows start from `table` and stay trainable.
template <typename Real>
void init_encoder(ParameterStore<Real>& params, const EncoderConfig& config, const EmbeddingTable& table, Rng& rng);

// [B, filters] encodings, rows in batch order.
template <typename Real>
typename Tape<Real>::Var encode(Tape<Real>& tape, ParameterStore<Real>& params, const EncoderConfig& config,
                                const InstanceBatch& batch);

}  // namespace mbatf
