#include "mbatf/selfcheck.hpp"

#include <type_traits>

namespace mbatf {

ModelConfig toy_config() {
  ModelConfig c;
  c.encoder = {8, 2, 16, 3, 8};
  c.scorer.channels = {4, 4, 1};
  c.discriminator_hidden = 8;
  c.shape = {2, 2, 2};
  return c;
}

template <typename Real>
std::vector<ObjectiveCheck> check_objectives(std::uint64_t seed, const GradCheckOptions& options) {
  const ModelConfig config = toy_config();
  const SynthConfig synth{4, 6, 40, 0.5};
  const auto [source, target] = synth_generate(synth, seed);
  const auto table = random_embedding_table(corpus_vocabulary({&source, &target}), config.encoder.word_dim, seed);
  const auto isource = index_corpus(source, table, config.encoder.max_len);
  const auto itarget = index_corpus(target, table, config.encoder.max_len);
  Rng rng = make_rng(seed, "selfcheck.episodes");
  const Episode train = sample_episode(isource, isource, config.shape, rng);
  const Episode test = sample_episode(itarget, isource, config.shape, rng);

  auto state = init_state<Real>(config, table, seed);
  std::vector<ObjectiveCheck> out;
  for (Objective objective : kObjectives) {
    const bool meta_test = objective == Objective::kAdversarialQuery || objective == Objective::kTestDiscriminator ||
                           objective == Objective::kTestFooling;
    GradCheckOptions opts = options;
    opts.roles = objective_roles(objective, config);
    const Episode& episode = meta_test ? test : train;
    const auto build = objective_loss<Real>(objective, config, episode);
    if constexpr (std::is_same_v<Real, float>) {
      const auto probe = objective_loss<double>(objective, config, episode);
      out.push_back({objective, finite_difference_check(build, probe, state.params, opts)});
    } else {
      out.push_back({objective, finite_difference_check(build, state.params, opts)});
    }
  }
  return out;
}

template <>
GradCheckOptions default_check_options<float>() {
  GradCheckOptions o;
  o.epsilon = 1e-4;
  o.tolerance = 1e-3;
  return o;
}

template <>
GradCheckOptions default_check_options<double>() {
  GradCheckOptions o;
  o.epsilon = 1e-6;
  o.tolerance = 1e-5;
  return o;
}

template std::vector<ObjectiveCheck> check_objectives<float>(std::uint64_t, const GradCheckOptions&);
template std::vector<ObjectiveCheck> check_objectives<double>(std::uint64_t, const GradCheckOptions&);

}  // namespace mbatf
