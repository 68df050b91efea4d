// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only AC-n]... [--expect-red AC-n]...
//
// Exit status is 0 when every executed criterion passes, except those named with
// --expect-red, which are reported but do not fail the run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "cli.hpp"
#include "harness.hpp"
#include "mbatf/selfcheck.hpp"

using namespace mbatf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<Episode> draw(const IndexedCorpus& corpus, const IndexedCorpus& source, const EpisodeShape& shape,
                          std::uint64_t seed, std::size_t n) {
  EpisodeStream stream(corpus, source, shape, seed, n);
  std::vector<Episode> out;
  while (auto ep = stream.next()) out.push_back(std::move(*ep));
  return out;
}

// ---------------------------------------------------------------------------------------

Outcome gradient_fidelity() {
  bool ok = true;
  std::string detail;
  for (bool f64 : {false, true}) {
    double worst = 0.0;
    std::size_t checked = 0;
    auto absorb = [&](const std::vector<ObjectiveCheck>& checks) {
      for (const auto& c : checks) {
        ok = ok && c.report.passed();
        worst = std::max(worst, c.report.max_rel_error());
        for (const auto& p : c.report.params) checked += p.checked;
        if (!c.report.passed()) detail += " " + objective_name(c.objective) + (f64 ? "[f64]" : "[f32]") + " failed;";
      }
      ok = ok && checks.size() == kObjectives.size();
    };
    if (f64) {
      absorb(check_objectives<double>(1, default_check_options<double>()));
    } else {
      absorb(check_objectives<float>(1, default_check_options<float>()));
    }
    ok = ok && checked > 0;
    detail += fmt(" %s max rel err %.2e (tol %.0e, %zu probes);", f64 ? "f64" : "f32", worst,
                  f64 ? default_check_options<double>().tolerance : default_check_options<float>().tolerance, checked);
  }
  return {ok, "six objectives at d=8 N=2 K=2:" + detail};
}

// ---------------------------------------------------------------------------------------

// Plain prototypical network written from scratch: CNN encoding with loops, class means,
// softmax over negative squared Euclidean distances.
struct PlainProtoNet {
  EncoderConfig cfg;
  std::vector<double> word, head, tail, conv_w, conv_b;
  std::size_t vocab = 0;

  explicit PlainProtoNet(const TrainState<double>& state) : cfg(state.config.encoder) {
    auto grab = [&](const char* name) {
      const auto v = state.params.at(name).values();
      return std::vector<double>(v.begin(), v.end());
    };
    word = grab(encoder_params::kWordEmbedding);
    head = grab(encoder_params::kHeadPosition);
    tail = grab(encoder_params::kTailPosition);
    conv_w = grab(encoder_params::kConvWeight);
    conv_b = grab(encoder_params::kConvBias);
  }

  std::vector<double> encode(const IndexedInstance& x) const {
    const std::size_t wd = cfg.word_dim, pd = cfg.pos_dim, cin = wd + 2 * pd;
    const std::size_t len = std::max<std::size_t>(1, std::min(x.length, cfg.max_len));
    std::vector<double> feats(len * cin);
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t j = 0; j < wd; ++j) feats[t * cin + j] = word[static_cast<std::size_t>(x.token_ids[t]) * wd + j];
      for (std::size_t j = 0; j < pd; ++j) {
        feats[t * cin + wd + j] = head[static_cast<std::size_t>(x.head_pos[t]) * pd + j];
        feats[t * cin + wd + pd + j] = tail[static_cast<std::size_t>(x.tail_pos[t]) * pd + j];
      }
    }
    const long half = static_cast<long>(cfg.window / 2);
    std::vector<double> out(cfg.filters);
    for (std::size_t f = 0; f < cfg.filters; ++f) {
      double best = -HUGE_VAL;
      for (std::size_t t = 0; t < len; ++t) {
        double acc = conv_b[f];
        for (std::size_t k = 0; k < cfg.window; ++k) {
          const long s = static_cast<long>(t + k) - half;
          if (s < 0 || s >= static_cast<long>(len)) continue;
          for (std::size_t j = 0; j < cin; ++j) {
            acc += conv_w[f * cfg.window * cin + k * cin + j] * feats[static_cast<std::size_t>(s) * cin + j];
          }
        }
        best = std::max(best, acc);
      }
      out[f] = std::max(best, 0.0);
    }
    return out;
  }

  std::vector<std::vector<double>> probabilities(const Episode& ep) const {
    const std::size_t n = ep.relations.size(), k = ep.shape.k_shot, d = cfg.filters;
    std::vector<std::vector<double>> centroid(n, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < ep.support.size(); ++i) {
      const auto e = encode(ep.support[i]);
      for (std::size_t j = 0; j < d; ++j) centroid[i / k][j] += e[j] / static_cast<double>(k);
    }
    std::vector<std::vector<double>> probs;
    for (const auto& q : ep.query) {
      const auto e = encode(q);
      std::vector<double> logit(n);
      for (std::size_t r = 0; r < n; ++r) {
        double dist = 0.0;
        for (std::size_t j = 0; j < d; ++j) dist += (e[j] - centroid[r][j]) * (e[j] - centroid[r][j]);
        logit[r] = -dist;
      }
      const double m = *std::max_element(logit.begin(), logit.end());
      double z = 0.0;
      for (double& l : logit) z += (l = std::exp(l - m));
      for (double& l : logit) l /= z;
      probs.push_back(logit);
    }
    return probs;
  }
};

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mbatf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

Outcome baseline_reduction() {
  const auto out = (fs::temp_directory_path() / "mbatf_acceptance_ac2").string();
  fs::remove_all(out);
  const int code = run_cli({"--mode", "train", "--synth", "--synth-relations", "16", "--n", "5", "--k", "2",
                            "--max-len", "32", "--filters", "64", "--discriminator-hidden", "64", "--episodes", "200",
                            "--seed", "21", "--no-meta-adv", "--no-relation-score", "--adv-iters-test", "0",
                            "--log-every", "0", "--f64", "--out", out});
  if (code != 0) return {false, fmt("training run exited with %d", code)};
  const auto state = load_checkpoint<double>((fs::path(out) / "checkpoint.bin").string());
  if (state.config.use_meta_adv || state.config.use_relation_score || state.config.adv_iters_test != 0) {
    return {false, "checkpoint does not carry the ablation switches"};
  }
  const auto [src_raw, tgt_raw] = synth_generate({16, 60, 200, 0.6}, state.seed);
  const auto table = embedding_table(state);
  const auto source = index_corpus(src_raw, table, state.config.encoder.max_len);
  const auto target = index_corpus(tgt_raw, table, state.config.encoder.max_len);
  const auto episodes = draw(target, source, {5, 2, 3}, 5, 100);
  const PlainProtoNet oracle(state);
  double worst = 0.0;
  std::size_t same = 0, total = 0;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& ep = episodes[i];
    Rng rng = make_rng(5, "meta_test", i);
    const auto task = meta_test_task(state, ep, source, state.config.adv_iters_test, rng);
    auto copy = state;
    const auto probs = predict(copy, ep.support, ep.query, 5);
    const auto want = oracle.probabilities(ep);
    for (std::size_t q = 0; q < want.size(); ++q) {
      const auto best = static_cast<int>(std::max_element(want[q].begin(), want[q].end()) - want[q].begin());
      same += task.predictions[q] == best;
      ++total;
      for (std::size_t r = 0; r < 5; ++r) worst = std::max(worst, std::abs(probs.at(q, r) - want[q][r]));
    }
  }
  fs::remove_all(out);
  return {worst <= 1e-6 && same == total,
          fmt("100 episodes, %zu/%zu predictions agree, max probability deviation %.2e (limit 1e-6)", same, total, worst)};
}

// ---------------------------------------------------------------------------------------

Outcome scored_distance_equivalence() {
  Rng rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0, worst_head = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t d = 1 + uniform_index(rng, 64);
    std::vector<double> x(d), c(d), ones(d, 1.0);
    for (auto& v : x) v = u(rng);
    for (auto& v : c) v = u(rng);
    double plain = 0.0;
    for (std::size_t j = 0; j < d; ++j) plain += (x[j] - c[j]) * (x[j] - c[j]);
    worst = std::max(worst, std::abs(scored_distance<double>(x, c, ones) - plain));
    Tape<double> tape;
    auto xv = tape.constant(Tensor<double>({1, d}, x));
    auto cv = tape.constant(Tensor<double>({1, d}, c));
    auto scored = tape.value(class_logits(tape, xv, cv, tape.constant(Tensor<double>({1, d}, ones))));
    auto unscored = tape.value(class_logits(tape, xv, cv, std::nullopt));
    worst_head = std::max({worst_head, std::abs(scored.values()[0] + plain), std::abs(unscored.values()[0] + plain)});
  }
  return {worst <= 1e-6 && worst_head <= 1e-6,
          fmt("1000 triples d<=64: max |scored - euclidean| %.2e, head logits %.2e (limit 1e-6)", worst, worst_head)};
}

// ---------------------------------------------------------------------------------------

Outcome overfit_sanity() {
  // Eight relations cannot host a 5-way episode and a disjoint 5-relation adversarial set,
  // so A comes from the other half of the shift-0 pair: same words, different relation ids.
  const testing::World w({8, 60, 200, 0.0}, 50, 32, 4);
  ModelConfig c;
  c.encoder.max_len = 32;
  c.shape = {5, 1, 1};
  auto state = init_state<float>(c, w.table, 4);
  EpisodeStream stream(w.source, w.target, c.shape, derive_seed(4, "train.episodes"), 2000);
  SlidingMean window(100);
  std::size_t reached = 0;
  double best = 0.0;
  while (auto ep = stream.next()) {
    const auto m = meta_train_step(state, *ep);
    window.push(m.query_acc);
    if (window.size() == 100) best = std::max(best, window.mean());
    if (window.size() == 100 && window.mean() >= 0.95) {
      reached = m.episode;
      break;
    }
  }
  if (reached == 0) return {false, fmt("best 100-episode window accuracy %.3f after 2000 episodes", best)};
  return {true, fmt("100-episode window accuracy >= 0.95 at episode %zu (limit 2000)", reached)};
}

// ---------------------------------------------------------------------------------------

Outcome cross_domain() {
  constexpr std::size_t kSeeds = 20, kTasks = 200, kEpisodes = 1000;
  double proto_sum = 0.0, adv_sum = 0.0, full_sum = 0.0;
  std::size_t wins = 0;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    const testing::World w({16, 60, 200, 0.6}, 50, 32, seed);
    ModelConfig base;
    base.encoder.max_len = 32;
    base.encoder.filters = 64;
    base.discriminator_hidden = 64;
    base.shape = {5, 1, 1};
    const auto tasks = draw(w.target, w.source, {5, 1, 5}, derive_seed(seed, "eval.tasks"), kTasks);
    auto train = [&](bool meta_adv, bool score) {
      auto cfg = base;
      cfg.use_meta_adv = meta_adv;
      cfg.use_relation_score = score;
      auto state = init_state<float>(cfg, w.table, seed);
      EpisodeStream stream(w.source, w.source, cfg.shape, derive_seed(seed, "train.episodes"), kEpisodes);
      while (auto ep = stream.next()) meta_train_step(state, *ep);
      return state;
    };
    const auto proto = evaluate(train(false, false), tasks, w.source, 0, seed).mean_accuracy;
    const auto adv_only = evaluate(train(true, false), tasks, w.source, 5, seed).mean_accuracy;
    const auto full = evaluate(train(true, true), tasks, w.source, 5, seed).mean_accuracy;
    proto_sum += proto;
    adv_sum += adv_only;
    full_sum += full;
    wins += full > adv_only;
    std::printf("    seed %2llu  protonets %.4f  +meta-adv %.4f  mbatf %.4f\n", static_cast<unsigned long long>(seed),
                proto, adv_only, full);
    std::fflush(stdout);
  }
  const double n = kSeeds;
  const double margin = (full_sum - proto_sum) / n;
  return {margin > 0.0 && wins >= 12,
          fmt("means protonets %.4f, +meta-adv %.4f, mbatf %.4f; mbatf - protonets %+.4f (need > 0); mbatf beats "
              "+meta-adv in %zu/20 seeds (need >= 12)",
              proto_sum / n, adv_sum / n, full_sum / n, margin, wins)};
}

// ---------------------------------------------------------------------------------------

template <typename Real>
std::vector<std::vector<Real>> rows(const Tensor<Real>& t) {
  std::vector<std::vector<Real>> out;
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    out.emplace_back(t.values().begin() + static_cast<std::ptrdiff_t>(r * t.dim(1)),
                     t.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * t.dim(1)));
  }
  return out;
}

Outcome adversarial_mechanics() {
  // Separated domains: every pattern word of the target is unseen in the source.
  const testing::World w({16, 60, 200, 1.0}, 50, 32, 6);
  ModelConfig c;
  c.encoder.max_len = 32;
  c.encoder.filters = 64;
  c.discriminator_hidden = 64;
  c.shape = {5, 5, 1};
  auto state = init_state<float>(c, w.table, 6);
  // The frozen encoder is one that has been meta-trained on the source domain.
  c.use_meta_adv = false;
  state.config = c;
  for (const auto& ep : draw(w.source, w.source, c.shape, 60, 300)) meta_train_step(state, ep);
  const auto train_eps = draw(w.target, w.source, c.shape, 61, 400);
  const auto held_out = draw(w.target, w.source, c.shape, 62, 20);

  auto batch_of = [&](Tape<float>& tape, const Episode& ep) {
    InstanceBatch b;
    for (const auto& x : ep.support) b.push_back(&x);
    for (const auto& x : ep.adversarial.support_part) b.push_back(&x);
    return membership_batch(tape, encode(tape, state.params, c.encoder, b), ep.support.size());
  };
  auto held_out_accuracy = [&] {
    double sum = 0.0;
    for (const auto& ep : held_out) {
      Tape<float> tape;
      const auto batch = batch_of(tape, ep);
      sum += membership_accuracy(tape.value(discriminate(tape, state.params, batch.embeddings, true)), batch.in_support);
    }
    return sum / static_cast<double>(held_out.size());
  };

  const double start = held_out_accuracy();
  double d_acc = start;
  std::size_t d_steps = 0;
  while (d_steps < 200 && d_acc < 0.8) {
    Tape<float> tape;
    const auto batch = batch_of(tape, train_eps[d_steps]);
    tape.backward(discriminator_objective(tape, state.params, batch));
    sgd_step(state.params, Role::kDiscriminator, static_cast<float>(c.lr));
    ++d_steps;
    d_acc = held_out_accuracy();
  }
  if (d_acc < 0.8) return {false, fmt("discriminator reached only %.3f after 200 steps (start %.3f)", d_acc, start)};

  const auto frozen_d = state.params;
  for (std::size_t step = 0; step < 200; ++step) {
    Tape<float> tape;
    const auto batch = batch_of(tape, train_eps[200 + step]);
    tape.backward(fooling_objective(tape, state.params, batch));
    sgd_step(state.params, Role::kEncoder, static_cast<float>(c.lr));
  }
  bool d_untouched = true;
  for (const auto& e : state.params.entries()) {
    if (e.role == Role::kDiscriminator) d_untouched = d_untouched && e.tensor == frozen_d.at(e.name);
  }
  const double fooled = held_out_accuracy();
  return {d_untouched && fooled < 0.65,
          fmt("discriminator %.3f -> %.3f in %zu steps (need >= 0.8 within 200); after 200 fooling steps %.3f "
              "(need < 0.65)%s",
              start, d_acc, d_steps, fooled, d_untouched ? "" : "; discriminator weights moved")};
}

// ---------------------------------------------------------------------------------------

Outcome structural_invariants() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  const auto w = testing::small_world(7);
  const auto c = testing::small_config(5, 2);

  // Episode disjointness, in-domain and cross-domain.
  for (const auto* corpus : {&w.source, &w.target}) {
    for (const auto& ep : draw(*corpus, w.source, c.shape, 70, 1000)) {
      std::set<std::string> rels(ep.relations.begin(), ep.relations.end());
      bool ok = rels.size() == c.shape.n_way;
      for (const auto& r : ep.adversarial.relations) ok = ok && !rels.contains(r);
      std::set<InstanceRef> used(ep.support_refs.begin(), ep.support_refs.end());
      for (const auto& q : ep.query_refs) ok = ok && used.insert(q).second;
      ok = ok && ep.adversarial.support_part.size() == ep.support.size();
      expect(ok, "episode disjointness");
      if (!ok) break;
    }
  }

  // Balanced 2NK discriminator batches.
  {
    Tape<float> tape;
    const auto batch = membership_batch(tape, tape.constant(Tensor<float>({20, 3})), 10);
    expect(std::count(batch.in_support.begin(), batch.in_support.end(), true) == 10 && batch.in_support.size() == 20,
           "balanced discriminator batch");
    bool threw = false;
    try {
      membership_batch(tape, tape.constant(Tensor<float>({20, 3})), 9);
    } catch (const ContractError&) {
      threw = true;
    }
    expect(threw, "unbalanced discriminator batch rejected");
  }

  // Prototype equals mean; row-stochastic softmax.
  {
    Rng rng(71);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int trial = 0; trial < 100; ++trial) {
      Tensor<double> s({12, 7});
      for (auto& v : s.values()) v = u(rng);
      Tape<double> tape;
      const auto proto = tape.value(prototypes(tape, tape.constant(s), 4, 3));
      double err = 0.0;
      for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t j = 0; j < 7; ++j) {
          err = std::max(err, std::abs(proto.at(r, j) - (s.at(3 * r, j) + s.at(3 * r + 1, j) + s.at(3 * r + 2, j)) / 3.0));
        }
      }
      expect(err <= 1e-12, "prototype equals mean");
      Tensor<double> q({5, 7}), g({4, 7});
      for (auto& v : q.values()) v = u(rng);
      for (auto& v : g.values()) v = std::abs(u(rng));
      for (const auto& row : rows(classify(q, proto, &g))) {
        expect(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-6, "row-stochastic softmax");
      }
    }
  }

  // Gradient routing: every objective leaves the roles it does not update with zero gradient.
  {
    auto state = init_state<double>(c, w.table, 72);
    const auto train_ep = draw(w.source, w.source, c.shape, 73, 1).front();
    const auto test_ep = draw(w.target, w.source, c.shape, 74, 1).front();
    for (Objective o : kObjectives) {
      const bool test_time = o == Objective::kTestDiscriminator || o == Objective::kTestFooling;
      const auto build = objective_loss<double>(o, c, test_time ? test_ep : train_ep);
      Tape<double> tape;
      tape.backward(build(tape, state.params));
      const auto roles = objective_roles(o, c);
      for (const auto& e : state.params.entries()) {
        if (std::find(roles.begin(), roles.end(), e.role) != roles.end()) continue;
        const auto g = e.tensor.grad();
        expect(std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }),
               "gradient routing (" + objective_name(o) + ", " + e.name + ")");
      }
    }
    // One full training step moves only owned roles: with scoring off the scorer is bit-identical.
    auto cfg = c;
    cfg.use_relation_score = false;
    auto s2 = init_state<float>(cfg, w.table, 75);
    const auto before = s2.params;
    meta_train_step(s2, train_ep);
    for (const auto& e : s2.params.entries()) {
      if (e.role == Role::kScorer) expect(e.tensor == before.at(e.name), "scorer frozen when scoring is off");
    }
  }

  // Task isolation: tasks run one by one in reverse order reproduce the batch result, and
  // the trained state never changes.
  {
    auto state = init_state<float>(c, w.table, 76);
    for (const auto& ep : draw(w.source, w.source, c.shape, 77, 20)) meta_train_step(state, ep);
    const auto before = state.params;
    const auto tasks = draw(w.target, w.source, c.shape, 78, 12);
    const auto batch = evaluate(state, tasks, w.source, 3, 79, 2);
    bool ok = true;
    for (std::size_t i = tasks.size(); i-- > 0;) {
      Rng rng = make_rng(79, "meta_test", i);
      ok = ok && meta_test_task(state, tasks[i], w.source, 3, rng).accuracy == batch.task_accuracies[i];
    }
    expect(ok, "task isolation under permutation");
    expect(state.params == before, "trained state unchanged by evaluation");

    // Checkpoint round trip.
    const auto a = (fs::temp_directory_path() / "mbatf_acceptance_a.bin").string();
    const auto b = (fs::temp_directory_path() / "mbatf_acceptance_b.bin").string();
    save_checkpoint(state, a);
    const auto loaded = load_checkpoint<float>(a);
    save_checkpoint(loaded, b);
    auto bytes = [](const std::string& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    expect(loaded.params == state.params && loaded.config == state.config && bytes(a) == bytes(b),
           "checkpoint round trip");
    const auto reloaded = evaluate(loaded, tasks, w.source, 3, 79);
    expect(reloaded.task_accuracies == batch.task_accuracies, "reloaded checkpoint evaluates identically");
    fs::remove(a);
    fs::remove(b);
  }

  if (failed.empty()) {
    return {true, "disjointness, 2NK balance, prototype mean, row-stochastic softmax, gradient routing, task "
                  "isolation, checkpoint round trip"};
  }
  std::set<std::string> unique(failed.begin(), failed.end());
  std::string detail = "failed:";
  for (const auto& f : unique) detail += " " + f + ";";
  return {false, detail};
}

struct Criterion {
  std::string id;
  std::string title;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> only, expect_red;
  CLI::App app{"MBATF acceptance criteria"};
  app.add_option("--only", only, "run only these criteria (e.g. AC-3)");
  app.add_option("--expect-red", expect_red, "criteria whose failure is reported but does not fail the run");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {"AC-1", "gradient fidelity", 30, gradient_fidelity},
      {"AC-2", "baseline reduction", 60, baseline_reduction},
      {"AC-3", "scored-distance equivalence", 60, scored_distance_equivalence},
      {"AC-4", "overfit sanity", 300, overfit_sanity},
      {"AC-5", "cross-domain improvement", 1800, cross_domain},
      {"AC-6", "adversarial mechanics", 300, adversarial_mechanics},
      {"AC-7", "structural invariants", 120, structural_invariants},
  };

  int hard_failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_seconds;
    const bool pass = o.pass && in_time;
    const bool tolerated = std::find(expect_red.begin(), expect_red.end(), c.id) != expect_red.end();
    std::printf("%s %s  %s  (%.1fs, limit %.0fs)  %s%s%s\n", c.id.c_str(), pass ? "PASS" : "FAIL", c.title.c_str(), secs,
                c.limit_seconds, o.detail.c_str(), in_time ? "" : "  [over time limit]",
                !pass && tolerated ? "  [known red]" : "");
    std::fflush(stdout);
    if (!pass && !tolerated) ++hard_failures;
  }
  if (only.empty() || std::find(only.begin(), only.end(), "AC-8") != only.end()) {
    std::printf("AC-8 DOC   full-scale reproduction (FewRel 2.0 + GloVe-50, 10-way 5-shot): not executed here; see "
                "the reproduction guide in README.md\n");
  }
  return hard_failures == 0 ? 0 : 1;
}
