#include "cli.hpp"

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mbatf/errors.hpp"
#include "mbatf/selfcheck.hpp"

namespace mbatf::cli {

namespace fs = std::filesystem;

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json doc;
  doc["mode"] = c.mode;
  doc["train_data"] = c.train_data;
  doc["test_data"] = c.test_data;
  doc["glove"] = c.glove;
  doc["checkpoint"] = c.checkpoint;
  doc["out"] = c.out;
  doc["synth"] = c.synth;
  doc["synth_relations"] = c.synth_config.n_relations;
  doc["synth_instances"] = c.synth_config.instances_per_relation;
  doc["synth_vocab"] = c.synth_config.vocab_size;
  doc["synth_shift"] = c.synth_config.domain_shift;
  doc["model"] = mbatf::to_json(c.model);
  doc["episodes"] = c.episodes;
  doc["eval_tasks"] = c.eval_tasks;
  doc["seed"] = c.seed;
  doc["workers"] = c.workers;
  doc["log_every"] = c.log_every;
  doc["f64"] = c.f64;
  return doc;
}

namespace {

// Which shape/ablation flags the user set (on the command line, in the environment or
// in a config file); eval applies only those on top of the checkpoint.
struct Given {
  bool n = false, k = false, q = false, adv_iters_test = false;
};

struct Parsed {
  RunConfig config;
  Given given;
};

std::string env_name(const std::string& flag) {
  std::string out = "MBATF_";
  for (char ch : flag) out += ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

struct Corpora {
  RelationCorpus source;
  std::optional<RelationCorpus> target;
};

Corpora read_corpora(const RunConfig& c, std::uint64_t synth_seed, bool need_target) {
  Corpora out;
  if (c.synth) {
    auto [source, target] = synth_generate(c.synth_config, synth_seed);
    out.source = std::move(source);
    out.target = std::move(target);
    return out;
  }
  if (c.train_data.empty()) throw ConfigError("--train-data is required unless --synth is set");
  out.source = load_fewrel_json(c.train_data, "train");
  if (!c.test_data.empty()) out.target = load_fewrel_json(c.test_data, "test");
  if (need_target && !out.target) throw ConfigError("--test-data is required unless --synth is set");
  return out;
}

EmbeddingTable build_table(const RunConfig& c, const Corpora& corpora) {
  std::vector<const RelationCorpus*> all{&corpora.source};
  if (corpora.target) all.push_back(&*corpora.target);
  const auto vocab = corpus_vocabulary(all);
  const std::size_t dim = c.model.encoder.word_dim;
  if (c.glove.empty()) return random_embedding_table(vocab, dim, derive_seed(c.seed, "embeddings"));
  auto table = restrict_table(load_glove(c.glove, dim, derive_seed(c.seed, "unk")), vocab);
  std::cerr << "glove covers " << table.vocab_size() - 2 << " of " << vocab.size() << " corpus words\n";
  return table;
}

IndexedCorpus index_reporting(const RelationCorpus& corpus, const EmbeddingTable& table, std::size_t max_len) {
  auto indexed = index_corpus(corpus, table, max_len);
  if (indexed.skipped > 0) {
    std::cerr << corpus.domain << ": skipped " << indexed.skipped << " instances whose entities fall beyond "
              << max_len << " tokens\n";
  }
  return indexed;
}

std::string checkpoint_path(const RunConfig& c) {
  return c.checkpoint.empty() ? (fs::path(c.out) / "checkpoint.bin").string() : c.checkpoint;
}

void make_out_dir(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw DataError("cannot create output directory " + c.out + ": " + ec.message());
}

template <typename Real>
int train(const RunConfig& c) {
  validate(c.model);
  const auto corpora = read_corpora(c, c.seed, false);
  const auto table = build_table(c, corpora);
  const auto source = index_reporting(corpora.source, table, c.model.encoder.max_len);
  auto state = init_state<Real>(c.model, table, c.seed);
  make_out_dir(c);
  MetricsLog log((fs::path(c.out) / "metrics.jsonl").string(), to_json(c));
  EpisodeStream stream(source, source, c.model.shape, derive_seed(c.seed, "train.episodes"), c.episodes);
  SlidingMean window;
  while (auto episode = stream.next()) {
    const auto m = meta_train_step(state, *episode);
    window.push(m.query_acc);
    log.write(m, window.mean());
    if (c.log_every > 0 && m.episode % c.log_every == 0) {
      std::fprintf(stderr, "episode %6llu  cls_loss %.4f  window_acc %.4f\n",
                   static_cast<unsigned long long>(m.episode), m.cls_loss, window.mean());
    }
  }
  const auto path = checkpoint_path(c);
  save_checkpoint(state, path);
  std::printf("trained %llu episodes, final window accuracy %.4f\ncheckpoint %s\n",
              static_cast<unsigned long long>(state.episodes_seen), window.size() ? window.mean() : 0.0,
              path.c_str());
  return kOk;
}

template <typename Real>
int eval(const RunConfig& c, const Given& given) {
  auto state = load_checkpoint<Real>(checkpoint_path(c));
  auto& model = state.config;
  if (given.k && c.model.shape.k_shot != model.shape.k_shot) {
    throw ConfigError("checkpoint was trained for K = " + std::to_string(model.shape.k_shot) + ", --k asks for " +
                      std::to_string(c.model.shape.k_shot));
  }
  if (given.q) model.shape.q_query = c.model.shape.q_query;
  if (!c.model.use_relation_score) model.use_relation_score = false;
  if (given.adv_iters_test) model.adv_iters_test = c.model.adv_iters_test;
  if (!c.model.use_meta_adv) model.use_meta_adv = false;
  const std::size_t adv_iters = model.use_meta_adv ? model.adv_iters_test : 0;
  const EpisodeShape shape{given.n ? c.model.shape.n_way : model.shape.n_way, model.shape.k_shot,
                           model.shape.q_query};

  const auto corpora = read_corpora(c, state.seed, true);
  const auto table = embedding_table(state);
  const auto source = index_reporting(corpora.source, table, model.encoder.max_len);
  const auto target = index_reporting(*corpora.target, table, model.encoder.max_len);
  EpisodeStream tasks(target, source, shape, derive_seed(c.seed, "eval.tasks"), c.eval_tasks);
  const auto report = evaluate(state, tasks, c.eval_tasks, source, adv_iters, c.seed, c.workers);

  std::printf("%zu-way %zu-shot, adv_iters_test %zu, relation score %s\n", shape.n_way, shape.k_shot, adv_iters,
              model.use_relation_score ? "on" : "off");
  std::printf("accuracy %.4f +- %.4f over %zu tasks\n", report.mean_accuracy, report.ci95_half_width,
              report.n_tasks);
  make_out_dir(c);
  nlohmann::ordered_json doc;
  doc["config"] = to_json(c);
  doc["model"] = mbatf::to_json(model);
  doc["n_way"] = shape.n_way;
  doc["adv_iters_test"] = adv_iters;
  doc["report"] = to_json(report);
  const auto path = fs::path(c.out) / "eval.json";
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  return kOk;
}

template <typename Real>
int gradcheck(const RunConfig& c) {
  const auto options = default_check_options<Real>();
  std::printf("gradient check, %s, d=8 N=2 K=2, tolerance %.0e\n", sizeof(Real) == 8 ? "f64" : "f32",
              options.tolerance);
  std::printf("%-30s %14s %8s %8s  %s\n", "objective", "max rel error", "checked", "excluded", "result");
  bool all = true;
  for (const auto& check : check_objectives<Real>(c.seed, options)) {
    std::size_t checked = 0, excluded = 0;
    for (const auto& p : check.report.params) {
      checked += p.checked;
      excluded += p.excluded;
    }
    const bool ok = check.report.passed() && checked > 0;
    all = all && ok;
    std::printf("%-30s %14.3e %8zu %8zu  %s\n", objective_name(check.objective).c_str(), check.report.max_rel_error(),
                checked, excluded, ok ? "pass" : "FAIL");
    for (const auto& p : check.report.params) {
      if (!p.passed) std::printf("    %s: %.3e\n", p.name.c_str(), p.max_rel_error);
    }
  }
  return all ? kOk : kCheckFailure;
}

int synth(const RunConfig& c) {
  const auto [source, target] = synth_generate(c.synth_config, c.seed);
  make_out_dir(c);
  const auto src_path = (fs::path(c.out) / "source.json").string();
  const auto tgt_path = (fs::path(c.out) / "target.json").string();
  save_fewrel_json(source, src_path);
  save_fewrel_json(target, tgt_path);
  std::printf("%s: %zu relations, %zu instances\n%s: %zu relations, %zu instances\n", src_path.c_str(),
              source.relations.size(), source.instance_count(), tgt_path.c_str(), target.relations.size(),
              target.instance_count());
  return kOk;
}

int dispatch(const Parsed& p) {
  const auto& c = p.config;
  if (c.mode == "train") return c.f64 ? train<double>(c) : train<float>(c);
  if (c.mode == "eval") {
    return checkpoint_precision(checkpoint_path(c)) == 8 ? eval<double>(c, p.given) : eval<float>(c, p.given);
  }
  if (c.mode == "gradcheck") return c.f64 ? gradcheck<double>(c) : gradcheck<float>(c);
  return synth(c);
}

}  // namespace

int run(int argc, const char* const* argv) {
  Parsed p;
  RunConfig& c = p.config;
  bool no_meta_adv = false, no_relation_score = false;

  CLI::App app{"Few-shot relation classification with meta-based adversarial training", "mbatf"};
  app.set_config("--config", "", "TOML/INI file with flag values (command line wins; file wins over MBATF_* variables)");
  app.add_option("--mode", c.mode, "train | eval | gradcheck | synth")
      ->required()
      ->check(CLI::IsMember({"train", "eval", "gradcheck", "synth"}));
  app.add_option("--train-data", c.train_data, "source-domain FewRel JSON (adversarial sets come from here)");
  app.add_option("--test-data", c.test_data, "target-domain FewRel JSON");
  app.add_option("--glove", c.glove, "GloVe text file (.gz accepted); random vectors when absent");
  app.add_option("--checkpoint", c.checkpoint, "checkpoint path (default <out>/checkpoint.bin)");
  app.add_option("--out", c.out, "output directory")->capture_default_str();
  app.add_flag("--synth", c.synth, "use the seeded synthetic source/target pair instead of data files");
  app.add_option("--synth-relations", c.synth_config.n_relations)->capture_default_str();
  app.add_option("--synth-instances", c.synth_config.instances_per_relation)->capture_default_str();
  app.add_option("--synth-vocab", c.synth_config.vocab_size)->capture_default_str();
  app.add_option("--synth-shift", c.synth_config.domain_shift, "fraction of pattern words unseen in the source")
      ->capture_default_str();
  auto* n = app.add_option("--n", c.model.shape.n_way, "relations per episode")->capture_default_str();
  auto* k = app.add_option("--k", c.model.shape.k_shot, "support instances per relation")->capture_default_str();
  auto* q = app.add_option("--q", c.model.shape.q_query, "query instances per relation (default: K)");
  app.add_option("--lr", c.model.lr, "SGD learning rate for every module")->capture_default_str();
  app.add_option("--episodes", c.episodes, "meta-training episodes")->capture_default_str();
  app.add_option("--eval-tasks", c.eval_tasks, "meta-test tasks")->capture_default_str();
  app.add_option("--adv-iters-train", c.model.adv_iters_train)->capture_default_str();
  auto* adv_test = app.add_option("--adv-iters-test", c.model.adv_iters_test)->capture_default_str();
  app.add_flag("--no-meta-adv", no_meta_adv, "disable adversarial training (train) and adaptation (eval)");
  app.add_flag("--no-relation-score", no_relation_score, "plain squared Euclidean distance");
  app.add_option("--word-dim", c.model.encoder.word_dim)->capture_default_str();
  app.add_option("--pos-dim", c.model.encoder.pos_dim)->capture_default_str();
  app.add_option("--max-len", c.model.encoder.max_len)->capture_default_str();
  app.add_option("--window", c.model.encoder.window)->capture_default_str();
  app.add_option("--filters", c.model.encoder.filters, "encoding width")->capture_default_str();
  app.add_option("--discriminator-hidden", c.model.discriminator_hidden)->capture_default_str();
  app.add_option("--seed", c.seed)->capture_default_str();
  app.add_option("--workers", c.workers, "parallel meta-test tasks")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--log-every", c.log_every, "progress line period in episodes (0: silent)")->capture_default_str();
  app.add_flag("--f64", c.f64, "double precision (train, gradcheck)");
  for (auto* opt : app.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help" || names.front() == "config") continue;
    opt->envname(env_name(names.front()));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigFailure;
  }
  c.model.use_meta_adv = !no_meta_adv;
  c.model.use_relation_score = !no_relation_score;
  p.given = {n->count() > 0, k->count() > 0, q->count() > 0, adv_test->count() > 0};
  if (!p.given.q) c.model.shape.q_query = c.model.shape.k_shot;

  try {
    return dispatch(p);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataFailure;
  }
}

}  // namespace mbatf::cli
