#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mbatf/corpus.hpp"
#include "mbatf/errors.hpp"

using namespace mbatf;

namespace {

std::string fixture(const std::string& name) { return std::string(MBATF_FIXTURES) + "/" + name; }

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

nlohmann::json record(std::vector<std::string> tokens, std::vector<int> h, std::vector<int> t) {
  return {{"tokens", tokens}, {"h", {"h", "Q1", {h}}}, {"t", {"t", "Q2", {t}}}};
}

}  // namespace

TEST_CASE("empty corpus object is rejected") {
  CHECK(error_of([] { parse_fewrel_json(nlohmann::json::object(), "x"); }) == "no relations");
  CHECK_THROWS_AS(parse_fewrel_json(nlohmann::json::array(), "x"), DataError);
}

TEST_CASE("fixture loads with spans") {
  const auto corpus = load_fewrel_json(fixture("fewrel_small.json"), "wiki");
  CHECK(corpus.domain == "wiki");
  REQUIRE(corpus.relations.size() == 2);
  CHECK(corpus.instance_count() == 6);
  const auto& marie = corpus.relations.at("P26")[0];
  CHECK(marie.head == TokenSpan{0, 2});
  CHECK(marie.tail == TokenSpan{3, 5});
  CHECK(marie.relation == "P26");
}

TEST_CASE("fewrel json round trip") {
  const auto corpus = load_fewrel_json(fixture("fewrel_small.json"), "wiki");
  const auto again = parse_fewrel_json(nlohmann::json::parse(to_fewrel_json(corpus).dump()), "wiki");
  CHECK(again == corpus);
  const auto path = std::filesystem::temp_directory_path() / "mbatf_roundtrip.json";
  save_fewrel_json(corpus, path.string());
  CHECK(load_fewrel_json(path.string(), "wiki") == corpus);
  std::filesystem::remove(path);
}

TEST_CASE("malformed records name the relation and the instance") {
  nlohmann::json doc;
  doc["P1"] = {record({"a", "b", "c"}, {0}, {2}), record({"a", "b"}, {0}, {5})};
  const auto msg = error_of([&] { parse_fewrel_json(doc, "x"); });
  CHECK(msg.find("relation P1") != std::string::npos);
  CHECK(msg.find("instance 1") != std::string::npos);

  nlohmann::json missing;
  missing["P2"] = {{{"tokens", {"a"}}, {"h", {"a", "Q", {{0}}}}}};
  CHECK(error_of([&] { parse_fewrel_json(missing, "x"); }).find("\"t\"") != std::string::npos);

  nlohmann::json same;
  same["P3"] = {record({"a", "b"}, {0}, {0})};
  CHECK_THROWS_AS(parse_fewrel_json(same, "x"), DataError);

  nlohmann::json empty_rel;
  empty_rel["P4"] = nlohmann::json::array();
  CHECK_THROWS_AS(parse_fewrel_json(empty_rel, "x"), DataError);
}

TEST_CASE("unreadable and malformed files are data errors") {
  CHECK_THROWS_AS(load_fewrel_json(fixture("does_not_exist.json")), DataError);
  CHECK_THROWS_AS(load_fewrel_json(fixture("glove_small.txt")), DataError);
}

TEST_CASE("glove fixture") {
  const auto table = load_glove(fixture("glove_small.txt"), 5, 7);
  CHECK(table.vocab_size() == 5);
  CHECK(table.row(table.lookup("Paris")) == std::vector<double>{-1, 0, 1, 2.5, -0.25});
  CHECK(table.row(EmbeddingTable::kPad) == std::vector<double>(5, 0.0));
  CHECK(table.lookup("zzz") == EmbeddingTable::kUnk);
  CHECK(table.lookup("The") == table.lookup("the"));
  CHECK(table.lookup("PARIS") == EmbeddingTable::kUnk);
  for (double v : table.row(EmbeddingTable::kUnk)) CHECK(std::abs(v) <= 0.5);
}

TEST_CASE("gzipped glove matches plain text") {
  const auto plain = load_glove(fixture("glove_small.txt"), 5, 7);
  const auto gz = load_glove(fixture("glove_small.txt.gz"), 5, 7);
  CHECK(gz.matrix() == plain.matrix());
  CHECK(gz.words() == plain.words());
}

TEST_CASE("glove width mismatch reports the line") {
  const auto msg = error_of([] { load_glove(fixture("glove_bad_width.txt"), 5, 7); });
  CHECK(msg.find(":2:") != std::string::npos);
  CHECK(msg.find("expected 5") != std::string::npos);
  CHECK_THROWS_AS(load_glove(fixture("nope.txt"), 5, 7), DataError);
}

TEST_CASE("duplicate words keep their first vector") {
  EmbeddingTable t(2, 1);
  const int a = t.add("a", {1, 2});
  CHECK(t.add("a", {3, 4}) == a);
  CHECK(t.row(a) == std::vector<double>{1, 2});
  CHECK_THROWS_AS(t.add("b", {1}), ContractError);
}

TEST_CASE("restrict_table keeps vectors of used words") {
  const auto table = load_glove(fixture("glove_small.txt"), 5, 7);
  const auto small = restrict_table(table, {"Paris", "unknown", "The"});
  CHECK(small.vocab_size() == 4);
  CHECK(small.row(small.lookup("Paris")) == table.row(table.lookup("Paris")));
  CHECK(small.row(small.lookup("the")) == table.row(table.lookup("the")));
  CHECK(small.lookup("city") == EmbeddingTable::kUnk);
  CHECK(small.row(EmbeddingTable::kUnk) == table.row(EmbeddingTable::kUnk));
}

TEST_CASE("relative position ids against brute force") {
  for (std::size_t max_len : {1u, 3u, 8u}) {
    const auto m = static_cast<std::ptrdiff_t>(max_len);
    for (std::ptrdiff_t off = -3 * m; off <= 3 * m; ++off) {
      std::ptrdiff_t expected = off;
      if (expected < -m) expected = -m;
      if (expected > m) expected = m;
      CHECK(relative_position_id(off, max_len) == expected + m);
    }
    CHECK(relative_position_id(m, max_len) == 2 * m);
    CHECK(relative_position_id(m + 1, max_len) == 2 * m);
    CHECK(relative_position_id(-m - 1, max_len) == 0);
  }
}

TEST_CASE("index_instance pads, truncates and offsets") {
  const auto table = load_glove(fixture("glove_small.txt"), 5, 7);
  Instance inst{{"the", "city", "is", "Paris"}, {1, 2}, {3, 4}, "r"};
  const auto out = index_instance(inst, table, 6);
  CHECK(out.length == 4);
  CHECK(out.token_ids == std::vector<int>{table.lookup("the"), table.lookup("city"), EmbeddingTable::kUnk,
                                          table.lookup("Paris"), EmbeddingTable::kPad, EmbeddingTable::kPad});
  CHECK(out.head_pos == std::vector<int>{5, 6, 7, 8, kPositionSentinel, kPositionSentinel});
  CHECK(out.tail_pos == std::vector<int>{3, 4, 5, 6, kPositionSentinel, kPositionSentinel});

  const auto cut = index_instance(inst, table, 4);
  CHECK(cut.token_ids.size() == 4);
  CHECK(cut.length == 4);
  CHECK_THROWS_AS(index_instance(inst, table, 3), DataError);
  CHECK_THROWS_AS(index_instance(inst, table, 0), ContractError);
}

TEST_CASE("index_corpus skips instances whose spans are truncated away") {
  const auto corpus = load_fewrel_json(fixture("fewrel_small.json"), "wiki");
  const auto table = load_glove(fixture("glove_small.txt"), 5, 7);
  const auto full = index_corpus(corpus, table, 16);
  CHECK(full.skipped == 0);
  CHECK(full.relation_ids == std::vector<std::string>{"P17", "P26"});
  const auto tight = index_corpus(corpus, table, 5);
  CHECK(tight.skipped == 2);
  CHECK(tight.origin[0] == std::vector<std::size_t>{0});
}

TEST_CASE("synthetic generator is deterministic per seed") {
  const SynthConfig config{8, 20, 120, 0.5};
  CHECK(synth_generate(config, 4) == synth_generate(config, 4));
  CHECK_FALSE(synth_generate(config, 4).first == synth_generate(config, 5).first);
}

TEST_CASE("synthetic config validation") {
  CHECK_THROWS_AS(synth_generate({1, 10, 100, 0.5}, 1), ConfigError);
  CHECK_THROWS_AS(synth_generate({8, 10, 20, 0.5}, 1), ConfigError);
  CHECK_THROWS_AS(synth_generate({8, 10, 100, 1.5}, 1), ConfigError);
  CHECK_THROWS_AS(synth_generate({8, 0, 100, 0.5}, 1), ConfigError);
}

TEST_CASE("domain shift controls pattern overlap") {
  auto pattern_tokens = [](const SynthConfig& c, const std::string& prefix) {
    std::set<std::string> out;
    for (const auto& [rel, p] : synth_patterns(c, 9)) {
      if (rel.rfind(prefix, 0) == 0) out.insert({p.first, p.second});
    }
    return out;
  };
  const SynthConfig none{8, 10, 120, 0.0};
  const SynthConfig full{8, 10, 120, 1.0};
  CHECK(pattern_tokens(none, "src") == pattern_tokens(none, "tgt"));
  std::vector<std::string> shared;
  const auto src = pattern_tokens(full, "src");
  const auto tgt = pattern_tokens(full, "tgt");
  std::set_intersection(src.begin(), src.end(), tgt.begin(), tgt.end(), std::back_inserter(shared));
  CHECK(shared.empty());

  // Target-only words never occur in the source corpus.
  const auto [source, target] = synth_generate(full, 9);
  const auto source_vocab = corpus_vocabulary({&source});
  for (const auto& w : tgt) CHECK_FALSE(std::binary_search(source_vocab.begin(), source_vocab.end(), w));
}

TEST_CASE("a pattern-token rule classifies in-domain instances perfectly") {
  const SynthConfig config{8, 30, 120, 0.6};
  const auto patterns = synth_patterns(config, 2);
  const auto [source, target] = synth_generate(config, 2);
  for (const auto* corpus : {&source, &target}) {
    for (const auto& [relation, list] : corpus->relations) {
      for (const auto& inst : list) {
        validate_instance(inst);
        const std::string& after_head = inst.tokens[inst.head.end];
        const std::string& before_tail = inst.tokens[inst.tail.start - 1];
        std::string predicted;
        for (const auto& [rel, p] : patterns) {
          const bool same_domain = rel.substr(0, 3) == relation.substr(0, 3);
          if (same_domain && p.first == after_head && p.second == before_tail) predicted = rel;
        }
        CHECK(predicted == relation);
      }
    }
  }
}

TEST_CASE("corpus vocabulary is sorted and distinct") {
  const auto corpus = load_fewrel_json(fixture("fewrel_small.json"), "wiki");
  const auto vocab = corpus_vocabulary({&corpus, &corpus});
  CHECK(std::is_sorted(vocab.begin(), vocab.end()));
  CHECK(std::adjacent_find(vocab.begin(), vocab.end()) == vocab.end());
  CHECK(std::binary_search(vocab.begin(), vocab.end(), "Curie"));
}
