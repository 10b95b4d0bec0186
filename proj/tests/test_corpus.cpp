#include <doctest.h>

#include <fstream>
#include <sstream>

#include "lta/corpus.hpp"
#include "lta/error.hpp"
#include "support.hpp"

using namespace lta;

namespace {

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

// Replays the question text ("start with 7 , add 5 , multiply by 3 .").
long long replay_question(const std::string& q) {
  const auto w = words(q);
  REQUIRE(w.size() >= 4);
  REQUIRE(w[0] == "start");
  long long v = std::stoll(w[2]);
  for (std::size_t i = 3; i + 1 < w.size();) {
    REQUIRE(w[i] == ",");
    if (w[i + 1] == "add") {
      v += std::stoll(w[i + 2]);
      i += 3;
    } else if (w[i + 1] == "subtract") {
      v -= std::stoll(w[i + 2]);
      i += 3;
    } else {
      REQUIRE(w[i + 1] == "multiply");
      v *= std::stoll(w[i + 3]);
      i += 4;
    }
  }
  REQUIRE(w.back() == ".");
  return v;
}

}  // namespace

TEST_CASE("generate_corpus is deterministic") {
  CHECK(generate_corpus(7, 3, 2, 4) == generate_corpus(7, 3, 2, 4));
  CHECK(generate_corpus(7, 50, 2, 8, 1) == generate_corpus(7, 50, 2, 8, 4));
  CHECK_FALSE(generate_corpus(7, 20, 2, 4) == generate_corpus(8, 20, 2, 4));
}

TEST_CASE("generate_corpus rejects bad arguments") {
  CHECK_THROWS_AS(generate_corpus(7, 0, 2, 4), ArgumentError);
  CHECK_THROWS_AS(generate_corpus(7, 3, 1, 4), ArgumentError);
  CHECK_THROWS_AS(generate_corpus(7, 3, 5, 4), ArgumentError);
  CHECK_THROWS_AS(generate_corpus(7, 3, 2, 9), ArgumentError);
}

TEST_CASE("every sample satisfies the arithmetic oracle") {
  const auto corpus = generate_corpus(11, 500, 2, 8);
  REQUIRE(corpus.size() == 500);
  for (const auto& s : corpus) {
    REQUIRE_FALSE(s.steps.empty());
    CHECK(s.steps.size() >= 2);
    CHECK(s.steps.size() <= 8);
    const auto v = testing::evaluate_steps(s.steps);
    REQUIRE(v.has_value());
    CHECK(std::to_string(*v) == s.answer);
    CHECK(replay_question(s.question) == *v);
    CHECK(*v >= 0);
    CHECK(*v <= kMaxValue);
    // the final step carries the answer
    CHECK(s.steps.back().ends_with(s.answer));
    CHECK(s.steps.back().starts_with("answer ="));
    CHECK(s.instruction == kInstruction);
  }
}

TEST_CASE("generated steps chain their intermediate values") {
  for (const auto& s : generate_corpus(5, 200, 2, 6)) {
    long long prev = -1;
    for (std::size_t j = 0; j + 1 < s.steps.size(); ++j) {
      const auto w = words(s.steps[j]);
      REQUIRE(w.size() == 5);
      if (prev >= 0) CHECK(std::stoll(w[2]) == prev);
      prev = *testing::evaluate_steps({s.steps[j]});
    }
  }
}

TEST_CASE("vocabulary layout and round trips") {
  const Vocab v = Vocab::standard();
  CHECK(v.token(Vocab::kPad) == "<pad>");
  CHECK(v.token(Vocab::kBos) == "<bos>");
  CHECK(v.token(Vocab::kEos) == "<eos>");
  CHECK(v.token(Vocab::kLatent) == "<latent>");
  for (int id = 0; id < v.size(); ++id) CHECK(v.id(v.token(id)) == id);
  std::vector<int> ids;
  for (int id = 4; id < v.size(); ++id) ids.push_back(id);
  CHECK(v.encode(v.decode(ids)) == ids);
  CHECK_THROWS_AS(v.token(v.size()), IndexError);
  CHECK_THROWS_AS(v.token(-1), IndexError);
  CHECK_THROWS_AS(Vocab::from_words({"a", "a"}), ArgumentError);
}

TEST_CASE("the generator never emits the latent placeholder") {
  const Vocab v = Vocab::standard();
  for (const auto& s : generate_corpus(3, 200, 2, 8)) {
    const TokenizedSample t = tokenize(s, v, 2);
    for (int id : t.target_ids) CHECK(id != Vocab::kLatent);
    for (int i = 0; i < t.context_length(); ++i) CHECK(t.prompt_ids[static_cast<std::size_t>(i)] != Vocab::kLatent);
  }
}

TEST_CASE("vocabulary file round trip and header check") {
  const auto dir = testing::temp_dir("vocab");
  const Vocab v = Vocab::standard();
  v.save(dir / "vocab.txt");
  CHECK(Vocab::load(dir / "vocab.txt") == v);
  {
    std::ofstream f(dir / "bad.txt");
    f << "<bos>\n<pad>\n<eos>\n<latent>\nx\n";
  }
  CHECK_THROWS_AS(Vocab::load(dir / "bad.txt"), DataError);
  {
    std::ofstream f(dir / "short.txt");
    f << "<pad>\n<bos>\n";
  }
  CHECK_THROWS_AS(Vocab::load(dir / "short.txt"), DataError);
}

TEST_CASE("tokenize places latents right after the question") {
  const Vocab v = Vocab::standard();
  ReasoningSample s{std::string(kInstruction), "start with 4 , add 5 .", {"a = 4 + 5", "answer = 9"}, "9"};
  const TokenizedSample t = tokenize(s, v, 2);
  CHECK(t.question_span.size() == 7);
  REQUIRE(t.latent_positions.size() == 2);
  CHECK(t.latent_positions[0] == t.question_span.end);
  CHECK(t.latent_positions[1] == t.latent_positions[0] + 1);
  CHECK(t.latent_positions[1] == static_cast<int>(t.prompt_ids.size()) - 1);
  for (int p : t.latent_positions) CHECK(t.prompt_ids[static_cast<std::size_t>(p)] == Vocab::kLatent);
  CHECK(t.prompt_ids.front() == Vocab::kBos);
  CHECK(t.target_ids.back() == Vocab::kEos);
  CHECK(v.decode(t.prompt_ids) == std::string(kInstruction) + " " + s.question + " <latent> <latent>");
  CHECK(v.decode(std::vector<int>(t.target_ids.begin(), t.target_ids.end() - 1)) == "a = 4 + 5 ; answer = 9");

  REQUIRE(t.step_spans.size() == 2);
  CHECK(t.step_spans[0].size() == 5);
  CHECK(t.step_spans[1].size() == 3);
  CHECK(t.answer_span.size() == 1);
  CHECK(t.answer_span.end == t.step_spans[1].end);
  CHECK(t.target_ids[static_cast<std::size_t>(t.answer_span.begin)] == v.id("9"));
}

TEST_CASE("tokenize latent count and error paths") {
  const Vocab v = Vocab::standard();
  ReasoningSample s{std::string(kInstruction), "start with 4 , add 5 .", {"a = 4 + 5", "answer = 9"}, "9"};
  for (int ln : {1, 3, 8}) CHECK(tokenize(s, v, ln).latent_count() == ln);
  CHECK_THROWS_AS(tokenize(s, v, 0), ArgumentError);

  ReasoningSample oov = s;
  oov.question = "start with 4 , divide 5 .";
  try {
    tokenize(oov, v, 2);
    FAIL("expected a tokenization error");
  } catch (const TokenizeError& e) {
    CHECK(e.word() == "divide");
  }

  ReasoningSample wrong = s;
  wrong.answer = "8";
  CHECK_THROWS_AS(tokenize(wrong, v, 2), DataError);
  ReasoningSample nosteps = s;
  nosteps.steps.clear();
  CHECK_THROWS_AS(tokenize(nosteps, v, 2), DataError);
}

TEST_CASE("jsonl round trip and parse errors") {
  const auto dir = testing::temp_dir("jsonl");
  const auto samples = generate_corpus(9, 100, 2, 8);
  save_jsonl(samples, dir / "a.jsonl");
  CHECK(load_jsonl(dir / "a.jsonl") == samples);

  { std::ofstream f(dir / "empty.jsonl"); }
  CHECK(load_jsonl(dir / "empty.jsonl").empty());

  {
    std::ofstream f(dir / "bad.jsonl");
    f << R"({"instruction":"i","question":"q","steps":["a = 1"],"answer":"1"})" << "\n";
    f << R"({"instruction":"i","question":"q","steps":["a = 1"]})" << "\n";
  }
  try {
    load_jsonl(dir / "bad.jsonl");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("answer") != std::string::npos);
  }
  {
    std::ofstream f(dir / "garbage.jsonl");
    f << "{not json\n";
  }
  CHECK_THROWS_AS(load_jsonl(dir / "garbage.jsonl"), ParseError);
  CHECK_THROWS_AS(load_jsonl(dir / "missing.jsonl"), IoError);
}

TEST_CASE("splits are disjoint by construction and deterministic") {
  const CorpusSplits a = generate_splits(4, 50, 10, 10, 2, 4);
  const CorpusSplits b = generate_splits(4, 50, 10, 10, 2, 4);
  CHECK(a.train == b.train);
  CHECK(a.dev == b.dev);
  CHECK(a.test == b.test);
  CHECK(a.train.size() == 50);
  CHECK(a.dev.size() == 10);
  CHECK(a.test.size() == 10);
  CHECK_FALSE(a.train == generate_corpus(4, 50, 2, 4));
}

TEST_CASE("canonical numbers") {
  CHECK(canonical_number("42") == "42");
  CHECK(canonical_number(" 007 ") == "7");
  CHECK(canonical_number("0") == "0");
  CHECK(canonical_number("000") == "0");
  CHECK_FALSE(canonical_number("").has_value());
  CHECK_FALSE(canonical_number("4a").has_value());
  CHECK_FALSE(canonical_number("answer").has_value());
}
