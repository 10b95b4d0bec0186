// SPDX-License-Identifier: Apache-2.0
#include "lta/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lta/error.hpp"
#include "lta/parallel.hpp"
#include "lta/rng.hpp"

namespace lta {

namespace {

const char* const kSpecials[] = {"<pad>", "<bos>", "<eos>", "<latent>"};
const char* const kStepNames[] = {"a", "b", "c", "d", "e", "f", "g"};

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

enum class Op { kAdd, kSub, kMul };

ReasoningSample make_sample(Rng& rng, int steps_min, int steps_max) {
  std::uniform_int_distribution<int> n_steps(steps_min, steps_max);
  std::uniform_int_distribution<int> start_dist(1, 20);
  std::uniform_int_distribution<int> operand(1, 9);
  std::uniform_int_distribution<int> factor(2, 3);

  const int ops = n_steps(rng) - 1;
  int value = start_dist(rng);
  ReasoningSample s;
  s.instruction = std::string(kInstruction);
  std::string question = "start with " + std::to_string(value);
  for (int i = 0; i < ops; ++i) {
    std::vector<Op> valid;
    if (value < kMaxValue) valid.push_back(Op::kAdd);
    if (value >= 1) valid.push_back(Op::kSub);
    if (value * 2 <= kMaxValue) valid.push_back(Op::kMul);
    std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
    const Op op = valid[pick(rng)];
    int arg = 0;
    int next = value;
    std::string sym;
    switch (op) {
      case Op::kAdd:
        arg = std::min(operand(rng), kMaxValue - value);
        next = value + arg;
        sym = "+";
        question += " , add " + std::to_string(arg);
        break;
      case Op::kSub:
        arg = std::min(operand(rng), value);
        next = value - arg;
        sym = "-";
        question += " , subtract " + std::to_string(arg);
        break;
      case Op::kMul:
        arg = factor(rng);
        if (value * arg > kMaxValue) arg = 2;
        next = value * arg;
        sym = "*";
        question += " , multiply by " + std::to_string(arg);
        break;
    }
    s.steps.push_back(std::string(kStepNames[i]) + " = " + std::to_string(value) + " " + sym + " " +
                      std::to_string(arg));
    value = next;
  }
  question += " .";
  s.question = std::move(question);
  s.answer = std::to_string(value);
  s.steps.push_back(std::string(kAnswerMarker) + " = " + s.answer);
  return s;
}

}  // namespace

Vocab Vocab::from_words(const std::vector<std::string>& words) {
  Vocab v;
  for (const char* s : kSpecials) {
    v.index_.emplace(s, static_cast<int>(v.tokens_.size()));
    v.tokens_.emplace_back(s);
  }
  for (const auto& w : words) {
    if (w.empty() || w.find_first_of(" \t\r\n") != std::string::npos)
      throw ArgumentError("vocabulary token must be a non-empty single word");
    if (!v.index_.emplace(w, static_cast<int>(v.tokens_.size())).second)
      throw ArgumentError("duplicate vocabulary token: " + w);
    v.tokens_.push_back(w);
  }
  return v;
}

Vocab Vocab::standard() {
  std::vector<std::string> words = {"solve", "step",     "by", ".", "start", "with", ",", "add",
                                    "subtract", "multiply", "=",  "+", "-",     "*",    ";", "answer"};
  for (const char* n : kStepNames) words.emplace_back(n);
  for (int i = 0; i <= kMaxValue; ++i) words.push_back(std::to_string(i));
  return from_words(words);
}

std::optional<int> Vocab::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id(std::string_view word) const {
  auto found = find(word);
  if (!found) throw TokenizeError(std::string(word));
  return *found;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw IndexError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& t : tokens_) f << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(f, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.size() < 4) throw DataError(path.string() + ": missing special-token header");
  for (int i = 0; i < 4; ++i)
    if (lines[static_cast<std::size_t>(i)] != kSpecials[i])
      throw DataError(path.string() + ": bad special-token header at line " + std::to_string(i + 1));
  return from_words(std::vector<std::string>(lines.begin() + 4, lines.end()));
}

std::vector<ReasoningSample> generate_corpus(std::uint64_t seed, int n, int steps_min, int steps_max,
                                             int workers) {
  if (n < 1) throw ArgumentError("generate_corpus: n must be >= 1");
  if (steps_min < 2 || steps_min > steps_max || steps_max > kMaxSteps)
    throw ArgumentError("generate_corpus: need 2 <= steps_min <= steps_max <= 8");
  std::vector<ReasoningSample> out(static_cast<std::size_t>(n));
  parallel_for(n, workers, [&](int i) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(i), /*salt=*/1);
    out[static_cast<std::size_t>(i)] = make_sample(rng, steps_min, steps_max);
  });
  return out;
}

CorpusSplits generate_splits(std::uint64_t seed, int n_train, int n_dev, int n_test, int steps_min,
                             int steps_max, int workers) {
  if (n_train < 0 || n_dev < 0 || n_test < 0) throw ArgumentError("generate_splits: split sizes must be >= 0");
  if (steps_min < 2 || steps_max < steps_min || steps_max > kMaxSteps)
    throw ArgumentError("generate_splits: need 2 <= steps_min <= steps_max <= 8");
  auto split = [&](std::uint64_t k, int n) {
    if (n == 0) return std::vector<ReasoningSample>{};
    return generate_corpus(sub_seed(seed, k, 7), n, steps_min, steps_max, workers);
  };
  CorpusSplits s;
  s.train = split(0, n_train);
  s.dev = split(1, n_dev);
  s.test = split(2, n_test);
  return s;
}

TokenizedSample tokenize(const ReasoningSample& sample, const Vocab& vocab, int latent_count) {
  if (latent_count < 1) throw ArgumentError("tokenize: latent_count must be >= 1");
  if (sample.steps.empty()) throw DataError("tokenize: sample has no steps");
  TokenizedSample t;
  t.prompt_ids.push_back(Vocab::kBos);
  for (int id : vocab.encode(sample.instruction)) t.prompt_ids.push_back(id);
  const int q_begin = static_cast<int>(t.prompt_ids.size());
  for (int id : vocab.encode(sample.question)) t.prompt_ids.push_back(id);
  t.question_span = {q_begin, static_cast<int>(t.prompt_ids.size())};
  if (t.question_span.empty()) throw DataError("tokenize: empty question");
  for (int i = 0; i < latent_count; ++i) {
    t.latent_positions.push_back(static_cast<int>(t.prompt_ids.size()));
    t.prompt_ids.push_back(Vocab::kLatent);
  }

  const int sep = vocab.id(";");
  for (std::size_t j = 0; j < sample.steps.size(); ++j) {
    if (j > 0) t.target_ids.push_back(sep);
    const int begin = static_cast<int>(t.target_ids.size());
    for (int id : vocab.encode(sample.steps[j])) t.target_ids.push_back(id);
    const Span span{begin, static_cast<int>(t.target_ids.size())};
    if (span.empty()) throw DataError("tokenize: empty step " + std::to_string(j));
    t.step_spans.push_back(span);
  }
  const std::vector<int> answer_ids = vocab.encode(sample.answer);
  const Span last = t.step_spans.back();
  if (answer_ids.empty() || static_cast<int>(answer_ids.size()) > last.size() ||
      !std::equal(answer_ids.begin(), answer_ids.end(), t.target_ids.begin() + last.end - static_cast<int>(answer_ids.size())))
    throw DataError("tokenize: final step does not end with the answer");
  t.answer_span = {last.end - static_cast<int>(answer_ids.size()), last.end};
  t.target_ids.push_back(Vocab::kEos);
  return t;
}

void save_jsonl(const std::vector<ReasoningSample>& samples, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& s : samples) {
    nlohmann::json j;
    j["instruction"] = s.instruction;
    j["question"] = s.question;
    j["steps"] = s.steps;
    j["answer"] = s.answer;
    f << j.dump() << '\n';
  }
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<ReasoningSample> load_jsonl(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<ReasoningSample> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(f, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(lineno, "expected a JSON object");
    ReasoningSample s;
    for (const char* key : {"instruction", "question", "answer"}) {
      if (!j.contains(key) || !j[key].is_string()) throw ParseError(lineno, std::string("missing string field '") + key + "'");
    }
    if (!j.contains("steps") || !j["steps"].is_array()) throw ParseError(lineno, "missing array field 'steps'");
    s.instruction = j["instruction"].get<std::string>();
    s.question = j["question"].get<std::string>();
    s.answer = j["answer"].get<std::string>();
    for (const auto& step : j["steps"]) {
      if (!step.is_string()) throw ParseError(lineno, "non-string entry in 'steps'");
      s.steps.push_back(step.get<std::string>());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::optional<std::string> canonical_number(std::string_view text) {
  std::size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  std::string_view s = text.substr(b, e - b);
  bool negative = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    negative = s[0] == '-';
    s.remove_prefix(1);
  }
  if (s.empty()) return std::nullopt;
  for (char c : s)
    if (c < '0' || c > '9') return std::nullopt;
  while (s.size() > 1 && s[0] == '0') s.remove_prefix(1);
  if (s == "0") negative = false;
  return (negative ? "-" : "") + std::string(s);
}

}  // namespace lta
