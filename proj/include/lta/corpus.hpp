// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-step arithmetic corpus, closed word-level vocabulary and
// tokenisation into latent-augmented prompts.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lta {

/// One reasoning record. Steps look like "a = 7 + 5"; the last step is always
/// "answer = <value>".
struct ReasoningSample {
  std::string instruction;
  std::string question;
  std::vector<std::string> steps;
  std::string answer;

  bool operator==(const ReasoningSample&) const = default;
};

inline constexpr std::string_view kInstruction = "solve step by step .";
inline constexpr std::string_view kAnswerMarker = "answer";
inline constexpr std::string_view kLatentText = "<latent>";
/// Largest value any intermediate result may take.
inline constexpr int kMaxValue = 99;
inline constexpr int kMaxSteps = 8;

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kLatent = 3;

  /// The closed vocabulary every corpus sample is drawn from.
  static Vocab standard();
  /// Special tokens are prepended; `words` must not repeat or clash with them.
  static Vocab from_words(const std::vector<std::string>& words);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<int> find(std::string_view word) const;
  /// Throws TokenizeError for unknown words.
  int id(std::string_view word) const;
  /// Throws IndexError for ids outside [0, size).
  const std::string& token(int id) const;

  /// Space-joined rendering; LATENT prints as "<latent>", PAD/BOS are skipped
  /// and EOS prints as "<eos>".
  std::string decode(const std::vector<int>& ids) const;
  std::vector<int> encode(std::string_view text) const;

  /// Token-per-line file with the four special tokens as a fixed header.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Half-open [begin, end) index range.
struct Span {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool operator==(const Span&) const = default;
};

struct TokenizedSample {
  /// [BOS] instruction question [latent x L-N]
  std::vector<int> prompt_ids;
  /// steps joined by ";" then [EOS]
  std::vector<int> target_ids;
  std::vector<int> latent_positions;
  /// Within prompt_ids.
  Span question_span;
  /// One span per step, within target_ids.
  std::vector<Span> step_spans;
  /// Tokens of the final answer, within target_ids (inside the last step).
  Span answer_span;

  /// Prompt positions before the latent block: [BOS] instruction question.
  int context_length() const { return latent_positions.empty() ? static_cast<int>(prompt_ids.size()) : latent_positions.front(); }
  int latent_count() const { return static_cast<int>(latent_positions.size()); }
  int total_length() const { return static_cast<int>(prompt_ids.size() + target_ids.size()); }
};

/// Deterministic corpus; each sample derives from its own sub-seed, so the
/// `workers` count never changes the output.
std::vector<ReasoningSample> generate_corpus(std::uint64_t seed, int n, int steps_min, int steps_max,
                                             int workers = 1);

TokenizedSample tokenize(const ReasoningSample& sample, const Vocab& vocab, int latent_count);

void save_jsonl(const std::vector<ReasoningSample>& samples, const std::filesystem::path& path);
std::vector<ReasoningSample> load_jsonl(const std::filesystem::path& path);

struct CorpusSplits {
  std::vector<ReasoningSample> train;
  std::vector<ReasoningSample> dev;
  std::vector<ReasoningSample> test;
};

/// Seed-partitioned splits; each split is generated from its own derived seed.
/// A split size of 0 yields an empty split.
CorpusSplits generate_splits(std::uint64_t seed, int n_train, int n_dev, int n_test, int steps_min,
                             int steps_max, int workers = 1);

/// Canonical integer string: trims whitespace and leading zeros. Returns
/// nullopt for anything that is not a base-10 integer.
std::optional<std::string> canonical_number(std::string_view text);

}  // namespace lta
