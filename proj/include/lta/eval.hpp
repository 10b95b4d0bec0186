// SPDX-License-Identifier: Apache-2.0
//
// Accuracy evaluation with latent injection and self-consistency voting, plus
// the ablation grid and latent-count sweep built on top of it.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lta/backbone.hpp"
#include "lta/corpus.hpp"
#include "lta/latent_generator.hpp"
#include "lta/trainer.hpp"

namespace lta {

/// Answer label used in vote histograms for responses with no extractable answer.
inline constexpr std::string_view kNoAnswer = "<none>";

/// Ordered (answer, count) pairs in first-seen order.
using VoteHistogram = std::vector<std::pair<std::string, int>>;

VoteHistogram tally_votes(const std::vector<std::optional<std::string>>& answers);
/// Most frequent extracted answer; ties go to the first seen. nullopt when no
/// response produced an answer.
std::optional<std::string> majority_vote(const std::vector<std::optional<std::string>>& answers);

struct SampleRecord {
  int id = 0;
  std::optional<std::string> predicted;
  std::string gold;
  bool correct = false;
  VoteHistogram votes;
};

struct EvalReport {
  double accuracy = 0.0;
  int n_samples = 0;
  int correct = 0;
  int sc_n = 1;
  std::vector<SampleRecord> records;
};

/// Produces continuation token ids for one response, given the augmented
/// prompt embeddings. Replaceable for testing.
using ContinuationFn =
    std::function<std::vector<int>(const Mat& prompt, int sample_index, int response_index, std::uint64_t seed)>;

struct EvalOptions {
  int sc_n = 1;
  /// Must be 0 when sc_n == 1.
  double temperature = 0.0;
  std::uint64_t seed = 0;
  int max_new = 64;
  int workers = 1;
  ContinuationFn sampler;
};

/// Temperature used for self-consistency sampling when sc_n > 1.
inline constexpr double kSelfConsistencyTemperature = 0.7;

EvalReport evaluate(const BackboneBundle& bundle, const LatentModel& model, const std::vector<ReasoningSample>& testset,
                    const Vocab& vocab, const EvalOptions& options);

void write_eval_csv(const EvalReport& report, const std::filesystem::path& path);

struct AblationCell {
  Variant variant = Variant::kFull;
  std::uint64_t seed = 0;
  int latent_count = 2;
  double accuracy = 0.0;
  double mean_latent_variance = 0.0;
  bool failed = false;
  std::string error;
};

struct AblationSummary {
  Variant variant = Variant::kFull;
  double mean = 0.0;
  double spread = 0.0;  // population standard deviation over seeds
  int runs = 0;
};

struct AblationTable {
  std::vector<AblationCell> cells;
  std::vector<AblationSummary> summary;
  bool any_failed() const;
};

struct ExperimentData {
  const std::vector<ReasoningSample>* train = nullptr;
  const std::vector<ReasoningSample>* dev = nullptr;
  const std::vector<ReasoningSample>* test = nullptr;
  const Vocab* vocab = nullptr;
  const BackboneBundle* bundle = nullptr;
};

/// Trains and evaluates every variant (fixed enum order) for every seed. A
/// failing cell is recorded and the remaining cells still run.
AblationTable ablate(const TrainConfig& base, const ExperimentData& data, const std::vector<std::uint64_t>& seeds,
                     const EvalOptions& eval_options, const std::vector<Variant>& variants = {std::begin(kAllVariants),
                                                                                                 std::end(kAllVariants)});

/// One train + eval per latent count (each >= 1, no duplicates).
std::vector<AblationCell> sweep_latent_count(const std::vector<int>& values, const TrainConfig& base,
                                             const ExperimentData& data, const EvalOptions& eval_options);

void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path);
void write_sweep_csv(const std::vector<AblationCell>& cells, const std::filesystem::path& path);

}  // namespace lta
