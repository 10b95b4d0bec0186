// SPDX-License-Identifier: Apache-2.0
//
// Co-training of the latent generator under the joint objective while the
// backbone stays frozen.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lta/backbone.hpp"
#include "lta/corpus.hpp"
#include "lta/latent_generator.hpp"
#include "lta/objectives.hpp"

namespace lta {

enum class Variant { kFull, kSftOnly, kSftKl, kSftCon, kLinearAssistant };

inline constexpr Variant kAllVariants[] = {Variant::kSftOnly, Variant::kSftKl, Variant::kSftCon,
                                           Variant::kLinearAssistant, Variant::kFull};

std::string to_string(Variant v);
/// Accepts full, sft_only, sft_kl, sft_con, linear_assistant.
Variant parse_variant(std::string_view name);

inline constexpr double kMinLearningRate = 8e-5;

struct TrainConfig {
  double lr = kMinLearningRate;
  /// Permits lr below kMinLearningRate.
  bool allow_low_lr = false;
  int batch_size = 16;
  int epochs = 10;
  std::uint64_t seed = 0;
  LossWeights weights;
  int latent_count = 2;
  Variant variant = Variant::kFull;
  double clip_norm = 1.0;
  /// Keep the epoch with the lowest dev L_total instead of the last one.
  bool select_best = true;
  int workers = 1;
  /// Width, heads and init scale of the generator; latent_count and
  /// backbone_width are filled in from this config and the backbone.
  GeneratorConfig generator;

  void validate() const;
};

/// Variant masking: sft_only zeroes align and focus, sft_kl zeroes focus,
/// sft_con zeroes align.
LossWeights effective_weights(const TrainConfig& config);

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double total = 0.0;
  double sft = 0.0;
  double align = 0.0;
  double focus = 0.0;
  /// Mean per-dimension variance of the batch's latent vectors.
  double latent_variance = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double dev_total = 0.0;
  double dev_sft = 0.0;
  double dev_align = 0.0;
  double dev_focus = 0.0;
  /// Mean per-dimension variance of latent vectors over the dev set.
  double dev_latent_variance = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  std::string checkpoint_path;
  double wall_seconds = 0.0;
};

struct TrainResult {
  LatentModel model;
  TrainReport report;
};

/// Per-sample objective on one tape. Gradients reach `grad` (nullable) on
/// tape.backward(result.loss).
struct SampleObjective {
  ad::Var loss;
  LossComponents components;
  Mat latents;
};
SampleObjective sample_objective(ad::Tape& tape, const LatentModel& model, LatentModel* grad,
                                 const BackboneBundle& bundle, const TokenizedSample& tok, const LossWeights& weights);

/// Mean objective and dev latent variance over a sample set, no gradients.
EpochRecord evaluate_objective(const LatentModel& model, const BackboneBundle& bundle,
                               const std::vector<TokenizedSample>& samples, const LossWeights& weights, int workers = 1);

/// Requires bundle.frozen; throws ContractError otherwise and TrainingError on
/// a non-finite loss. Only generator parameters are updated.
TrainResult train(const TrainConfig& config, const std::vector<ReasoningSample>& train_set,
                  const std::vector<ReasoningSample>& dev_set, const Vocab& vocab, const BackboneBundle& bundle,
                  const std::function<void(const EpochRecord&)>& on_epoch = nullptr);

/// CSV: step,epoch,total,sft,align,focus,latent_variance
void write_metrics_csv(const TrainReport& report, const std::filesystem::path& path);
/// CSV: epoch,dev_total,dev_sft,dev_align,dev_focus,dev_latent_variance
void write_epochs_csv(const TrainReport& report, const std::filesystem::path& path);

// --- Gradient checking ---------------------------------------------------------

/// Central differences (f(x+h) - f(x-h)) / 2h against `analytic` on the given
/// coordinates (all when empty). Relative error uses max(|a|, |b|, 1e-8) as
/// denominator; returns the maximum. Throws ArgumentError when a probe is
/// non-finite or h <= 0.
double grad_check(const std::function<double(std::span<const double>)>& f, std::span<const double> theta,
                  std::span<const double> analytic, double h, std::span<const int> coords = {});

/// Deterministic subset of at most `count` coordinates out of `size`.
std::vector<int> sample_coordinates(int size, int count, std::uint64_t seed);

std::vector<double> flatten(const LatentModel& model);
void unflatten(LatentModel& model, std::span<const double> values);

}  // namespace lta
