// SPDX-License-Identifier: Apache-2.0
//
// Toy causal language model. It is pretrained once on the synthetic corpus and
// then frozen; afterwards it only supplies embeddings, the vocabulary head and
// generation for latent-augmented prompts.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lta/autograd.hpp"
#include "lta/corpus.hpp"
#include "lta/nn.hpp"

namespace lta {

struct BackboneConfig {
  int vocab_size = 0;
  int width = 64;
  int layers = 4;
  int heads = 4;
  int context = 256;
  double norm_eps = 1e-6;
  double init_scale = 0.02;

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

struct BackboneWeights {
  Mat embed;  // V x d, tied with the vocabulary head
  Mat pos;    // context x d
  std::vector<BlockWeights> blocks;
  Mat final_norm;  // 1 x d

  static BackboneWeights zeros_like(const BackboneWeights& w);

  template <class F>
  void visit(F&& f) {
    f("backbone.embed", embed);
    f("backbone.pos", pos);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("backbone.block" + std::to_string(i) + ".", f);
    f("backbone.final_norm", final_norm);
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<BackboneWeights*>(this)->visit([&](const std::string& n, const Mat& m) { f(n, m); });
  }
};

struct BackboneBundle {
  BackboneConfig config;
  BackboneWeights weights;
  std::uint64_t seed = 0;
  bool frozen = false;

  /// Vocabulary projection W (tied to the embedding table).
  const Mat& head() const { return weights.embed; }
  /// SHA-256 of all parameters in sorted-name order.
  std::string digest() const;
};

BackboneBundle init_backbone(const BackboneConfig& config, std::uint64_t seed);

/// Row t equals embedding row ids[t]. Throws IndexError for ids outside [0, V).
Mat embed_ids(const BackboneBundle& bundle, std::span<const int> ids);

/// One row of X_aug: embedded prompt_ids ++ target_ids with latent rows
/// substituted. `targets[t]` is the id expected after position t, or
/// kIgnoreTarget for prompt and latent positions.
struct AugmentedRow {
  Mat inputs;
  std::vector<int> targets;
  std::vector<int> latent_positions;
};

inline constexpr int kIgnoreTarget = -1;

/// Throws ShapeError when latents has the wrong row count or width and
/// ArgumentError for non-finite latents.
AugmentedRow build_augmented_input(const BackboneBundle& bundle, const TokenizedSample& tok, const Mat& latents);

/// Next-token label for every position of prompt ++ target (the final EOS input
/// row is dropped). Only target positions are supervised.
std::vector<int> shifted_targets(const TokenizedSample& tok);

/// Logits [T x V] for one sequence of input embeddings [T x d].
/// Throws LengthError when T exceeds the context length.
Mat forward(const BackboneBundle& bundle, const Mat& inputs);
std::vector<Mat> forward(const BackboneBundle& bundle, const std::vector<Mat>& batch);

/// Differentiable forward. `grad` receives weight gradients when non-null;
/// `embed` lets a caller reuse an already bound embedding table (tied head).
ad::Var forward(ad::Tape& tape, const BackboneBundle& bundle, ad::Var inputs, BackboneWeights* grad = nullptr,
                std::optional<ad::Var> embed = std::nullopt);

/// KV-cached single-position decoding; numerically equivalent to forward().
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const BackboneBundle& bundle);
  /// Consumes one input embedding row and returns that position's logits.
  RowVec step(const RowVec& input);
  int length() const { return length_; }

 private:
  const BackboneBundle& bundle_;
  std::vector<Mat> keys_, values_;
  int length_ = 0;
};

/// Autoregressive continuation of prompt_embeddings. temperature == 0 is greedy
/// (ties to the lowest id); otherwise softmax sampling seeded by `seed`. Stops
/// after max_new tokens, at EOS (not included), or when the context is full.
std::vector<int> generate(const BackboneBundle& bundle, const Mat& prompt_embeddings, int max_new, double temperature,
                          std::uint64_t seed);

/// Number after the last "answer =" marker, canonicalised; nullopt if absent.
std::optional<std::string> extract_answer(std::string_view decoded_text);

struct PretrainOptions {
  int epochs = 10;
  int batch_size = 16;
  double lr = 3e-3;
  double clip = 1.0;
  /// Each pretraining sequence carries 0..max_latent LATENT placeholders.
  int max_latent = 8;
  int workers = 1;
  /// Optional per-epoch progress callback (epoch, train loss, dev loss).
  std::function<void(int, double, double)> on_epoch;
};

/// Mean next-token CE over supervised positions of `samples` (placeholders
/// inserted as in pretraining with `latent_count` LATENT tokens).
double dev_loss(const BackboneBundle& bundle, const std::vector<ReasoningSample>& samples, const Vocab& vocab,
                int latent_count = 2, int workers = 1);

/// Trains a fresh backbone by next-token CE and freezes it. Throws TrainingError on a non-finite loss.
BackboneBundle pretrain_backbone(const std::vector<ReasoningSample>& corpus, const std::vector<ReasoningSample>& dev,
                                 const Vocab& vocab, const BackboneConfig& config, std::uint64_t seed,
                                 const PretrainOptions& options = {});

void save_backbone(const BackboneBundle& bundle, const std::filesystem::path& path);
/// Throws CorruptionError on digest mismatch.
BackboneBundle load_backbone(const std::filesystem::path& path);

}  // namespace lta
