// SPDX-License-Identifier: Apache-2.0
//
// Learnable-prior latent thought generator.
//
// The embedded prompt ([BOS] instruction question) is projected to the
// generator width, L-N learned query rows are appended, and a single randomly
// initialised pre-norm Transformer block (RMSNorm, bidirectional multi-head
// self-attention, ReLU FFN) runs over the whole sequence. The query-position
// outputs, mapped back to backbone width, are the latent thoughts; the mean of
// the question-position outputs, mapped the same way, is the focus anchor.
//
// The linear assistant is the ablation variant: one affine map from the
// mean-pooled prompt embedding to all L-N latent vectors.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>

#include "lta/autograd.hpp"
#include "lta/corpus.hpp"
#include "lta/nn.hpp"

namespace lta {

struct GeneratorConfig {
  int width = 64;
  int heads = 4;
  int latent_count = 2;
  int backbone_width = 64;
  /// Rows of the learned position table; prompts longer than this are rejected.
  int context = 256;
  double init_scale = 0.02;
  bool use_positions = true;
  double norm_eps = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

struct GeneratorParams {
  GeneratorConfig config;
  Mat in_proj;   // d_g x d_b
  Mat pos;       // context x d_g
  Mat queries;   // L-N x d_g
  BlockWeights block;
  Mat out_proj;  // d_b x d_g

  template <class F>
  void visit(F&& f) {
    f("generator.in_proj", in_proj);
    f("generator.pos", pos);
    f("generator.queries", queries);
    block.visit("generator.block.", f);
    f("generator.out_proj", out_proj);
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<GeneratorParams*>(this)->visit([&](const std::string& n, const Mat& m) { f(n, m); });
  }
};

struct LinearAssistantParams {
  GeneratorConfig config;
  Mat weight;         // (L-N * d_b) x d_b
  Mat bias;           // 1 x (L-N * d_b)
  Mat anchor_weight;  // d_b x d_b

  template <class F>
  void visit(F&& f) {
    f("linear.weight", weight);
    f("linear.bias", bias);
    f("linear.anchor_weight", anchor_weight);
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<LinearAssistantParams*>(this)->visit([&](const std::string& n, const Mat& m) { f(n, m); });
  }
};

using LatentModel = std::variant<GeneratorParams, LinearAssistantParams>;

/// Output for one prompt: vectors [L-N x d_b] and anchor [1 x d_b].
struct LatentThought {
  Mat vectors;
  RowVec anchor;
};

/// Weights ~ N(0, init_scale^2), RMSNorm gains 1. Deterministic in (config, seed).
GeneratorParams init_generator(const GeneratorConfig& config, std::uint64_t seed);
LinearAssistantParams init_linear_assistant(const GeneratorConfig& config, std::uint64_t seed);

/// `question` indexes rows of prompt_embed; the anchor pools those rows. Throws
/// ArgumentError for an empty prompt.
LatentThought generate_latent(const GeneratorParams& params, const Mat& prompt_embed, Span question);
LatentThought generate_latent_linear(const LinearAssistantParams& params, const Mat& prompt_embed, Span question);
LatentThought generate_latent(const LatentModel& model, const Mat& prompt_embed, Span question);

struct LatentVars {
  ad::Var vectors;
  ad::Var anchor;
};

/// Differentiable forward; `grad` (nullable, same alternative as `model`)
/// receives parameter gradients.
LatentVars generate_latent(ad::Tape& tape, const LatentModel& model, LatentModel* grad, ad::Var prompt_embed,
                           Span question);

/// Same alternative with every parameter zeroed.
LatentModel zeros_like(const LatentModel& model);
const GeneratorConfig& config_of(const LatentModel& model);
bool is_linear(const LatentModel& model);

template <class F>
void visit_params(LatentModel& model, F&& f) {
  std::visit([&](auto& m) { m.visit(f); }, model);
}
template <class F>
void visit_params(const LatentModel& model, F&& f) {
  std::visit([&](const auto& m) { m.visit(f); }, model);
}

/// Shares the backbone archive format; tensor names are prefixed "generator."
/// or "linear.".
void save_checkpoint(const LatentModel& model, const std::filesystem::path& path);
/// Throws CorruptionError for damaged files and ConfigError when `expected`
/// is given and differs from the stored config.
LatentModel load_checkpoint(const std::filesystem::path& path, const std::optional<GeneratorConfig>& expected = std::nullopt);

}  // namespace lta
