// SPDX-License-Identifier: Apache-2.0
//
// The joint training objective:
//
//   L_total = l_sft * L_SFT + l_align * L_align + l_focus * L_focus
//
// L_SFT    token cross-entropy on the latent-augmented input (latent and
//          prompt positions are not supervised).
// L_align  (1/N) sum_i KL( softmax(W e_q) || softmax(W v_i) ) between the pooled
//          question embedding and each latent vector. The question
//          distribution is the first argument. e_q and W come from the frozen
//          backbone and receive no gradient.
// L_focus  InfoNCE of the generator's question anchor against the golden
//          reasoning steps. The positive is the step most cosine-similar to the
//          answer embedding, chosen after dropping the final (answer-bearing)
//          step; the same reduced pool forms the denominator. Step and answer
//          representations receive no gradient.
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "lta/autograd.hpp"
#include "lta/backbone.hpp"
#include "lta/corpus.hpp"

namespace lta {

struct LossWeights {
  double sft = 1.0;
  double align = 0.5;
  double focus = 0.5;
  double tau = 0.1;

  /// Throws ArgumentError unless tau > 0, all weights >= 0 and one weight > 0.
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct ValueGrad {
  double value = 0.0;
  Mat grad;
};

// --- SFT ---------------------------------------------------------------------

/// Mean over supervised positions of -log softmax(logits[t])[targets[t]].
/// targets[t] == kIgnoreTarget masks position t. Throws ArgumentError when
/// every position is masked.
double sft_loss(const Mat& logits, std::span<const int> targets);
/// Gradient with respect to logits.
ValueGrad sft_loss_grad(const Mat& logits, std::span<const int> targets);

// --- Semantic alignment --------------------------------------------------------

/// Mean of embedding rows over question_span. Throws ArgumentError for an
/// empty span.
RowVec question_representation(const BackboneBundle& bundle, const TokenizedSample& tok);
RowVec mean_embedding(const BackboneBundle& bundle, std::span<const int> ids);

/// KL(p || q) for two probability vectors.
double kl_divergence(const RowVec& p, const RowVec& q);
RowVec softmax(const RowVec& logits);

double alignment_loss(const RowVec& e_q, const Mat& latents, const Mat& W);
/// Gradient with respect to latents only.
ValueGrad alignment_loss_grad(const RowVec& e_q, const Mat& latents, const Mat& W);

// --- Reasoning focus -----------------------------------------------------------

struct FocusBatch {
  RowVec anchor;
  /// One row per golden step, answer step included (M x d).
  Mat steps;
  RowVec answer;
};

/// Cosine similarity; defined as -1 when either vector has zero norm.
double cosine_similarity(const RowVec& a, const RowVec& b);

/// Candidate steps: all but the last when M >= 2, otherwise just step 0.
int candidate_count(int m);

/// Highest cosine to the answer among the candidates; ties go to the lowest index.
int select_positive_step(const FocusBatch& batch);

/// -log softmax(similarities / tau)[pos], over a precomputed similarity list.
double info_nce(std::span<const double> similarities, int pos, double tau);

double focus_loss(const FocusBatch& batch, int pos, double tau);
/// Gradient with respect to the anchor only.
ValueGrad focus_loss_grad(const FocusBatch& batch, int pos, double tau);

/// s_j = mean embedding of step j tokens, e_ans = mean embedding of the answer
/// tokens; the anchor is supplied by the caller (generator output).
FocusBatch step_representations(const BackboneBundle& bundle, const TokenizedSample& tok, const RowVec& anchor);

// --- Combination ---------------------------------------------------------------

struct LossComponents {
  double sft = 0.0;
  double align = 0.0;
  double focus = 0.0;
};

struct TotalLoss {
  double total = 0.0;
  /// Unweighted components, kept for logging.
  LossComponents components;
};

TotalLoss total_loss(const LossComponents& components, const LossWeights& weights);

// --- Differentiable wrappers ---------------------------------------------------

ad::Var sft_loss(ad::Tape& tape, ad::Var logits, std::span<const int> targets);
/// Stop-gradient on e_q and W: only `latents` receives gradient.
ad::Var alignment_loss(ad::Tape& tape, ad::Var e_q, ad::Var latents, ad::Var W);
/// Stop-gradient on steps and answer: only `anchor` receives gradient. The
/// positive is selected internally.
ad::Var focus_loss(ad::Tape& tape, ad::Var anchor, ad::Var steps, ad::Var answer, double tau);

}  // namespace lta
