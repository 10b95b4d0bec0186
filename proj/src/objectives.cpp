// SPDX-License-Identifier: Apache-2.0
#include "lta/objectives.hpp"

#include <cmath>

#include "lta/error.hpp"

namespace lta {

void LossWeights::validate() const {
  if (!(tau > 0.0)) throw ArgumentError("loss weights: tau must be positive");
  if (!(sft >= 0.0 && align >= 0.0 && focus >= 0.0)) throw ArgumentError("loss weights: lambdas must be non-negative");
  if (sft == 0.0 && align == 0.0 && focus == 0.0) throw ArgumentError("loss weights: at least one lambda must be positive");
}

namespace {

/// log-sum-exp of a row, shifted for stability.
double log_sum_exp(const RowVec& x) {
  const double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

}  // namespace

RowVec softmax(const RowVec& logits) {
  RowVec p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

ValueGrad sft_loss_grad(const Mat& logits, std::span<const int> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) throw ShapeError("sft_loss: targets/logits length mismatch");
  ValueGrad out;
  out.grad = Mat::Zero(logits.rows(), logits.cols());
  int n = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == kIgnoreTarget) continue;
    if (targets[t] < 0 || targets[t] >= logits.cols()) throw IndexError("sft_loss: target id out of range");
    ++n;
  }
  if (n == 0) throw ArgumentError("sft_loss: every position is masked");
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == kIgnoreTarget) continue;
    const auto r = static_cast<Eigen::Index>(t);
    const RowVec row = logits.row(r);
    const double lse = log_sum_exp(row);
    out.value += lse - row(targets[t]);
    out.grad.row(r) = (row.array() - lse).exp().matrix() / n;
    out.grad(r, targets[t]) -= 1.0 / n;
  }
  out.value /= n;
  return out;
}

double sft_loss(const Mat& logits, std::span<const int> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) throw ShapeError("sft_loss: targets/logits length mismatch");
  double sum = 0.0;
  int n = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == kIgnoreTarget) continue;
    if (targets[t] < 0 || targets[t] >= logits.cols()) throw IndexError("sft_loss: target id out of range");
    const RowVec row = logits.row(static_cast<Eigen::Index>(t));
    sum += log_sum_exp(row) - row(targets[t]);
    ++n;
  }
  if (n == 0) throw ArgumentError("sft_loss: every position is masked");
  return sum / n;
}

RowVec mean_embedding(const BackboneBundle& bundle, std::span<const int> ids) {
  if (ids.empty()) throw ArgumentError("mean_embedding: empty token range");
  return embed_ids(bundle, ids).colwise().mean();
}

RowVec question_representation(const BackboneBundle& bundle, const TokenizedSample& tok) {
  const Span s = tok.question_span;
  if (s.empty()) throw ArgumentError("question_representation: empty question span");
  if (s.begin < 0 || s.end > static_cast<int>(tok.prompt_ids.size())) throw IndexError("question_representation: span out of range");
  return mean_embedding(bundle, std::span<const int>(tok.prompt_ids).subspan(static_cast<std::size_t>(s.begin),
                                                                           static_cast<std::size_t>(s.size())));
}

double kl_divergence(const RowVec& p, const RowVec& q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: size mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > 0.0) kl += p(i) * (std::log(p(i)) - std::log(q(i)));
  return kl;
}

ValueGrad alignment_loss_grad(const RowVec& e_q, const Mat& latents, const Mat& W) {
  if (latents.rows() < 1) throw ArgumentError("alignment_loss: need at least one latent vector");
  if (e_q.size() != W.cols() || latents.cols() != W.cols()) throw ShapeError("alignment_loss: width mismatch");
  const RowVec zq = e_q * W.transpose();
  const RowVec log_p = zq.array() - log_sum_exp(zq);
  const RowVec p = log_p.array().exp();
  const double n = static_cast<double>(latents.rows());
  ValueGrad out;
  out.grad = Mat::Zero(latents.rows(), latents.cols());
  for (Eigen::Index i = 0; i < latents.rows(); ++i) {
    const RowVec zv = latents.row(i) * W.transpose();
    const RowVec log_q = zv.array() - log_sum_exp(zv);
    // KL with log-probabilities from log-sum-exp keeps v_i = e_q at exactly 0.
    out.value += (p.array() * (log_p - log_q).array()).sum() / n;
    out.grad.row(i) = (log_q.array().exp().matrix() - p) * W / n;
  }
  return out;
}

double alignment_loss(const RowVec& e_q, const Mat& latents, const Mat& W) {
  return alignment_loss_grad(e_q, latents, W).value;
}

double cosine_similarity(const RowVec& a, const RowVec& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return -1.0;
  return a.dot(b) / (na * nb);
}

int candidate_count(int m) {
  if (m < 1) throw ArgumentError("focus: need at least one step");
  return m >= 2 ? m - 1 : 1;
}

int select_positive_step(const FocusBatch& batch) {
  const int pool = candidate_count(static_cast<int>(batch.steps.rows()));
  int best = 0;
  double best_sim = cosine_similarity(batch.steps.row(0), batch.answer);
  for (int j = 1; j < pool; ++j) {
    const double s = cosine_similarity(batch.steps.row(j), batch.answer);
    if (s > best_sim) {
      best_sim = s;
      best = j;
    }
  }
  return best;
}

double info_nce(std::span<const double> sims, int pos, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("info_nce: tau must be positive");
  if (pos < 0 || static_cast<std::size_t>(pos) >= sims.size()) throw IndexError("info_nce: positive index out of range");
  RowVec z(static_cast<Eigen::Index>(sims.size()));
  for (std::size_t j = 0; j < sims.size(); ++j) z(static_cast<Eigen::Index>(j)) = sims[j] / tau;
  if (sims.size() == 1) return 0.0;
  return log_sum_exp(z) - z(pos);
}

ValueGrad focus_loss_grad(const FocusBatch& b, int pos, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("focus_loss: tau must be positive");
  const int pool = candidate_count(static_cast<int>(b.steps.rows()));
  if (pos < 0 || pos >= pool) throw IndexError("focus_loss: positive index outside candidate pool");
  if (b.anchor.size() != b.steps.cols()) throw ShapeError("focus_loss: anchor/step width mismatch");
  std::vector<double> sims(static_cast<std::size_t>(pool));
  for (int j = 0; j < pool; ++j) sims[static_cast<std::size_t>(j)] = cosine_similarity(b.anchor, b.steps.row(j));
  ValueGrad out;
  out.value = info_nce(sims, pos, tau);
  out.grad = Mat::Zero(1, b.anchor.size());
  if (pool == 1) return out;
  const double na = b.anchor.norm();
  if (na == 0.0) return out;
  RowVec z(pool);
  for (int j = 0; j < pool; ++j) z(j) = sims[static_cast<std::size_t>(j)] / tau;
  const RowVec soft = softmax(z);
  for (int j = 0; j < pool; ++j) {
    const RowVec s = b.steps.row(j);
    const double ns = s.norm();
    if (ns == 0.0) continue;  // similarity pinned at -1
    const double coeff = (soft(j) - (j == pos ? 1.0 : 0.0)) / tau;
    const double c = sims[static_cast<std::size_t>(j)];
    out.grad.row(0) += coeff * (s / (na * ns) - c * b.anchor / (na * na));
  }
  return out;
}

double focus_loss(const FocusBatch& batch, int pos, double tau) { return focus_loss_grad(batch, pos, tau).value; }

FocusBatch step_representations(const BackboneBundle& bundle, const TokenizedSample& tok, const RowVec& anchor) {
  if (tok.step_spans.empty()) throw DataError("step_representations: sample has no steps");
  FocusBatch b;
  b.anchor = anchor;
  b.steps.resize(static_cast<Eigen::Index>(tok.step_spans.size()), bundle.config.width);
  const std::span<const int> target(tok.target_ids);
  for (std::size_t j = 0; j < tok.step_spans.size(); ++j) {
    const Span s = tok.step_spans[j];
    if (s.empty()) throw DataError("step_representations: empty step " + std::to_string(j));
    b.steps.row(static_cast<Eigen::Index>(j)) =
        mean_embedding(bundle, target.subspan(static_cast<std::size_t>(s.begin), static_cast<std::size_t>(s.size())));
  }
  if (tok.answer_span.empty()) throw DataError("step_representations: empty answer");
  b.answer = mean_embedding(bundle, target.subspan(static_cast<std::size_t>(tok.answer_span.begin),
                                                   static_cast<std::size_t>(tok.answer_span.size())));
  return b;
}

TotalLoss total_loss(const LossComponents& c, const LossWeights& w) {
  w.validate();
  TotalLoss t;
  t.components = c;
  t.total = w.sft * c.sft + w.align * c.align + w.focus * c.focus;
  return t;
}

ad::Var sft_loss(ad::Tape& t, ad::Var logits, std::span<const int> targets) {
  ValueGrad vg = sft_loss_grad(t.value(logits), targets);
  Mat v(1, 1);
  v(0, 0) = vg.value;
  return t.push(std::move(v), t.needs_grad(logits), [logits, g = std::move(vg.grad)](ad::Tape& t, int self) {
    t.grad(logits.id) += g * t.grad(self)(0, 0);
  });
}

ad::Var alignment_loss(ad::Tape& t, ad::Var e_q, ad::Var latents, ad::Var W) {
  const Mat& eq = t.value(e_q);
  if (eq.rows() != 1) throw ShapeError("alignment_loss: e_q must be a single row");
  ValueGrad vg = alignment_loss_grad(eq.row(0), t.value(latents), t.value(W));
  Mat v(1, 1);
  v(0, 0) = vg.value;
  return t.push(std::move(v), t.needs_grad(latents), [latents, g = std::move(vg.grad)](ad::Tape& t, int self) {
    t.grad(latents.id) += g * t.grad(self)(0, 0);
  });
}

ad::Var focus_loss(ad::Tape& t, ad::Var anchor, ad::Var steps, ad::Var answer, double tau) {
  FocusBatch b;
  if (t.value(anchor).rows() != 1 || t.value(answer).rows() != 1) throw ShapeError("focus_loss: anchor and answer must be rows");
  b.anchor = t.value(anchor).row(0);
  b.steps = t.value(steps);
  b.answer = t.value(answer).row(0);
  const int pos = select_positive_step(b);
  ValueGrad vg = focus_loss_grad(b, pos, tau);
  Mat v(1, 1);
  v(0, 0) = vg.value;
  return t.push(std::move(v), t.needs_grad(anchor), [anchor, g = std::move(vg.grad)](ad::Tape& t, int self) {
    t.grad(anchor.id) += g * t.grad(self)(0, 0);
  });
}

}  // namespace lta
