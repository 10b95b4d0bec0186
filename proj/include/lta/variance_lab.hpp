// SPDX-License-Identifier: Apache-2.0
//
// Monte-Carlo check of the variance/KL ordering between perturbation-based
// (Q1) and direct-sample (Q2) empirical latent distributions, with Gaussian
// golden-truth distributions so every KL has a closed form. Also hosts the
// latent-variance diagnostics used during training.
#pragma once

#include <cstdint>
#include <vector>

#include "lta/autograd.hpp"
#include "lta/backbone.hpp"
#include "lta/corpus.hpp"
#include "lta/latent_generator.hpp"

namespace lta {

/// Diagonal Gaussian; 1-D specs have a single entry.
struct GaussianSpec {
  Vec mean;
  Vec variance;

  static GaussianSpec scalar(double mean, double variance);
  int dims() const { return static_cast<int>(mean.size()); }
  /// Throws ArgumentError unless every variance is strictly positive.
  void validate() const;
};

struct EmpiricalDistribution {
  std::vector<double> samples;

  double mean() const;
  /// Unbiased (n - 1) estimator; needs at least two samples.
  double variance() const;
};

/// base + delta_i with delta_i ~ N(0, delta_scale^2).
EmpiricalDistribution make_q1(double base, double delta_scale, int n, std::uint64_t seed);
/// n direct draws from a 1-D spec.
EmpiricalDistribution make_q2(const GaussianSpec& p, int n, std::uint64_t seed);

/// Closed-form KL(p || q), summed over diagonal dimensions.
double kl_gaussian(const GaussianSpec& p, const GaussianSpec& q);
/// Moment-matched 1-D Gaussian (unbiased variance).
GaussianSpec fit_gaussian(const EmpiricalDistribution& q);
/// KL(p || fit(q)); throws ArgumentError for a zero-variance sample.
double kl_via_fit(const GaussianSpec& p, const EmpiricalDistribution& q);

struct LemmaTrial {
  int trial = 0;
  double kl_q1 = 0.0;
  double kl_q2 = 0.0;
  bool holds = false;
};

struct LemmaReport {
  double holds_fraction = 0.0;
  double mean_kl_q1 = 0.0;
  double mean_kl_q2 = 0.0;
  std::vector<LemmaTrial> trials;
};

/// Per trial: Q1 perturbs one draw from p at scale sqrt(var_q1); Q2 takes n
/// direct draws from p rescaled to sample variance var_q2. Requires
/// 0 < var_q1 < var_q2 <= Var[p]. Trials use per-index sub-seeds.
LemmaReport verify_lemma2(const GaussianSpec& p, double var_q1, double var_q2, int trials, int n, std::uint64_t seed,
                          int workers = 1);

struct VarianceStats {
  RowVec per_dim;
  double mean = 0.0;
};

/// Per-dimension unbiased variance across samples; each matrix is flattened
/// row-major into one observation. Fewer than two samples gives zeros.
VarianceStats latent_variance(const std::vector<Mat>& latents);

/// Runs the generator over every question of `dataset` (read-only).
VarianceStats measure_latent_variance(const LatentModel& model, const BackboneBundle& bundle,
                                      const std::vector<ReasoningSample>& dataset, const Vocab& vocab, int workers = 1);

}  // namespace lta
