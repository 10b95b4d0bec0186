// SPDX-License-Identifier: Apache-2.0
#include "lta/variance_lab.hpp"

#include <cmath>

#include "lta/error.hpp"
#include "lta/parallel.hpp"
#include "lta/rng.hpp"

namespace lta {

GaussianSpec GaussianSpec::scalar(double mean, double variance) {
  GaussianSpec g;
  g.mean = Vec::Constant(1, mean);
  g.variance = Vec::Constant(1, variance);
  return g;
}

void GaussianSpec::validate() const {
  if (mean.size() == 0 || mean.size() != variance.size()) throw ArgumentError("gaussian: mean/variance size mismatch");
  for (Eigen::Index i = 0; i < variance.size(); ++i)
    if (!(variance(i) > 0.0) || !std::isfinite(variance(i))) throw ArgumentError("gaussian: variance must be positive");
}

double EmpiricalDistribution::mean() const {
  if (samples.empty()) throw ArgumentError("empirical distribution: no samples");
  double s = 0.0;
  for (double x : samples) s += x;
  return s / static_cast<double>(samples.size());
}

double EmpiricalDistribution::variance() const {
  if (samples.size() < 2) throw ArgumentError("empirical distribution: variance needs at least two samples");
  const double m = mean();
  double ss = 0.0;
  for (double x : samples) ss += (x - m) * (x - m);
  return ss / static_cast<double>(samples.size() - 1);
}

EmpiricalDistribution make_q1(double base, double delta_scale, int n, std::uint64_t seed) {
  if (n < 2) throw ArgumentError("make_q1: n must be >= 2");
  if (!(delta_scale >= 0.0)) throw ArgumentError("make_q1: delta_scale must be >= 0");
  EmpiricalDistribution q;
  q.samples.assign(static_cast<std::size_t>(n), base);
  if (delta_scale == 0.0) return q;
  Rng rng = make_rng(seed, 0, /*salt=*/31);
  std::normal_distribution<double> delta(0.0, delta_scale);
  for (double& x : q.samples) x += delta(rng);
  return q;
}

EmpiricalDistribution make_q2(const GaussianSpec& p, int n, std::uint64_t seed) {
  p.validate();
  if (p.dims() != 1) throw ArgumentError("make_q2: expects a 1-D distribution");
  if (n < 2) throw ArgumentError("make_q2: n must be >= 2");
  Rng rng = make_rng(seed, 0, /*salt=*/37);
  std::normal_distribution<double> dist(p.mean(0), std::sqrt(p.variance(0)));
  EmpiricalDistribution q;
  q.samples.resize(static_cast<std::size_t>(n));
  for (double& x : q.samples) x = dist(rng);
  return q;
}

double kl_gaussian(const GaussianSpec& p, const GaussianSpec& q) {
  p.validate();
  q.validate();
  if (p.dims() != q.dims()) throw ArgumentError("kl_gaussian: dimension mismatch");
  double kl = 0.0;
  for (int i = 0; i < p.dims(); ++i) {
    const double vp = p.variance(i), vq = q.variance(i);
    const double dm = p.mean(i) - q.mean(i);
    kl += 0.5 * std::log(vq / vp) + (vp + dm * dm) / (2.0 * vq) - 0.5;
  }
  return kl;
}

GaussianSpec fit_gaussian(const EmpiricalDistribution& q) { return GaussianSpec::scalar(q.mean(), q.variance()); }

double kl_via_fit(const GaussianSpec& p, const EmpiricalDistribution& q) {
  const double v = q.variance();
  if (!(v > 0.0)) throw ArgumentError("kl_via_fit: empirical variance is zero (degenerate fit)");
  return kl_gaussian(p, GaussianSpec::scalar(q.mean(), v));
}

LemmaReport verify_lemma2(const GaussianSpec& p, double var_q1, double var_q2, int trials, int n, std::uint64_t seed,
                          int workers) {
  p.validate();
  if (p.dims() != 1) throw ArgumentError("verify_lemma2: expects a 1-D golden-truth distribution");
  if (!(var_q1 > 0.0 && var_q1 < var_q2 && var_q2 <= p.variance(0)))
    throw ArgumentError("verify_lemma2: requires 0 < var_q1 < var_q2 <= Var[P]");
  if (trials < 1) throw ArgumentError("verify_lemma2: trials must be >= 1");
  if (n < 2) throw ArgumentError("verify_lemma2: n must be >= 2");

  LemmaReport r;
  r.trials.resize(static_cast<std::size_t>(trials));
  parallel_for(trials, workers, [&](int i) {
    const std::uint64_t s = sub_seed(seed, static_cast<std::uint64_t>(i), /*salt=*/41);
    Rng base_rng = make_rng(s, 0, 1);
    std::normal_distribution<double> draw(p.mean(0), std::sqrt(p.variance(0)));
    const double base = draw(base_rng);
    const EmpiricalDistribution q1 = make_q1(base, std::sqrt(var_q1), n, sub_seed(s, 1));
    EmpiricalDistribution q2 = make_q2(p, n, sub_seed(s, 2));
    const double m = q2.mean();
    const double k = std::sqrt(var_q2 / q2.variance());
    for (double& x : q2.samples) x = m + (x - m) * k;
    LemmaTrial& t = r.trials[static_cast<std::size_t>(i)];
    t.trial = i;
    t.kl_q1 = kl_via_fit(p, q1);
    t.kl_q2 = kl_via_fit(p, q2);
    t.holds = t.kl_q2 < t.kl_q1;
  });
  int holds = 0;
  for (const auto& t : r.trials) {
    holds += t.holds ? 1 : 0;
    r.mean_kl_q1 += t.kl_q1 / trials;
    r.mean_kl_q2 += t.kl_q2 / trials;
  }
  r.holds_fraction = static_cast<double>(holds) / trials;
  return r;
}

VarianceStats latent_variance(const std::vector<Mat>& latents) {
  VarianceStats s;
  if (latents.empty()) return s;
  const Eigen::Index d = latents.front().size();
  s.per_dim = RowVec::Zero(d);
  if (latents.size() < 2) return s;
  RowVec mean = RowVec::Zero(d);
  for (const Mat& m : latents) {
    if (m.size() != d) throw ShapeError("latent_variance: inconsistent latent shapes");
    mean += Eigen::Map<const RowVec>(m.data(), d);
  }
  mean /= static_cast<double>(latents.size());
  for (const Mat& m : latents) s.per_dim += (Eigen::Map<const RowVec>(m.data(), d) - mean).cwiseAbs2();
  s.per_dim /= static_cast<double>(latents.size() - 1);
  s.mean = s.per_dim.mean();
  return s;
}

VarianceStats measure_latent_variance(const LatentModel& model, const BackboneBundle& bundle,
                                      const std::vector<ReasoningSample>& dataset, const Vocab& vocab, int workers) {
  if (dataset.empty()) throw ArgumentError("measure_latent_variance: empty dataset");
  const int ln = config_of(model).latent_count;
  std::vector<Mat> latents(dataset.size());
  parallel_for(static_cast<int>(dataset.size()), workers, [&](int i) {
    const TokenizedSample tok = tokenize(dataset[static_cast<std::size_t>(i)], vocab, ln);
    const std::span<const int> ctx(tok.prompt_ids.data(), static_cast<std::size_t>(tok.context_length()));
    latents[static_cast<std::size_t>(i)] = generate_latent(model, embed_ids(bundle, ctx), tok.question_span).vectors;
  });
  return latent_variance(latents);
}

}  // namespace lta
