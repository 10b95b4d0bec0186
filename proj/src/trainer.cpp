// SPDX-License-Identifier: Apache-2.0
#include "lta/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "lta/error.hpp"
#include "lta/optim.hpp"
#include "lta/parallel.hpp"
#include "lta/rng.hpp"
#include "lta/variance_lab.hpp"

namespace lta {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kSftOnly: return "sft_only";
    case Variant::kSftKl: return "sft_kl";
    case Variant::kSftCon: return "sft_con";
    case Variant::kLinearAssistant: return "linear_assistant";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (to_string(v) == name) return v;
  throw ConfigError("unknown variant: " + std::string(name));
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (lr < kMinLearningRate && !allow_low_lr)
    throw ConfigError("train: lr below 8e-5 requires the explicit low-lr acknowledgment");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (latent_count < 1) throw ConfigError("train: latent_count must be >= 1");
  weights.validate();
  effective_weights(*this).validate();
}

LossWeights effective_weights(const TrainConfig& c) {
  LossWeights w = c.weights;
  switch (c.variant) {
    case Variant::kSftOnly:
      w.align = 0.0;
      w.focus = 0.0;
      break;
    case Variant::kSftKl:
      w.focus = 0.0;
      break;
    case Variant::kSftCon:
      w.align = 0.0;
      break;
    case Variant::kFull:
    case Variant::kLinearAssistant:
      break;
  }
  return w;
}

SampleObjective sample_objective(ad::Tape& t, const LatentModel& model, LatentModel* grad, const BackboneBundle& bundle,
                                 const TokenizedSample& tok, const LossWeights& w) {
  if (tok.latent_count() != config_of(model).latent_count) throw ShapeError("sample_objective: latent count mismatch");
  const std::span<const int> prompt(tok.prompt_ids);
  const std::size_t ctx = static_cast<std::size_t>(tok.context_length());
  const ad::Var prompt_embed = t.constant(embed_ids(bundle, prompt.first(ctx)));
  const LatentVars lv = generate_latent(t, model, grad, prompt_embed, tok.question_span);

  // X_aug = [context][latents][target without its final EOS]
  const std::span<const int> target(tok.target_ids);
  const ad::Var parts[] = {prompt_embed, lv.vectors, t.constant(embed_ids(bundle, target.first(target.size() - 1)))};
  const ad::Var inputs = ad::concat_rows(t, parts);
  const ad::Var logits = forward(t, bundle, inputs);
  const ad::Var sft = sft_loss(t, logits, shifted_targets(tok));

  const ad::Var W = t.param(bundle.head(), nullptr);
  Mat eq = question_representation(bundle, tok);
  const ad::Var align = alignment_loss(t, t.constant(std::move(eq)), lv.vectors, W);

  const FocusBatch fb = step_representations(bundle, tok, RowVec::Zero(bundle.config.width));
  const ad::Var focus = focus_loss(t, lv.anchor, t.constant(fb.steps), t.constant(fb.answer), w.tau);

  const ad::Var terms[] = {sft, align, focus};
  const double weights[] = {w.sft, w.align, w.focus};
  SampleObjective out;
  out.loss = ad::weighted_sum(t, terms, weights);
  out.components = {t.scalar(sft), t.scalar(align), t.scalar(focus)};
  out.latents = t.value(lv.vectors);
  return out;
}

EpochRecord evaluate_objective(const LatentModel& model, const BackboneBundle& bundle,
                               const std::vector<TokenizedSample>& samples, const LossWeights& w, int workers) {
  if (samples.empty()) throw ArgumentError("evaluate_objective: empty sample set");
  std::vector<LossComponents> comps(samples.size());
  std::vector<Mat> latents(samples.size());
  parallel_for(static_cast<int>(samples.size()), workers, [&](int i) {
    ad::Tape t;
    SampleObjective o = sample_objective(t, model, nullptr, bundle, samples[static_cast<std::size_t>(i)], w);
    comps[static_cast<std::size_t>(i)] = o.components;
    latents[static_cast<std::size_t>(i)] = std::move(o.latents);
  });
  EpochRecord r;
  const double n = static_cast<double>(samples.size());
  for (const auto& c : comps) {
    r.dev_sft += c.sft / n;
    r.dev_align += c.align / n;
    r.dev_focus += c.focus / n;
  }
  r.dev_total = w.sft * r.dev_sft + w.align * r.dev_align + w.focus * r.dev_focus;
  r.dev_latent_variance = latent_variance(latents).mean;
  return r;
}

TrainResult train(const TrainConfig& config, const std::vector<ReasoningSample>& train_set,
                  const std::vector<ReasoningSample>& dev_set, const Vocab& vocab, const BackboneBundle& bundle,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (!bundle.frozen) throw ContractError("train: backbone must be frozen");
  if (train_set.empty()) throw ArgumentError("train: empty training set");
  const auto started = std::chrono::steady_clock::now();
  const LossWeights w = effective_weights(config);

  auto tokenize_all = [&](const std::vector<ReasoningSample>& set) {
    std::vector<TokenizedSample> out(set.size());
    parallel_for(static_cast<int>(set.size()), config.workers,
                 [&](int i) { out[static_cast<std::size_t>(i)] = tokenize(set[static_cast<std::size_t>(i)], vocab, config.latent_count); });
    return out;
  };
  const std::vector<TokenizedSample> train_tok = tokenize_all(train_set);
  const std::vector<TokenizedSample> dev_tok = tokenize_all(dev_set);

  GeneratorConfig gc = config.generator;
  gc.latent_count = config.latent_count;
  gc.backbone_width = bundle.config.width;
  TrainResult result;
  result.model = config.variant == Variant::kLinearAssistant ? LatentModel(init_linear_assistant(gc, config.seed))
                                                             : LatentModel(init_generator(gc, config.seed));
  LatentModel& model = result.model;
  std::vector<Mat*> params;
  visit_params(model, [&](const std::string&, Mat& m) { params.push_back(&m); });

  Adam adam(config.lr);
  Rng order_rng = make_rng(config.seed, 0, /*salt=*/51);
  std::vector<int> order(train_tok.size());
  std::optional<LatentModel> best;
  double best_dev = INFINITY;
  int step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const int bs = static_cast<int>(std::min<std::size_t>(config.batch_size, order.size() - start));
      std::vector<LatentModel> grads(static_cast<std::size_t>(bs));
      std::vector<LossComponents> comps(static_cast<std::size_t>(bs));
      std::vector<double> totals(static_cast<std::size_t>(bs));
      std::vector<Mat> latents(static_cast<std::size_t>(bs));
      parallel_for(bs, config.workers, [&](int j) {
        const auto k = static_cast<std::size_t>(j);
        grads[k] = zeros_like(model);
        ad::Tape t;
        SampleObjective o = sample_objective(t, model, &grads[k], bundle, train_tok[static_cast<std::size_t>(order[start + k])], w);
        totals[k] = t.scalar(o.loss);
        comps[k] = o.components;
        latents[k] = std::move(o.latents);
        t.backward(o.loss);
      });

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      LatentModel sum = zeros_like(model);
      std::vector<Mat*> g;
      visit_params(sum, [&](const std::string&, Mat& m) { g.push_back(&m); });
      for (int j = 0; j < bs; ++j) {
        const auto k = static_cast<std::size_t>(j);
        rec.total += totals[k] / bs;
        rec.sft += comps[k].sft / bs;
        rec.align += comps[k].align / bs;
        rec.focus += comps[k].focus / bs;
        std::size_t p = 0;
        visit_params(grads[k], [&](const std::string&, Mat& m) { *g[p++] += m / bs; });
      }
      rec.latent_variance = latent_variance(latents).mean;
      if (!std::isfinite(rec.total)) throw TrainingError(static_cast<std::size_t>(step), "non-finite loss");
      clip_global_norm(g, config.clip_norm);
      adam.step(params, std::vector<const Mat*>(g.begin(), g.end()));
      result.report.steps.push_back(rec);
      ++step;
    }
    if (!dev_tok.empty()) {
      EpochRecord er = evaluate_objective(model, bundle, dev_tok, w, config.workers);
      er.epoch = epoch;
      if (!std::isfinite(er.dev_total)) throw TrainingError(static_cast<std::size_t>(step), "non-finite dev loss");
      result.report.epochs.push_back(er);
      if (on_epoch) on_epoch(er);
      if (er.dev_total < best_dev) {
        best_dev = er.dev_total;
        result.report.best_epoch = epoch;
        if (config.select_best) best = model;
      }
    }
  }
  if (config.select_best && best) model = std::move(*best);
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_metrics_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "step,epoch,total,sft,align,focus,latent_variance\n";
  for (const auto& r : report.steps)
    f << r.step << ',' << r.epoch << ',' << fmt(r.total) << ',' << fmt(r.sft) << ',' << fmt(r.align) << ','
      << fmt(r.focus) << ',' << fmt(r.latent_variance) << '\n';
}

void write_epochs_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "epoch,dev_total,dev_sft,dev_align,dev_focus,dev_latent_variance\n";
  for (const auto& r : report.epochs)
    f << r.epoch << ',' << fmt(r.dev_total) << ',' << fmt(r.dev_sft) << ',' << fmt(r.dev_align) << ','
      << fmt(r.dev_focus) << ',' << fmt(r.dev_latent_variance) << '\n';
}

double grad_check(const std::function<double(std::span<const double>)>& f, std::span<const double> theta,
                  std::span<const double> analytic, double h, std::span<const int> coords) {
  if (!(h > 0.0)) throw ArgumentError("grad_check: h must be positive");
  if (theta.size() != analytic.size()) throw ShapeError("grad_check: gradient size mismatch");
  std::vector<int> all;
  if (coords.empty()) {
    all.resize(theta.size());
    std::iota(all.begin(), all.end(), 0);
    coords = all;
  }
  std::vector<double> x(theta.begin(), theta.end());
  double worst = 0.0;
  for (int c : coords) {
    if (c < 0 || static_cast<std::size_t>(c) >= x.size()) throw IndexError("grad_check: coordinate out of range");
    const double orig = x[static_cast<std::size_t>(c)];
    x[static_cast<std::size_t>(c)] = orig + h;
    const double fp = f(x);
    x[static_cast<std::size_t>(c)] = orig - h;
    const double fm = f(x);
    x[static_cast<std::size_t>(c)] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw ArgumentError("grad_check: non-finite loss at probe of coordinate " + std::to_string(c));
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[static_cast<std::size_t>(c)];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

std::vector<int> sample_coordinates(int size, int count, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(size));
  std::iota(idx.begin(), idx.end(), 0);
  if (count >= size) return idx;
  Rng rng = make_rng(seed, 0, /*salt=*/61);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<double> flatten(const LatentModel& model) {
  std::vector<double> out;
  visit_params(model, [&](const std::string&, const Mat& m) { out.insert(out.end(), m.data(), m.data() + m.size()); });
  return out;
}

void unflatten(LatentModel& model, std::span<const double> values) {
  std::size_t at = 0;
  visit_params(model, [&](const std::string&, Mat& m) {
    if (at + static_cast<std::size_t>(m.size()) > values.size()) throw ShapeError("unflatten: too few values");
    std::copy_n(values.data() + at, m.size(), m.data());
    at += static_cast<std::size_t>(m.size());
  });
  if (at != values.size()) throw ShapeError("unflatten: too many values");
}

}  // namespace lta
