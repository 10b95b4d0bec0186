// SPDX-License-Identifier: Apache-2.0
#include "lta/gradcheck.hpp"

#include <algorithm>

#include "lta/error.hpp"
#include "lta/nn.hpp"
#include "lta/objectives.hpp"
#include "lta/rng.hpp"
#include "lta/trainer.hpp"

namespace lta {
namespace {

std::span<const double> view(const Mat& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

Mat as_mat(std::span<const double> v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Mat>(v.data(), rows, cols);
}

double check_sft(std::uint64_t seed, double h) {
  Rng rng = make_rng(seed, 0, 1);
  const int T = 5, V = 7;
  const Mat logits = normal_matrix(rng, T, V, 1.0);
  std::uniform_int_distribution<int> tok(0, V - 1);
  std::vector<int> targets(T);
  for (int& t : targets) t = tok(rng);
  targets[1] = kIgnoreTarget;
  const ValueGrad vg = sft_loss_grad(logits, targets);
  return grad_check([&](std::span<const double> x) { return sft_loss(as_mat(x, T, V), targets); }, view(logits),
                    view(vg.grad), h);
}

double check_align(std::uint64_t seed, double h) {
  Rng rng = make_rng(seed, 0, 2);
  const int N = 3, d = 6, V = 7;
  const RowVec eq = normal_matrix(rng, 1, d, 1.0);
  const Mat latents = normal_matrix(rng, N, d, 1.0);
  const Mat W = normal_matrix(rng, V, d, 1.0);
  const ValueGrad vg = alignment_loss_grad(eq, latents, W);
  return grad_check([&](std::span<const double> x) { return alignment_loss(eq, as_mat(x, N, d), W); }, view(latents),
                    view(vg.grad), h);
}

double check_focus(std::uint64_t seed, double h) {
  Rng rng = make_rng(seed, 0, 3);
  const int M = 4, d = 6;
  const double tau = 0.5;
  FocusBatch b{normal_matrix(rng, 1, d, 1.0), normal_matrix(rng, M, d, 1.0), normal_matrix(rng, 1, d, 1.0)};
  const int pos = select_positive_step(b);
  const ValueGrad vg = focus_loss_grad(b, pos, tau);
  const Mat anchor = b.anchor;
  return grad_check(
      [&](std::span<const double> x) {
        FocusBatch c = b;
        c.anchor = as_mat(x, 1, d);
        return focus_loss(c, pos, tau);
      },
      view(anchor), view(vg.grad), h);
}

double check_total(std::uint64_t seed, double h, bool linear) {
  const Vocab vocab = Vocab::standard();
  BackboneConfig bc;
  bc.vocab_size = vocab.size();
  bc.width = 16;
  bc.layers = 1;
  bc.heads = 2;
  bc.context = 64;
  bc.init_scale = 0.3;
  BackboneBundle bundle = init_backbone(bc, sub_seed(seed, 0, 4));
  bundle.frozen = true;

  GeneratorConfig gc;
  gc.width = 8;
  gc.heads = 2;
  gc.latent_count = 2;
  gc.backbone_width = bc.width;
  gc.context = bc.context;
  gc.init_scale = 0.3;
  const LatentModel model = linear ? LatentModel(init_linear_assistant(gc, sub_seed(seed, 1, 4)))
                                   : LatentModel(init_generator(gc, sub_seed(seed, 1, 4)));
  const TokenizedSample tok = tokenize(generate_corpus(sub_seed(seed, 2, 4), 1, 2, 3).front(), vocab, gc.latent_count);
  const LossWeights w{1.0, 0.5, 0.5, 0.5};

  LatentModel grad = zeros_like(model);
  {
    ad::Tape t;
    const SampleObjective o = sample_objective(t, model, &grad, bundle, tok, w);
    t.backward(o.loss);
  }
  const std::vector<double> theta = flatten(model);
  const std::vector<double> analytic = flatten(grad);
  const std::vector<int> coords = sample_coordinates(static_cast<int>(theta.size()), 48, seed);
  LatentModel probe = model;
  return grad_check(
      [&](std::span<const double> x) {
        unflatten(probe, x);
        ad::Tape t;
        return t.scalar(sample_objective(t, probe, nullptr, bundle, tok, w).loss);
      },
      theta, analytic, h, coords);
}

}  // namespace

std::vector<GradCheckResult> run_gradchecks(std::uint64_t seed, int instances, double h, double tol) {
  if (instances < 1) throw ArgumentError("run_gradchecks: instances must be >= 1");
  std::vector<GradCheckResult> out = {{"sft_loss"}, {"alignment_loss"}, {"focus_loss"}, {"total_loss"}};
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t s = sub_seed(seed, static_cast<std::uint64_t>(i), 61);
    const double errs[] = {check_sft(s, h), check_align(s, h), check_focus(s, h), check_total(s, h, i % 2 == 1)};
    for (std::size_t k = 0; k < out.size(); ++k) out[k].max_rel_error = std::max(out[k].max_rel_error, errs[k]);
  }
  for (auto& r : out) {
    r.instances = instances;
    r.pass = r.max_rel_error <= tol;
  }
  return out;
}

}  // namespace lta
