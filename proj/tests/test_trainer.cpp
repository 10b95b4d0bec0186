#include <doctest.h>

#include <fstream>
#include <string>

#include "lta/error.hpp"
#include "lta/trainer.hpp"
#include "support.hpp"

using namespace lta;

namespace {

struct Fixture {
  Vocab vocab = Vocab::standard();
  BackboneBundle bundle = testing::tiny_backbone(3, 16, 1, 0.3);
  CorpusSplits data = generate_splits(17, 32, 8, 0, 2, 3);
};

TrainConfig small_config(Variant v, std::uint64_t seed = 1) {
  TrainConfig c;
  c.variant = v;
  c.seed = seed;
  c.epochs = 1;
  c.batch_size = 8;
  c.lr = 1e-3;
  c.generator.width = 8;
  c.generator.heads = 2;
  c.generator.context = 96;
  c.generator.init_scale = 0.2;
  return c;
}

std::vector<TokenizedSample> tokenize_all(const std::vector<ReasoningSample>& s, const Vocab& v, int ln) {
  std::vector<TokenizedSample> out;
  for (const auto& x : s) out.push_back(tokenize(x, v, ln));
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("variant masking of loss weights") {
  TrainConfig c;
  c.weights = {1.0, 0.5, 0.5, 0.1};
  c.variant = Variant::kSftOnly;
  CHECK(effective_weights(c).align == 0.0);
  CHECK(effective_weights(c).focus == 0.0);
  CHECK(effective_weights(c).sft == 1.0);
  c.variant = Variant::kSftKl;
  CHECK(effective_weights(c).align == 0.5);
  CHECK(effective_weights(c).focus == 0.0);
  c.variant = Variant::kSftCon;
  CHECK(effective_weights(c).align == 0.0);
  CHECK(effective_weights(c).focus == 0.5);
  for (Variant v : {Variant::kFull, Variant::kLinearAssistant}) {
    c.variant = v;
    CHECK(effective_weights(c).align == 0.5);
    CHECK(effective_weights(c).focus == 0.5);
  }
  for (Variant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_variant("everything"), ConfigError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr = 5e-5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.allow_low_lr = true;
  CHECK_NOTHROW(c.validate());
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  // sft_con with lambda_focus = 0 and lambda_sft = 0 leaves nothing to train
  c = TrainConfig{};
  c.variant = Variant::kSftOnly;
  c.weights.sft = 0.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("sft_only totals equal the sft component exactly") {
  Fixture f;
  const TrainResult r = train(small_config(Variant::kSftOnly), f.data.train, f.data.dev, f.vocab, f.bundle);
  REQUIRE(r.report.steps.size() == 4);
  for (const auto& s : r.report.steps) {
    CHECK(s.total == s.sft);
    CHECK(std::isfinite(s.align));
    CHECK(std::isfinite(s.focus));
  }
  REQUIRE(r.report.epochs.size() == 1);
  CHECK(r.report.epochs[0].dev_total == r.report.epochs[0].dev_sft);
}

TEST_CASE("full variant total is the weighted sum of its components") {
  Fixture f;
  const TrainConfig c = small_config(Variant::kFull);
  const TrainResult r = train(c, f.data.train, f.data.dev, f.vocab, f.bundle);
  for (const auto& s : r.report.steps) {
    CHECK(s.total == doctest::Approx(s.sft + 0.5 * s.align + 0.5 * s.focus).epsilon(1e-12));
    CHECK(s.align >= 0.0);
    CHECK(s.focus >= 0.0);
    CHECK(s.latent_variance >= 0.0);
  }
  for (const auto& e : r.report.epochs) {
    CHECK(std::isfinite(e.dev_latent_variance));
    CHECK(e.dev_latent_variance >= 0.0);
  }
}

TEST_CASE("one optimizer step decreases the batch objective for most seeds") {
  Fixture f;
  const std::vector<ReasoningSample> batch(f.data.train.begin(), f.data.train.begin() + 16);
  const auto tok = tokenize_all(batch, f.vocab, 2);
  for (Variant v : {Variant::kFull, Variant::kLinearAssistant}) {
    CAPTURE(to_string(v));
    int decreased = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      TrainConfig c = small_config(v, seed);
      c.batch_size = 16;
      c.select_best = false;
      const LossWeights w = effective_weights(c);
      GeneratorConfig gc = c.generator;
      gc.latent_count = c.latent_count;
      gc.backbone_width = f.bundle.config.width;
      const LatentModel init = v == Variant::kLinearAssistant ? LatentModel(init_linear_assistant(gc, seed))
                                                              : LatentModel(init_generator(gc, seed));
      const double before = evaluate_objective(init, f.bundle, tok, w).dev_total;
      const TrainResult r = train(c, batch, {}, f.vocab, f.bundle);
      REQUIRE(r.report.steps.size() == 1);
      CHECK(r.report.steps[0].total == doctest::Approx(before).epsilon(1e-12));
      const double after = evaluate_objective(r.model, f.bundle, tok, w).dev_total;
      decreased += after < before ? 1 : 0;
    }
    CHECK(decreased >= 3);
  }
}

TEST_CASE("training is deterministic and independent of worker count") {
  Fixture f;
  TrainConfig c = small_config(Variant::kFull, 4);
  const TrainResult a = train(c, f.data.train, f.data.dev, f.vocab, f.bundle);
  const TrainResult b = train(c, f.data.train, f.data.dev, f.vocab, f.bundle);
  c.workers = 3;
  const TrainResult d = train(c, f.data.train, f.data.dev, f.vocab, f.bundle);
  REQUIRE(a.report.steps.size() == b.report.steps.size());
  for (std::size_t i = 0; i < a.report.steps.size(); ++i) {
    CHECK(a.report.steps[i].total == b.report.steps[i].total);
    CHECK(a.report.steps[i].total == d.report.steps[i].total);
  }
  CHECK(flatten(a.model) == flatten(d.model));
}

TEST_CASE("the backbone is never modified and must be frozen") {
  Fixture f;
  const std::string before = f.bundle.digest();
  for (Variant v : kAllVariants) train(small_config(v), f.data.train, f.data.dev, f.vocab, f.bundle);
  CHECK(f.bundle.digest() == before);

  BackboneBundle open = f.bundle;
  open.frozen = false;
  CHECK_THROWS_AS(train(small_config(Variant::kFull), f.data.train, f.data.dev, f.vocab, open), ContractError);
  CHECK_THROWS_AS(train(small_config(Variant::kFull), {}, f.data.dev, f.vocab, f.bundle), ArgumentError);
}

TEST_CASE("linear_assistant variant trains the affine map") {
  Fixture f;
  const TrainResult r = train(small_config(Variant::kLinearAssistant), f.data.train, f.data.dev, f.vocab, f.bundle);
  CHECK(is_linear(r.model));
  CHECK_FALSE(is_linear(train(small_config(Variant::kSftKl), f.data.train, f.data.dev, f.vocab, f.bundle).model));
}

TEST_CASE("best epoch selection keeps the lowest dev objective") {
  Fixture f;
  TrainConfig c = small_config(Variant::kFull);
  c.epochs = 3;
  c.lr = 3e-2;
  const TrainResult r = train(c, f.data.train, f.data.dev, f.vocab, f.bundle);
  REQUIRE(r.report.epochs.size() == 3);
  int best = 0;
  for (int e = 1; e < 3; ++e)
    if (r.report.epochs[e].dev_total < r.report.epochs[best].dev_total) best = e;
  CHECK(r.report.best_epoch == best);
  const auto dev_tok = tokenize_all(f.data.dev, f.vocab, 2);
  CHECK(evaluate_objective(r.model, f.bundle, dev_tok, effective_weights(c)).dev_total ==
        doctest::Approx(r.report.epochs[static_cast<std::size_t>(best)].dev_total).epsilon(1e-12));
}

TEST_CASE("sample objective gradients match finite differences") {
  Fixture f;
  const TokenizedSample tok = tokenize(f.data.train[0], f.vocab, 2);
  for (bool linear : {false, true}) {
    GeneratorConfig gc = testing::tiny_generator_config(f.bundle, 2, 0.3);
    const LatentModel m = linear ? LatentModel(init_linear_assistant(gc, 5)) : LatentModel(init_generator(gc, 5));
    const LossWeights w{1.0, 0.5, 0.5, 0.1};
    LatentModel g = zeros_like(m);
    ad::Tape t;
    const SampleObjective o = sample_objective(t, m, &g, f.bundle, tok, w);
    CHECK(t.scalar(o.loss) == doctest::Approx(total_loss(o.components, w).total).epsilon(1e-12));
    t.backward(o.loss);
    const std::vector<double> theta = flatten(m), analytic = flatten(g);
    const auto coords = sample_coordinates(static_cast<int>(theta.size()), 40, 3);
    const double err = grad_check(
        [&](std::span<const double> x) {
          LatentModel probe = m;
          unflatten(probe, x);
          ad::Tape pt;
          return pt.scalar(sample_objective(pt, probe, nullptr, f.bundle, tok, w).loss);
        },
        theta, analytic, 1e-5, coords);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("coordinate sampling and flatten round trip") {
  const auto a = sample_coordinates(100, 10, 1);
  CHECK(a == sample_coordinates(100, 10, 1));
  CHECK(a.size() == 10);
  for (int i : a) {
    CHECK(i >= 0);
    CHECK(i < 100);
  }
  CHECK(sample_coordinates(5, 10, 1).size() == 5);
  const BackboneBundle b = testing::tiny_backbone();
  LatentModel m = init_generator(testing::tiny_generator_config(b), 2);
  std::vector<double> v = flatten(m);
  for (double& x : v) x += 1.0;
  unflatten(m, v);
  CHECK(flatten(m) == v);
  v.pop_back();
  CHECK_THROWS(unflatten(m, v));
}

TEST_CASE("metrics csv files") {
  Fixture f;
  const auto dir = testing::temp_dir("trainer");
  const TrainResult r = train(small_config(Variant::kFull), f.data.train, f.data.dev, f.vocab, f.bundle);
  write_metrics_csv(r.report, dir / "m.csv");
  write_epochs_csv(r.report, dir / "e.csv");
  const std::string m = slurp(dir / "m.csv");
  CHECK(m.starts_with("step,epoch,total,sft,align,focus,latent_variance\n"));
  CHECK(std::count(m.begin(), m.end(), '\n') == 1 + static_cast<long>(r.report.steps.size()));
  const std::string e = slurp(dir / "e.csv");
  CHECK(e.starts_with("epoch,dev_total,dev_sft,dev_align,dev_focus,dev_latent_variance\n"));
  CHECK(std::count(e.begin(), e.end(), '\n') == 2);
  CHECK_THROWS_AS(write_metrics_csv(r.report, dir / "nope" / "m.csv"), IoError);
}
