// SPDX-License-Identifier: Apache-2.0
#include "lta/latent_generator.hpp"

#include "lta/archive.hpp"
#include "lta/error.hpp"

namespace lta {

void GeneratorConfig::validate() const {
  if (width <= 0 || heads <= 0 || backbone_width <= 0 || context <= 0)
    throw ArgumentError("generator config: dimensions must be positive");
  if (latent_count < 1) throw ArgumentError("generator config: latent_count must be >= 1");
  if (width % heads != 0) throw ArgumentError("generator config: width must be divisible by heads");
  if (!(init_scale >= 0.0)) throw ArgumentError("generator config: init_scale must be >= 0");
  if (!(norm_eps > 0.0)) throw ArgumentError("generator config: norm_eps must be positive");
}

GeneratorParams init_generator(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  GeneratorParams p;
  p.config = config;
  p.config.seed = seed;
  Rng rng = make_rng(seed, 0, /*salt=*/21);
  const double s = config.init_scale;
  p.in_proj = normal_matrix(rng, config.width, config.backbone_width, s);
  p.pos = normal_matrix(rng, config.context, config.width, s);
  p.queries = normal_matrix(rng, config.latent_count, config.width, s);
  p.block = BlockWeights::init(rng, config.width, s);
  p.out_proj = normal_matrix(rng, config.backbone_width, config.width, s);
  return p;
}

LinearAssistantParams init_linear_assistant(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  LinearAssistantParams p;
  p.config = config;
  p.config.seed = seed;
  Rng rng = make_rng(seed, 0, /*salt=*/23);
  const double s = config.init_scale;
  const int d = config.backbone_width;
  p.weight = normal_matrix(rng, config.latent_count * d, d, s);
  p.bias = normal_matrix(rng, 1, config.latent_count * d, s);
  p.anchor_weight = normal_matrix(rng, d, d, s);
  return p;
}

namespace {

void check_prompt(const GeneratorConfig& c, const Mat& prompt, Span question) {
  if (prompt.rows() < 1) throw ArgumentError("generate_latent: empty prompt");
  if (prompt.cols() != c.backbone_width) throw ShapeError("generate_latent: prompt width mismatch");
  if (prompt.rows() > c.context) throw LengthError("generate_latent: prompt longer than generator context");
  if (question.empty() || question.begin < 0 || question.end > prompt.rows())
    throw ArgumentError("generate_latent: question span must be a non-empty range inside the prompt");
}

template <class Params>
Params* alt(LatentModel* g) {
  return g ? std::get_if<Params>(g) : nullptr;
}

LatentVars block_latent(ad::Tape& t, const GeneratorParams& p, GeneratorParams* g, ad::Var prompt, Span q) {
  const auto& c = p.config;
  const int n = static_cast<int>(t.value(prompt).rows());
  ad::Var x = ad::matmul_nt(t, prompt, bind(t, p.in_proj, g ? &g->in_proj : nullptr));
  if (c.use_positions)
    x = ad::add(t, x, ad::rows(t, bind(t, p.pos, g ? &g->pos : nullptr), 0, n));
  const ad::Var parts[] = {x, bind(t, p.queries, g ? &g->queries : nullptr)};
  x = ad::concat_rows(t, parts);
  x = block_forward(t, x, p.block, g ? &g->block : nullptr, c.heads, /*causal=*/false, c.norm_eps);
  const ad::Var out_w = bind(t, p.out_proj, g ? &g->out_proj : nullptr);
  LatentVars out;
  out.vectors = ad::matmul_nt(t, ad::rows(t, x, n, c.latent_count), out_w);
  out.anchor = ad::matmul_nt(t, ad::mean_rows(t, ad::rows(t, x, q.begin, q.size())), out_w);
  return out;
}

LatentVars linear_latent(ad::Tape& t, const LinearAssistantParams& p, LinearAssistantParams* g, ad::Var prompt, Span q) {
  const auto& c = p.config;
  ad::Var pooled = ad::mean_rows(t, prompt);
  ad::Var flat = ad::add_row(t, ad::matmul_nt(t, pooled, bind(t, p.weight, g ? &g->weight : nullptr)),
                             bind(t, p.bias, g ? &g->bias : nullptr));
  LatentVars out;
  out.vectors = ad::reshape(t, flat, c.latent_count, c.backbone_width);
  out.anchor = ad::matmul_nt(t, ad::mean_rows(t, ad::rows(t, prompt, q.begin, q.size())),
                             bind(t, p.anchor_weight, g ? &g->anchor_weight : nullptr));
  return out;
}

}  // namespace

LatentVars generate_latent(ad::Tape& t, const LatentModel& model, LatentModel* grad, ad::Var prompt, Span question) {
  check_prompt(config_of(model), t.value(prompt), question);
  if (grad && grad->index() != model.index()) throw ArgumentError("generate_latent: gradient holder variant mismatch");
  if (const auto* p = std::get_if<GeneratorParams>(&model)) return block_latent(t, *p, alt<GeneratorParams>(grad), prompt, question);
  return linear_latent(t, std::get<LinearAssistantParams>(model), alt<LinearAssistantParams>(grad), prompt, question);
}

LatentThought generate_latent(const LatentModel& model, const Mat& prompt_embed, Span question) {
  ad::Tape t;
  LatentVars v = generate_latent(t, model, nullptr, t.constant(prompt_embed), question);
  return {t.value(v.vectors), t.value(v.anchor).row(0)};
}

LatentThought generate_latent(const GeneratorParams& params, const Mat& prompt_embed, Span question) {
  return generate_latent(LatentModel(params), prompt_embed, question);
}

LatentThought generate_latent_linear(const LinearAssistantParams& params, const Mat& prompt_embed, Span question) {
  return generate_latent(LatentModel(params), prompt_embed, question);
}

LatentModel zeros_like(const LatentModel& model) {
  LatentModel z = model;
  visit_params(z, [](const std::string&, Mat& m) { m.setZero(); });
  return z;
}

const GeneratorConfig& config_of(const LatentModel& model) {
  return std::visit([](const auto& m) -> const GeneratorConfig& { return m.config; }, model);
}

bool is_linear(const LatentModel& model) { return std::holds_alternative<LinearAssistantParams>(model); }

namespace {

nlohmann::json config_json(const GeneratorConfig& c) {
  return {{"width", c.width},
          {"heads", c.heads},
          {"latent_count", c.latent_count},
          {"backbone_width", c.backbone_width},
          {"context", c.context},
          {"init_scale", c.init_scale},
          {"use_positions", c.use_positions},
          {"norm_eps", c.norm_eps},
          {"seed", c.seed}};
}

GeneratorConfig config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.width = j.at("width");
  c.heads = j.at("heads");
  c.latent_count = j.at("latent_count");
  c.backbone_width = j.at("backbone_width");
  c.context = j.at("context");
  c.init_scale = j.at("init_scale");
  c.use_positions = j.at("use_positions");
  c.norm_eps = j.at("norm_eps");
  c.seed = j.at("seed");
  return c;
}

}  // namespace

void save_checkpoint(const LatentModel& model, const std::filesystem::path& path) {
  Archive a;
  a.metadata["kind"] = is_linear(model) ? "linear_assistant" : "generator";
  a.metadata["config"] = config_json(config_of(model));
  visit_params(model, [&](const std::string& n, const Mat& m) { a.tensors.emplace(n, m); });
  write_archive(path, std::move(a));
}

LatentModel load_checkpoint(const std::filesystem::path& path, const std::optional<GeneratorConfig>& expected) {
  Archive a = read_archive(path);
  const std::string kind = a.metadata.value("kind", "");
  if (kind != "generator" && kind != "linear_assistant") throw ConfigError(path.string() + ": not a generator checkpoint");
  GeneratorConfig c;
  try {
    c = config_from_json(a.metadata.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(path.string() + ": bad metadata: " + e.what());
  }
  if (expected) {
    GeneratorConfig want = *expected;
    want.seed = c.seed;
    if (!(want == c))
      throw ConfigError(path.string() + ": checkpoint config differs from expected (latent_count " +
                        std::to_string(c.latent_count) + " vs " + std::to_string(expected->latent_count) + ")");
  }
  LatentModel model;
  if (kind == "generator") {
    GeneratorParams p;
    p.config = c;
    model = p;
  } else {
    LinearAssistantParams p;
    p.config = c;
    model = p;
  }
  visit_params(model, [&](const std::string& n, Mat& m) {
    auto it = a.tensors.find(n);
    if (it == a.tensors.end()) throw CorruptionError(path.string() + ": missing tensor " + n);
    m = std::move(it->second);
  });
  return model;
}

}  // namespace lta
