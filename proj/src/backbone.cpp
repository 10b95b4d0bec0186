// SPDX-License-Identifier: Apache-2.0
#include "lta/backbone.hpp"

#include <cmath>
#include <numeric>

#include "lta/archive.hpp"
#include "lta/error.hpp"
#include "lta/objectives.hpp"
#include "lta/optim.hpp"
#include "lta/parallel.hpp"

namespace lta {

void BackboneConfig::validate() const {
  if (vocab_size <= 0 || width <= 0 || layers <= 0 || heads <= 0 || context <= 0)
    throw ArgumentError("backbone config: dimensions must be positive");
  if (width % heads != 0) throw ArgumentError("backbone config: width must be divisible by heads");
  if (!(norm_eps > 0.0)) throw ArgumentError("backbone config: norm_eps must be positive");
}

BackboneWeights BackboneWeights::zeros_like(const BackboneWeights& src) {
  BackboneWeights w = src;
  w.visit([](const std::string&, Mat& m) { m.setZero(); });
  return w;
}

std::string BackboneBundle::digest() const {
  TensorMap t;
  weights.visit([&](const std::string& n, const Mat& m) { t.emplace(n, m); });
  return digest_tensors(t);
}

BackboneBundle init_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, 0, /*salt=*/11);
  BackboneBundle b;
  b.config = config;
  b.seed = seed;
  const double s = config.init_scale;
  b.weights.embed = normal_matrix(rng, config.vocab_size, config.width, s);
  b.weights.pos = normal_matrix(rng, config.context, config.width, s);
  for (int l = 0; l < config.layers; ++l) {
    BlockWeights blk = BlockWeights::init(rng, config.width, s);
    // Residual output projections scaled down with depth.
    blk.wo /= std::sqrt(2.0 * config.layers);
    blk.w2 /= std::sqrt(2.0 * config.layers);
    b.weights.blocks.push_back(std::move(blk));
  }
  b.weights.final_norm = Mat::Ones(1, config.width);
  return b;
}

Mat embed_ids(const BackboneBundle& bundle, std::span<const int> ids) {
  const Mat& e = bundle.weights.embed;
  Mat out(static_cast<Eigen::Index>(ids.size()), e.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= e.rows()) throw IndexError("embed_ids: id " + std::to_string(ids[i]) + " out of range");
    out.row(static_cast<Eigen::Index>(i)) = e.row(ids[i]);
  }
  return out;
}

std::vector<int> shifted_targets(const TokenizedSample& tok) {
  const int p = static_cast<int>(tok.prompt_ids.size());
  const int n = tok.total_length() - 1;
  std::vector<int> targets(static_cast<std::size_t>(std::max(n, 0)), kIgnoreTarget);
  // Position t predicts token t+1; supervise whenever t+1 lies in the target.
  for (int t = p - 1; t < n; ++t) targets[static_cast<std::size_t>(t)] = tok.target_ids[static_cast<std::size_t>(t + 1 - p)];
  return targets;
}

AugmentedRow build_augmented_input(const BackboneBundle& bundle, const TokenizedSample& tok, const Mat& latents) {
  if (latents.rows() != tok.latent_count() || latents.cols() != bundle.config.width)
    throw ShapeError("build_augmented_input: expected " + std::to_string(tok.latent_count()) + " x " +
                     std::to_string(bundle.config.width) + " latents, got " + std::to_string(latents.rows()) + " x " +
                     std::to_string(latents.cols()));
  if (!latents.allFinite()) throw ArgumentError("build_augmented_input: non-finite latent values");
  std::vector<int> ids = tok.prompt_ids;
  ids.insert(ids.end(), tok.target_ids.begin(), tok.target_ids.end());
  ids.pop_back();  // the final EOS is never an input
  AugmentedRow row;
  row.inputs = embed_ids(bundle, ids);
  for (int i = 0; i < tok.latent_count(); ++i) row.inputs.row(tok.latent_positions[static_cast<std::size_t>(i)]) = latents.row(i);
  row.targets = shifted_targets(tok);
  row.latent_positions = tok.latent_positions;
  return row;
}

ad::Var forward(ad::Tape& t, const BackboneBundle& b, ad::Var inputs, BackboneWeights* g, std::optional<ad::Var> embed) {
  const Mat& x = t.value(inputs);
  if (x.rows() > b.config.context)
    throw LengthError("forward: sequence length " + std::to_string(x.rows()) + " exceeds context " +
                      std::to_string(b.config.context));
  if (x.cols() != b.config.width) throw ShapeError("forward: input width mismatch");
  const ad::Var e = embed ? *embed : bind(t, b.weights.embed, g ? &g->embed : nullptr);
  ad::Var pos = ad::rows(t, bind(t, b.weights.pos, g ? &g->pos : nullptr), 0, static_cast<int>(x.rows()));
  ad::Var h = ad::add(t, inputs, pos);
  for (std::size_t l = 0; l < b.weights.blocks.size(); ++l)
    h = block_forward(t, h, b.weights.blocks[l], g ? &g->blocks[l] : nullptr, b.config.heads, /*causal=*/true,
                      b.config.norm_eps);
  h = ad::rms_norm(t, h, bind(t, b.weights.final_norm, g ? &g->final_norm : nullptr), b.config.norm_eps);
  return ad::matmul_nt(t, h, e);
}

Mat forward(const BackboneBundle& bundle, const Mat& inputs) {
  ad::Tape t;
  ad::Var out = forward(t, bundle, t.constant(inputs));
  return t.value(out);
}

std::vector<Mat> forward(const BackboneBundle& bundle, const std::vector<Mat>& batch) {
  std::vector<Mat> out;
  out.reserve(batch.size());
  for (const Mat& x : batch) out.push_back(forward(bundle, x));
  return out;
}

IncrementalDecoder::IncrementalDecoder(const BackboneBundle& bundle) : bundle_(bundle) {
  const auto& c = bundle.config;
  for (int l = 0; l < c.layers; ++l) {
    keys_.emplace_back(c.context, c.width);
    values_.emplace_back(c.context, c.width);
  }
}

RowVec IncrementalDecoder::step(const RowVec& input) {
  const auto& c = bundle_.config;
  const auto& w = bundle_.weights;
  if (length_ >= c.context) throw LengthError("decoder: context exhausted");
  if (input.size() != c.width) throw ShapeError("decoder: input width mismatch");
  const int t = length_;
  const int dh = c.width / c.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  RowVec x = input + w.pos.row(t);
  for (int l = 0; l < c.layers; ++l) {
    const BlockWeights& blk = w.blocks[static_cast<std::size_t>(l)];
    RowVec h = rms_norm(x, blk.attn_norm.row(0), c.norm_eps);
    RowVec q = h * blk.wq.transpose();
    keys_[static_cast<std::size_t>(l)].row(t) = h * blk.wk.transpose();
    values_[static_cast<std::size_t>(l)].row(t) = h * blk.wv.transpose();
    const Mat& K = keys_[static_cast<std::size_t>(l)];
    const Mat& V = values_[static_cast<std::size_t>(l)];
    RowVec att(c.width);
    for (int hd = 0; hd < c.heads; ++hd) {
      Vec s = K.topRows(t + 1).middleCols(hd * dh, dh) * q.segment(hd * dh, dh).transpose() * inv_sqrt;
      s = (s.array() - s.maxCoeff()).exp();
      s /= s.sum();
      att.segment(hd * dh, dh) = s.transpose() * V.topRows(t + 1).middleCols(hd * dh, dh);
    }
    x += att * blk.wo.transpose();
    h = rms_norm(x, blk.ffn_norm.row(0), c.norm_eps);
    RowVec f = (h * blk.w1.transpose()).cwiseMax(0.0);
    x += f * blk.w2.transpose();
  }
  x = rms_norm(x, w.final_norm.row(0), c.norm_eps);
  ++length_;
  return x * w.embed.transpose();
}

std::vector<int> generate(const BackboneBundle& bundle, const Mat& prompt, int max_new, double temperature,
                          std::uint64_t seed) {
  if (!(temperature >= 0.0)) throw ArgumentError("generate: temperature must be >= 0");
  if (prompt.rows() < 1) throw ArgumentError("generate: empty prompt");
  if (prompt.rows() > bundle.config.context) throw LengthError("generate: prompt exceeds context");
  std::vector<int> out;
  if (max_new <= 0) return out;
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  IncrementalDecoder dec(bundle);
  RowVec logits;
  for (Eigen::Index r = 0; r < prompt.rows(); ++r) logits = dec.step(prompt.row(r));
  while (static_cast<int>(out.size()) < max_new) {
    int next = 0;
    if (temperature == 0.0) {
      logits.maxCoeff(&next);
    } else {
      RowVec p = ((logits.array() - logits.maxCoeff()) / temperature).exp();
      p /= p.sum();
      const double u = unif(rng);
      double acc = 0.0;
      next = static_cast<int>(p.size()) - 1;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        acc += p(i);
        if (u < acc) {
          next = static_cast<int>(i);
          break;
        }
      }
    }
    if (next == Vocab::kEos) break;
    out.push_back(next);
    if (dec.length() >= bundle.config.context) break;
    logits = dec.step(bundle.weights.embed.row(next));
  }
  return out;
}

std::optional<std::string> extract_answer(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  for (std::size_t k = words.size(); k-- > 0;) {
    if (words[k] == kAnswerMarker && k + 2 < words.size() && words[k + 1] == "=")
      return canonical_number(words[k + 2]);
  }
  return std::nullopt;
}

namespace {

/// [BOS] instruction question [LATENT x k] target, as one id sequence.
TokenizedSample pretrain_tokens(const ReasoningSample& s, const Vocab& vocab, int latent_count) {
  TokenizedSample tok = tokenize(s, vocab, std::max(latent_count, 1));
  if (latent_count == 0) {
    tok.prompt_ids.pop_back();
    tok.latent_positions.clear();
  }
  return tok;
}

/// Labels over the whole sequence; placeholders are never predicted.
std::vector<int> pretrain_targets(const std::vector<int>& ids) {
  std::vector<int> targets(ids.size() - 1);
  for (std::size_t t = 0; t + 1 < ids.size(); ++t)
    targets[t] = ids[t + 1] == Vocab::kLatent ? kIgnoreTarget : ids[t + 1];
  return targets;
}

std::vector<int> full_ids(const TokenizedSample& tok) {
  std::vector<int> ids = tok.prompt_ids;
  ids.insert(ids.end(), tok.target_ids.begin(), tok.target_ids.end());
  return ids;
}

}  // namespace

double dev_loss(const BackboneBundle& bundle, const std::vector<ReasoningSample>& samples, const Vocab& vocab,
                int latent_count, int workers) {
  if (samples.empty()) throw ArgumentError("dev_loss: empty sample set");
  std::vector<double> sums(samples.size()), counts(samples.size());
  parallel_for(static_cast<int>(samples.size()), workers, [&](int i) {
    const TokenizedSample tok = pretrain_tokens(samples[static_cast<std::size_t>(i)], vocab, latent_count);
    const std::vector<int> targets = shifted_targets(tok);
    std::vector<int> ids = full_ids(tok);
    ids.pop_back();
    const Mat logits = forward(bundle, embed_ids(bundle, ids));
    const int n = static_cast<int>(std::count_if(targets.begin(), targets.end(), [](int x) { return x != kIgnoreTarget; }));
    sums[static_cast<std::size_t>(i)] = sft_loss(logits, targets) * n;
    counts[static_cast<std::size_t>(i)] = n;
  });
  return std::accumulate(sums.begin(), sums.end(), 0.0) / std::accumulate(counts.begin(), counts.end(), 0.0);
}

BackboneBundle pretrain_backbone(const std::vector<ReasoningSample>& corpus, const std::vector<ReasoningSample>& dev,
                                 const Vocab& vocab, const BackboneConfig& config, std::uint64_t seed,
                                 const PretrainOptions& opt) {
  if (corpus.empty()) throw ArgumentError("pretrain_backbone: empty corpus");
  if (opt.epochs < 1 || opt.batch_size < 1) throw ArgumentError("pretrain_backbone: epochs and batch size must be >= 1");
  BackboneConfig cfg = config;
  if (cfg.vocab_size == 0) cfg.vocab_size = vocab.size();
  if (cfg.vocab_size != vocab.size()) throw ConfigError("pretrain_backbone: vocab size mismatch");
  BackboneBundle b = init_backbone(cfg, seed);

  std::vector<Mat*> params;
  b.weights.visit([&](const std::string&, Mat& m) { params.push_back(&m); });
  Adam adam(opt.lr);
  Rng order_rng = make_rng(seed, 0, /*salt=*/13);
  std::vector<int> order(corpus.size());
  std::size_t step = 0;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0.0;
    int epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const int bs = static_cast<int>(std::min<std::size_t>(opt.batch_size, order.size() - start));
      std::vector<BackboneWeights> grads(static_cast<std::size_t>(bs));
      std::vector<double> losses(static_cast<std::size_t>(bs));
      parallel_for(bs, opt.workers, [&](int j) {
        const std::size_t idx = static_cast<std::size_t>(order[start + static_cast<std::size_t>(j)]);
        Rng r = make_rng(seed, step * 1000003ULL + idx, /*salt=*/17);
        const int k = std::uniform_int_distribution<int>(0, opt.max_latent)(r);
        std::vector<int> ids = full_ids(pretrain_tokens(corpus[idx], vocab, k));
        const std::vector<int> targets = pretrain_targets(ids);
        ids.pop_back();
        BackboneWeights& g = grads[static_cast<std::size_t>(j)];
        g = BackboneWeights::zeros_like(b.weights);
        ad::Tape t;
        ad::Var e = bind(t, b.weights.embed, &g.embed);
        ad::Var x = ad::gather_rows(t, e, ids);
        ad::Var logits = forward(t, b, x, &g, e);
        ad::Var loss = sft_loss(t, logits, targets);
        losses[static_cast<std::size_t>(j)] = t.scalar(loss);
        t.backward(loss);
      });
      BackboneWeights total = BackboneWeights::zeros_like(b.weights);
      double batch_loss = 0.0;
      std::vector<Mat*> tg;
      total.visit([&](const std::string&, Mat& m) { tg.push_back(&m); });
      for (int j = 0; j < bs; ++j) {
        batch_loss += losses[static_cast<std::size_t>(j)] / bs;
        std::size_t p = 0;
        grads[static_cast<std::size_t>(j)].visit([&](const std::string&, Mat& m) { *tg[p++] += m / bs; });
      }
      if (!std::isfinite(batch_loss)) throw TrainingError(step, "non-finite pretraining loss");
      clip_global_norm(tg, opt.clip);
      std::vector<const Mat*> cg(tg.begin(), tg.end());
      adam.step(params, cg);
      epoch_loss += batch_loss;
      ++epoch_batches;
      ++step;
    }
    if (opt.on_epoch) opt.on_epoch(epoch, epoch_loss / epoch_batches, dev.empty() ? NAN : dev_loss(b, dev, vocab, 2, opt.workers));
  }
  b.frozen = true;
  return b;
}

void save_backbone(const BackboneBundle& b, const std::filesystem::path& path) {
  Archive a;
  const auto& c = b.config;
  a.metadata["kind"] = "backbone";
  a.metadata["config"] = {{"vocab_size", c.vocab_size}, {"width", c.width},         {"layers", c.layers},
                          {"heads", c.heads},           {"context", c.context},     {"norm_eps", c.norm_eps},
                          {"init_scale", c.init_scale}};
  a.metadata["seed"] = b.seed;
  a.metadata["frozen"] = b.frozen;
  b.weights.visit([&](const std::string& n, const Mat& m) { a.tensors.emplace(n, m); });
  write_archive(path, std::move(a));
}

BackboneBundle load_backbone(const std::filesystem::path& path) {
  Archive a = read_archive(path);
  if (a.metadata.value("kind", "") != "backbone") throw ConfigError(path.string() + ": not a backbone checkpoint");
  BackboneBundle b;
  try {
    const auto& c = a.metadata.at("config");
    b.config.vocab_size = c.at("vocab_size");
    b.config.width = c.at("width");
    b.config.layers = c.at("layers");
    b.config.heads = c.at("heads");
    b.config.context = c.at("context");
    b.config.norm_eps = c.at("norm_eps");
    b.config.init_scale = c.at("init_scale");
    b.seed = a.metadata.at("seed");
    b.frozen = a.metadata.at("frozen");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(path.string() + ": bad metadata: " + e.what());
  }
  b.config.validate();
  b.weights.blocks.resize(static_cast<std::size_t>(b.config.layers));
  b.weights.visit([&](const std::string& n, Mat& m) {
    auto it = a.tensors.find(n);
    if (it == a.tensors.end()) throw CorruptionError(path.string() + ": missing tensor " + n);
    m = std::move(it->second);
  });
  return b;
}

}  // namespace lta
