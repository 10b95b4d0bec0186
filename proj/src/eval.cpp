// SPDX-License-Identifier: Apache-2.0
#include "lta/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "lta/error.hpp"
#include "lta/parallel.hpp"
#include "lta/rng.hpp"
#include "lta/variance_lab.hpp"

namespace lta {

VoteHistogram tally_votes(const std::vector<std::optional<std::string>>& answers) {
  VoteHistogram h;
  for (const auto& a : answers) {
    const std::string key = a ? *a : std::string(kNoAnswer);
    auto it = std::find_if(h.begin(), h.end(), [&](const auto& e) { return e.first == key; });
    if (it == h.end())
      h.emplace_back(key, 1);
    else
      ++it->second;
  }
  return h;
}

std::optional<std::string> majority_vote(const std::vector<std::optional<std::string>>& answers) {
  std::optional<std::string> best;
  int best_count = 0;
  for (const auto& [answer, count] : tally_votes(answers)) {
    if (answer == kNoAnswer) continue;
    if (count > best_count) {
      best = answer;
      best_count = count;
    }
  }
  return best;
}

EvalReport evaluate(const BackboneBundle& bundle, const LatentModel& model, const std::vector<ReasoningSample>& testset,
                    const Vocab& vocab, const EvalOptions& opt) {
  if (opt.sc_n < 1) throw ArgumentError("evaluate: sc_n must be >= 1");
  if (opt.sc_n == 1 && opt.temperature != 0.0) throw ArgumentError("evaluate: sc_n = 1 requires temperature 0");
  if (opt.temperature < 0.0) throw ArgumentError("evaluate: temperature must be >= 0");
  const int ln = config_of(model).latent_count;

  EvalReport report;
  report.sc_n = opt.sc_n;
  report.n_samples = static_cast<int>(testset.size());
  report.records.resize(testset.size());
  parallel_for(static_cast<int>(testset.size()), opt.workers, [&](int i) {
    const ReasoningSample& s = testset[static_cast<std::size_t>(i)];
    const TokenizedSample tok = tokenize(s, vocab, ln);
    const std::span<const int> ctx(tok.prompt_ids.data(), static_cast<std::size_t>(tok.context_length()));
    const Mat ctx_embed = embed_ids(bundle, ctx);
    const LatentThought lt = generate_latent(model, ctx_embed, tok.question_span);
    Mat prompt(ctx_embed.rows() + lt.vectors.rows(), ctx_embed.cols());
    prompt << ctx_embed, lt.vectors;

    std::vector<std::optional<std::string>> answers;
    for (int r = 0; r < opt.sc_n; ++r) {
      const std::uint64_t seed = sub_seed(opt.seed, static_cast<std::uint64_t>(i) * 1024ULL + static_cast<std::uint64_t>(r), 71);
      const std::vector<int> ids = opt.sampler ? opt.sampler(prompt, i, r, seed)
                                               : generate(bundle, prompt, opt.max_new, opt.temperature, seed);
      answers.push_back(extract_answer(vocab.decode(ids)));
    }
    SampleRecord& rec = report.records[static_cast<std::size_t>(i)];
    rec.id = i;
    rec.votes = tally_votes(answers);
    rec.predicted = majority_vote(answers);
    rec.gold = canonical_number(s.answer).value_or(s.answer);
    rec.correct = rec.predicted && *rec.predicted == rec.gold;
  });
  for (const auto& r : report.records) report.correct += r.correct ? 1 : 0;
  report.accuracy = report.n_samples == 0 ? 0.0 : static_cast<double>(report.correct) / report.n_samples;
  return report;
}

void write_eval_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "id,predicted,gold,correct,votes\n";
  for (const auto& r : report.records) {
    f << r.id << ',' << r.predicted.value_or("") << ',' << r.gold << ',' << (r.correct ? 1 : 0) << ',';
    for (std::size_t k = 0; k < r.votes.size(); ++k) f << (k ? ";" : "") << r.votes[k].first << ':' << r.votes[k].second;
    f << '\n';
  }
}

namespace {

void require(const ExperimentData& d) {
  if (!d.train || !d.dev || !d.test || !d.vocab || !d.bundle) throw ArgumentError("experiment data is incomplete");
}

AblationCell run_cell(const TrainConfig& cfg, const ExperimentData& d, const EvalOptions& eo) {
  AblationCell cell;
  cell.variant = cfg.variant;
  cell.seed = cfg.seed;
  cell.latent_count = cfg.latent_count;
  try {
    TrainResult tr = train(cfg, *d.train, *d.dev, *d.vocab, *d.bundle);
    cell.accuracy = evaluate(*d.bundle, tr.model, *d.test, *d.vocab, eo).accuracy;
    cell.mean_latent_variance = tr.report.epochs.empty() ? 0.0 : tr.report.epochs[static_cast<std::size_t>(std::max(tr.report.best_epoch, 0))].dev_latent_variance;
  } catch (const std::exception& e) {
    cell.failed = true;
    cell.error = e.what();
  }
  return cell;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

bool AblationTable::any_failed() const {
  return std::any_of(cells.begin(), cells.end(), [](const AblationCell& c) { return c.failed; });
}

AblationTable ablate(const TrainConfig& base, const ExperimentData& data, const std::vector<std::uint64_t>& seeds,
                     const EvalOptions& eo, const std::vector<Variant>& variants) {
  require(data);
  if (seeds.empty()) throw ArgumentError("ablate: at least one seed is required");
  if (variants.empty()) throw ArgumentError("ablate: at least one variant is required");
  AblationTable table;
  for (Variant v : variants) {
    AblationSummary sum;
    sum.variant = v;
    std::vector<double> accs;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.variant = v;
      cfg.seed = seed;
      EvalOptions e = eo;
      e.seed = sub_seed(eo.seed, seed, 81);
      AblationCell cell = run_cell(cfg, data, e);
      if (!cell.failed) accs.push_back(cell.accuracy);
      table.cells.push_back(std::move(cell));
    }
    sum.runs = static_cast<int>(accs.size());
    if (!accs.empty()) {
      for (double a : accs) sum.mean += a / static_cast<double>(accs.size());
      for (double a : accs) sum.spread += (a - sum.mean) * (a - sum.mean) / static_cast<double>(accs.size());
      sum.spread = std::sqrt(sum.spread);
    }
    table.summary.push_back(sum);
  }
  return table;
}

std::vector<AblationCell> sweep_latent_count(const std::vector<int>& values, const TrainConfig& base,
                                             const ExperimentData& data, const EvalOptions& eo) {
  require(data);
  if (values.empty()) throw ArgumentError("sweep_latent_count: no values");
  std::set<int> seen;
  for (int v : values) {
    if (v < 1) throw ArgumentError("sweep_latent_count: latent counts must be >= 1");
    if (!seen.insert(v).second) throw ArgumentError("sweep_latent_count: duplicate latent count " + std::to_string(v));
  }
  std::vector<AblationCell> out;
  for (int v : values) {
    TrainConfig cfg = base;
    cfg.latent_count = v;
    out.push_back(run_cell(cfg, data, eo));
  }
  return out;
}

void write_ablation_csv(const AblationTable& t, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "variant,seed,latent_count,accuracy,mean_latent_variance,status,error\n";
  for (const auto& c : t.cells)
    f << to_string(c.variant) << ',' << c.seed << ',' << c.latent_count << ',' << fmt(c.accuracy) << ','
      << fmt(c.mean_latent_variance) << ',' << (c.failed ? "failed" : "ok") << ',' << csv_escape(c.error) << '\n';
  f << "\nvariant,mean_accuracy,spread,runs\n";
  for (const auto& s : t.summary) f << to_string(s.variant) << ',' << fmt(s.mean) << ',' << fmt(s.spread) << ',' << s.runs << '\n';
}

void write_sweep_csv(const std::vector<AblationCell>& cells, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "latent_count,accuracy,status\n";
  for (const auto& c : cells) f << c.latent_count << ',' << fmt(c.accuracy) << ',' << (c.failed ? "failed" : "ok") << '\n';
}

}  // namespace lta
