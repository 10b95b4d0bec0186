// SPDX-License-Identifier: Apache-2.0
//
// lta: command-line front end for data generation, backbone pretraining,
// generator training, evaluation, ablations and the numerical labs.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lta/config.hpp"
#include "lta/corpus.hpp"
#include "lta/error.hpp"
#include "lta/eval.hpp"
#include "lta/gradcheck.hpp"
#include "lta/trainer.hpp"
#include "lta/variance_lab.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Exit codes: 1 runtime failure, 2 usage or config error, 3 missing or unreadable file.
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct Flag {
  const char* name;
  const char* key;
  const char* help;
};

constexpr Flag kFlags[] = {
    {"--seed", "seed", "master random seed"},
    {"--out", "out", "output root (default: $LTA_OUT or lta_out)"},
    {"--n-samples", "n_train", "number of training samples"},
    {"--ln", "ln", "latent thought count"},
    {"--sc-n", "sc_n", "self-consistency sample count"},
    {"--variant", "variant", "full, sft_only, sft_kl, sft_con or linear_assistant"},
    {"--epochs", "epochs", "generator training epochs"},
    {"--lr", "lr", "generator learning rate"},
    {"--batch", "batch", "generator batch size"},
    {"--lambda-sft", "lambda_sft", "weight of the SFT loss"},
    {"--lambda-align", "lambda_align", "weight of the alignment loss"},
    {"--lambda-focus", "lambda_focus", "weight of the focus loss"},
    {"--tau", "tau", "InfoNCE temperature"},
    {"--workers", "workers", "worker threads"},
};

struct Options {
  std::string config_file;
  std::vector<std::string> values = std::vector<std::string>(std::size(kFlags));
  std::vector<CLI::Option*> opts;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_file, "flat key = value config file")->check(CLI::ExistingFile);
  for (std::size_t i = 0; i < std::size(kFlags); ++i)
    o.opts.push_back(cmd->add_option(kFlags[i].name, o.values[i], kFlags[i].help));
  cmd->add_option("--set", o.sets, "override any config key (key=value), repeatable");
}

lta::RunConfig resolve(const Options& o) {
  lta::RunConfig c;
  if (const char* env = std::getenv("LTA_OUT"); env && *env) c.out = env;
  if (!o.config_file.empty()) c.load_file(o.config_file);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw lta::ConfigError("--set expects key=value, got '" + s + "'");
    c.set(s.substr(0, eq), s.substr(eq + 1));
  }
  for (std::size_t i = 0; i < std::size(kFlags); ++i)
    if (o.opts[i]->count() > 0) c.set(kFlags[i].key, o.values[i]);
  c.validate();
  return c;
}

fs::path require_file(const fs::path& p) {
  if (!fs::exists(p)) throw lta::IoError("missing file: " + p.string());
  return p;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw lta::IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json header(const std::string& command, const lta::RunConfig& c) {
  json j;
  j["command"] = command;
  j["config"] = c.to_json();
  return j;
}

/// Writes the JSON report and the effective config as a reusable config file.
void emit(const lta::RunConfig& c, const std::string& name, const json& j) {
  write_json(c.reports_dir() / (name + ".json"), j);
  std::ofstream f(c.reports_dir() / (name + ".config"), std::ios::binary);
  f << c.to_text();
}

std::string tag(const lta::RunConfig& c) {
  return c.variant + "_ln" + std::to_string(c.ln) + "_s" + std::to_string(c.seed);
}

struct Data {
  std::vector<lta::ReasoningSample> train, dev, test;
  lta::Vocab vocab;
};

Data load_data(const lta::RunConfig& c) {
  Data d;
  d.vocab = lta::Vocab::load(require_file(c.data_dir() / "vocab.txt"));
  d.train = lta::load_jsonl(require_file(c.data_dir() / "train.jsonl"));
  d.dev = lta::load_jsonl(require_file(c.data_dir() / "dev.jsonl"));
  d.test = lta::load_jsonl(require_file(c.data_dir() / "test.jsonl"));
  return d;
}

lta::BackboneBundle load_frozen_backbone(const lta::RunConfig& c) {
  lta::BackboneBundle b = lta::load_backbone(require_file(c.backbone_path()));
  return b;
}

int cmd_gen_data(const lta::RunConfig& c) {
  const lta::CorpusSplits s = lta::generate_splits(c.seed, c.n_train, c.n_dev, c.n_test, c.steps_min, c.steps_max, c.workers);
  fs::create_directories(c.data_dir());
  lta::save_jsonl(s.train, c.data_dir() / "train.jsonl");
  lta::save_jsonl(s.dev, c.data_dir() / "dev.jsonl");
  lta::save_jsonl(s.test, c.data_dir() / "test.jsonl");
  lta::Vocab::standard().save(c.data_dir() / "vocab.txt");
  json j = header("gen-data", c);
  j["counts"] = {{"train", s.train.size()}, {"dev", s.dev.size()}, {"test", s.test.size()}};
  emit(c, "gen_data", j);
  std::printf("gen-data: %zu train, %zu dev, %zu test -> %s\n", s.train.size(), s.dev.size(), s.test.size(),
              c.data_dir().string().c_str());
  return 0;
}

int cmd_pretrain(const lta::RunConfig& c) {
  const Data d = load_data(c);
  lta::PretrainOptions po = c.pretrain_options();
  json epochs = json::array();
  po.on_epoch = [&](int e, double train_loss, double dev) {
    epochs.push_back({{"epoch", e}, {"train_loss", train_loss}, {"dev_loss", dev}});
    std::printf("pretrain epoch %d: train %.6f dev %.6f\n", e, train_loss, dev);
    std::fflush(stdout);
  };
  const lta::BackboneBundle b = lta::pretrain_backbone(d.train, d.dev, d.vocab, c.backbone_config(d.vocab.size()), c.seed, po);
  lta::save_backbone(b, c.backbone_path());
  json j = header("pretrain", c);
  j["epochs"] = epochs;
  j["digest"] = b.digest();
  j["checkpoint"] = c.backbone_path().string();
  emit(c, "pretrain", j);
  return 0;
}

json epoch_json(const lta::EpochRecord& e) {
  return {{"epoch", e.epoch},         {"dev_total", e.dev_total}, {"dev_sft", e.dev_sft},
          {"dev_align", e.dev_align}, {"dev_focus", e.dev_focus}, {"dev_latent_variance", e.dev_latent_variance}};
}

int cmd_train(const lta::RunConfig& c) {
  const Data d = load_data(c);
  const lta::BackboneBundle b = load_frozen_backbone(c);
  const std::string before = b.digest();
  const lta::TrainResult r = lta::train(c.train_config(), d.train, d.dev, d.vocab, b, [](const lta::EpochRecord& e) {
    std::printf("train epoch %d: dev total %.6f (sft %.6f align %.6f focus %.6f)\n", e.epoch, e.dev_total, e.dev_sft,
                e.dev_align, e.dev_focus);
    std::fflush(stdout);
  });
  const std::string after = b.digest();
  if (before != after) throw lta::ContractError("backbone digest changed during training");
  lta::save_checkpoint(r.model, c.generator_path());
  fs::create_directories(c.reports_dir());
  lta::write_metrics_csv(r.report, c.reports_dir() / ("train_" + tag(c) + "_metrics.csv"));
  lta::write_epochs_csv(r.report, c.reports_dir() / ("train_" + tag(c) + "_epochs.csv"));
  json j = header("train", c);
  j["backbone_digest"] = before;
  j["best_epoch"] = r.report.best_epoch;
  json epochs = json::array();
  for (const auto& e : r.report.epochs) epochs.push_back(epoch_json(e));
  j["epochs"] = epochs;
  j["checkpoint"] = c.generator_path().string();
  emit(c, "train_" + tag(c), j);
  return 0;
}

json eval_json(const lta::EvalReport& r) {
  return {{"accuracy", r.accuracy}, {"correct", r.correct}, {"n_samples", r.n_samples}, {"sc_n", r.sc_n}};
}

int cmd_eval(const lta::RunConfig& c) {
  const lta::BackboneBundle b = load_frozen_backbone(c);
  const lta::LatentModel model = lta::load_checkpoint(require_file(c.generator_path()));
  const Data d = load_data(c);
  const lta::EvalOptions eo = c.eval_options();
  const lta::EvalReport r = lta::evaluate(b, model, d.test, d.vocab, eo);
  const std::string name = "eval_" + tag(c) + "_sc" + std::to_string(c.sc_n);
  fs::create_directories(c.reports_dir());
  lta::write_eval_csv(r, c.reports_dir() / (name + ".csv"));
  json j = header("eval", c);
  j["temperature"] = eo.temperature;
  j["result"] = eval_json(r);
  emit(c, name, j);
  std::printf("eval: accuracy %.4f (%d/%d), sc_n=%d\n", r.accuracy, r.correct, r.n_samples, r.sc_n);
  return 0;
}

lta::ExperimentData experiment(const Data& d, const lta::BackboneBundle& b) {
  return {&d.train, &d.dev, &d.test, &d.vocab, &b};
}

json cell_json(const lta::AblationCell& cell) {
  json j = {{"variant", lta::to_string(cell.variant)},
            {"seed", cell.seed},
            {"latent_count", cell.latent_count},
            {"accuracy", cell.accuracy},
            {"mean_latent_variance", cell.mean_latent_variance},
            {"status", cell.failed ? "failed" : "ok"}};
  if (cell.failed) j["error"] = cell.error;
  return j;
}

int cmd_ablate(const lta::RunConfig& c) {
  const Data d = load_data(c);
  const lta::BackboneBundle b = load_frozen_backbone(c);
  const lta::AblationTable t = lta::ablate(c.train_config(), experiment(d, b), c.seeds, c.eval_options());
  fs::create_directories(c.reports_dir());
  lta::write_ablation_csv(t, c.reports_dir() / "ablation.csv");
  json j = header("ablate", c);
  j["seeds"] = c.seeds;
  json cells = json::array(), summary = json::array();
  for (const auto& cell : t.cells) cells.push_back(cell_json(cell));
  for (const auto& s : t.summary) {
    summary.push_back({{"variant", lta::to_string(s.variant)}, {"mean", s.mean}, {"spread", s.spread}, {"runs", s.runs}});
    std::printf("ablate %-16s mean %.4f spread %.4f runs %d\n", lta::to_string(s.variant).c_str(), s.mean, s.spread, s.runs);
  }
  j["cells"] = cells;
  j["summary"] = summary;
  emit(c, "ablation", j);
  return t.any_failed() ? kExitFailure : 0;
}

int cmd_sweep_ln(const lta::RunConfig& c) {
  const Data d = load_data(c);
  const lta::BackboneBundle b = load_frozen_backbone(c);
  const auto cells = lta::sweep_latent_count(c.sweep_ln, c.train_config(), experiment(d, b), c.eval_options());
  fs::create_directories(c.reports_dir());
  lta::write_sweep_csv(cells, c.reports_dir() / "sweep_ln.csv");
  json j = header("sweep-ln", c);
  json rows = json::array();
  bool failed = false;
  for (const auto& cell : cells) {
    rows.push_back(cell_json(cell));
    failed = failed || cell.failed;
    std::printf("sweep-ln L-N=%d accuracy %.4f%s\n", cell.latent_count, cell.accuracy, cell.failed ? " (failed)" : "");
  }
  j["curve"] = rows;
  j["reference_optimum_ln"] = 2;
  emit(c, "sweep_ln", j);
  return failed ? kExitFailure : 0;
}

int cmd_varlab(const lta::RunConfig& c) {
  const lta::GaussianSpec p = lta::GaussianSpec::scalar(c.varlab_mean, c.varlab_variance);
  const lta::LemmaReport r = lta::verify_lemma2(p, c.var_q1, c.var_q2, c.trials, c.varlab_n, c.seed, c.workers);
  fs::create_directories(c.reports_dir());
  {
    std::ofstream f(c.reports_dir() / "varlab.csv", std::ios::binary);
    if (!f) throw lta::IoError("cannot write " + (c.reports_dir() / "varlab.csv").string());
    f << "trial,kl_q1,kl_q2,holds\n";
    char buf[128];
    for (const auto& t : r.trials) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%d\n", t.trial, t.kl_q1, t.kl_q2, t.holds ? 1 : 0);
      f << buf;
    }
  }
  json j = header("varlab", c);
  j["holds_fraction"] = r.holds_fraction;
  j["mean_kl_q1"] = r.mean_kl_q1;
  j["mean_kl_q2"] = r.mean_kl_q2;
  j["closed_form_kl_q1"] = lta::kl_gaussian(p, lta::GaussianSpec::scalar(c.varlab_mean, c.var_q1));
  j["closed_form_kl_q2"] = lta::kl_gaussian(p, lta::GaussianSpec::scalar(c.varlab_mean, c.var_q2));
  emit(c, "varlab", j);
  std::printf("varlab: holds_fraction %.4f, mean KL(P||Q1) %.6f, mean KL(P||Q2) %.6f\n", r.holds_fraction, r.mean_kl_q1,
              r.mean_kl_q2);
  return 0;
}

int cmd_gradcheck(const lta::RunConfig& c) {
  const auto results = lta::run_gradchecks(c.seed, c.gradcheck_instances, c.gradcheck_h, c.gradcheck_tol);
  json j = header("gradcheck", c);
  json rows = json::array();
  bool ok = true;
  for (const auto& r : results) {
    rows.push_back({{"loss", r.name}, {"instances", r.instances}, {"max_rel_error", r.max_rel_error}, {"pass", r.pass}});
    std::printf("gradcheck %-15s %s max_rel_error %.3e\n", r.name.c_str(), r.pass ? "PASS" : "FAIL", r.max_rel_error);
    ok = ok && r.pass;
  }
  j["checks"] = rows;
  emit(c, "gradcheck", j);
  return ok ? 0 : kExitFailure;
}

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::fprintf(stderr, "lta: error: %s: %s\n", kind, one_line(msg).c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent thought augmentation toolkit"};
  app.require_subcommand(1);
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const lta::RunConfig&);
  };
  const Command commands[] = {
      {"gen-data", "generate the synthetic corpus splits", cmd_gen_data},
      {"pretrain", "pretrain and freeze the backbone", cmd_pretrain},
      {"train", "train a latent generator", cmd_train},
      {"eval", "evaluate a trained generator", cmd_eval},
      {"ablate", "train and evaluate every variant per seed", cmd_ablate},
      {"sweep-ln", "train and evaluate per latent count", cmd_sweep_ln},
      {"varlab", "numerical check of the variance/KL ordering", cmd_varlab},
      {"gradcheck", "finite-difference gradient checks", cmd_gradcheck},
  };
  std::vector<Options> options(std::size(commands));
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    subs.push_back(app.add_subcommand(commands[i].name, commands[i].help));
    add_common(subs.back(), options[i]);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kExitUsage);
  }
  try {
    for (std::size_t i = 0; i < subs.size(); ++i)
      if (subs[i]->parsed()) return commands[i].run(resolve(options[i]));
    return fail("usage", "no command", kExitUsage);
  } catch (const lta::ConfigError& e) {
    return fail("config", e.what(), kExitUsage);
  } catch (const lta::ParseError& e) {
    return fail("parse", e.what(), kExitUsage);
  } catch (const lta::IoError& e) {
    return fail("io", e.what(), kExitIo);
  } catch (const lta::CorruptionError& e) {
    return fail("corrupt", e.what(), kExitIo);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), kExitFailure);
  }
}
