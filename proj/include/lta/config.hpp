// SPDX-License-Identifier: Apache-2.0
//
// Flat key = value run configuration shared by every command. Precedence:
// built-in defaults, then the --config file, then command-line flags.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lta/backbone.hpp"
#include "lta/eval.hpp"
#include "lta/trainer.hpp"

namespace lta {

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "lta_out";
  int workers = 1;

  // corpus
  int n_train = 2000;
  int n_dev = 200;
  int n_test = 200;
  int steps_min = 2;
  int steps_max = 4;

  // backbone pretraining
  int pretrain_epochs = 6;
  double pretrain_lr = 3e-3;
  int pretrain_batch = 16;
  int backbone_width = 64;
  int backbone_layers = 4;
  int backbone_heads = 4;

  // generator training
  std::string variant = "full";
  int ln = 2;
  int epochs = 3;
  double lr = 1e-3;
  bool allow_low_lr = false;
  int batch = 16;
  double lambda_sft = 1.0;
  double lambda_align = 0.5;
  double lambda_focus = 0.5;
  double tau = 0.1;
  int generator_width = 64;
  int generator_heads = 4;

  // evaluation
  int sc_n = 1;
  /// Negative selects the default: 0 for sc_n = 1, 0.7 otherwise.
  double temperature = -1.0;
  int max_new = 64;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<int> sweep_ln = {1, 2, 4, 8};

  // variance lab
  double varlab_mean = 0.0;
  double varlab_variance = 1.0;
  double var_q1 = 0.1;
  double var_q2 = 0.5;
  int trials = 1000;
  int varlab_n = 10000;

  // gradient check
  int gradcheck_instances = 10;
  double gradcheck_h = 1e-5;
  double gradcheck_tol = 1e-4;

  /// Sets one key from its textual value; ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Reads "key = value" lines; '#' starts a comment. ConfigError on duplicates.
  void load_file(const std::filesystem::path& path);
  void validate() const;

  nlohmann::ordered_json to_json() const;
  /// Round-trips through set(); the output is a valid config file.
  std::string to_text() const;

  TrainConfig train_config() const;
  EvalOptions eval_options() const;
  BackboneConfig backbone_config(int vocab_size) const;
  PretrainOptions pretrain_options() const;

  std::filesystem::path data_dir() const { return std::filesystem::path(out) / "data"; }
  std::filesystem::path ckpt_dir() const { return std::filesystem::path(out) / "ckpt"; }
  std::filesystem::path reports_dir() const { return std::filesystem::path(out) / "reports"; }
  std::filesystem::path backbone_path() const { return ckpt_dir() / "backbone.lta"; }
  std::filesystem::path generator_path() const;
};

/// All accepted config keys, in to_text() order.
const std::vector<std::string>& config_keys();

}  // namespace lta
