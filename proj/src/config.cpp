// SPDX-License-Identifier: Apache-2.0
#include "lta/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "lta/error.hpp"

namespace lta {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) throw ConfigError("config: bad value for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad value for " + key + ": '" + v + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  std::function<nlohmann::ordered_json(const RunConfig&)> json;
};

template <typename T>
Field num(std::string key, T RunConfig::*m) {
  Field f;
  f.key = key;
  f.set = [key, m](RunConfig& c, const std::string& v) { c.*m = parse_number<T>(key, v); };
  if constexpr (std::is_floating_point_v<T>)
    f.get = [m](const RunConfig& c) { return fmt_double(c.*m); };
  else
    f.get = [m](const RunConfig& c) { return std::to_string(c.*m); };
  f.json = [m](const RunConfig& c) { return nlohmann::ordered_json(c.*m); };
  return f;
}

Field str(std::string key, std::string RunConfig::*m) {
  return {key, [m](RunConfig& c, const std::string& v) { c.*m = v; }, [m](const RunConfig& c) { return c.*m; },
          [m](const RunConfig& c) { return nlohmann::ordered_json(c.*m); }};
}

Field flag(std::string key, bool RunConfig::*m) {
  return {key, [key, m](RunConfig& c, const std::string& v) { c.*m = parse_bool(key, v); },
          [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); },
          [m](const RunConfig& c) { return nlohmann::ordered_json(c.*m); }};
}

template <typename T>
Field list(std::string key, std::vector<T> RunConfig::*m) {
  return {key, [key, m](RunConfig& c, const std::string& v) { c.*m = parse_list<T>(key, v); },
          [m](const RunConfig& c) { return fmt_list(c.*m); }, [m](const RunConfig& c) { return nlohmann::ordered_json(c.*m); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      num("seed", &RunConfig::seed),
      str("out", &RunConfig::out),
      num("workers", &RunConfig::workers),
      num("n_train", &RunConfig::n_train),
      num("n_dev", &RunConfig::n_dev),
      num("n_test", &RunConfig::n_test),
      num("steps_min", &RunConfig::steps_min),
      num("steps_max", &RunConfig::steps_max),
      num("pretrain_epochs", &RunConfig::pretrain_epochs),
      num("pretrain_lr", &RunConfig::pretrain_lr),
      num("pretrain_batch", &RunConfig::pretrain_batch),
      num("backbone_width", &RunConfig::backbone_width),
      num("backbone_layers", &RunConfig::backbone_layers),
      num("backbone_heads", &RunConfig::backbone_heads),
      str("variant", &RunConfig::variant),
      num("ln", &RunConfig::ln),
      num("epochs", &RunConfig::epochs),
      num("lr", &RunConfig::lr),
      flag("allow_low_lr", &RunConfig::allow_low_lr),
      num("batch", &RunConfig::batch),
      num("lambda_sft", &RunConfig::lambda_sft),
      num("lambda_align", &RunConfig::lambda_align),
      num("lambda_focus", &RunConfig::lambda_focus),
      num("tau", &RunConfig::tau),
      num("generator_width", &RunConfig::generator_width),
      num("generator_heads", &RunConfig::generator_heads),
      num("sc_n", &RunConfig::sc_n),
      num("temperature", &RunConfig::temperature),
      num("max_new", &RunConfig::max_new),
      list("seeds", &RunConfig::seeds),
      list("sweep_ln", &RunConfig::sweep_ln),
      num("varlab_mean", &RunConfig::varlab_mean),
      num("varlab_variance", &RunConfig::varlab_variance),
      num("var_q1", &RunConfig::var_q1),
      num("var_q2", &RunConfig::var_q2),
      num("trials", &RunConfig::trials),
      num("varlab_n", &RunConfig::varlab_n),
      num("gradcheck_instances", &RunConfig::gradcheck_instances),
      num("gradcheck_h", &RunConfig::gradcheck_h),
      num("gradcheck_tol", &RunConfig::gradcheck_tol),
  };
  return f;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, trim(value)); }

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::set<std::string> seen;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(n, "expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError("config: duplicate key '" + key + "' at line " + std::to_string(n));
    set(key, line.substr(eq + 1));
  }
}

void RunConfig::validate() const {
  if (workers < 1) throw ConfigError("config: workers must be >= 1");
  if (n_train < 1 || n_dev < 0 || n_test < 0) throw ConfigError("config: sample counts out of range");
  if (steps_min < 1 || steps_max < steps_min) throw ConfigError("config: need 1 <= steps_min <= steps_max");
  if (sc_n < 1) throw ConfigError("config: sc_n must be >= 1");
  if (sc_n == 1 && temperature > 0.0) throw ConfigError("config: sc_n = 1 requires temperature 0 (greedy)");
  if (sc_n > 1 && temperature == 0.0) throw ConfigError("config: sc_n > 1 requires a positive temperature");
  if (max_new < 1) throw ConfigError("config: max_new must be >= 1");
  if (pretrain_epochs < 1 || pretrain_batch < 1 || !(pretrain_lr > 0.0)) throw ConfigError("config: bad pretraining settings");
  if (trials < 1 || varlab_n < 2) throw ConfigError("config: varlab needs trials >= 1 and varlab_n >= 2");
  if (gradcheck_instances < 1 || !(gradcheck_h > 0.0) || !(gradcheck_tol > 0.0))
    throw ConfigError("config: bad gradient-check settings");
  parse_variant(variant);
  train_config().validate();
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& f : fields()) j[f.key] = f.json(*this);
  return j;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& f : fields()) s += f.key + " = " + f.get(*this) + "\n";
  return s;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lr = lr;
  t.allow_low_lr = allow_low_lr;
  t.batch_size = batch;
  t.epochs = epochs;
  t.seed = seed;
  t.weights = {lambda_sft, lambda_align, lambda_focus, tau};
  t.latent_count = ln;
  t.variant = parse_variant(variant);
  t.workers = workers;
  t.generator.width = generator_width;
  t.generator.heads = generator_heads;
  t.generator.latent_count = ln;
  t.generator.seed = seed;
  return t;
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions e;
  e.sc_n = sc_n;
  e.temperature = temperature >= 0.0 ? temperature : (sc_n > 1 ? kSelfConsistencyTemperature : 0.0);
  e.seed = seed;
  e.max_new = max_new;
  e.workers = workers;
  return e;
}

BackboneConfig RunConfig::backbone_config(int vocab_size) const {
  BackboneConfig b;
  b.vocab_size = vocab_size;
  b.width = backbone_width;
  b.layers = backbone_layers;
  b.heads = backbone_heads;
  return b;
}

PretrainOptions RunConfig::pretrain_options() const {
  PretrainOptions p;
  p.epochs = pretrain_epochs;
  p.batch_size = pretrain_batch;
  p.lr = pretrain_lr;
  p.workers = workers;
  return p;
}

std::filesystem::path RunConfig::generator_path() const {
  return ckpt_dir() / ("generator_" + variant + "_ln" + std::to_string(ln) + "_s" + std::to_string(seed) + ".lta");
}

}  // namespace lta
