// Shared fixtures for the unit tests.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lta/backbone.hpp"
#include "lta/corpus.hpp"
#include "lta/latent_generator.hpp"

namespace testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lta_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Small random backbone; frozen unless asked otherwise.
inline lta::BackboneBundle tiny_backbone(std::uint64_t seed = 3, int width = 16, int layers = 2, double scale = 0.2) {
  lta::BackboneConfig c;
  c.vocab_size = lta::Vocab::standard().size();
  c.width = width;
  c.layers = layers;
  c.heads = 2;
  c.context = 96;
  c.init_scale = scale;
  lta::BackboneBundle b = lta::init_backbone(c, seed);
  b.frozen = true;
  return b;
}

inline lta::GeneratorConfig tiny_generator_config(const lta::BackboneBundle& b, int ln = 2, double scale = 0.2) {
  lta::GeneratorConfig g;
  g.width = 8;
  g.heads = 2;
  g.latent_count = ln;
  g.backbone_width = b.config.width;
  g.context = b.config.context;
  g.init_scale = scale;
  return g;
}

/// Evaluates "<lhs> <op> <rhs>" where operands are integers or earlier names.
/// Independent of the corpus generator: it only reads the step text.
inline std::optional<long long> evaluate_steps(const std::vector<std::string>& steps) {
  std::vector<std::pair<std::string, long long>> env;
  auto lookup = [&](const std::string& tok) -> std::optional<long long> {
    for (const auto& [k, v] : env)
      if (k == tok) return v;
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
    return std::stoll(tok);
  };
  long long last = 0;
  for (const auto& s : steps) {
    std::istringstream in(s);
    std::string name, eq, a, op, b, extra;
    if (!(in >> name >> eq >> a) || eq != "=") return std::nullopt;
    auto va = lookup(a);
    if (!va) return std::nullopt;
    long long v = *va;
    if (in >> op) {
      if (!(in >> b) || (in >> extra)) return std::nullopt;
      auto vb = lookup(b);
      if (!vb) return std::nullopt;
      if (op == "+") v += *vb;
      else if (op == "-") v -= *vb;
      else if (op == "*") v *= *vb;
      else return std::nullopt;
    }
    env.emplace_back(name, v);
    last = v;
  }
  return last;
}

}  // namespace testing
