#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

/// A named network: an ordered parameter registry plus a forward closure
/// capturing those parameters. Registration order is part of the checkpoint
/// contract, so builders must register deterministically. A parameter is
/// trainable iff its tensor requires gradients.
class Model {
 public:
  Model() = default;
  Model(std::string family, std::map<std::string, std::string> config)
      : family_(std::move(family)), config_(std::move(config)) {}

  const std::string& family() const { return family_; }
  const std::map<std::string, std::string>& config() const { return config_; }

  void register_param(const std::string& name, Tensor t, bool trainable = true) {
    for (const auto& [existing, unused] : params_)
      if (existing == name) throw ConfigError("duplicate parameter name: " + name);
    t.set_requires_grad(trainable);
    params_.emplace_back(name, std::move(t));
  }

  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }

  Tensor param(const std::string& name) const {
    for (const auto& [n, t] : params_)
      if (n == name) return t;
    throw ConfigError("unknown parameter: " + name);
  }

  bool has_param(const std::string& name) const {
    for (const auto& [n, t] : params_)
      if (n == name) return true;
    return false;
  }

  int64_t param_count() const {
    int64_t total = 0;
    for (const auto& [n, t] : params_) total += t.numel();
    return total;
  }

  /// Marks every parameter whose full name matches the anchored regex as
  /// trainable or frozen. Throws if the pattern matches nothing, which
  /// catches typos in freeze rules before they silently train everything.
  int set_trainable(const std::string& pattern, bool trainable) {
    std::regex re;
    try {
      re = std::regex(pattern);
    } catch (const std::regex_error& e) {
      throw ConfigError("bad parameter pattern '" + pattern + "': " + e.what());
    }
    int hits = 0;
    for (auto& [name, t] : params_) {
      if (std::regex_match(name, re)) {
        t.set_requires_grad(trainable);
        ++hits;
      }
    }
    if (hits == 0)
      throw ConfigError("parameter pattern '" + pattern + "' matches nothing");
    return hits;
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [n, t] : params_)
      if (t.requires_grad()) out.push_back(n);
    return out;
  }

  std::function<Tensor(const Tensor&)> forward;

 private:
  std::string family_;
  std::map<std::string, std::string> config_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

}  // namespace crackseg
