#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "volterra/kernels.hpp"
#include "volterra/perturb.hpp"
#include "volterra/resolvents.hpp"
#include "volterra/sim.hpp"

namespace volterra::cli {

using json = nlohmann::ordered_json;

// a schema violation, located by a JSON pointer into the config
struct ConfigError : std::runtime_error {
  std::string pointer;
  ConfigError(std::string ptr, const std::string& msg) : std::runtime_error(msg), pointer(std::move(ptr)) {}
};

// typed access to a config object that remembers where it sits in the document
class Node {
 public:
  Node(json& j, std::string ptr) : j_(&j), ptr_(std::move(ptr)) {}

  const std::string& pointer() const { return ptr_; }
  json& raw() const { return *j_; }
  bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }
  Node at(const std::string& key) const;
  Node at(std::size_t i) const;
  // missing keys are filled in with the default so the resolved config is complete
  Node object(const std::string& key) const;
  double number(const std::string& key) const;
  double number(const std::string& key, double def) const;
  std::optional<double> optional_number(const std::string& key) const;
  std::uint64_t integer(const std::string& key) const;
  std::uint64_t integer(const std::string& key, std::uint64_t def) const;
  bool boolean(const std::string& key, bool def) const;
  std::string string(const std::string& key) const;
  std::string string(const std::string& key, const std::string& def) const;
  std::vector<double> numbers(const std::string& key) const;
  std::vector<double> numbers(const std::string& key, const std::vector<double>& def) const;
  std::size_t size() const;
  [[noreturn]] void error(const std::string& key, const std::string& msg) const;

 private:
  json* j_;
  std::string ptr_;
};

kernels::KernelSpec parse_kernel(const Node& n);
json kernel_to_json(const kernels::KernelSpec& k);
resolvents::TimeGrid parse_grid(const Node& n);
sim::ModelSpec parse_model(const Node& n);
perturb::PerturbationSpec parse_perturbation(const Node& n);

// configs for the canonical examples
json preset_config(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace volterra::cli
