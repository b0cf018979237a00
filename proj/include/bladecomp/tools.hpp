#pragma once

// Tool library: specs, argument validation/coercion and the deterministic
// implementations behind every analysis and retrieval tool.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bladecomp/analytics.hpp"
#include "bladecomp/common.hpp"
#include "bladecomp/kg_store.hpp"
#include "bladecomp/session.hpp"

namespace bladecomp::tools {

struct ParamSpec {
  std::string name;
  // int | number | string | pair_key | pair_keys | part_range | resource | strategy
  std::string type;
  bool required = false;
};

struct OutputField {
  std::string name;
  std::string unit;
  std::string metric;  // quantity-id prefix, e.g. "Trc"
};

struct ToolSpec {
  std::string name;
  std::string category;
  std::string description;
  std::vector<ParamSpec> params;
  std::vector<OutputField> outputs;
  std::vector<std::string> requires_inputs;  // artifact kinds: pairs | pathing | fits | store
  std::vector<std::string> optional_inputs;
  std::vector<std::string> produces;
  bool helper = false;  // infrastructure-only, excluded from tool-selection scoring

  const ParamSpec* param(std::string_view name) const;
  const OutputField* output(std::string_view name) const;
  json to_json() const;
  static ToolSpec from_json(const json& j);
};

// Category names and tool identifiers of the shipped library.
const std::vector<std::string>& standard_categories();
const std::vector<std::string>& standard_tool_names();

// Requested metric category ("compensation", "drift", ...) -> metric labels.
const std::map<std::string, std::vector<std::string>>& metric_categories();
// The tool that reports a requested metric category.
std::string preferred_tool_for_metric(std::string_view category);

struct Artifacts {
  std::shared_ptr<const std::vector<analytics::PairMeasurement>> pairs;
  std::shared_ptr<const analytics::PathingField> pathing;
  std::shared_ptr<const std::vector<analytics::DriftFit>> fits;
  std::shared_ptr<const std::vector<analytics::CompensationVector>> compensation;
  std::shared_ptr<const kg::RetrievalResult> retrieval;
  std::optional<analytics::PartRange> parts;
  std::set<std::string> pair_keys;

  bool has(std::string_view kind) const;
  // Fills unset members of *this from other.
  void merge_missing(const Artifacts& other);
  // Overwrites members that other sets.
  void overlay(const Artifacts& other);
};

struct ToolCall {
  int index = 1;  // 1-based
  std::string tool;
  json args = json::object();
  std::vector<int> depends_on;

  json to_json() const;
};

struct ToolOutput {
  int call_index = 1;
  std::string tool;
  json fields = json::object();
  Artifacts artifacts;

  std::string id() const { return "call-" + std::to_string(call_index); }
  std::string digest() const;
};

struct ToolEnvironment {
  const std::map<std::string, session::ResourceHandle>* resources = nullptr;
  const kg::TripleStore* store = nullptr;
  kg::RetrievalConfig retrieval;
  analytics::DeltaSelection delta;
  double theta_deg = analytics::kDefaultTiltDeg;
  double epsilon = analytics::kDefaultEpsilon;
  analytics::LevelLayout layout;
  analytics::PointLayout points;
  // Loads a store for kg_initial when none is attached.
  std::function<const kg::TripleStore*(const std::string& resource)> load_store;
};

using ToolFn = std::function<json(const json& args, const Artifacts& inputs, const ToolEnvironment& env,
                                  Artifacts& produced)>;

class ToolRegistry {
 public:
  // The shipped library with every tool bound to its implementation.
  static ToolRegistry builtin();
  // Restricts/reorders the builtin library to a manifest; unknown tool
  // names or spec mismatches throw Error(config).
  static ToolRegistry from_manifest(const json& manifest);

  void add(ToolSpec spec, ToolFn fn);
  const ToolSpec* find(std::string_view name) const;
  std::vector<std::string> names() const;
  std::set<std::string> categories() const;
  bool empty() const { return order_.empty(); }
  json manifest() const;

  // Violations (one message per failing parameter); empty = valid.
  std::vector<std::string> validate_args(const ToolSpec& spec, const json& args) const;
  // Coerces string ints, range strings and paths; drops unknown args.
  // Each change is appended to `repairs`.
  json coerce_args(const ToolSpec& spec, const json& args, std::vector<std::string>& repairs) const;

  // Tools whose outputs carry a metric label.
  std::vector<std::string> tools_for_metric(std::string_view metric) const;
  // First tool producing an artifact kind.
  std::optional<std::string> producer_of(std::string_view kind) const;
  // The tool plus, recursively, producers of its required inputs, in
  // dependency order.
  std::vector<std::string> chain_for(const std::string& tool) const;

  ToolOutput invoke(const ToolCall& call, const Artifacts& inputs, const ToolEnvironment& env) const;

 private:
  std::vector<ToolSpec> order_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::map<std::string, ToolFn, std::less<>> impls_;
};

std::optional<analytics::PartRange> parse_part_range(const json& value);

}  // namespace bladecomp::tools
