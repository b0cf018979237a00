#pragma once

// Central routing: entity extraction from the raw query, schema-checked
// routing decisions from the backend, and a deterministic keyword fallback.

#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "bladecomp/analytics.hpp"
#include "bladecomp/common.hpp"
#include "bladecomp/llm_gateway.hpp"
#include "bladecomp/session.hpp"

namespace bladecomp::router {

struct PreprocessedQuery {
  std::string raw_text;
  std::optional<analytics::PartRange> part_range;
  std::vector<std::string> file_paths;
  bool reset_flag = false;
  std::optional<std::vector<std::string>> pair_keys;
  // Metric categories named in the query ("compensation", "average", ...).
  std::vector<std::string> requested_metrics;

  json to_json() const;
};

// Throws Error(invalid_argument) for an empty query.
PreprocessedQuery preprocess(std::string_view query, const session::SessionState& state);

enum class AgentId { analysis, kg };
enum class Origin { model, fallback };

std::string_view to_string(AgentId a);
std::string_view to_string(Origin o);

struct RoutingDecision {
  AgentId agent = AgentId::analysis;
  std::string instruction;
  std::vector<std::string> input_refs;
  std::vector<std::string> tool_categories;
  Origin origin = Origin::fallback;

  // The four-field object exchanged with the backend.
  json to_wire() const;
  json to_json() const;
  bool operator==(const RoutingDecision&) const = default;
};

struct SchemaViolation {
  std::vector<std::string> fields;    // every failing field name
  std::vector<std::string> messages;
};

using Validation = std::variant<RoutingDecision, SchemaViolation>;

// Accepts iff agent, instruction, input_refs and tool_categories are all
// present with the right kinds and enum membership.
Validation validate_routing(const json& raw, const std::set<std::string>& categories);

// Keyword table plus resource tie-break. nullopt when nothing matches and no
// resource is loaded.
std::optional<RoutingDecision> fallback_route(const PreprocessedQuery& query, const session::SessionState& state,
                                              const std::set<std::string>& categories);

std::string routing_prompt(const PreprocessedQuery& query, const session::SessionState& state,
                           const std::set<std::string>& categories);

// Extracts the first {...} object from a model reply (tolerates code fences
// and surrounding prose). Throws Error(parse).
json extract_json_object(std::string_view text);

struct RouteResult {
  std::optional<RoutingDecision> decision;
  bool escalation_needed = false;
  std::string diagnostic;
  session::SessionState state;
};

RouteResult route(const PreprocessedQuery& query, session::SessionState state, llm::Backend* backend,
                  session::PayloadStore& payloads, const std::set<std::string>& categories, std::int64_t ts);

// Category served by each requested metric.
std::string category_for_metric(std::string_view metric);

}  // namespace bladecomp::router
