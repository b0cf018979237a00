#pragma once

// Analysis agent: turns a routed instruction into a validated tool-call
// sequence and executes it into a provenance-complete result.

#include <optional>
#include <string>
#include <vector>

#include "bladecomp/llm_gateway.hpp"
#include "bladecomp/router.hpp"
#include "bladecomp/session.hpp"
#include "bladecomp/tools.hpp"

namespace bladecomp::analysis {

inline constexpr std::size_t kMaxCalls = 16;

struct PlanRequest {
  std::string query;        // raw user text
  std::string instruction;  // routed or refined instruction
  std::vector<std::string> input_refs;
  std::vector<std::string> tool_categories;
  std::optional<analytics::PartRange> part_range;
  std::optional<std::vector<std::string>> pair_keys;
  std::vector<std::string> requested_metrics;

  static PlanRequest from(const router::PreprocessedQuery& q, const router::RoutingDecision& d);
};

// Typed artifacts carried across turns plus a digest of how they were made.
struct ArtifactCache {
  tools::Artifacts artifacts;
  std::string digest;  // empty when nothing is cached
};

struct PlanResult {
  std::vector<tools::ToolCall> calls;
  std::vector<std::string> repairs;
  std::string origin = "fallback";  // model | fallback
  std::optional<std::string> diagnostic;
};

std::string planner_prompt(const PlanRequest& req, const tools::ToolRegistry& registry);

// Deterministic keyword planner: requested metrics, tool names mentioned in
// the instruction and "tool:" hints, each expanded to its prerequisite chain.
std::vector<tools::ToolCall> keyword_plan(const PlanRequest& req, const tools::ToolRegistry& registry,
                                          const tools::Artifacts& cached);

// Applies the repair rules to a proposed plan: unknown tools dropped,
// arguments coerced or dropped, dependencies restricted to earlier calls and
// linked to the latest earlier producer of each required input, the query's
// part range and pair keys filled in where a tool accepts them, truncated to
// kMaxCalls. Calls are never reordered or added.
std::vector<tools::ToolCall> repair_plan(const json& proposed, const PlanRequest& req,
                                         const tools::ToolRegistry& registry, std::vector<std::string>& repairs);

struct PlanOutcome {
  PlanResult plan;
  session::SessionState state;
};

// Backend proposal when available, keyword planner otherwise. Repairs are
// recorded as a note event.
PlanOutcome plan_calls(const PlanRequest& req, session::SessionState state, session::PayloadStore& payloads,
                       llm::Backend* backend, const tools::ToolRegistry& registry, const ArtifactCache& cached,
                       std::int64_t ts);

// Throws Error(invalid_argument) for unknown tools, schema violations,
// dependency indices outside 1..k-1, cycles and plans longer than kMaxCalls.
void validate_plan(const std::vector<tools::ToolCall>& calls, const tools::ToolRegistry& registry);

struct CallFailure {
  int call_index = 0;
  std::string tool;
  ErrorCode code = ErrorCode::tool_failure;
  std::string message;
};

struct AnalysisResult {
  std::vector<tools::ToolCall> calls;
  std::vector<tools::ToolOutput> outputs;
  session::ProvenanceMap provenance;
  std::map<std::string, double> quantities;  // quantity id -> value
  std::string narrative;
  std::optional<CallFailure> failure;
  // Part windows used by metric-reporting calls (nullopt = all parts).
  std::vector<std::optional<analytics::PartRange>> windows;
  tools::Artifacts artifacts;  // merged artifacts of this run

  session::TargetIndex targets() const;
  std::string digest() const;
  json to_json() const;
};

struct ExecOutcome {
  AnalysisResult result;
  session::SessionState state;
  ArtifactCache cache;  // cache after overlaying this run's artifacts
};

ExecOutcome execute_sequence(const std::vector<tools::ToolCall>& calls, session::SessionState state,
                             session::PayloadStore& payloads, const tools::ToolRegistry& registry,
                             const tools::ToolEnvironment& env, const ArtifactCache& cached, std::int64_t ts);

// Quantity ids and values reported by one output.
std::vector<std::pair<std::string, double>> reported_quantities(const tools::ToolSpec& spec,
                                                                const tools::ToolOutput& out);

}  // namespace bladecomp::analysis
