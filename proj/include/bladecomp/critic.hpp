#pragma once

// Critic: verification checks over a candidate answer and the
// accept / revise / escalate decision under a bounded revision budget.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bladecomp/analytics.hpp"
#include "bladecomp/kg_store.hpp"
#include "bladecomp/router.hpp"
#include "bladecomp/session.hpp"
#include "bladecomp/tools.hpp"

namespace bladecomp::critic {

struct CriticConfig {
  int budget = 3;
  double max_radius_offset = 0.010;  // in
  double max_length_offset = 0.010;  // in
  double variability_threshold = 0.5;
  double tilt_deg = analytics::kDefaultTiltDeg;
  std::map<std::string, double> weights{{"intent", 1.0}, {"grounding", 1.0}, {"evidence", 1.0}, {"safety", 1.0}};

  void validate() const;
  static CriticConfig from_json(const json& j);
  json to_json() const;
};

struct Claim {
  std::string text;
  std::string kind;  // constraint | best-practice | observation
  std::vector<std::string> evidence;

  bool needs_evidence() const { return kind == "constraint" || kind == "best-practice"; }
  json to_json() const;
  static Claim from_json(const json& j);
};

struct CandidateAnswer {
  router::AgentId origin = router::AgentId::analysis;
  std::string narrative;
  std::map<std::string, double> quantities;
  session::ProvenanceMap provenance;
  session::TargetIndex targets;
  std::vector<std::string> evidence_ids;
  std::vector<Claim> claims;
  std::vector<analytics::CompensationVector> proposed_offsets;
  std::vector<std::optional<analytics::PartRange>> windows;
  std::optional<std::string> failure;     // tool failure message
  std::optional<std::string> diagnostic;  // planner / retrieval diagnostic
  bool empty_knowledge = false;

  bool empty() const { return quantities.empty() && claims.empty(); }
  json to_json() const;
  std::string digest() const { return json_digest(to_json()); }
};

struct CheckResult {
  std::string id;  // intent | grounding | evidence | safety
  bool applicable = true;
  bool passed = true;
  bool repairable = true;
  std::vector<std::string> details;
  std::vector<std::string> missing_metrics;  // intent only

  json to_json() const;
};

CheckResult check_intent(const router::PreprocessedQuery& query, const CandidateAnswer& candidate);
CheckResult check_tool_grounding(const CandidateAnswer& candidate);
CheckResult check_evidence(const CandidateAnswer& candidate, const kg::RetrievalResult* retrieval);
CheckResult check_safety(const CandidateAnswer& candidate, const CriticConfig& config);

enum class Decision { accept, revise, escalate };
std::string_view to_string(Decision d);

struct CriticVerdict {
  Decision decision = Decision::escalate;
  std::vector<CheckResult> checks;  // every evaluated check, fixed order
  std::vector<std::pair<std::string, std::string>> failed_checks;
  std::optional<router::AgentId> next_agent;
  std::optional<std::string> refinement;
  std::vector<std::string> suggested_tools;
  double score = 0.0;  // J
  std::vector<std::string> missing_info;
  int invocation = 0;  // n_t before this decision
  bool budget_exhausted = false;

  json to_json() const;
};

struct DecideOutcome {
  CriticVerdict verdict;
  session::SessionState state;
};

// Accepts iff every applicable check passes. Otherwise revises while the
// per-query count is below the budget, unless a non-repairable failure
// forces escalation.
DecideOutcome decide(const router::PreprocessedQuery& query, const CandidateAnswer& candidate,
                     session::SessionState state, session::PayloadStore& payloads, const CriticConfig& config,
                     const tools::ToolRegistry& registry, const kg::RetrievalResult* retrieval, std::int64_t ts);

// Refinement text and the tool chain that repairs the failed checks.
std::pair<std::string, std::vector<std::string>> build_refinement(const std::vector<CheckResult>& failed,
                                                                  const tools::ToolRegistry& registry);

// Structured escalation report, stored in the payload store.
json escalation_report(const CandidateAnswer& candidate, const CriticVerdict& verdict);

// Appends a human-approved event. The verdict it refers to stays in the
// trail unchanged.
session::SessionState record_approval(session::SessionState state, session::PayloadStore& payloads,
                                      const std::string& decision, const std::string& note,
                                      const std::string& subject, std::int64_t ts);

}  // namespace bladecomp::critic
