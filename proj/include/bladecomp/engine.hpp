#pragma once

// The per-turn control loop: preprocess, route, dispatch, critique, and
// either revise, accept or escalate. Also hosts the KG agent.

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bladecomp/analysis_agent.hpp"
#include "bladecomp/critic.hpp"
#include "bladecomp/kg_store.hpp"
#include "bladecomp/llm_gateway.hpp"
#include "bladecomp/router.hpp"
#include "bladecomp/session.hpp"
#include "bladecomp/tools.hpp"

namespace bladecomp::engine {

struct EngineConfig {
  critic::CriticConfig critic;
  kg::RetrievalConfig retrieval;
  analytics::DeltaSelection delta;
  double theta_deg = analytics::kDefaultTiltDeg;
  bool use_critic = true;

  // Sections: "critic", "retrieval", "analysis" (delta_strategy, target,
  // residual_limit, theta_deg), "session" (critic_budget).
  static EngineConfig from_json(const json& j);
  json to_json() const;
};

struct KgAnswer {
  kg::RetrievalResult retrieval;
  std::vector<critic::Claim> claims;
  std::string narrative;
  bool templated = false;
  bool empty_knowledge = false;
};

std::string synthesis_prompt(const std::string& question, const std::string& instruction,
                             const kg::TripleStore& store, const kg::RetrievalResult& retrieval);

// Retrieval followed by claim synthesis. Falls back to one templated claim
// per selected triple when the backend is absent or its reply is unusable.
KgAnswer answer_with_kg(const std::string& question, const std::string& instruction, const kg::TripleStore* store,
                        const kg::RetrievalConfig& config, llm::Backend* backend);

// Claim kind from a relation label for templated claims.
std::string classify_relation(std::string_view relation);

struct Attempt {
  std::string agent;
  std::string instruction;
  std::vector<tools::ToolCall> calls;
  std::string plan_origin;
  std::optional<critic::CriticVerdict> verdict;
  json to_json() const;
};

struct TurnResponse {
  std::string session_id;
  std::string query;
  std::string kind = "recommendation";  // recommendation | control
  std::string verdict = "escalated";    // accepted | escalated
  std::optional<router::RoutingDecision> routing;
  json recommendation = json::object();
  std::vector<analytics::CompensationRow> table;
  std::optional<json> escalation;
  std::string escalation_digest;
  std::vector<Attempt> attempts;
  std::size_t audit_from = 0;
  std::size_t audit_to = 0;
  double elapsed_ms = 0.0;

  json to_json() const;
};

struct SessionContext {
  session::SessionState state;
  session::PayloadStore payloads;
  analysis::ArtifactCache cache;
};

class Engine {
 public:
  Engine(EngineConfig config, std::shared_ptr<const tools::ToolRegistry> registry,
         std::shared_ptr<llm::Backend> backend, std::shared_ptr<const kg::TripleStore> store = nullptr);

  SessionContext new_session(const std::string& id,
                             std::optional<std::filesystem::path> payload_dir = std::nullopt) const;

  TurnResponse run_turn(SessionContext& ctx, const std::string& query);

  // Registers a resource under its kind name. Throws on unreadable files.
  void load_resource(SessionContext& ctx, const std::string& path,
                     std::optional<session::ResourceKind> kind = std::nullopt);

  const EngineConfig& config() const { return config_; }
  EngineConfig& mutable_config() { return config_; }
  const tools::ToolRegistry& registry() const { return *registry_; }
  const kg::TripleStore* store() const { return store_.get(); }
  void set_store(std::shared_ptr<const kg::TripleStore> store) { store_ = std::move(store); }
  llm::Backend* backend() const { return backend_.get(); }

  // Relative paths that do not exist under the working directory are
  // looked up here.
  std::filesystem::path resource_root;

  // Millisecond timestamps for audit events; replaceable for tests.
  std::function<std::int64_t()> clock;

 private:
  tools::ToolEnvironment environment(const SessionContext& ctx) const;

  EngineConfig config_;
  std::shared_ptr<const tools::ToolRegistry> registry_;
  std::shared_ptr<llm::Backend> backend_;
  std::shared_ptr<const kg::TripleStore> store_;
};

// Rows for every pair with both Trc and Tlc quantities, by pressure index.
std::vector<analytics::CompensationRow> compensation_rows(const std::map<std::string, double>& quantities);

// Fixed-width "pair_key  Trc  Tlc" table.
std::string render_table(const std::vector<analytics::CompensationRow>& rows);

}  // namespace bladecomp::engine
