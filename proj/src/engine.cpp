#include "bladecomp/engine.hpp"

#include <algorithm>
#include <cstdio>

namespace bladecomp::engine {

namespace fs = std::filesystem;

EngineConfig EngineConfig::from_json(const json& j) {
  EngineConfig c;
  if (j.contains("critic")) c.critic = critic::CriticConfig::from_json(j.at("critic"));
  if (j.contains("session") && j.at("session").contains("critic_budget"))
    c.critic.budget = j.at("session").at("critic_budget").get<int>();
  if (j.contains("retrieval")) c.retrieval = kg::RetrievalConfig::from_json(j.at("retrieval"));
  if (j.contains("analysis")) {
    const json& a = j.at("analysis");
    if (a.contains("delta_strategy"))
      c.delta.strategy = analytics::parse_delta_strategy(a.at("delta_strategy").get<std::string>());
    c.delta.target = a.value("target", c.delta.target);
    c.delta.residual_limit = a.value("residual_limit", c.delta.residual_limit);
    c.theta_deg = a.value("theta_deg", c.theta_deg);
    c.use_critic = a.value("use_critic", c.use_critic);
  }
  c.critic.validate();
  if (!(c.theta_deg > 0 && c.theta_deg < 90)) throw Error(ErrorCode::config, "theta_deg must be in (0, 90)");
  return c;
}

json EngineConfig::to_json() const {
  return {{"critic", critic.to_json()},
          {"retrieval", retrieval.to_json()},
          {"analysis",
           {{"delta_strategy", analytics::to_string(delta.strategy)},
            {"target", delta.target},
            {"residual_limit", delta.residual_limit},
            {"theta_deg", theta_deg},
            {"use_critic", use_critic}}}};
}

std::string classify_relation(std::string_view relation) {
  std::string r = to_lower(relation);
  for (auto w : {"require", "limit", "constrain", "must", "maximum", "minimum", "toleran", "bound"})
    if (r.find(w) != std::string::npos) return "constraint";
  for (auto w : {"recommend", "should", "prefer", "avoid", "mitigat", "best", "reduce", "compensat"})
    if (r.find(w) != std::string::npos) return "best-practice";
  return "observation";
}

std::string synthesis_prompt(const std::string& question, const std::string& instruction,
                             const kg::TripleStore& store, const kg::RetrievalResult& retrieval) {
  std::string out = "SYNTHESIZE\n";
  out += "Reply with JSON {\"claims\": [{\"text\": string, \"kind\": \"constraint\"|\"best-practice\"|"
         "\"observation\", \"evidence\": [triple ids]}], \"summary\": string}. Cite only the ids listed under "
         "EVIDENCE.\n";
  out += "QUESTION: " + question + "\n";
  out += "INSTRUCTION: " + instruction + "\n";
  out += "EVIDENCE:\n";
  for (const auto& id : retrieval.evidence_ids())
    if (const auto* r = store.find(id)) out += id + "\t" + r->triple_text() + "\t" + r->context + "\n";
  return out;
}

KgAnswer answer_with_kg(const std::string& question, const std::string& instruction, const kg::TripleStore* store,
                        const kg::RetrievalConfig& config, llm::Backend* backend) {
  KgAnswer a;
  if (!store || store->empty()) {
    a.empty_knowledge = true;
    a.retrieval.empty_knowledge = true;
    a.narrative = "No knowledge store is available.";
    return a;
  }
  a.retrieval = store->retrieve(question, config);
  if (a.retrieval.empty_knowledge) {
    a.empty_knowledge = true;
    a.narrative = "No knowledge store is available.";
    return a;
  }
  if (backend) {
    try {
      json reply = router::extract_json_object(
          backend->complete(llm::Role::kg_synthesizer, synthesis_prompt(question, instruction, *store, a.retrieval)));
      for (const auto& c : reply.at("claims")) a.claims.push_back(critic::Claim::from_json(c));
      a.narrative = reply.value("summary", std::string());
    } catch (const std::exception&) {
      a.claims.clear();
      a.narrative.clear();
    }
  }
  if (a.claims.empty()) {
    a.templated = true;
    for (const auto& item : a.retrieval.selected) {
      const auto* r = store->find(item.id);
      if (!r) continue;
      critic::Claim c;
      c.text = r->subject + " " + r->relation + " " + r->object + (r->context.empty() ? "" : ": " + r->context);
      c.kind = classify_relation(r->relation);
      c.evidence = {r->id};
      a.claims.push_back(std::move(c));
    }
  }
  if (a.narrative.empty())
    for (const auto& c : a.claims) {
      a.narrative += "- " + c.text;
      for (const auto& id : c.evidence) a.narrative += " [" + id + "]";
      a.narrative += "\n";
    }
  return a;
}

json Attempt::to_json() const {
  json calls_j = json::array();
  for (const auto& c : calls) calls_j.push_back(c.to_json());
  json j{{"agent", agent}, {"instruction", instruction}, {"calls", calls_j}, {"plan_origin", plan_origin}};
  j["verdict"] = verdict ? verdict->to_json() : json();
  return j;
}

json TurnResponse::to_json() const {
  json attempts_j = json::array(), table_j = json::array();
  for (const auto& a : attempts) attempts_j.push_back(a.to_json());
  for (const auto& r : table) table_j.push_back({{"pair_key", r.pair_key}, {"Trc", r.trc}, {"Tlc", r.tlc}});
  json j{{"session_id", session_id}, {"query", query},       {"kind", kind},
         {"verdict", verdict},       {"recommendation", recommendation}, {"table", table_j},
         {"attempts", attempts_j},   {"audit_range", {audit_from, audit_to}}, {"elapsed_ms", elapsed_ms}};
  j["routing"] = routing ? routing->to_json() : json();
  j["escalation"] = escalation ? *escalation : json();
  if (!escalation_digest.empty()) j["escalation_digest"] = escalation_digest;
  return j;
}

std::vector<analytics::CompensationRow> compensation_rows(const std::map<std::string, double>& q) {
  std::vector<std::pair<analytics::PairKey, analytics::CompensationRow>> rows;
  for (const auto& [id, value] : q) {
    if (!id.starts_with("Trc[")) continue;
    std::string key = id.substr(4, id.size() - 5);
    auto tl = q.find(session::quantity_id("Tlc", key));
    if (tl == q.end()) continue;
    try {
      rows.emplace_back(analytics::PairKey::parse(key), analytics::CompensationRow{key, value, tl->second});
    } catch (const Error&) {
    }
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<analytics::CompensationRow> out;
  for (auto& [_, r] : rows) out.push_back(r);
  return out;
}

std::string render_table(const std::vector<analytics::CompensationRow>& rows) {
  std::string out;
  char line[96];
  std::snprintf(line, sizeof line, "%-10s %12s %12s\n", "pair_key", "Trc", "Tlc");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-10s %12s %12s\n", r.pair_key.c_str(), format_fixed(r.trc).c_str(),
                  format_fixed(r.tlc).c_str());
    out += line;
  }
  return out;
}

Engine::Engine(EngineConfig config, std::shared_ptr<const tools::ToolRegistry> registry,
               std::shared_ptr<llm::Backend> backend, std::shared_ptr<const kg::TripleStore> store)
    : config_(std::move(config)), registry_(std::move(registry)), backend_(std::move(backend)), store_(std::move(store)) {
  if (!registry_ || registry_->empty()) throw Error(ErrorCode::config, "engine needs a non-empty tool registry");
  clock = [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

SessionContext Engine::new_session(const std::string& id, std::optional<fs::path> payload_dir) const {
  SessionContext ctx;
  ctx.state = session::make_session(id, config_.critic.budget);
  if (payload_dir) ctx.payloads = session::PayloadStore(*payload_dir);
  return ctx;
}

void Engine::load_resource(SessionContext& ctx, const std::string& path, std::optional<session::ResourceKind> kind) {
  auto k = kind ? *kind : session::infer_resource_kind(path);
  std::string resolved = path;
  if (!resource_root.empty() && fs::path(path).is_relative() && !fs::exists(path) &&
      fs::exists(resource_root / path))
    resolved = (resource_root / path).lexically_normal().string();
  auto handle = session::ResourceHandle::load(k, resolved);
  ctx.state = session::update_state(std::move(ctx.state),
                                    session::resource_loaded(std::string(session::to_string(k)), handle, clock()),
                                    ctx.payloads);
}

tools::ToolEnvironment Engine::environment(const SessionContext& ctx) const {
  tools::ToolEnvironment env;
  env.resources = &ctx.state.resources;
  env.store = store_.get();
  env.retrieval = config_.retrieval;
  env.delta = config_.delta;
  env.theta_deg = config_.theta_deg;
  return env;
}

TurnResponse Engine::run_turn(SessionContext& ctx, const std::string& query) {
  const auto t0 = std::chrono::steady_clock::now();
  TurnResponse resp;
  resp.session_id = ctx.state.session_id;
  resp.query = query;
  resp.audit_from = ctx.state.audit.size();
  auto finish = [&]() -> TurnResponse {
    resp.audit_to = ctx.state.audit.size();
    resp.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return resp;
  };
  auto note = [&](session::Actor actor, json payload) {
    ctx.state = session::update_state(std::move(ctx.state), {session::EventKind::note, actor, std::move(payload), clock()},
                                      ctx.payloads);
  };
  auto escalate = [&](json report) {
    resp.verdict = "escalated";
    resp.escalation_digest = ctx.payloads.put(report);
    note(session::Actor::critic, {{"note", "escalation"}, {"report_digest", resp.escalation_digest}});
    resp.escalation = std::move(report);
  };

  // (1) query received and preprocessing update.
  auto pq = router::preprocess(query, ctx.state);
  ctx.state = session::update_state(std::move(ctx.state),
                                    {session::EventKind::query_received, session::Actor::human,
                                     {{"query_digest", sha256_hex(pq.raw_text)}, {"query", pq.raw_text}}, clock()},
                                    ctx.payloads);
  if (pq.reset_flag) {
    ctx.state = session::update_state(std::move(ctx.state),
                                      {session::EventKind::reset, session::Actor::central, {{"reason", "user"}}, clock()},
                                      ctx.payloads);
    ctx.cache = {};
    if (pq.requested_metrics.empty() && pq.file_paths.empty()) {
      resp.kind = "control";
      resp.verdict = "accepted";
      resp.recommendation = {{"narrative", "Session reset: cached results and resources cleared."}};
      return finish();
    }
  }
  for (const auto& path : pq.file_paths) {
    try {
      load_resource(ctx, path);
    } catch (const Error& e) {
      note(session::Actor::central, {{"note", "load failed"}, {"path", path}, {"reason", e.what()}});
    }
  }

  // (2) routing.
  auto routed = router::route(pq, std::move(ctx.state), backend_.get(), ctx.payloads, registry_->categories(), clock());
  ctx.state = std::move(routed.state);
  if (!routed.decision) {
    escalate({{"candidate", json()},
              {"failed_checks", json::array()},
              {"missing_info", {routed.diagnostic}},
              {"budget_exhausted", false}});
    return finish();
  }
  resp.routing = routed.decision;

  router::AgentId agent = routed.decision->agent;
  std::string instruction = routed.decision->instruction;
  critic::CandidateAnswer candidate;
  std::optional<kg::RetrievalResult> retrieval;
  std::optional<critic::CriticVerdict> last;

  for (int round = 0;; ++round) {
    // (3)-(5) dispatch to the selected agent.
    Attempt attempt;
    attempt.agent = std::string(router::to_string(agent));
    attempt.instruction = instruction;
    if (round > 0)
      ctx.state = session::update_state(
          std::move(ctx.state), session::agent_invoked(session::Actor::central, attempt.agent, instruction, clock()),
          ctx.payloads);
    candidate = {};
    candidate.origin = agent;
    retrieval.reset();
    if (agent == router::AgentId::analysis) {
      auto req = analysis::PlanRequest::from(pq, *routed.decision);
      req.instruction = instruction;
      auto planned = analysis::plan_calls(req, std::move(ctx.state), ctx.payloads, backend_.get(), *registry_,
                                          ctx.cache, clock());
      ctx.state = std::move(planned.state);
      attempt.calls = planned.plan.calls;
      attempt.plan_origin = planned.plan.origin;
      candidate.diagnostic = planned.plan.diagnostic;
      if (!planned.plan.calls.empty()) {
        // The state is moved into the executor, so tools read a copy of the resource table.
        const auto resources = ctx.state.resources;
        auto env = environment(ctx);
        env.resources = &resources;
        auto exec = analysis::execute_sequence(planned.plan.calls, std::move(ctx.state), ctx.payloads, *registry_, env,
                                               ctx.cache, clock());
        ctx.state = std::move(exec.state);
        ctx.cache = std::move(exec.cache);
        const auto& res = exec.result;
        candidate.narrative = res.narrative;
        candidate.quantities = res.quantities;
        candidate.provenance = res.provenance;
        candidate.targets = res.targets();
        candidate.windows = res.windows;
        if (res.failure)
          candidate.failure = "call-" + std::to_string(res.failure->call_index) + " " + res.failure->tool + ": " +
                              res.failure->message;
        if (res.artifacts.compensation) candidate.proposed_offsets = *res.artifacts.compensation;
        if (res.artifacts.retrieval) candidate.evidence_ids = res.artifacts.retrieval->evidence_ids();
      }
    } else {
      auto answer = answer_with_kg(pq.raw_text, instruction, store_.get(), config_.retrieval, backend_.get());
      attempt.plan_origin = answer.templated ? "fallback" : "model";
      candidate.narrative = answer.narrative;
      candidate.claims = answer.claims;
      candidate.evidence_ids = answer.retrieval.evidence_ids();
      candidate.empty_knowledge = answer.empty_knowledge;
      if (!answer.empty_knowledge)
        ctx.state = session::update_state(
            std::move(ctx.state),
            {session::EventKind::artifact_cached, session::Actor::kg,
             {{"key", session::cache_key("kg_retrieve", {{"query", pq.raw_text}, {"config", config_.retrieval.to_json()}})},
              {"digest", answer.retrieval.digest()},
              {"producer", "retrieval"}},
             clock()},
            ctx.payloads);
      retrieval = answer.retrieval;
    }

    if (!config_.use_critic) {
      resp.attempts.push_back(std::move(attempt));
      break;
    }
    // (6)-(7) critique.
    auto decided = critic::decide(pq, candidate, std::move(ctx.state), ctx.payloads, config_.critic, *registry_,
                                  retrieval ? &*retrieval : nullptr, clock());
    ctx.state = std::move(decided.state);
    attempt.verdict = decided.verdict;
    last = decided.verdict;
    resp.attempts.push_back(std::move(attempt));
    if (decided.verdict.decision != critic::Decision::revise) break;
    agent = *decided.verdict.next_agent;
    instruction = *decided.verdict.refinement + " Original request: " + routed.decision->instruction;
  }

  // (8) answer or escalate.
  if (last && last->decision == critic::Decision::escalate) {
    escalate(critic::escalation_report(candidate, *last));
    return finish();
  }
  resp.verdict = "accepted";
  json offsets = json::array();
  for (const auto& v : candidate.proposed_offsets)
    offsets.push_back({{"pair_key", v.pair_key}, {"delta", v.delta}, {"t_r", v.t_r}, {"t_l", v.t_l}, {"theta", v.theta_deg}});
  json claims = json::array();
  for (const auto& c : candidate.claims) claims.push_back(c.to_json());
  json windows = json::array();
  for (const auto& w : candidate.windows) windows.push_back(w ? json::array({w->first, w->last}) : json());
  resp.table = compensation_rows(candidate.quantities);
  resp.recommendation = {{"agent", router::to_string(candidate.origin)},
                         {"narrative", candidate.narrative},
                         {"quantities", candidate.quantities},
                         {"provenance", candidate.provenance.to_json()},
                         {"targets", candidate.targets},
                         {"evidence_ids", candidate.evidence_ids},
                         {"claims", claims},
                         {"offsets", offsets},
                         {"windows", windows},
                         {"critic_checked", config_.use_critic}};
  note(candidate.origin == router::AgentId::kg ? session::Actor::kg : session::Actor::analysis,
       {{"note", "recommendation"}, {"recommendation", resp.recommendation}});
  return finish();
}

}  // namespace bladecomp::engine
