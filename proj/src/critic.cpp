#include "bladecomp/critic.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

namespace bladecomp::critic {

namespace {

std::string metric_of(const std::string& quantity_id) { return quantity_id.substr(0, quantity_id.find('[')); }

std::string key_of(const std::string& quantity_id) {
  auto a = quantity_id.find('['), b = quantity_id.rfind(']');
  if (a == std::string::npos || b == std::string::npos || b <= a) return {};
  return quantity_id.substr(a + 1, b - a - 1);
}

std::string range_str(const analytics::PartRange& r) {
  return std::to_string(r.first) + "-" + std::to_string(r.last);
}

int sign(double x) { return (x > 0) - (x < 0); }

}  // namespace

void CriticConfig::validate() const {
  if (budget < 1) throw Error(ErrorCode::config, "critic budget must be >= 1");
  if (!(max_radius_offset > 0) || !(max_length_offset > 0))
    throw Error(ErrorCode::config, "offset limits must be positive");
  if (!(variability_threshold >= 0)) throw Error(ErrorCode::config, "variability threshold must be >= 0");
  for (const auto& [k, w] : weights)
    if (!(w >= 0)) throw Error(ErrorCode::config, "check weight for " + k + " must be >= 0");
}

CriticConfig CriticConfig::from_json(const json& j) {
  CriticConfig c;
  c.budget = j.value("budget", c.budget);
  c.max_radius_offset = j.value("max_radius_offset", c.max_radius_offset);
  c.max_length_offset = j.value("max_length_offset", c.max_length_offset);
  c.variability_threshold = j.value("variability_threshold", c.variability_threshold);
  c.tilt_deg = j.value("tilt_deg", c.tilt_deg);
  if (j.contains("weights"))
    for (const auto& [k, v] : j.at("weights").items()) c.weights[k] = v.get<double>();
  c.validate();
  return c;
}

json CriticConfig::to_json() const {
  return {{"budget", budget},
          {"max_radius_offset", max_radius_offset},
          {"max_length_offset", max_length_offset},
          {"variability_threshold", variability_threshold},
          {"tilt_deg", tilt_deg},
          {"weights", weights}};
}

json Claim::to_json() const { return {{"text", text}, {"kind", kind}, {"evidence", evidence}}; }

Claim Claim::from_json(const json& j) {
  Claim c;
  c.text = j.at("text").get<std::string>();
  c.kind = j.value("kind", std::string("observation"));
  c.evidence = j.value("evidence", std::vector<std::string>{});
  return c;
}

json CandidateAnswer::to_json() const {
  json claims_j = json::array(), offsets = json::array(), windows_j = json::array();
  for (const auto& c : claims) claims_j.push_back(c.to_json());
  for (const auto& v : proposed_offsets)
    offsets.push_back({{"pair_key", v.pair_key}, {"delta", v.delta}, {"t_r", v.t_r}, {"t_l", v.t_l}, {"theta", v.theta_deg}});
  for (const auto& w : windows) windows_j.push_back(w ? json::array({w->first, w->last}) : json());
  json j{{"origin", router::to_string(origin)},
         {"narrative", narrative},
         {"quantities", quantities},
         {"provenance", provenance.to_json()},
         {"evidence_ids", evidence_ids},
         {"claims", claims_j},
         {"proposed_offsets", offsets},
         {"windows", windows_j},
         {"empty_knowledge", empty_knowledge}};
  if (failure) j["failure"] = *failure;
  if (diagnostic) j["diagnostic"] = *diagnostic;
  return j;
}

json CheckResult::to_json() const {
  return {{"id", id},           {"applicable", applicable}, {"passed", passed},
          {"repairable", repairable}, {"details", details},  {"missing_metrics", missing_metrics}};
}

CheckResult check_intent(const router::PreprocessedQuery& query, const CandidateAnswer& c) {
  CheckResult r;
  r.id = "intent";
  auto fail = [&](std::string d) {
    r.passed = false;
    r.details.push_back(std::move(d));
  };
  if (c.diagnostic && c.diagnostic->starts_with("resource missing")) {
    fail(*c.diagnostic);
    r.repairable = false;
    return r;
  }
  if (c.origin == router::AgentId::kg) {
    if (c.empty_knowledge) {
      fail("knowledge store is empty or not loaded");
      r.repairable = false;
    } else if (c.claims.empty()) {
      fail("empty candidate: no claims");
    }
    return r;
  }
  if (c.empty()) fail("empty candidate: no reported quantities");

  std::set<std::string> metrics;
  std::map<std::string, std::set<std::string>> keys_by_metric;
  for (const auto& [id, _] : c.quantities) {
    metrics.insert(metric_of(id));
    keys_by_metric[metric_of(id)].insert(key_of(id));
  }
  for (const auto& category : query.requested_metrics) {
    const auto& labels = tools::metric_categories().at(category);
    std::vector<std::string> missing;
    for (const auto& l : labels)
      if (!metrics.contains(l)) missing.push_back(l);
    if (!missing.empty()) {
      std::string names;
      for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
      fail("missing metric category " + category + " (" + names + ")");
      r.missing_metrics.push_back(category);
    } else if (query.pair_keys) {
      for (const auto& l : labels)
        for (const auto& k : *query.pair_keys)
          if (!keys_by_metric[l].contains(k)) fail("missing " + session::quantity_id(l, k));
    }
  }
  if (query.part_range) {
    for (const auto& w : c.windows) {
      if (!w) {
        fail("computed over all parts instead of parts " + range_str(*query.part_range));
        break;
      }
      if (w->first != query.part_range->first || w->last != query.part_range->last) {
        fail("computed over parts " + range_str(*w) + " instead of " + range_str(*query.part_range));
        break;
      }
    }
  }
  return r;
}

CheckResult check_tool_grounding(const CandidateAnswer& c) {
  CheckResult r;
  r.id = "grounding";
  r.applicable = c.origin == router::AgentId::analysis;
  if (!r.applicable) return r;
  for (const auto& [id, _] : c.quantities) {
    try {
      if (!session::resolve_provenance(c.provenance, id, c.targets)) {
        r.passed = false;
        r.details.push_back("unmapped quantity " + id);
      }
    } catch (const Error& e) {
      r.passed = false;
      r.details.push_back(e.what());
    }
  }
  if (c.failure) {
    r.passed = false;
    r.details.push_back("tool failure: " + *c.failure);
  }
  return r;
}

CheckResult check_evidence(const CandidateAnswer& c, const kg::RetrievalResult* retrieval) {
  CheckResult r;
  r.id = "evidence";
  r.applicable = c.origin == router::AgentId::kg;
  if (!r.applicable) return r;
  std::set<std::string> retrieved;
  if (retrieval)
    for (const auto& id : retrieval->evidence_ids()) retrieved.insert(id);
  for (std::size_t i = 0; i < c.claims.size(); ++i) {
    const auto& claim = c.claims[i];
    std::size_t cited = 0;
    for (const auto& id : claim.evidence) {
      if (retrieved.contains(id))
        ++cited;
      else {
        r.passed = false;
        r.details.push_back("claim " + std::to_string(i + 1) + " cites " + id + ", which was not retrieved");
      }
    }
    if (claim.needs_evidence() && cited == 0) {
      r.passed = false;
      r.details.push_back("claim " + std::to_string(i + 1) + " (" + claim.kind + ") cites no retrieved triple");
    }
  }
  return r;
}

CheckResult check_safety(const CandidateAnswer& c, const CriticConfig& cfg) {
  CheckResult r;
  r.id = "safety";
  r.repairable = false;
  if (c.proposed_offsets.empty()) return r;
  for (const auto& v : c.proposed_offsets) {
    if (std::abs(v.t_r) > cfg.max_radius_offset) {
      r.passed = false;
      r.details.push_back(v.pair_key + ": |t_r| " + format_fixed(std::abs(v.t_r)) + " exceeds " +
                          format_fixed(cfg.max_radius_offset));
    }
    if (std::abs(v.t_l) > cfg.max_length_offset) {
      r.passed = false;
      r.details.push_back(v.pair_key + ": |t_l| " + format_fixed(std::abs(v.t_l)) + " exceeds " +
                          format_fixed(cfg.max_length_offset));
    }
    // Both components carry the sign of the axial correction for a tilt in (0, 90).
    if (sign(v.t_r) != sign(v.delta) || sign(v.t_l) != sign(v.delta)) {
      r.passed = false;
      r.details.push_back(v.pair_key + ": offset signs disagree with the tilt convention");
    }
    auto psi = c.quantities.find(session::quantity_id("PsiV", v.pair_key));
    if (psi != c.quantities.end() && psi->second > cfg.variability_threshold) {
      r.passed = false;
      r.details.push_back(v.pair_key + ": variability index " + format_fixed(psi->second, 3) + " exceeds " +
                          format_fixed(cfg.variability_threshold, 3) + "; escalate for human judgment");
    }
  }
  return r;
}

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::accept: return "accept";
    case Decision::revise: return "revise";
    case Decision::escalate: return "escalate";
  }
  return "escalate";
}

json CriticVerdict::to_json() const {
  json checks_j = json::array(), failed = json::array();
  for (const auto& c : checks) checks_j.push_back(c.to_json());
  for (const auto& [id, detail] : failed_checks) failed.push_back({{"check", id}, {"detail", detail}});
  json j{{"decision", to_string(decision)}, {"checks", checks_j},       {"failed_checks", failed},
         {"score", score},                  {"missing_info", missing_info}, {"invocation", invocation},
         {"budget_exhausted", budget_exhausted}, {"suggested_tools", suggested_tools}};
  j["next_agent"] = next_agent ? json(router::to_string(*next_agent)) : json();
  j["refinement"] = refinement ? json(*refinement) : json();
  return j;
}

std::pair<std::string, std::vector<std::string>> build_refinement(const std::vector<CheckResult>& failed,
                                                                  const tools::ToolRegistry& registry) {
  std::vector<std::string> tools_needed;
  auto add_chain = [&](const std::string& tool) {
    if (!registry.find(tool)) return;
    for (const auto& t : registry.chain_for(tool))
      if (std::find(tools_needed.begin(), tools_needed.end(), t) == tools_needed.end()) tools_needed.push_back(t);
  };
  std::string text = "Revise the previous answer.";
  static const std::regex producer(R"(produced by ([a-z_]+))");
  for (const auto& c : failed) {
    for (const auto& d : c.details) text += " " + c.id + ": " + d + ".";
    for (const auto& m : c.missing_metrics) add_chain(tools::preferred_tool_for_metric(m));
    for (const auto& d : c.details) {
      std::smatch m;
      if (std::regex_search(d, m, producer)) add_chain(m[1].str());
    }
  }
  if (!tools_needed.empty()) {
    text += " Use tools:";
    for (std::size_t i = 0; i < tools_needed.size(); ++i) text += (i ? ", " : " ") + tools_needed[i];
    text += ".";
  }
  return {text, tools_needed};
}

DecideOutcome decide(const router::PreprocessedQuery& query, const CandidateAnswer& candidate,
                     session::SessionState state, session::PayloadStore& payloads, const CriticConfig& config,
                     const tools::ToolRegistry& registry, const kg::RetrievalResult* retrieval, std::int64_t ts) {
  CriticVerdict v;
  v.invocation = state.critic_count;
  v.checks = {check_intent(query, candidate), check_tool_grounding(candidate), check_evidence(candidate, retrieval),
              check_safety(candidate, config)};
  double num = 0.0, den = 0.0;
  std::vector<CheckResult> failed;
  bool repairable = true;
  for (const auto& c : v.checks) {
    if (!c.applicable) continue;
    double w = config.weights.contains(c.id) ? config.weights.at(c.id) : 1.0;
    den += w;
    if (c.passed) {
      num += w;
    } else {
      failed.push_back(c);
      repairable = repairable && c.repairable;
      for (const auto& d : c.details) v.failed_checks.emplace_back(c.id, d);
    }
  }
  v.score = den > 0 ? num / den : 1.0;

  if (failed.empty()) {
    v.decision = Decision::accept;
  } else if (repairable && v.invocation < config.budget) {
    v.decision = Decision::revise;
    const auto& first = failed.front().id;
    if (first == "evidence")
      v.next_agent = router::AgentId::kg;
    else if (first == "intent")
      v.next_agent = candidate.origin;
    else
      v.next_agent = router::AgentId::analysis;
    auto [text, tools_needed] = build_refinement(failed, registry);
    v.refinement = text;
    v.suggested_tools = tools_needed;
  } else {
    v.decision = Decision::escalate;
    v.budget_exhausted = repairable;
    if (repairable) v.missing_info.push_back("critic budget of " + std::to_string(config.budget) + " revisions exhausted");
    for (const auto& c : failed)
      for (const auto& d : c.details) v.missing_info.push_back(c.id + ": " + d);
  }

  json payload = v.to_json();
  payload["candidate_digest"] = candidate.digest();
  state = session::update_state(std::move(state), {session::EventKind::critic_decided, session::Actor::critic, payload, ts},
                                payloads);
  return {std::move(v), std::move(state)};
}

json escalation_report(const CandidateAnswer& candidate, const CriticVerdict& verdict) {
  json failed = json::array();
  for (const auto& [id, detail] : verdict.failed_checks) failed.push_back({{"check", id}, {"detail", detail}});
  return {{"candidate", candidate.to_json()},
          {"failed_checks", failed},
          {"missing_info", verdict.missing_info},
          {"score", verdict.score},
          {"budget_exhausted", verdict.budget_exhausted}};
}

session::SessionState record_approval(session::SessionState state, session::PayloadStore& payloads,
                                      const std::string& decision, const std::string& note,
                                      const std::string& subject, std::int64_t ts) {
  if (decision != "approve" && decision != "override")
    throw Error(ErrorCode::invalid_argument, "decision must be approve or override");
  std::string note_digest = payloads.put(json{{"note", note}});
  return session::update_state(std::move(state),
                               {session::EventKind::human_approved, session::Actor::human,
                                {{"decision", decision}, {"note_digest", note_digest}, {"subject", subject}}, ts},
                               payloads);
}

}  // namespace bladecomp::critic
