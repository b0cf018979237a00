#include "bladecomp/router.hpp"

#include <algorithm>
#include <regex>

namespace bladecomp::router {

namespace {

bool any_word(const std::string& text, std::initializer_list<std::string_view> words) {
  return std::any_of(words.begin(), words.end(), [&](std::string_view w) { return contains_word(text, w); });
}

int count_words(const std::string& text, std::initializer_list<std::string_view> words) {
  int n = 0;
  for (auto w : words) n += contains_word(text, w) ? 1 : 0;
  return n;
}

void push_unique(std::vector<std::string>& v, std::string s) {
  if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(std::move(s));
}

bool looks_like_path(const std::string& s) {
  if (s.empty() || s.find('\n') != std::string::npos) return false;
  static const std::regex ext(R"(\.(csv|tsv|json|jsonl|txt|md|png|jpe?g|bin)$)", std::regex::icase);
  return s.starts_with("./") || s.starts_with("../") || s.starts_with("/") || std::regex_search(s, ext);
}

}  // namespace

std::string_view to_string(AgentId a) { return a == AgentId::analysis ? "analysis" : "kg"; }
std::string_view to_string(Origin o) { return o == Origin::model ? "model" : "fallback"; }

json PreprocessedQuery::to_json() const {
  json j{{"raw_text", raw_text}, {"file_paths", file_paths}, {"reset_flag", reset_flag},
         {"requested_metrics", requested_metrics}};
  j["part_range"] = part_range ? json::array({part_range->first, part_range->last}) : json(nullptr);
  j["pair_keys"] = pair_keys ? json(*pair_keys) : json(nullptr);
  return j;
}

PreprocessedQuery preprocess(std::string_view query, const session::SessionState&) {
  PreprocessedQuery q;
  q.raw_text = trim(query);
  if (q.raw_text.empty()) throw Error(ErrorCode::invalid_argument, "empty query");
  const std::string& raw = q.raw_text;
  const std::string low = to_lower(raw);

  // Quoted paths first, then bare path-like tokens.
  static const std::regex quoted(R"((['"])([^'"]+)\1)");
  std::string unquoted = raw;
  for (auto it = std::sregex_iterator(raw.begin(), raw.end(), quoted); it != std::sregex_iterator(); ++it) {
    std::string inner = (*it)[2].str();
    if (looks_like_path(inner)) push_unique(q.file_paths, inner);
  }
  unquoted = std::regex_replace(raw, quoted, " ");
  static const std::regex token(R"([^\s,;()]+)");
  for (auto it = std::sregex_iterator(unquoted.begin(), unquoted.end(), token); it != std::sregex_iterator(); ++it) {
    std::string t = it->str();
    while (!t.empty() && (t.back() == '.' || t.back() == '?' || t.back() == '!')) {
      if (looks_like_path(t)) break;
      t.pop_back();
    }
    if (looks_like_path(t)) push_unique(q.file_paths, t);
  }

  static const std::regex range(R"(\bparts?\s+(\d+)\s*(?:to|through|-|\xE2\x80\x93|\xE2\x80\x94|\.\.)\s*(\d+)\b)", std::regex::icase);
  static const std::regex single(R"(\bpart\s+(\d+)\b(?!\s*\+))", std::regex::icase);
  std::smatch m;
  if (std::regex_search(raw, m, range)) {
    int a = std::stoi(m[1]), b = std::stoi(m[2]);
    if (a >= 1 && a <= b) q.part_range = analytics::PartRange{a, b};
  } else if (std::regex_search(raw, m, single)) {
    int a = std::stoi(m[1]);
    if (a >= 1) q.part_range = analytics::PartRange{a, a};
  }

  static const std::regex pair(R"((?:^|[^\w.])(\d+)\s*\+\s*(\d+)(?![\w.]))");
  std::vector<std::string> keys;
  for (auto it = std::sregex_iterator(raw.begin(), raw.end(), pair); it != std::sregex_iterator(); ++it) {
    try {
      push_unique(keys, analytics::PairKey::parse((*it)[1].str() + "+" + (*it)[2].str()).str());
    } catch (const Error&) {
    }
  }
  if (!keys.empty()) q.pair_keys = keys;

  q.reset_flag = contains_word(low, "reset");

  auto& rm = q.requested_metrics;
  if (any_word(low, {"compensation", "compensate", "offset", "trc", "tlc"})) rm.push_back("compensation");
  if (any_word(low, {"average", "mean"})) rm.push_back("average");
  if (any_word(low, {"std", "stdev"}) || low.find("standard deviation") != std::string::npos) rm.push_back("std");
  if (any_word(low, {"values"})) rm.push_back("values");
  if (any_word(low, {"level"})) rm.push_back("level");
  if (any_word(low, {"position"})) rm.push_back("position");
  if (any_word(low, {"pathing", "path-tracking"})) rm.push_back("pathing");
  if (any_word(low, {"drift", "wear"})) rm.push_back("drift");
  if (any_word(low, {"variability", "dispersion", "instability"})) rm.push_back("variability");
  if (any_word(low, {"residual", "systematic", "baseline"})) rm.push_back("residual");
  if (any_word(low, {"attribution", "fraction", "fractions", "attribute"})) rm.push_back("attribution");
  if (any_word(low, {"predict", "predicted", "prediction", "forecast"})) rm.push_back("prediction");
  return q;
}

json RoutingDecision::to_wire() const {
  return {{"agent", to_string(agent)},
          {"instruction", instruction},
          {"input_refs", input_refs},
          {"tool_categories", tool_categories}};
}

json RoutingDecision::to_json() const {
  json j = to_wire();
  j["origin"] = to_string(origin);
  return j;
}

Validation validate_routing(const json& raw, const std::set<std::string>& categories) {
  SchemaViolation v;
  auto fail = [&](const std::string& field, const std::string& msg) {
    v.fields.push_back(field);
    v.messages.push_back(field + ": " + msg);
  };
  if (!raw.is_object()) {
    fail("agent", "missing");
    fail("instruction", "missing");
    fail("input_refs", "missing");
    fail("tool_categories", "missing");
    return v;
  }
  RoutingDecision d;
  d.origin = Origin::model;
  if (!raw.contains("agent")) {
    fail("agent", "missing");
  } else if (!raw["agent"].is_string()) {
    fail("agent", "must be a string");
  } else {
    std::string a = raw["agent"].get<std::string>();
    if (a == "analysis")
      d.agent = AgentId::analysis;
    else if (a == "kg")
      d.agent = AgentId::kg;
    else
      fail("agent", "unknown agent '" + a + "'");
  }
  if (!raw.contains("instruction")) {
    fail("instruction", "missing");
  } else if (!raw["instruction"].is_string() || trim(raw["instruction"].get<std::string>()).empty()) {
    fail("instruction", "must be a non-empty string");
  } else {
    d.instruction = raw["instruction"].get<std::string>();
  }
  auto string_array = [&](const char* field, std::vector<std::string>& out) -> bool {
    if (!raw.contains(field)) {
      fail(field, "missing");
      return false;
    }
    const json& a = raw[field];
    if (!a.is_array() || !std::all_of(a.begin(), a.end(), [](const json& x) { return x.is_string(); })) {
      fail(field, "must be an array of strings");
      return false;
    }
    out = a.get<std::vector<std::string>>();
    return true;
  };
  string_array("input_refs", d.input_refs);
  if (string_array("tool_categories", d.tool_categories)) {
    for (const auto& c : d.tool_categories)
      if (!categories.contains(c)) {
        fail("tool_categories", "unknown category '" + c + "'");
        break;
      }
  }
  if (!v.fields.empty()) return v;
  return d;
}

std::string category_for_metric(std::string_view m) {
  if (m == "compensation") return "Compensation geometry";
  if (m == "pathing") return "Pathing projection";
  if (m == "drift" || m == "variability" || m == "residual") return "Drift and variability proxies";
  if (m == "attribution" || m == "prediction") return "Attribution metrics";
  return "Statistics and indexing";
}

namespace {

std::vector<std::string> refs_for(const PreprocessedQuery& q, const session::SessionState& state) {
  std::vector<std::string> refs;
  for (const auto& p : q.file_paths) refs.push_back(p);
  for (const auto& [name, _] : state.resources) refs.push_back("resource:" + name);
  if (q.part_range) refs.push_back("parts:" + std::to_string(q.part_range->first) + "-" + std::to_string(q.part_range->last));
  if (q.pair_keys)
    for (const auto& k : *q.pair_keys) refs.push_back("pair:" + k);
  return refs;
}

bool has_data_resource(const session::SessionState& state) {
  return std::any_of(state.resources.begin(), state.resources.end(), [](const auto& kv) {
    return kv.second.kind == session::ResourceKind::inspection_csv ||
           kv.second.kind == session::ResourceKind::pathing_field ||
           kv.second.kind == session::ResourceKind::deflection_field;
  });
}

}  // namespace

std::optional<RoutingDecision> fallback_route(const PreprocessedQuery& q, const session::SessionState& state,
                                              const std::set<std::string>& categories) {
  const std::string low = to_lower(q.raw_text);
  int analysis = count_words(low, {"compensation", "offset", "drift", "wear", "deviation", "average", "std"});
  int kg = count_words(low, {"cause", "why", "explain", "recommendation", "constraint"}) +
           (low.find("best practice") != std::string::npos ? 1 : 0);
  bool data = has_data_resource(state);
  if (analysis == 0 && kg == 0 && state.resources.empty()) return std::nullopt;

  RoutingDecision d;
  d.origin = Origin::fallback;
  if (analysis != kg)
    d.agent = analysis > kg ? AgentId::analysis : AgentId::kg;
  else
    d.agent = data ? AgentId::analysis : AgentId::kg;
  d.instruction = normalize_text(q.raw_text);
  d.input_refs = refs_for(q, state);

  auto add_cat = [&](const std::string& c) {
    if (categories.contains(c)) push_unique(d.tool_categories, c);
  };
  if (d.agent == AgentId::kg) {
    add_cat("Knowledge retrieval");
  } else {
    add_cat("Data loading");
    for (const auto& m : q.requested_metrics) add_cat(category_for_metric(m));
    if (d.tool_categories.size() <= 1) add_cat("Statistics and indexing");
  }
  return d;
}

std::string routing_prompt(const PreprocessedQuery& q, const session::SessionState& state,
                           const std::set<std::string>& categories) {
  json resources = json::array();
  for (const auto& [name, h] : state.resources) resources.push_back({{"name", name}, {"kind", to_string(h.kind)}});
  std::string out;
  out += "ROUTE\n";
  out += "Reply with one JSON object: {\"agent\": \"analysis\"|\"kg\", \"instruction\": string, "
         "\"input_refs\": [string], \"tool_categories\": [string]}.\n";
  out += "Use \"analysis\" for numeric questions over loaded inspection or pathing data and \"kg\" for "
         "explanations, causes and best practice.\n";
  out += "CATEGORIES: " + json(std::vector<std::string>(categories.begin(), categories.end())).dump() + "\n";
  out += "RESOURCES: " + resources.dump() + "\n";
  out += "ENTITIES: " + q.to_json().dump() + "\n";
  out += "QUERY: " + q.raw_text + "\n";
  return out;
}

json extract_json_object(std::string_view text) {
  auto first = text.find('{');
  auto last = text.rfind('}');
  if (first == std::string_view::npos || last == std::string_view::npos || last < first)
    throw Error(ErrorCode::parse, "no JSON object in reply");
  try {
    return json::parse(text.substr(first, last - first + 1));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string("malformed JSON object: ") + e.what());
  }
}

RouteResult route(const PreprocessedQuery& q, session::SessionState state, llm::Backend* backend,
                  session::PayloadStore& payloads, const std::set<std::string>& categories, std::int64_t ts) {
  RouteResult out;
  std::string why;
  if (backend) {
    try {
      json raw = extract_json_object(backend->complete(llm::Role::router, routing_prompt(q, state, categories)));
      auto v = validate_routing(raw, categories);
      if (auto* d = std::get_if<RoutingDecision>(&v)) {
        out.decision = *d;
      } else {
        const auto& sv = std::get<SchemaViolation>(v);
        why = "routing schema violation: ";
        for (std::size_t i = 0; i < sv.messages.size(); ++i) why += (i ? "; " : "") + sv.messages[i];
      }
    } catch (const Error& e) {
      why = std::string("router backend: ") + e.what();
    }
  } else {
    why = "router backend disabled";
  }
  if (!out.decision) {
    out.decision = fallback_route(q, state, categories);
    if (!why.empty())
      state = session::update_state(std::move(state),
                                    {session::EventKind::note, session::Actor::central,
                                     {{"note", "routing fallback"}, {"reason", why}}, ts},
                                    payloads);
  }
  if (!out.decision) {
    out.escalation_needed = true;
    out.diagnostic = "no routing decision: no keyword match and no resources loaded";
    state = session::update_state(std::move(state),
                                  {session::EventKind::note, session::Actor::central,
                                   {{"note", "escalation needed"}, {"reason", out.diagnostic}}, ts},
                                  payloads);
    out.state = std::move(state);
    return out;
  }
  out.diagnostic = why;
  state = session::update_state(
      std::move(state),
      session::agent_invoked(session::Actor::central, std::string(to_string(out.decision->agent)),
                             out.decision->instruction, ts),
      payloads);
  out.state = std::move(state);
  return out;
}

}  // namespace bladecomp::router
