#include "bladecomp/analysis_agent.hpp"

#include <algorithm>
#include <regex>

namespace bladecomp::analysis {

namespace {

bool produces(const tools::ToolSpec& spec, std::string_view kind) {
  return std::find(spec.produces.begin(), spec.produces.end(), kind) != spec.produces.end();
}

int canonical_rank(const std::string& tool) {
  const auto& names = tools::standard_tool_names();
  std::string key = tool == "rb_compute_surface_dev" ? "compute_inspection_pairs" : tool;
  auto it = std::find(names.begin(), names.end(), key);
  return it == names.end() ? static_cast<int>(names.size()) : static_cast<int>(it - names.begin());
}

json parse_plan_reply(std::string_view text) {
  std::string t = trim(text);
  try {
    return json::parse(t);
  } catch (const json::exception&) {
  }
  auto a = t.find('['), b = t.rfind(']');
  if (a != std::string::npos && b != std::string::npos && b > a) {
    try {
      return json::parse(t.substr(a, b - a + 1));
    } catch (const json::exception&) {
    }
  }
  return router::extract_json_object(t);
}

std::string resource_kind_for(const std::string& tool) {
  if (tool == "compute_inspection_pairs" || tool == "rb_compute_surface_dev") return "inspection-csv";
  if (tool == "rb_compute_pathing_dev") return "pathing-field";
  return {};
}

bool has_ref(const std::vector<std::string>& refs, const std::string& ref) {
  return std::find(refs.begin(), refs.end(), ref) != refs.end();
}

}  // namespace

PlanRequest PlanRequest::from(const router::PreprocessedQuery& q, const router::RoutingDecision& d) {
  PlanRequest r;
  r.query = q.raw_text;
  r.instruction = d.instruction;
  r.input_refs = d.input_refs;
  r.tool_categories = d.tool_categories;
  r.part_range = q.part_range;
  r.pair_keys = q.pair_keys;
  r.requested_metrics = q.requested_metrics;
  return r;
}

std::string planner_prompt(const PlanRequest& req, const tools::ToolRegistry& registry) {
  std::string out = "PLAN\n";
  out += "Reply with a JSON array of calls: [{\"tool\": name, \"args\": {...}, \"depends_on\": [earlier call "
         "indices]}]. Use only the tools below.\n";
  out += "TOOLS:\n";
  for (const auto& name : registry.names()) {
    const auto* s = registry.find(name);
    if (s->helper) continue;
    std::string params;
    for (const auto& p : s->params) params += (params.empty() ? "" : ", ") + p.name + ":" + p.type + (p.required ? "!" : "");
    std::string outs;
    for (const auto& o : s->outputs) outs += (outs.empty() ? "" : ", ") + o.name;
    out += "  " + name + "(" + params + ") -> " + outs + " [" + s->category + "]\n";
  }
  std::vector<std::string> hints, refs;
  for (const auto& r : req.input_refs) {
    if (r.starts_with("tool:"))
      hints.push_back(r.substr(5));
    else
      refs.push_back(r);
  }
  json entities{{"part_range", req.part_range ? json::array({req.part_range->first, req.part_range->last}) : json()},
                {"pair_keys", req.pair_keys ? json(*req.pair_keys) : json()},
                {"requested_metrics", req.requested_metrics}};
  out += "CATEGORIES: " + json(req.tool_categories).dump() + "\n";
  out += "HINTS: " + json(hints).dump() + "\n";
  out += "REFS: " + json(refs).dump() + "\n";
  out += "ENTITIES: " + entities.dump() + "\n";
  out += "QUERY: " + req.query + "\n";
  out += "INSTRUCTION: " + req.instruction + "\n";
  return out;
}

std::vector<tools::ToolCall> repair_plan(const json& proposed, const PlanRequest& req,
                                         const tools::ToolRegistry& registry, std::vector<std::string>& repairs) {
  const json* list = &proposed;
  if (proposed.is_object() && proposed.contains("calls")) list = &proposed.at("calls");
  if (!list->is_array()) {
    repairs.push_back("plan is not a list of calls");
    return {};
  }
  std::vector<tools::ToolCall> calls;
  std::map<int, int> renumber;  // proposal position -> new index
  int position = 0;
  for (const auto& entry : *list) {
    ++position;
    if (!entry.is_object() || !entry.contains("tool") || !entry.at("tool").is_string()) {
      repairs.push_back("dropped call " + std::to_string(position) + ": no tool name");
      continue;
    }
    std::string name = entry.at("tool").get<std::string>();
    const tools::ToolSpec* spec = registry.find(name);
    if (!spec) {
      repairs.push_back("dropped call " + std::to_string(position) + ": unknown tool " + name);
      continue;
    }
    if (calls.size() == kMaxCalls) {
      repairs.push_back("truncated plan at " + std::to_string(kMaxCalls) + " calls");
      break;
    }
    json args = registry.coerce_args(*spec, entry.value("args", json::object()), repairs);
    if (req.part_range && spec->param("parts") && !args.contains("parts")) {
      args["parts"] = json::array({req.part_range->first, req.part_range->last});
      repairs.push_back(name + ": filled parts from the query");
    }
    if (req.pair_keys && spec->param("pair_keys") && !args.contains("pair_keys") && !args.contains("pair_key")) {
      args["pair_keys"] = *req.pair_keys;
      repairs.push_back(name + ": filled pair_keys from the query");
    }
    auto violations = registry.validate_args(*spec, args);
    if (!violations.empty()) {
      repairs.push_back("dropped call " + std::to_string(position) + ": " + violations.front());
      continue;
    }
    tools::ToolCall call;
    call.index = static_cast<int>(calls.size()) + 1;
    call.tool = name;
    call.args = std::move(args);
    std::set<int> deps;
    if (entry.contains("depends_on") && entry.at("depends_on").is_array()) {
      for (const auto& d : entry.at("depends_on")) {
        int old = d.is_number_integer() ? d.get<int>() : -1;
        auto it = renumber.find(old);
        if (it == renumber.end()) {
          repairs.push_back(name + ": removed dependency " + d.dump() + " (not an earlier call)");
          continue;
        }
        deps.insert(it->second);
      }
    }
    auto link = [&](const std::string& kind) {
      for (int d : deps)
        if (produces(*registry.find(calls[d - 1].tool), kind)) return;
      for (int k = static_cast<int>(calls.size()); k >= 1; --k)
        if (produces(*registry.find(calls[k - 1].tool), kind)) {
          deps.insert(k);
          return;
        }
    };
    for (const auto& kind : spec->requires_inputs) link(kind);
    for (const auto& kind : spec->optional_inputs) link(kind);
    call.depends_on.assign(deps.begin(), deps.end());
    renumber[position] = call.index;
    calls.push_back(std::move(call));
  }
  return calls;
}

std::vector<tools::ToolCall> keyword_plan(const PlanRequest& req, const tools::ToolRegistry& registry,
                                          const tools::Artifacts&) {
  std::vector<std::string> wanted;
  auto add_chain = [&](const std::string& tool) {
    if (!registry.find(tool)) return;
    for (const auto& t : registry.chain_for(tool))
      if (std::find(wanted.begin(), wanted.end(), t) == wanted.end()) wanted.push_back(t);
  };
  static const std::regex ident(R"([a-z_]+)");
  const std::string low = to_lower(req.instruction);
  for (auto it = std::sregex_iterator(low.begin(), low.end(), ident); it != std::sregex_iterator(); ++it)
    if (registry.find(it->str()) && !registry.find(it->str())->helper) add_chain(it->str());
  for (const auto& r : req.input_refs)
    if (r.starts_with("tool:")) add_chain(r.substr(5));
  for (const auto& m : req.requested_metrics) add_chain(tools::preferred_tool_for_metric(m));
  if (wanted.empty()) add_chain("rb_compute_average");

  bool pathing_loaded = has_ref(req.input_refs, "resource:pathing-field");
  bool uses_pathing = std::any_of(wanted.begin(), wanted.end(), [&](const std::string& t) {
    const auto* s = registry.find(t);
    return std::find(s->optional_inputs.begin(), s->optional_inputs.end(), "pathing") != s->optional_inputs.end();
  });
  if (pathing_loaded && uses_pathing) add_chain("rb_compute_pathing_dev");

  std::stable_sort(wanted.begin(), wanted.end(),
                   [](const std::string& a, const std::string& b) { return canonical_rank(a) < canonical_rank(b); });
  json proposed = json::array();
  for (const auto& t : wanted) proposed.push_back({{"tool", t}, {"args", json::object()}});
  std::vector<std::string> ignored;
  return repair_plan(proposed, req, registry, ignored);
}

PlanOutcome plan_calls(const PlanRequest& req, session::SessionState state, session::PayloadStore& payloads,
                       llm::Backend* backend, const tools::ToolRegistry& registry, const ArtifactCache& cached,
                       std::int64_t ts) {
  if (registry.empty()) throw Error(ErrorCode::config, "tool registry is empty");
  PlanOutcome out;
  PlanResult& plan = out.plan;
  bool planned = false;
  if (backend) {
    try {
      json proposed = parse_plan_reply(backend->complete(llm::Role::analysis_planner, planner_prompt(req, registry)));
      plan.calls = repair_plan(proposed, req, registry, plan.repairs);
      plan.origin = "model";
      planned = true;
    } catch (const Error& e) {
      plan.repairs.push_back(std::string("planner backend: ") + e.what() + "; using keyword planner");
    }
  }
  if (!planned) {
    plan.calls = keyword_plan(req, registry, cached.artifacts);
    plan.origin = "fallback";
  }

  for (const auto& c : plan.calls) {
    std::string kind = resource_kind_for(c.tool);
    if (kind.empty()) continue;
    std::string name = c.args.value("resource", kind);
    bool loaded = state.resources.contains(name) ||
                  std::any_of(state.resources.begin(), state.resources.end(),
                              [&](const auto& kv) { return kv.second.uri == name; });
    if (!loaded) {
      plan.diagnostic = "resource missing: " + name;
      plan.calls.clear();
      break;
    }
  }
  if (!plan.diagnostic && plan.calls.empty()) plan.diagnostic = "no viable call sequence for the instruction";

  if (!plan.repairs.empty() || plan.diagnostic) {
    json payload{{"note", "plan"}, {"origin", plan.origin}, {"repairs", plan.repairs}};
    if (plan.diagnostic) payload["diagnostic"] = *plan.diagnostic;
    state = session::update_state(std::move(state), {session::EventKind::note, session::Actor::analysis, payload, ts},
                                  payloads);
  }
  out.state = std::move(state);
  return out;
}

void validate_plan(const std::vector<tools::ToolCall>& calls, const tools::ToolRegistry& registry) {
  if (calls.size() > kMaxCalls)
    throw Error(ErrorCode::invalid_argument, "plan has " + std::to_string(calls.size()) + " calls; limit is " +
                                                 std::to_string(kMaxCalls));
  const int n = static_cast<int>(calls.size());
  for (int i = 0; i < n; ++i) {
    const auto& c = calls[i];
    if (c.index != i + 1) throw Error(ErrorCode::invalid_argument, "call indices must be 1..K in order");
    const auto* spec = registry.find(c.tool);
    if (!spec) throw Error(ErrorCode::invalid_argument, "call " + std::to_string(c.index) + ": unknown tool " + c.tool);
    auto v = registry.validate_args(*spec, c.args);
    if (!v.empty()) throw Error(ErrorCode::invalid_argument, "call " + std::to_string(c.index) + ": " + v.front());
    for (int d : c.depends_on)
      if (d < 1 || d > n)
        throw Error(ErrorCode::invalid_argument,
                    "call " + std::to_string(c.index) + ": dependency " + std::to_string(d) + " does not exist");
  }
  // Cycle detection over the full dependency graph, then the earlier-only rule.
  std::vector<int> color(n, 0);
  auto dfs = [&](auto&& self, int u) -> void {
    color[u] = 1;
    for (int d : calls[u].depends_on) {
      int v = d - 1;
      if (color[v] == 1)
        throw Error(ErrorCode::invalid_argument, "circular dependency through call " + std::to_string(d));
      if (color[v] == 0) self(self, v);
    }
    color[u] = 2;
  };
  for (int i = 0; i < n; ++i)
    if (color[i] == 0) dfs(dfs, i);
  for (const auto& c : calls)
    for (int d : c.depends_on)
      if (d >= c.index)
        throw Error(ErrorCode::invalid_argument, "call " + std::to_string(c.index) + " depends on later call " +
                                                     std::to_string(d));
}

std::vector<std::pair<std::string, double>> reported_quantities(const tools::ToolSpec& spec,
                                                                const tools::ToolOutput& out) {
  std::vector<std::pair<std::string, double>> q;
  for (const auto& f : spec.outputs) {
    if (f.metric.empty() || !out.fields.contains(f.name)) continue;
    const json& v = out.fields.at(f.name);
    if (v.is_number()) {
      q.emplace_back(session::quantity_id(f.metric, "all"), v.get<double>());
    } else if (v.is_object()) {
      for (const auto& [k, x] : v.items())
        if (x.is_number()) q.emplace_back(session::quantity_id(f.metric, k), x.get<double>());
    }
  }
  return q;
}

session::TargetIndex AnalysisResult::targets() const {
  session::TargetIndex t;
  for (const auto& o : outputs)
    for (const auto& [k, _] : o.fields.items()) t.insert(o.id() + "." + k);
  return t;
}

std::string AnalysisResult::digest() const {
  json d = json::array();
  for (const auto& o : outputs) d.push_back(o.digest());
  return json_digest(d);
}

json AnalysisResult::to_json() const {
  json calls_j = json::array(), outputs_j = json::array();
  for (const auto& c : calls) calls_j.push_back(c.to_json());
  for (const auto& o : outputs) outputs_j.push_back({{"id", o.id()}, {"tool", o.tool}, {"fields", o.fields}});
  json j{{"calls", calls_j},
         {"outputs", outputs_j},
         {"provenance", provenance.to_json()},
         {"quantities", quantities},
         {"narrative", narrative}};
  if (failure)
    j["failure"] = {{"call_index", failure->call_index}, {"tool", failure->tool},
                    {"code", to_string(failure->code)}, {"message", failure->message}};
  return j;
}

ExecOutcome execute_sequence(const std::vector<tools::ToolCall>& calls, session::SessionState state,
                             session::PayloadStore& payloads, const tools::ToolRegistry& registry,
                             const tools::ToolEnvironment& env, const ArtifactCache& cached, std::int64_t ts) {
  validate_plan(calls, registry);
  ExecOutcome out;
  AnalysisResult& res = out.result;
  res.calls = calls;
  json resource_sums = json::object();
  for (const auto& [name, h] : state.resources) resource_sums[name] = h.checksum;

  std::string narrative;
  for (const auto& call : calls) {
    const auto* spec = registry.find(call.tool);
    tools::Artifacts inputs;
    json dep_digests = json::array();
    for (int d : call.depends_on) {
      inputs.overlay(res.outputs[d - 1].artifacts);
      dep_digests.push_back(json_digest(res.outputs[d - 1].fields));
    }
    inputs.merge_missing(cached.artifacts);
    tools::ToolOutput output;
    try {
      output = registry.invoke(call, inputs, env);
    } catch (const Error& e) {
      res.failure = CallFailure{call.index, call.tool, e.code(), e.what()};
    } catch (const std::exception& e) {
      res.failure = CallFailure{call.index, call.tool, ErrorCode::tool_failure, e.what()};
    }
    if (res.failure) {
      narrative += "call-" + std::to_string(call.index) + " " + call.tool + " failed: " + res.failure->message + "\n";
      break;
    }
    json key_material{{"args", call.args}, {"deps", dep_digests}, {"resources", resource_sums}, {"cached", cached.digest}};
    state = session::update_state(std::move(state),
                                  session::artifact_cached(session::cache_key(call.tool, key_material),
                                                           json_digest(output.fields), output.id(), ts),
                                  payloads);
    narrative += output.id() + " " + call.tool + "\n";
    for (const auto& [id, value] : reported_quantities(*spec, output)) {
      std::string field;
      for (const auto& f : spec->outputs)
        if (!f.metric.empty() && id.starts_with(f.metric + "[")) field = f.name;
      res.provenance.add(id, output.id() + "." + field);
      res.quantities[id] = value;
      const auto* of = spec->output(field);
      narrative += "  " + id + " = " + format_fixed(value, 6) + (of && !of->unit.empty() ? " " + of->unit : "") +
                   " (" + output.id() + "." + field + ")\n";
    }
    bool reports_metric = std::any_of(spec->outputs.begin(), spec->outputs.end(),
                                      [](const tools::OutputField& f) { return !f.metric.empty(); });
    if (reports_metric && spec->param("parts")) {
      if (call.args.contains("parts"))
        res.windows.push_back(tools::parse_part_range(call.args.at("parts")));
      else
        res.windows.push_back(inputs.parts);
    }
    res.artifacts.overlay(output.artifacts);
    res.outputs.push_back(std::move(output));
  }
  res.narrative = narrative;
  out.cache = cached;
  if (!res.outputs.empty()) {
    out.cache.artifacts.overlay(res.artifacts);
    out.cache.digest = json_digest({{"previous", cached.digest}, {"run", res.digest()}});
  }
  out.state = std::move(state);
  return out;
}

}  // namespace bladecomp::analysis
