#include "bladecomp/llm_gateway.hpp"

#include <filesystem>
#include <thread>

#include <httplib.h>

namespace bladecomp::llm {

namespace {

constexpr std::pair<std::string_view, Role> kRoles[] = {
    {"router", Role::router},
    {"analysis-planner", Role::analysis_planner},
    {"kg-synthesizer", Role::kg_synthesizer},
    {"extractor", Role::extractor},
};

std::string system_prompt(Role role) {
  switch (role) {
    case Role::router:
      return "You route manufacturing queries. Reply with one JSON object with fields "
             "agent, instruction, input_refs, tool_categories.";
    case Role::analysis_planner:
      return "You plan deterministic tool calls. Reply with a JSON array of "
             "{tool, args, depends_on} objects.";
    case Role::kg_synthesizer:
      return "You answer using only the supplied knowledge-graph evidence. Reply with a JSON object "
             "{answer, claims:[{text, kind, evidence}]}.";
    case Role::extractor:
      return "You extract knowledge-graph triples in the requested TSV format.";
  }
  return {};
}

}  // namespace

std::string_view to_string(Role role) {
  for (const auto& [name, r] : kRoles)
    if (r == role) return name;
  return "unknown";
}

Role parse_role(std::string_view s) {
  for (const auto& [name, r] : kRoles)
    if (name == s) return r;
  throw Error(ErrorCode::invalid_argument, "unknown role: " + std::string(s));
}

BackendProfile BackendProfile::from_json(const json& j) {
  BackendProfile p;
  std::string kind = j.value("kind", std::string("scripted"));
  if (kind == "http-endpoint")
    p.kind = Kind::http_endpoint;
  else if (kind == "scripted")
    p.kind = Kind::scripted;
  else
    throw Error(ErrorCode::config, "unknown backend kind: " + kind);
  p.name = j.value("name", p.name);
  p.endpoint = j.value("endpoint", p.endpoint);
  p.path = j.value("path", p.path);
  p.script_path = j.value("script", p.script_path);
  p.model = j.value("model", p.model);
  p.timeout = std::chrono::milliseconds(j.value("timeout_ms", static_cast<int>(p.timeout.count())));
  p.retries = j.value("retries", p.retries);
  p.backoff = std::chrono::milliseconds(j.value("backoff_ms", static_cast<int>(p.backoff.count())));
  p.temperature = j.value("temperature", p.temperature);
  return p;
}

void BackendProfile::validate() const {
  if (kind == Kind::scripted) {
    if (script_path.empty() || !std::filesystem::exists(script_path))
      throw Error(ErrorCode::config, "scripted profile '" + name + "' needs an existing rule file");
  } else if (endpoint.empty()) {
    throw Error(ErrorCode::config, "http profile '" + name + "' has no endpoint");
  }
  if (retries < 0) throw Error(ErrorCode::config, "retries must be >= 0");
}

ScriptedRule ScriptedRule::from_json(const json& j) {
  ScriptedRule r;
  if (j.contains("role")) r.role = parse_role(j.at("role").get<std::string>());
  if (j.contains("contains")) {
    if (j.at("contains").is_string())
      r.contains.push_back(j.at("contains").get<std::string>());
    else
      r.contains = j.at("contains").get<std::vector<std::string>>();
  }
  if (j.contains("regex")) r.pattern = j.at("regex").get<std::string>();
  const json& resp = j.at("response");
  r.response = resp.is_string() ? resp.get<std::string>() : resp.dump();
  r.once = j.value("once", false);
  return r;
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptedRule> rules) {
  rules_.reserve(rules.size());
  for (auto& r : rules) {
    Compiled c;
    if (r.pattern) c.regex.emplace(*r.pattern, std::regex::ECMAScript | std::regex::icase);
    for (auto& needle : r.contains) needle = to_lower(needle);
    c.rule = std::move(r);
    c.consumed = std::make_unique<std::atomic<bool>>(false);
    rules_.push_back(std::move(c));
  }
}

ScriptedBackend ScriptedBackend::from_json(const json& rules) {
  const json& list = rules.is_object() ? rules.at("rules") : rules;
  std::vector<ScriptedRule> parsed;
  for (const auto& r : list) parsed.push_back(ScriptedRule::from_json(r));
  return ScriptedBackend(std::move(parsed));
}

ScriptedBackend ScriptedBackend::from_file(const std::string& path) {
  return from_json(json::parse(read_file(path)));
}

std::string ScriptedBackend::complete(Role role, const std::string& prompt) {
  const std::string folded = to_lower(prompt);
  for (auto& c : rules_) {
    if (c.rule.role && *c.rule.role != role) continue;
    if (c.rule.once && c.consumed->load()) continue;
    bool ok = true;
    for (const auto& needle : c.rule.contains)
      if (folded.find(needle) == std::string::npos) {
        ok = false;
        break;
      }
    if (ok && c.regex) ok = std::regex_search(prompt, *c.regex);
    if (!ok) continue;
    if (c.rule.once) {
      bool expected = false;
      if (!c.consumed->compare_exchange_strong(expected, true)) continue;
    }
    return c.rule.response;
  }
  throw Error(ErrorCode::no_rule, "no scripted rule for role " + std::string(to_string(role)));
}

std::size_t ScriptedBackend::remaining_once_rules() const {
  std::size_t n = 0;
  for (const auto& c : rules_)
    if (c.rule.once && !c.consumed->load()) ++n;
  return n;
}

json chat_request_body(const BackendProfile& profile, Role role, const std::string& prompt) {
  return {{"model", profile.model},
          {"temperature", profile.temperature},
          {"stream", false},
          {"messages", json::array({{{"role", "system"}, {"content", system_prompt(role)}},
                                    {{"role", "user"}, {"content", prompt}}})}};
}

std::string parse_chat_response(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::backend_failure, "response is not JSON");
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::backend_failure, std::string("malformed chat response: ") + e.what());
  }
}

HttpBackend::HttpBackend(BackendProfile profile) : profile_(std::move(profile)) {
  if (profile_.endpoint.empty()) throw Error(ErrorCode::config, "http backend needs an endpoint");
}

std::string HttpBackend::complete(Role role, const std::string& prompt) {
  httplib::Client client(profile_.endpoint);
  auto secs = profile_.timeout.count() / 1000;
  auto usecs = (profile_.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  const std::string body = chat_request_body(profile_, role, prompt).dump();

  std::string last_error = "no attempt";
  auto delay = profile_.backoff;
  for (int attempt = 0; attempt <= profile_.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    auto res = client.Post(profile_.path, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    return parse_chat_response(res->body);
  }
  throw Error(ErrorCode::backend_failure, "endpoint " + profile_.endpoint + " failed after " +
                                              std::to_string(profile_.retries + 1) +
                                              " attempts: " + last_error);
}

std::unique_ptr<Backend> make_backend(const BackendProfile& profile) {
  profile.validate();
  if (profile.kind == BackendProfile::Kind::scripted)
    return std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(profile.script_path));
  return std::make_unique<HttpBackend>(profile);
}

}  // namespace bladecomp::llm
