#include "bladecomp/service.hpp"

#include <chrono>
#include <cstdio>
#include <istream>
#include <ostream>
#include <regex>

#include <httplib.h>

namespace bladecomp::service {

namespace fs = std::filesystem;

std::shared_ptr<const kg::Embedder> EmbedderConfig::make() const {
  if (kind == "hashed") return std::make_shared<kg::HashedEmbedder>(dim);
  if (kind == "http-endpoint") return std::make_shared<kg::HttpEmbedder>(endpoint, model, dim);
  throw Error(ErrorCode::config, "unknown embedder kind: " + kind);
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

AppConfig AppConfig::from_json(const json& j, const fs::path& base_dir) {
  AppConfig c;
  try {
    c.engine = engine::EngineConfig::from_json(j);
    if (j.contains("embedder")) {
      const json& e = j.at("embedder");
      c.embedder.kind = e.value("kind", c.embedder.kind);
      c.embedder.dim = e.value("dim", c.embedder.dim);
      c.embedder.endpoint = e.value("endpoint", c.embedder.endpoint);
      c.embedder.model = e.value("model", c.embedder.model);
    }
    const json backends = j.value("backends", json::object());
    for (const auto& [name, profile] : backends.items()) {
      auto p = llm::BackendProfile::from_json(profile);
      p.name = name;
      if (!p.script_path.empty()) p.script_path = resolve(base_dir, p.script_path).string();
      c.backends[name] = p;
    }
    c.default_backend = j.value("default_backend", c.default_backend);
    c.kg_store_dir = resolve(base_dir, j.value("kg_store", std::string()));
    c.resource_root = resolve(base_dir, j.value("resource_root", std::string()));
    c.audit_dir = resolve(base_dir, j.value("audit_dir", std::string()));
    for (const auto& p : j.value("autoload", std::vector<std::string>{})) c.autoload.push_back(resolve(base_dir, p).string());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("malformed config: ") + e.what());
  }
  if (c.default_backend != "offline" && !c.backends.contains(c.default_backend))
    throw Error(ErrorCode::config, "default_backend names an unknown profile: " + c.default_backend);
  return c;
}

AppConfig AppConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path.string()));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

std::shared_ptr<llm::Backend> make_backend(const AppConfig& config, const std::string& profile) {
  const std::string name = profile.empty() ? config.default_backend : profile;
  if (name == "offline") return nullptr;
  auto it = config.backends.find(name);
  if (it == config.backends.end()) throw Error(ErrorCode::config, "unknown backend profile: " + name);
  it->second.validate();
  return llm::make_backend(it->second);
}

std::shared_ptr<const kg::TripleStore> load_store(const AppConfig& config) {
  if (config.kg_store_dir.empty() || !fs::exists(config.kg_store_dir / "records.jsonl")) return nullptr;
  return std::make_shared<kg::TripleStore>(kg::TripleStore::load(config.kg_store_dir, config.embedder.make()));
}

std::unique_ptr<engine::Engine> make_engine(const AppConfig& config, const std::string& profile) {
  auto eng = std::make_unique<engine::Engine>(config.engine,
                                              std::make_shared<tools::ToolRegistry>(tools::ToolRegistry::builtin()),
                                              make_backend(config, profile), load_store(config));
  eng->resource_root = config.resource_root;
  return eng;
}

void flush_audit(const engine::SessionContext& ctx, const fs::path& dir) {
  fs::create_directories(dir);
  write_file((dir / (ctx.state.session_id + ".audit.ndjson")).string(), ctx.state.audit.to_ndjson());
}

std::string render_turn(const engine::TurnResponse& resp) {
  std::string out;
  if (resp.kind == "control") {
    out += resp.recommendation.value("narrative", std::string()) + "\n";
  } else if (resp.verdict == "escalated") {
    out += "Escalated to the operator.\n";
    if (resp.escalation) {
      for (const auto& f : resp.escalation->value("failed_checks", json::array()))
        out += "  failed " + f.value("check", std::string()) + ": " + f.value("detail", std::string()) + "\n";
      for (const auto& m : resp.escalation->value("missing_info", json::array()))
        out += "  missing: " + m.get<std::string>() + "\n";
    }
    if (!resp.escalation_digest.empty()) out += "  report " + resp.escalation_digest + "\n";
  } else if (!resp.table.empty()) {
    out += engine::render_table(resp.table);
  } else {
    out += resp.recommendation.value("narrative", std::string());
    if (!out.empty() && out.back() != '\n') out += "\n";
    const auto ids = resp.recommendation.value("evidence_ids", std::vector<std::string>{});
    if (!ids.empty()) {
      out += "Evidence:";
      for (const auto& id : ids) out += " " + id;
      out += "\n";
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "Elapsed: %.3f s\n", resp.elapsed_ms / 1000.0);
  return out + buf;
}

int run_repl(engine::Engine& eng, std::istream& in, std::ostream& out, const ReplOptions& options) {
  auto ctx = eng.new_session(options.session_id,
                             options.audit_dir ? std::optional(*options.audit_dir / "payloads") : std::nullopt);
  for (const auto& p : options.autoload) {
    try {
      eng.load_resource(ctx, p);
      out << "Loaded " << p << "\n";
    } catch (const std::exception& e) {
      out << "Error: " << e.what() << "\n";
    }
  }
  std::string line;
  while (true) {
    out << "Central Agent --- What would you like to do?\n> " << std::flush;
    if (!std::getline(in, line)) break;
    const std::string cmd = trim(line);
    if (cmd.empty()) continue;
    if (cmd == "exit" || cmd == "quit") break;
    try {
      std::string path = cmd.rfind("load ", 0) == 0 ? trim(cmd.substr(5)) : std::string();
      if (path.size() >= 2 && (path.front() == '\'' || path.front() == '"') && path.back() == path.front())
        path = path.substr(1, path.size() - 2);
      // "load <path>" alone registers a resource; longer requests go through the loop.
      if (!path.empty() && path.find_first_of(" \t'\"") == std::string::npos) {
        eng.load_resource(ctx, path);
        out << "Loaded " << path << "\n";
      } else {
        out << render_turn(eng.run_turn(ctx, cmd));
      }
    } catch (const std::exception& e) {
      out << "Error: " << e.what() << "\n";
    }
    if (options.audit_dir) flush_audit(ctx, *options.audit_dir);
  }
  if (options.audit_dir) flush_audit(ctx, *options.audit_dir);
  out << "Session closed (" << ctx.state.audit.size() << " audit events).\n";
  return 0;
}

// ---- HTTP API --------------------------------------------------------------

ApiResponse error_response(ErrorCode code, const std::string& message, std::vector<std::string> fields) {
  int status = 500;
  switch (code) {
    case ErrorCode::invalid_argument:
    case ErrorCode::parse:
    case ErrorCode::insufficient_data:
      status = 400;
      break;
    case ErrorCode::not_found: status = 404; break;
    case ErrorCode::conflict: status = 409; break;
    case ErrorCode::io: status = 422; break;
    default: status = 500; break;
  }
  return {status, {{"error", {{"code", std::string(to_string(code))}, {"message", message}, {"fields", fields}}}}};
}

namespace {

ApiResponse validation(std::vector<std::string> fields, const std::string& message) {
  return error_response(ErrorCode::invalid_argument, message, std::move(fields));
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

ApiService::ApiService(engine::Engine& eng, std::optional<fs::path> audit_dir)
    : engine_(eng), audit_dir_(std::move(audit_dir)) {}

std::shared_ptr<ApiService::Slot> ApiService::slot(const std::string& id) {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::not_found, "unknown session: " + id);
  return it->second;
}

void ApiService::persist(const Slot& s) const {
  if (audit_dir_) flush_audit(s.ctx, *audit_dir_);
}

ApiResponse ApiService::handle(const std::string& method, const std::string& path, const std::string& body,
                               const std::map<std::string, std::string>& query) {
  json parsed = json::object();
  if (method == "POST" && !trim(body).empty()) {
    try {
      parsed = json::parse(body);
    } catch (const json::exception&) {
      return validation({"body"}, "request body is not valid JSON");
    }
    if (!parsed.is_object()) return validation({"body"}, "request body must be an object");
  }
  static const std::regex session_re(R"(^/sessions/([^/]+)(/[a-z]+)?(?:/([^/]+))?$)");
  static const std::regex triple_re(R"(^/kg/triples/([^/]+)$)");
  std::smatch m;
  try {
    if (path == "/health" && method == "GET") return {200, {{"status", "ok"}}};
    if (path == "/sessions" && method == "POST") return create_session(parsed);
    if (std::regex_match(path, m, triple_re) && method == "GET") return get_triple(m[1]);
    if (std::regex_match(path, m, session_re)) {
      const std::string id = m[1], sub = m[2], extra = m[3];
      if (sub.empty() && extra.empty() && method == "GET") return get_session(id);
      if (extra.empty()) {
        if (sub == "/turns" && method == "POST") return post_turn(id, parsed);
        if (sub == "/resources" && method == "POST") return post_resource(id, parsed);
        if (sub == "/audit" && method == "GET") return get_audit(id, query);
        if (sub == "/approvals" && method == "POST") return post_approval(id, parsed);
      } else if (sub == "/payloads" && method == "GET") {
        return get_payload(id, extra);
      }
    }
    return error_response(ErrorCode::not_found, "no route for " + method + " " + path);
  } catch (const Error& e) {
    return error_response(e.code(), e.what());
  } catch (const std::exception& e) {
    return error_response(ErrorCode::backend_failure, e.what());
  }
}

ApiResponse ApiService::create_session(const json& body) {
  std::vector<std::string> bad;
  if (body.contains("id") && (!body["id"].is_string() || body["id"].get<std::string>().empty() ||
                              body["id"].get<std::string>().find('/') != std::string::npos))
    bad.push_back("id");
  if (body.contains("resources") && !body["resources"].is_array()) bad.push_back("resources");
  if (!bad.empty()) return validation(bad, "invalid session request");

  auto s = std::make_shared<Slot>();
  std::string id;
  {
    std::lock_guard lock(sessions_mu_);
    if (body.contains("id")) {
      id = body["id"].get<std::string>();
      if (sessions_.contains(id)) return error_response(ErrorCode::conflict, "session exists: " + id, {"id"});
    } else {
      do {
        id = "s" + std::to_string(next_id_++);
      } while (sessions_.contains(id));
    }
    s->ctx = engine_.new_session(id, audit_dir_ ? std::optional(*audit_dir_ / "payloads") : std::nullopt);
    sessions_[id] = s;
  }
  std::lock_guard lock(s->state_mu);
  json loaded = json::array();
  for (const auto& r : body.value("resources", json::array())) {
    if (!r.is_string()) return validation({"resources"}, "resource entries must be paths");
    engine_.load_resource(s->ctx, r.get<std::string>());
    loaded.push_back(r);
  }
  persist(*s);
  return {201, {{"session_id", id}, {"resources", loaded}, {"audit_size", s->ctx.state.audit.size()}}};
}

ApiResponse ApiService::get_session(const std::string& id) {
  auto s = slot(id);
  std::lock_guard lock(s->state_mu);
  json resources = json::object();
  for (const auto& [name, h] : s->ctx.state.resources)
    resources[name] = {{"kind", session::to_string(h.kind)}, {"uri", h.uri}, {"checksum", h.checksum}};
  json turns = json::array();
  for (const auto& t : s->turns)
    turns.push_back({{"turn_id", t.value("turn_id", std::string())},
                     {"query", t.value("query", std::string())},
                     {"verdict", t.value("verdict", std::string())}});
  return {200,
          {{"session_id", id},
           {"digest", s->ctx.state.digest()},
           {"resources", resources},
           {"audit_size", s->ctx.state.audit.size()},
           {"turns", turns},
           {"critic_count", s->ctx.state.critic_count}}};
}

ApiResponse ApiService::post_turn(const std::string& id, const json& body) {
  if (!body.contains("query") || !body["query"].is_string() || trim(body["query"].get<std::string>()).empty())
    return validation({"query"}, "query must be a non-empty string");
  auto s = slot(id);
  std::unique_lock turn(s->turn_mu, std::try_to_lock);
  if (!turn.owns_lock()) return error_response(ErrorCode::conflict, "a turn is already in flight for session " + id);
  std::lock_guard lock(s->state_mu);
  auto resp = engine_.run_turn(s->ctx, body["query"].get<std::string>());
  json j = resp.to_json();
  j["turn_id"] = "turn-" + std::to_string(s->turns.size() + 1);
  s->turns.push_back(j);
  persist(*s);
  return {200, j};
}

ApiResponse ApiService::post_resource(const std::string& id, const json& body) {
  std::vector<std::string> bad;
  if (!body.contains("path") || !body["path"].is_string()) bad.push_back("path");
  if (body.contains("kind") && !body["kind"].is_string()) bad.push_back("kind");
  if (!bad.empty()) return validation(bad, "invalid resource request");
  std::optional<session::ResourceKind> kind;
  if (body.contains("kind")) {
    try {
      kind = session::parse_resource_kind(body["kind"].get<std::string>());
    } catch (const Error& e) {
      return validation({"kind"}, e.what());
    }
  }
  auto s = slot(id);
  std::unique_lock turn(s->turn_mu, std::try_to_lock);
  if (!turn.owns_lock()) return error_response(ErrorCode::conflict, "a turn is in flight for session " + id);
  std::lock_guard lock(s->state_mu);
  engine_.load_resource(s->ctx, body["path"].get<std::string>(), kind);
  persist(*s);
  json resources = json::object();
  for (const auto& [name, h] : s->ctx.state.resources) resources[name] = h.checksum;
  return {200, {{"session_id", id}, {"resources", resources}, {"audit_size", s->ctx.state.audit.size()}}};
}

ApiResponse ApiService::get_audit(const std::string& id, const std::map<std::string, std::string>& query) {
  std::size_t offset = 0, limit = 100;
  std::vector<std::string> bad;
  auto read = [&](const char* key, std::size_t& out) {
    auto it = query.find(key);
    if (it == query.end()) return;
    try {
      std::size_t pos = 0;
      long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size() || v < 0) throw std::invalid_argument(key);
      out = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      bad.push_back(key);
    }
  };
  read("offset", offset);
  read("limit", limit);
  if (!bad.empty()) return validation(bad, "offset and limit must be non-negative integers");
  auto s = slot(id);
  std::lock_guard lock(s->state_mu);
  const auto& events = s->ctx.state.audit.events();
  json page = json::array();
  for (std::size_t i = offset; i < events.size() && i < offset + limit; ++i) {
    json e = events[i].to_json();
    e["index"] = i;
    page.push_back(e);
  }
  return {200, {{"session_id", id}, {"total", events.size()}, {"offset", offset}, {"events", page}}};
}

ApiResponse ApiService::post_approval(const std::string& id, const json& body) {
  std::vector<std::string> bad;
  const std::string decision = body.value("decision", json()).is_string() ? body["decision"].get<std::string>() : "";
  if (decision != "approve" && decision != "override") bad.push_back("decision");
  if (body.contains("note") && !body["note"].is_string()) bad.push_back("note");
  if (body.contains("subject") && !body["subject"].is_string()) bad.push_back("subject");
  if (!bad.empty()) return validation(bad, "decision must be approve or override; note and subject are strings");
  auto s = slot(id);
  std::unique_lock turn(s->turn_mu, std::try_to_lock);
  if (!turn.owns_lock()) return error_response(ErrorCode::conflict, "a turn is in flight for session " + id);
  std::lock_guard lock(s->state_mu);
  std::string subject = body.value("subject", std::string());
  if (subject.empty()) {
    if (s->turns.empty()) return validation({"subject"}, "no turn to approve yet");
    subject = s->turns.back().value("turn_id", std::string());
  }
  json verdict;
  bool known = false;
  for (const auto& t : s->turns)
    if (t.value("turn_id", std::string()) == subject) {
      known = true;
      verdict = t.at("verdict");
    }
  if (!known) return error_response(ErrorCode::not_found, "unknown turn: " + subject, {"subject"});
  for (const auto& a : s->ctx.state.approvals)
    if (a.subject == subject)
      return error_response(ErrorCode::conflict, "turn " + subject + " already has a " + a.decision, {"subject"});
  const std::string note = body.value("note", std::string());
  s->ctx.state = critic::record_approval(std::move(s->ctx.state), s->ctx.payloads, decision, note, subject, now_ms());
  persist(*s);
  return {200,
          {{"session_id", id},
           {"subject", subject},
           {"decision", decision},
           {"verdict", verdict},
           {"note_digest", s->ctx.state.approvals.back().note_digest},
           {"audit_size", s->ctx.state.audit.size()}}};
}

ApiResponse ApiService::get_payload(const std::string& id, const std::string& digest) {
  auto s = slot(id);
  std::lock_guard lock(s->state_mu);
  auto p = s->ctx.payloads.get(digest);
  if (!p) return error_response(ErrorCode::not_found, "unknown payload digest: " + digest);
  return {200, {{"digest", digest}, {"payload", *p}}};
}

ApiResponse ApiService::get_triple(const std::string& id) {
  const auto* store = engine_.store();
  const auto* rec = store ? store->find(id) : nullptr;
  if (!rec) return error_response(ErrorCode::not_found, "unknown triple id: " + id);
  return {200, rec->to_json()};
}

void ApiService::bind(httplib::Server& server) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    auto r = handle(req.method, req.path, req.body, query);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get(R"(/.*)", handler);
  server.Post(R"(/.*)", handler);
}

}  // namespace bladecomp::service
