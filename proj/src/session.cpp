#include "bladecomp/session.hpp"

#include <fstream>
#include <sstream>

namespace bladecomp::session {

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::pair<std::string_view, Enum> (&table)[N],
                std::string_view what) {
  for (const auto& [name, value] : table)
    if (name == s) return value;
  throw Error(ErrorCode::invalid_argument, "unknown " + std::string(what) + ": '" + std::string(s) + "'");
}

constexpr std::pair<std::string_view, ResourceKind> kResourceKinds[] = {
    {"inspection-csv", ResourceKind::inspection_csv},
    {"pathing-field", ResourceKind::pathing_field},
    {"deflection-field", ResourceKind::deflection_field},
    {"image", ResourceKind::image},
    {"kg-store", ResourceKind::kg_store},
};

constexpr std::pair<std::string_view, Actor> kActors[] = {
    {"central", Actor::central}, {"analysis", Actor::analysis}, {"kg", Actor::kg},
    {"critic", Actor::critic},   {"human", Actor::human},
};

constexpr std::pair<std::string_view, EventKind> kEventKinds[] = {
    {"resource-loaded", EventKind::resource_loaded},
    {"artifact-cached", EventKind::artifact_cached},
    {"agent-invoked", EventKind::agent_invoked},
    {"critic-decided", EventKind::critic_decided},
    {"human-approved", EventKind::human_approved},
    {"reset", EventKind::reset},
    {"query-received", EventKind::query_received},
    {"note", EventKind::note},
};

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum v, const std::pair<std::string_view, Enum> (&table)[N]) {
  for (const auto& [name, value] : table)
    if (value == v) return name;
  return "unknown";
}

const json& require(const json& payload, const char* field) {
  if (!payload.is_object() || !payload.contains(field))
    throw Error(ErrorCode::invalid_argument, std::string("event payload missing field '") + field + "'");
  return payload.at(field);
}

}  // namespace

std::string_view to_string(ResourceKind kind) { return enum_name(kind, kResourceKinds); }
ResourceKind parse_resource_kind(std::string_view s) {
  return parse_enum(s, kResourceKinds, "resource kind");
}

ResourceKind infer_resource_kind(std::string_view path) {
  std::string p = to_lower(std::filesystem::path(std::string(path)).filename().string());
  auto ends_with = [&](std::string_view suffix) {
    return p.size() >= suffix.size() && p.compare(p.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".png") || ends_with(".jpg") || ends_with(".jpeg")) return ResourceKind::image;
  if (ends_with(".tsv") || p.find("kg") != std::string::npos) return ResourceKind::kg_store;
  if (p.find("path") != std::string::npos) return ResourceKind::pathing_field;
  if (p.find("deflect") != std::string::npos) return ResourceKind::deflection_field;
  return ResourceKind::inspection_csv;
}

ResourceHandle ResourceHandle::load(ResourceKind kind, const std::string& path) {
  ResourceHandle h;
  h.kind = kind;
  h.uri = path;
  h.checksum = sha256_hex(read_file(path));
  return h;
}

bool ResourceHandle::verify() const {
  try {
    return sha256_hex(read_file(uri)) == checksum;
  } catch (const Error&) {
    return false;
  }
}

std::string_view to_string(Actor actor) { return enum_name(actor, kActors); }
Actor parse_actor(std::string_view s) { return parse_enum(s, kActors, "actor"); }

std::string_view to_string(EventKind kind) { return enum_name(kind, kEventKinds); }
EventKind parse_event_kind(std::string_view s) { return parse_enum(s, kEventKinds, "event kind"); }

json AuditEvent::to_json() const {
  return {{"ts", ts}, {"actor", std::string(session::to_string(actor))}, {"kind", kind}, {"digest", digest}};
}

AuditEvent AuditEvent::from_json(const json& j) {
  AuditEvent e;
  e.ts = j.at("ts").get<std::int64_t>();
  e.actor = parse_actor(j.at("actor").get<std::string>());
  e.kind = j.at("kind").get<std::string>();
  e.digest = j.at("digest").get<std::string>();
  return e;
}

PayloadStore::PayloadStore(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(*root_);
}

std::string PayloadStore::put(const json& payload) {
  std::string digest = json_digest(payload);
  auto [it, inserted] = payloads_.emplace(digest, payload);
  if (inserted && root_) write_file((*root_ / (digest + ".json")).string(), payload.dump());
  return digest;
}

std::optional<json> PayloadStore::get(const std::string& digest) const {
  auto it = payloads_.find(digest);
  if (it == payloads_.end()) return std::nullopt;
  return it->second;
}

bool PayloadStore::contains(const std::string& digest) const { return payloads_.count(digest) > 0; }

PayloadStore PayloadStore::open(const std::filesystem::path& root) {
  PayloadStore store(root);
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (entry.path().extension() != ".json") continue;
    json payload = json::parse(read_file(entry.path().string()));
    std::string digest = json_digest(payload);
    if (digest != entry.path().stem().string())
      throw Error(ErrorCode::integrity, "payload digest mismatch: " + entry.path().string());
    store.payloads_.emplace(digest, std::move(payload));
  }
  return store;
}

std::string AuditTrail::to_ndjson() const {
  std::string out;
  for (const auto& e : events_) {
    out += e.to_json().dump();
    out += '\n';
  }
  return out;
}

AuditTrail AuditTrail::from_ndjson(std::string_view text) {
  AuditTrail trail;
  for (const auto& line : split(text, '\n')) {
    if (trim(line).empty()) continue;
    trail.append(AuditEvent::from_json(json::parse(line)));
  }
  return trail;
}

json SessionState::to_json() const {
  json j;
  j["session_id"] = session_id;
  j["critic_budget"] = critic_budget;
  j["critic_count"] = critic_count;
  json res = json::object();
  for (const auto& [name, h] : resources)
    res[name] = {{"kind", std::string(to_string(h.kind))}, {"uri", h.uri}, {"checksum", h.checksum}};
  j["resources"] = res;
  json cache_j = json::object();
  for (const auto& [key, c] : cache)
    cache_j[key] = {{"digest", c.digest}, {"producer", c.producer}, {"ts", c.ts}};
  j["cache"] = cache_j;
  json hist = json::array();
  for (const auto& inv : invocation_history)
    hist.push_back({{"agent", inv.agent}, {"instruction_digest", inv.instruction_digest}});
  j["invocation_history"] = hist;
  json appr = json::array();
  for (const auto& a : approvals)
    appr.push_back({{"decision", a.decision}, {"note_digest", a.note_digest}, {"subject", a.subject}});
  j["approvals"] = appr;
  json events = json::array();
  for (const auto& e : audit.events()) events.push_back(e.to_json());
  j["audit"] = events;
  return j;
}

std::string SessionState::digest() const { return json_digest(to_json()); }

SessionState make_session(std::string session_id, int critic_budget) {
  if (critic_budget < 1) throw Error(ErrorCode::config, "critic budget must be >= 1");
  SessionState s;
  s.session_id = std::move(session_id);
  s.critic_budget = critic_budget;
  return s;
}

SessionState update_state(SessionState state, const StateEvent& event, PayloadStore& payloads) {
  const json& p = event.payload;
  switch (event.kind) {
    case EventKind::resource_loaded: {
      ResourceHandle h;
      h.kind = parse_resource_kind(require(p, "kind").get<std::string>());
      h.uri = require(p, "uri").get<std::string>();
      h.checksum = require(p, "checksum").get<std::string>();
      state.resources[require(p, "name").get<std::string>()] = std::move(h);
      break;
    }
    case EventKind::artifact_cached: {
      const auto key = require(p, "key").get<std::string>();
      CacheEntry entry{require(p, "digest").get<std::string>(), require(p, "producer").get<std::string>(),
                       event.ts};
      auto it = state.cache.find(key);
      if (it != state.cache.end()) {
        if (it->second.digest != entry.digest)
          throw Error(ErrorCode::conflict, "cache key '" + key + "' already holds digest " + it->second.digest);
        // Same content: keep the original producer and timestamp.
      } else {
        state.cache.emplace(key, std::move(entry));
      }
      break;
    }
    case EventKind::agent_invoked:
      state.invocation_history.push_back(
          {require(p, "agent").get<std::string>(), require(p, "instruction_digest").get<std::string>()});
      break;
    case EventKind::critic_decided:
      if (state.critic_count >= state.critic_budget + 1)
        throw Error(ErrorCode::conflict, "critic count would exceed budget + 1");
      require(p, "decision");
      ++state.critic_count;
      break;
    case EventKind::human_approved:
      state.approvals.push_back({require(p, "decision").get<std::string>(),
                                 p.value("note_digest", std::string()), p.value("subject", std::string())});
      break;
    case EventKind::reset:
      state.cache.clear();
      state.resources.clear();
      break;
    case EventKind::query_received:
      require(p, "query_digest");
      state.critic_count = 0;
      break;
    case EventKind::note:
      break;
  }
  AuditEvent audit_event;
  audit_event.ts = event.ts;
  audit_event.actor = event.actor;
  audit_event.kind = std::string(to_string(event.kind));
  audit_event.digest = payloads.put(p);
  state.audit.append(std::move(audit_event));
  return state;
}

SessionState replay(const std::string& session_id, int critic_budget, const AuditTrail& trail,
                    const PayloadStore& payloads) {
  SessionState state = make_session(session_id, critic_budget);
  PayloadStore scratch;
  for (const auto& e : trail.events()) {
    auto payload = payloads.get(e.digest);
    if (!payload) throw Error(ErrorCode::integrity, "payload missing for digest " + e.digest);
    StateEvent ev{parse_event_kind(e.kind), e.actor, *payload, e.ts};
    state = update_state(std::move(state), ev, scratch);
  }
  return state;
}

StateEvent resource_loaded(const std::string& name, const ResourceHandle& handle, std::int64_t ts) {
  return {EventKind::resource_loaded, Actor::central,
          {{"name", name}, {"kind", std::string(to_string(handle.kind))}, {"uri", handle.uri},
           {"checksum", handle.checksum}},
          ts};
}

StateEvent artifact_cached(const std::string& key, const std::string& digest, const std::string& producer,
                           std::int64_t ts) {
  return {EventKind::artifact_cached, Actor::analysis,
          {{"key", key}, {"digest", digest}, {"producer", producer}}, ts};
}

StateEvent agent_invoked(Actor actor, const std::string& agent, const std::string& instruction,
                         std::int64_t ts) {
  return {EventKind::agent_invoked, actor,
          {{"agent", agent}, {"instruction_digest", sha256_hex(instruction)}, {"instruction", instruction}},
          ts};
}

std::string cache_key(const std::string& tool_name, const json& args) {
  return tool_name + ":" + json_digest(args).substr(0, 16);
}

json ProvenanceMap::to_json() const {
  json j = json::object();
  for (const auto& [k, v] : entries) j[k] = v;
  return j;
}

ProvenanceMap ProvenanceMap::from_json(const json& j) {
  ProvenanceMap m;
  for (auto it = j.begin(); it != j.end(); ++it) m.entries[it.key()] = it.value().get<std::string>();
  return m;
}

std::string quantity_id(std::string_view metric, std::string_view key) {
  std::string id(metric);
  id += '[';
  id += key;
  id += ']';
  return id;
}

std::optional<std::string> resolve_provenance(const ProvenanceMap& map, std::string_view id,
                                              const TargetIndex& targets) {
  auto it = map.entries.find(std::string(id));
  if (it == map.entries.end()) return std::nullopt;
  if (!targets.count(it->second))
    throw Error(ErrorCode::integrity,
                "dangling provenance: '" + it->first + "' -> '" + it->second + "'");
  return it->second;
}

std::vector<std::string> dangling_keys(const ProvenanceMap& map, const TargetIndex& targets) {
  std::vector<std::string> out;
  for (const auto& [k, v] : map.entries)
    if (!targets.count(v)) out.push_back(k);
  return out;
}

}  // namespace bladecomp::session
