#pragma once

// Shared session state, audit trail and provenance model.
//
// SessionState is event sourced: every mutation goes through update_state(),
// which appends an AuditEvent carrying the digest of the event payload. The
// payload itself lives in a content-addressed PayloadStore, so a trail plus
// its payload store can be replayed into an identical state.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bladecomp/common.hpp"

namespace bladecomp::session {

enum class ResourceKind { inspection_csv, pathing_field, deflection_field, image, kg_store };

std::string_view to_string(ResourceKind kind);
ResourceKind parse_resource_kind(std::string_view s);
// Best guess from a file name; ".csv" files containing "path" map to pathing_field.
ResourceKind infer_resource_kind(std::string_view path);

struct ResourceHandle {
  ResourceKind kind = ResourceKind::inspection_csv;
  std::string uri;
  std::string checksum;

  // Reads the file and records its content digest.
  static ResourceHandle load(ResourceKind kind, const std::string& path);
  bool verify() const;
};

enum class Actor { central, analysis, kg, critic, human };

std::string_view to_string(Actor actor);
Actor parse_actor(std::string_view s);

struct AuditEvent {
  std::int64_t ts = 0;
  Actor actor = Actor::central;
  std::string kind;
  std::string digest;

  json to_json() const;
  static AuditEvent from_json(const json& j);
  bool operator==(const AuditEvent&) const = default;
};

// Digest-addressed payloads. Optionally mirrored to a directory of
// "<digest>.json" files.
class PayloadStore {
 public:
  PayloadStore() = default;
  explicit PayloadStore(std::filesystem::path root);

  std::string put(const json& payload);
  std::optional<json> get(const std::string& digest) const;
  bool contains(const std::string& digest) const;
  std::size_t size() const { return payloads_.size(); }

  // Loads every "<digest>.json" file under root, verifying the digests.
  static PayloadStore open(const std::filesystem::path& root);

 private:
  std::map<std::string, json> payloads_;
  std::optional<std::filesystem::path> root_;
};

class AuditTrail {
 public:
  void append(AuditEvent event) { events_.push_back(std::move(event)); }
  const std::vector<AuditEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }

  // Newline-delimited JSON, one {ts, actor, kind, digest} object per line.
  std::string to_ndjson() const;
  static AuditTrail from_ndjson(std::string_view text);

  bool operator==(const AuditTrail&) const = default;

 private:
  std::vector<AuditEvent> events_;
};

struct CacheEntry {
  std::string digest;
  std::string producer;  // "call-<k>" or triple / retrieval id
  std::int64_t ts = 0;
  bool operator==(const CacheEntry&) const = default;
};

struct Invocation {
  std::string agent;
  std::string instruction_digest;
  bool operator==(const Invocation&) const = default;
};

struct Approval {
  std::string decision;  // approve | override
  std::string note_digest;
  std::string subject;   // turn or verdict reference
  bool operator==(const Approval&) const = default;
};

enum class EventKind {
  resource_loaded,
  artifact_cached,
  agent_invoked,
  critic_decided,
  human_approved,
  reset,
  query_received,
  note,
};

std::string_view to_string(EventKind kind);
// Throws Error(invalid_argument) naming the unknown kind.
EventKind parse_event_kind(std::string_view s);

struct StateEvent {
  EventKind kind = EventKind::note;
  Actor actor = Actor::central;
  json payload = json::object();
  std::int64_t ts = 0;
};

struct SessionState {
  std::string session_id;
  int critic_budget = 3;
  std::map<std::string, ResourceHandle> resources;
  std::map<std::string, CacheEntry> cache;
  std::vector<Invocation> invocation_history;
  int critic_count = 0;
  std::vector<Approval> approvals;
  AuditTrail audit;

  json to_json() const;
  std::string digest() const;
};

SessionState make_session(std::string session_id, int critic_budget = 3);

// Applies one event and appends it to the audit trail. The payload is
// written to `payloads`. Throws on malformed payloads, cache-key conflicts
// and critic-count overflow past budget + 1.
SessionState update_state(SessionState state, const StateEvent& event, PayloadStore& payloads);

// Rebuilds a state by replaying `trail` against its payload store.
SessionState replay(const std::string& session_id, int critic_budget, const AuditTrail& trail,
                    const PayloadStore& payloads);

// Convenience builders for the common events.
StateEvent resource_loaded(const std::string& name, const ResourceHandle& handle, std::int64_t ts);
StateEvent artifact_cached(const std::string& key, const std::string& digest,
                           const std::string& producer, std::int64_t ts);
StateEvent agent_invoked(Actor actor, const std::string& agent, const std::string& instruction,
                         std::int64_t ts);

// Cache key from (tool name, canonical argument digest).
std::string cache_key(const std::string& tool_name, const json& args);

struct ProvenanceMap {
  // quantity id ("Trc[2+17]") -> target ("call-3.trc" or a triple id)
  std::map<std::string, std::string> entries;

  void add(std::string quantity_id, std::string target) {
    entries[std::move(quantity_id)] = std::move(target);
  }
  bool operator==(const ProvenanceMap&) const = default;
  json to_json() const;
  static ProvenanceMap from_json(const json& j);
};

// Quantity identifiers use the "metric[pair-key]" form.
std::string quantity_id(std::string_view metric, std::string_view key);

// Set of resolvable targets: "call-<k>.<field>" names and triple ids.
using TargetIndex = std::set<std::string>;

// nullopt when the id is unmapped; throws Error(integrity) naming the key
// when it is mapped to a target absent from `targets`.
std::optional<std::string> resolve_provenance(const ProvenanceMap& map, std::string_view id,
                                              const TargetIndex& targets);

// Keys whose targets are absent from `targets`.
std::vector<std::string> dangling_keys(const ProvenanceMap& map, const TargetIndex& targets);

}  // namespace bladecomp::session
