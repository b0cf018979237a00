#pragma once

// Application wiring: config document, interactive REPL and the HTTP API
// used by the operator console.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "bladecomp/engine.hpp"

namespace httplib {
class Server;
}

namespace bladecomp::service {

struct EmbedderConfig {
  std::string kind = "hashed";  // hashed | http-endpoint
  std::size_t dim = 256;
  std::string endpoint;
  std::string model;

  std::shared_ptr<const kg::Embedder> make() const;
};

// One document for every module. Relative paths resolve against the
// directory holding the config file.
struct AppConfig {
  engine::EngineConfig engine;
  EmbedderConfig embedder;
  std::map<std::string, llm::BackendProfile> backends;
  std::string default_backend = "offline";
  std::filesystem::path kg_store_dir;
  std::filesystem::path resource_root;
  std::filesystem::path audit_dir;
  std::vector<std::string> autoload;

  static AppConfig from_json(const json& j, const std::filesystem::path& base_dir = ".");
  static AppConfig load(const std::filesystem::path& path);
};

// Profile "offline" (or an empty name) means no backend: routing and
// planning use the keyword fallbacks and KG answers are templated.
std::shared_ptr<llm::Backend> make_backend(const AppConfig& config, const std::string& profile);

std::shared_ptr<const kg::TripleStore> load_store(const AppConfig& config);

std::unique_ptr<engine::Engine> make_engine(const AppConfig& config, const std::string& profile);

// Writes "<id>.audit.ndjson" under dir.
void flush_audit(const engine::SessionContext& ctx, const std::filesystem::path& dir);

// Human-readable rendering of one turn for the terminal.
std::string render_turn(const engine::TurnResponse& resp);

struct ReplOptions {
  std::string session_id = "repl";
  std::vector<std::string> autoload;
  std::optional<std::filesystem::path> audit_dir;
};

// Reads queries until "exit" or end of input. Returns the process exit code.
int run_repl(engine::Engine& eng, std::istream& in, std::ostream& out, const ReplOptions& options);

struct ApiResponse {
  int status = 200;
  json body = json::object();
};

// Transport-independent request handling; bind() mounts it on httplib.
//
//   POST /sessions                        {id?, resources?: [path]}
//   GET  /sessions/{id}
//   POST /sessions/{id}/turns             {query}
//   POST /sessions/{id}/resources         {path, kind?}
//   GET  /sessions/{id}/audit?offset=&limit=
//   POST /sessions/{id}/approvals         {decision: approve|override, note, subject?}
//   GET  /sessions/{id}/payloads/{digest}
//   GET  /kg/triples/{id}
//   GET  /health
class ApiService {
 public:
  explicit ApiService(engine::Engine& eng, std::optional<std::filesystem::path> audit_dir = std::nullopt);

  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body,
                     const std::map<std::string, std::string>& query = {});

  void bind(httplib::Server& server);

 private:
  struct Slot {
    std::mutex turn_mu;  // held for the whole turn; try_lock enforces one in flight
    std::mutex state_mu; // guards ctx for short reads and writes
    engine::SessionContext ctx;
    std::vector<json> turns;
  };

  std::shared_ptr<Slot> slot(const std::string& id);
  ApiResponse create_session(const json& body);
  ApiResponse post_turn(const std::string& id, const json& body);
  ApiResponse post_resource(const std::string& id, const json& body);
  ApiResponse get_audit(const std::string& id, const std::map<std::string, std::string>& query);
  ApiResponse post_approval(const std::string& id, const json& body);
  ApiResponse get_session(const std::string& id);
  ApiResponse get_payload(const std::string& id, const std::string& digest);
  ApiResponse get_triple(const std::string& id);
  void persist(const Slot& s) const;

  engine::Engine& engine_;
  std::optional<std::filesystem::path> audit_dir_;
  std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::size_t next_id_ = 1;
};

// Structured error body: {error: {code, message, fields}}.
ApiResponse error_response(ErrorCode code, const std::string& message, std::vector<std::string> fields = {});

}  // namespace bladecomp::service
