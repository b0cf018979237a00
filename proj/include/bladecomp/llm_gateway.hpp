#pragma once

// Uniform access to language-model backends. Nothing outside this module
// (and the HTTP embedder in kg_store) talks to a model endpoint.

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "bladecomp/common.hpp"

namespace bladecomp::llm {

enum class Role { router, analysis_planner, kg_synthesizer, extractor };

std::string_view to_string(Role role);
Role parse_role(std::string_view s);

struct BackendProfile {
  enum class Kind { http_endpoint, scripted };
  Kind kind = Kind::scripted;
  std::string name = "default";
  std::string endpoint;     // e.g. http://127.0.0.1:1234
  std::string path = "/v1/chat/completions";
  std::string script_path;  // scripted rule file
  std::string model = "local-model";
  std::chrono::milliseconds timeout{10000};
  int retries = 2;
  std::chrono::milliseconds backoff{200};
  double temperature = 0.0;

  static BackendProfile from_json(const json& j);
  // Throws Error(config) when e.g. a scripted profile names a missing file.
  void validate() const;
};

class Backend {
 public:
  virtual ~Backend() = default;
  // Throws Error(backend_failure) on transport failure and Error(no_rule)
  // when a scripted backend has no matching rule.
  virtual std::string complete(Role role, const std::string& prompt) = 0;
};

struct ScriptedRule {
  std::optional<Role> role;
  std::vector<std::string> contains;  // all must occur (case-folded)
  std::optional<std::string> pattern; // ECMAScript regex over the prompt
  std::string response;
  bool once = false;

  static ScriptedRule from_json(const json& j);
};

// First matching rule wins. Consume-once rules are retired atomically after
// their first match.
class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(std::vector<ScriptedRule> rules);
  static ScriptedBackend from_file(const std::string& path);
  static ScriptedBackend from_json(const json& rules);

  std::string complete(Role role, const std::string& prompt) override;
  std::size_t remaining_once_rules() const;

 private:
  struct Compiled {
    ScriptedRule rule;
    std::optional<std::regex> regex;
    std::unique_ptr<std::atomic<bool>> consumed;
  };
  std::vector<Compiled> rules_;
};

// Chat-completions client (messages array, model, temperature).
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(BackendProfile profile);
  std::string complete(Role role, const std::string& prompt) override;
  const BackendProfile& profile() const { return profile_; }

 private:
  BackendProfile profile_;
};

// Adapter for tests and evaluation drivers.
class FunctionBackend : public Backend {
 public:
  using Fn = std::function<std::string(Role, const std::string&)>;
  explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}
  std::string complete(Role role, const std::string& prompt) override { return fn_(role, prompt); }

 private:
  Fn fn_;
};

// Request body for the chat-completions wire shape.
json chat_request_body(const BackendProfile& profile, Role role, const std::string& prompt);
// Extracts choices[0].message.content; throws Error(backend_failure).
std::string parse_chat_response(const std::string& body);

std::unique_ptr<Backend> make_backend(const BackendProfile& profile);

}  // namespace bladecomp::llm
