#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <regex>

#include "bladecomp/llm_gateway.hpp"
#include "support/helpers.hpp"

using namespace bladecomp;
using namespace bladecomp::llm;

TEST_CASE("scripted rules: first match wins, roles filter, no-match is explicit") {
  auto b = ScriptedBackend::from_json(json::parse(R"([
    {"role": "router", "contains": "compensation", "response": {"agent": "analysis"}},
    {"contains": "compensation", "response": "generic"},
    {"role": "kg-synthesizer", "regex": "QUESTION: .*wear", "response": "wear answer"}
  ])"));
  CHECK(json::parse(b.complete(Role::router, "give me Compensation")) == json{{"agent", "analysis"}});
  CHECK(b.complete(Role::analysis_planner, "compensation plan") == "generic");
  CHECK(b.complete(Role::kg_synthesizer, "QUESTION: tool wear") == "wear answer");
  try {
    b.complete(Role::extractor, "unrelated");
    FAIL("no-rule not raised");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::no_rule);
  }
}

TEST_CASE("scripted backend is stateless apart from consume-once rules") {
  const json rules = json::parse(R"([
    {"contains": "x", "once": true, "response": "first"},
    {"contains": "x", "response": "later"}
  ])");
  auto a = ScriptedBackend::from_json(rules), b = ScriptedBackend::from_json(rules);
  CHECK(a.remaining_once_rules() == 1);
  CHECK(a.complete(Role::router, "x") == "first");
  CHECK(a.remaining_once_rules() == 0);
  CHECK(a.complete(Role::router, "x") == "later");
  CHECK(b.complete(Role::router, "x") == "first");

  auto s1 = ScriptedBackend::from_json(json::parse(R"([{"contains": "q", "response": "r"}])"));
  for (int i = 0; i < 5; ++i) CHECK(s1.complete(Role::router, "q") == "r");
}

TEST_CASE("profiles validate their inputs") {
  BackendProfile p;
  p.kind = BackendProfile::Kind::scripted;
  p.script_path = "/nonexistent/rules.json";
  CHECK_THROWS_AS(p.validate(), Error);
  BackendProfile h;
  h.kind = BackendProfile::Kind::http_endpoint;
  CHECK_THROWS_AS(h.validate(), Error);
  CHECK_THROWS_AS(BackendProfile::from_json(json{{"kind", "carrier-pigeon"}}), Error);
}

TEST_CASE("chat wire shape") {
  BackendProfile p;
  p.model = "m";
  auto body = chat_request_body(p, Role::router, "hello");
  CHECK(body["model"] == "m");
  CHECK(body["messages"].back()["content"] == "hello");
  CHECK(parse_chat_response(R"({"choices":[{"message":{"content":"hi"}}]})") == "hi");
  CHECK_THROWS_AS(parse_chat_response("{}"), Error);
  CHECK_THROWS_AS(parse_chat_response("not json"), Error);
}

TEST_CASE("unreachable endpoint fails after retries") {
  BackendProfile p;
  p.kind = BackendProfile::Kind::http_endpoint;
  p.endpoint = "http://127.0.0.1:9";
  p.retries = 2;
  p.backoff = std::chrono::milliseconds(1);
  p.timeout = std::chrono::milliseconds(200);
  HttpBackend b(p);
  try {
    b.complete(Role::router, "x");
    FAIL("no failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::backend_failure);
  }
}

TEST_CASE("no module outside the gateway and embedder opens HTTP clients") {
  namespace fs = std::filesystem;
  const fs::path src = fs::path(BLADECOMP_DATA_DIR).parent_path() / "src";
  const std::regex client(R"(httplib::Client)");
  for (const auto& e : fs::directory_iterator(src)) {
    if (e.path().extension() != ".cpp") continue;
    const std::string name = e.path().filename().string();
    const bool uses = std::regex_search(read_file(e.path().string()), client);
    if (name == "llm_gateway.cpp" || name == "kg_store.cpp")
      continue;
    CHECK_MESSAGE(!uses, name);
  }
}
