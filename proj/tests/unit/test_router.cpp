#include <doctest.h>

#include "bladecomp/llm_gateway.hpp"
#include "bladecomp/router.hpp"
#include "support/helpers.hpp"

using namespace bladecomp;
using namespace bladecomp::router;

namespace {

std::set<std::string> cats() { return testing_support::registry()->categories(); }

session::SessionState with_inspection() {
  session::PayloadStore payloads;
  session::ResourceHandle h{session::ResourceKind::inspection_csv, "x.csv", "abc"};
  return session::update_state(session::make_session("r"), session::resource_loaded("inspection-csv", h, 1), payloads);
}

}  // namespace

TEST_CASE("preprocess extracts paths and part ranges") {
  auto st = session::make_session("r");
  auto q = preprocess("load './Inspection_Aggregated.csv' and give me compensation for parts 4 to 16", st);
  CHECK(q.file_paths == std::vector<std::string>{"./Inspection_Aggregated.csv"});
  REQUIRE(q.part_range);
  CHECK(q.part_range->first == 4);
  CHECK(q.part_range->last == 16);
  CHECK(q.requested_metrics == std::vector<std::string>{"compensation"});
  for (const auto& p : q.file_paths) CHECK(q.raw_text.find(p) != std::string::npos);

  auto r = preprocess("reset", st);
  CHECK(r.reset_flag);
  CHECK_FALSE(r.part_range);
  CHECK(r.file_paths.empty());
  CHECK_FALSE(r.pair_keys);
  CHECK(r.requested_metrics.empty());

  auto w = preprocess("analyze the tool wear percentage ranges for each pair (parts 4 to 20)", st);
  REQUIRE(w.part_range);
  CHECK(w.part_range->first == 4);
  CHECK(w.part_range->last == 20);

  auto dash = preprocess("average for parts 3-9 of pair 2+17", st);
  REQUIRE(dash.part_range);
  CHECK(dash.part_range->last == 9);
  REQUIRE(dash.pair_keys);
  CHECK(*dash.pair_keys == std::vector<std::string>{"2+17"});

  auto single = preprocess("drift at part 7", st);
  REQUIRE(single.part_range);
  CHECK(single.part_range->first == 7);
  CHECK(single.part_range->last == 7);

  auto backwards = preprocess("drift for parts 9 to 3", st);
  CHECK_FALSE(backwards.part_range);
  CHECK_THROWS_AS(preprocess("   ", st), Error);
}

TEST_CASE("routing schema validation") {
  json ok{{"agent", "analysis"}, {"instruction", "compute drift"}, {"input_refs", json::array()},
          {"tool_categories", {"Drift and variability proxies"}}};
  auto v = validate_routing(ok, cats());
  REQUIRE(std::holds_alternative<RoutingDecision>(v));
  // Idempotence: re-validating the accepted decision's wire form accepts again.
  auto again = validate_routing(std::get<RoutingDecision>(v).to_wire(), cats());
  REQUIRE(std::holds_alternative<RoutingDecision>(again));
  CHECK(std::get<RoutingDecision>(again).to_wire() == std::get<RoutingDecision>(v).to_wire());

  json bad_agent = ok;
  bad_agent["agent"] = "planner";
  auto b = validate_routing(bad_agent, cats());
  REQUIRE(std::holds_alternative<SchemaViolation>(b));
  CHECK(std::get<SchemaViolation>(b).fields == std::vector<std::string>{"agent"});

  auto kg_only = validate_routing(json{{"agent", "kg"}}, cats());
  REQUIRE(std::holds_alternative<SchemaViolation>(kg_only));
  CHECK(std::get<SchemaViolation>(kg_only).fields ==
        std::vector<std::string>{"instruction", "input_refs", "tool_categories"});

  json bad_cat = ok;
  bad_cat["tool_categories"] = {"Telepathy"};
  CHECK(std::holds_alternative<SchemaViolation>(validate_routing(bad_cat, cats())));
}

TEST_CASE("field omission sweep names exactly the omitted fields") {
  const std::vector<std::string> fields{"agent", "instruction", "input_refs", "tool_categories"};
  json full{{"agent", "kg"}, {"instruction", "explain"}, {"input_refs", json::array()},
            {"tool_categories", {"Knowledge retrieval"}}};
  for (unsigned mask = 1; mask < 16; ++mask) {
    json partial = full;
    std::vector<std::string> omitted;
    for (unsigned i = 0; i < 4; ++i)
      if (mask & (1u << i)) {
        partial.erase(fields[i]);
        omitted.push_back(fields[i]);
      }
    auto v = validate_routing(partial, cats());
    REQUIRE(std::holds_alternative<SchemaViolation>(v));
    CHECK(std::get<SchemaViolation>(v).fields == omitted);
  }
}

TEST_CASE("fallback keyword routing") {
  auto loaded = with_inspection();
  auto q = preprocess("compensation for parts 4 to 16", loaded);
  auto d = fallback_route(q, loaded, cats());
  REQUIRE(d);
  CHECK(d->agent == AgentId::analysis);
  CHECK(std::find(d->tool_categories.begin(), d->tool_categories.end(), "Compensation geometry") !=
        d->tool_categories.end());
  CHECK(d->origin == Origin::fallback);

  auto empty = session::make_session("r");
  auto kgq = fallback_route(preprocess("causes of this deflection for the rotor blade", empty), empty, cats());
  REQUIRE(kgq);
  CHECK(kgq->agent == AgentId::kg);

  // Tie: "why" (kg) and "drift" (analysis) with and without data loaded.
  auto tie = "why is the drift growing";
  CHECK(fallback_route(preprocess(tie, loaded), loaded, cats())->agent == AgentId::analysis);
  CHECK(fallback_route(preprocess(tie, empty), empty, cats())->agent == AgentId::kg);

  CHECK_FALSE(fallback_route(preprocess("hello there", empty), empty, cats()).has_value());
  CHECK(fallback_route(preprocess("hello there", loaded), loaded, cats()).has_value());
}

TEST_CASE("fallback routing is deterministic") {
  auto loaded = with_inspection();
  for (const char* text : {"compensation for parts 4 to 16", "explain the wear", "std of pair 3+18", "reset drift"}) {
    auto q = preprocess(text, loaded);
    auto a = fallback_route(q, loaded, cats()), b = fallback_route(q, loaded, cats());
    REQUIRE(a);
    CHECK(a->to_json().dump() == b->to_json().dump());
  }
}

TEST_CASE("route uses the backend and falls back on malformed replies") {
  auto loaded = with_inspection();
  session::PayloadStore payloads;
  auto q = preprocess("compensation for parts 4 to 16", loaded);

  llm::FunctionBackend good([](llm::Role, const std::string&) {
    return std::string("Sure:\n```json\n{\"agent\":\"analysis\",\"instruction\":\"do it\",\"input_refs\":[],"
                       "\"tool_categories\":[\"Compensation geometry\"]}\n```");
  });
  auto r1 = route(q, loaded, &good, payloads, cats(), 5);
  REQUIRE(r1.decision);
  CHECK(r1.decision->origin == Origin::model);
  CHECK(r1.decision->instruction == "do it");

  llm::FunctionBackend missing_agent([](llm::Role, const std::string&) {
    return std::string("{\"instruction\":\"x\",\"input_refs\":[],\"tool_categories\":[]}");
  });
  auto r2 = route(q, loaded, &missing_agent, payloads, cats(), 5);
  REQUIRE(r2.decision);
  CHECK(r2.decision->origin == Origin::fallback);

  llm::FunctionBackend down([](llm::Role, const std::string&) -> std::string {
    throw Error(ErrorCode::backend_failure, "connection refused");
  });
  auto empty = session::make_session("e");
  auto r3 = route(preprocess("hello there", empty), empty, &down, payloads, cats(), 5);
  CHECK_FALSE(r3.decision);
  CHECK(r3.escalation_needed);
}

TEST_CASE("route is total over assorted queries") {
  auto loaded = with_inspection();
  auto empty = session::make_session("e");
  session::PayloadStore payloads;
  for (const char* text : {"x", "compensation", "why", "parts 1 to 2", "load './a.csv'", "2+17", "reset", "??"}) {
    for (auto* st : {&loaded, &empty}) {
      auto r = route(preprocess(text, *st), *st, nullptr, payloads, cats(), 1);
      CHECK((r.decision.has_value() != r.escalation_needed));
      if (r.decision) CHECK(std::holds_alternative<RoutingDecision>(validate_routing(r.decision->to_wire(), cats())));
    }
  }
}

TEST_CASE("json extraction from replies") {
  CHECK(extract_json_object("noise {\"a\": {\"b\": 1}} trailing")["a"]["b"] == 1);
  CHECK_THROWS_AS(extract_json_object("no object here"), Error);
  CHECK_THROWS_AS(extract_json_object("{broken"), Error);
}
