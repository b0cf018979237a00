#include <doctest.h>

#include <cmath>
#include <random>

#include "bladecomp/critic.hpp"
#include "bladecomp/fixtures.hpp"
#include "support/helpers.hpp"

using namespace bladecomp;
using namespace bladecomp::critic;
namespace ts = testing_support;

namespace {

router::PreprocessedQuery query(const std::string& text) {
  return router::preprocess(text, session::make_session("q"));
}

// Analysis candidate carrying the reference table for parts 4-16.
CandidateAnswer table_candidate() {
  CandidateAnswer c;
  c.origin = router::AgentId::analysis;
  c.narrative = "compensation table";
  const double sin_t = std::sin(analytics::kDefaultTiltDeg * std::acos(-1.0) / 180.0);
  for (const auto& row : fixtures::reference_rows()) {
    for (const auto& [metric, value] : {std::pair{"Trc", row.trc}, std::pair{"Tlc", row.tlc}}) {
      const auto id = session::quantity_id(metric, row.pair_key);
      c.quantities[id] = value;
      c.provenance.add(id, std::string("call-2.") + (metric[1] == 'r' ? "trc" : "tlc"));
    }
    c.proposed_offsets.push_back(analytics::rb_compute_pair_tool_comp(row.trc / sin_t));
  }
  c.targets = {"call-2.trc", "call-2.tlc"};
  c.windows = {analytics::PartRange{4, 16}};
  return c;
}

CandidateAnswer kg_candidate(std::vector<Claim> claims) {
  CandidateAnswer c;
  c.origin = router::AgentId::kg;
  c.narrative = "kg answer";
  c.claims = std::move(claims);
  return c;
}

kg::RetrievalResult retrieved(std::vector<std::string> ids) {
  kg::RetrievalResult r;
  for (auto& id : ids) r.selected.push_back({id, 1.0, 1.0});
  return r;
}

}  // namespace

TEST_CASE("intent alignment") {
  auto q = query("compute the tool compensation for parts 4 to 16");
  CHECK(check_intent(q, table_candidate()).passed);

  auto averages = table_candidate();
  averages.quantities.clear();
  averages.quantities[session::quantity_id("Avg", "2+17")] = 0.001;
  auto r = check_intent(q, averages);
  CHECK_FALSE(r.passed);
  CHECK(r.missing_metrics == std::vector<std::string>{"compensation"});

  auto widened = table_candidate();
  widened.windows = {analytics::PartRange{1, 16}};
  CHECK_FALSE(check_intent(q, widened).passed);

  CandidateAnswer empty;
  CHECK_FALSE(check_intent(q, empty).passed);

  auto pairs = query("average deviation for pair 2+17");
  CandidateAnswer wrong_pair;
  wrong_pair.quantities[session::quantity_id("Avg", "3+18")] = 0.0;
  CHECK_FALSE(check_intent(pairs, wrong_pair).passed);
}

TEST_CASE("tool grounding") {
  auto c = table_candidate();
  CHECK(check_tool_grounding(c).passed);

  c.quantities[session::quantity_id("Avg", "2+17")] = 0.1;
  auto r = check_tool_grounding(c);
  CHECK_FALSE(r.passed);
  REQUIRE(r.details.size() == 1);
  CHECK(r.details[0].find("Avg[2+17]") != std::string::npos);

  auto dangling = table_candidate();
  dangling.targets.erase("call-2.tlc");
  auto d = check_tool_grounding(dangling);
  CHECK_FALSE(d.passed);
  CHECK(d.details.size() == 15);

  CHECK_FALSE(check_tool_grounding(kg_candidate({})).applicable);
}

TEST_CASE("evidence citations") {
  auto ret = retrieved({"t1", "t2"});
  CHECK(check_evidence(kg_candidate({{"keep coolant on", "best-practice", {"t1"}}}), &ret).passed);
  CHECK_FALSE(check_evidence(kg_candidate({{"keep coolant on", "best-practice", {"t9"}}}), &ret).passed);
  CHECK_FALSE(check_evidence(kg_candidate({{"limit offsets", "constraint", {}}}), &ret).passed);
  CHECK(check_evidence(kg_candidate({{"scanner is used", "observation", {}}}), &ret).passed);
  CHECK(check_evidence(kg_candidate({}), &ret).passed);
  CHECK_FALSE(check_evidence(table_candidate(), &ret).applicable);
}

TEST_CASE("safety limits and sign convention") {
  CriticConfig cfg;
  auto c = table_candidate();
  CHECK(check_safety(c, cfg).passed);

  auto big = c;
  big.proposed_offsets[0].t_l = 0.02;
  auto r = check_safety(big, cfg);
  CHECK_FALSE(r.passed);
  CHECK_FALSE(r.repairable);
  CHECK(r.details.at(0).find(big.proposed_offsets[0].pair_key) != std::string::npos);

  auto flipped = c;
  flipped.proposed_offsets[1].t_r = -flipped.proposed_offsets[1].t_r;
  CHECK_FALSE(check_safety(flipped, cfg).passed);

  auto noisy = c;
  noisy.quantities[session::quantity_id("PsiV", c.proposed_offsets[2].pair_key)] = 0.9;
  auto v = check_safety(noisy, cfg);
  CHECK_FALSE(v.passed);
  CHECK(v.details.back().find("escalate") != std::string::npos);

  CandidateAnswer none;
  CHECK(check_safety(none, cfg).passed);
}

TEST_CASE("decision rules") {
  auto q = query("compute the tool compensation for parts 4 to 16");
  CriticConfig cfg;
  session::PayloadStore payloads;
  const auto& reg = *ts::registry();

  auto ok = decide(q, table_candidate(), session::make_session("s"), payloads, cfg, reg, nullptr, 1);
  CHECK(ok.verdict.decision == Decision::accept);
  CHECK(ok.verdict.score == 1.0);
  CHECK(ok.verdict.failed_checks.empty());
  CHECK(ok.state.critic_count == 1);

  auto ungrounded = table_candidate();
  ungrounded.quantities[session::quantity_id("Drift", "2+17")] = 0.0001;
  auto rev = decide(q, ungrounded, session::make_session("s"), payloads, cfg, reg, nullptr, 1);
  CHECK(rev.verdict.decision == Decision::revise);
  CHECK(rev.verdict.next_agent == router::AgentId::analysis);
  REQUIRE(rev.verdict.refinement);
  CHECK(rev.verdict.refinement->find("Drift[2+17]") != std::string::npos);
  CHECK(rev.verdict.score == doctest::Approx(2.0 / 3.0));

  auto state = session::make_session("s", 3);
  for (int i = 0; i < 3; ++i) {
    auto out = decide(q, ungrounded, state, payloads, cfg, reg, nullptr, 2 + i);
    CHECK(out.verdict.decision == Decision::revise);
    state = out.state;
  }
  auto last = decide(q, ungrounded, state, payloads, cfg, reg, nullptr, 9);
  CHECK(last.verdict.decision == Decision::escalate);
  CHECK(last.verdict.budget_exhausted);
  CHECK_FALSE(last.verdict.failed_checks.empty());
  CHECK_FALSE(last.verdict.missing_info.empty());

  auto unsafe = table_candidate();
  unsafe.proposed_offsets[0].t_r = 0.5;
  auto esc = decide(q, unsafe, session::make_session("s"), payloads, cfg, reg, nullptr, 1);
  CHECK(esc.verdict.decision == Decision::escalate);
  CHECK_FALSE(esc.verdict.budget_exhausted);
  CHECK_FALSE(esc.verdict.missing_info.empty());
}

TEST_CASE("termination within the budget for arbitrary candidate streams") {
  std::mt19937 rng(11);
  auto q = query("compute the tool compensation for parts 4 to 16");
  const auto& reg = *ts::registry();
  for (int trial = 0; trial < 200; ++trial) {
    CriticConfig cfg;
    cfg.budget = 1 + static_cast<int>(rng() % 5);
    session::PayloadStore payloads;
    auto state = session::make_session("t", cfg.budget);
    int revises = 0;
    bool terminal = false;
    for (int step = 0; step < cfg.budget + 5 && !terminal; ++step) {
      auto c = table_candidate();
      switch (rng() % 4) {
        case 0: break;
        case 1: c.quantities[session::quantity_id("Avg", "2+17")] = 1.0; break;
        case 2: c.windows = {std::nullopt}; break;
        case 3: c.proposed_offsets[0].t_l = 1.0; break;
      }
      auto out = decide(q, c, state, payloads, cfg, reg, nullptr, step);
      state = out.state;
      const auto& v = out.verdict;
      if (v.decision == Decision::revise) {
        ++revises;
        CHECK(v.next_agent.has_value());
        CHECK(v.refinement.has_value());
      } else {
        terminal = true;
      }
      if (v.decision == Decision::accept) CHECK(v.failed_checks.empty());
      if (v.decision == Decision::escalate) CHECK((!v.missing_info.empty() || v.budget_exhausted));
      // J is the fraction of passing applicable checks.
      int applicable = 0, passed = 0;
      for (const auto& ch : v.checks)
        if (ch.applicable) {
          ++applicable;
          passed += ch.passed;
        }
      CHECK(v.score == doctest::Approx(static_cast<double>(passed) / applicable));
    }
    CHECK(terminal);
    CHECK(revises <= cfg.budget);
  }
}

TEST_CASE("override keeps the verdict in the trail") {
  auto q = query("compute the tool compensation for parts 4 to 16");
  session::PayloadStore payloads;
  auto unsafe = table_candidate();
  unsafe.proposed_offsets[0].t_r = 0.5;
  auto out = decide(q, unsafe, session::make_session("s"), payloads, CriticConfig{}, *ts::registry(), nullptr, 1);
  const auto verdict_event = out.state.audit.events().back();
  auto after = record_approval(out.state, payloads, "override", "checked on the machine", "turn-1", 2);
  REQUIRE(after.audit.size() == out.state.audit.size() + 1);
  CHECK(after.audit.events()[after.audit.size() - 2] == verdict_event);
  CHECK(after.audit.events().back().actor == session::Actor::human);
  CHECK(payloads.get(verdict_event.digest)->at("decision") == "escalate");
  CHECK(after.approvals.back().decision == "override");
  CHECK_THROWS_AS(record_approval(after, payloads, "maybe", "", "turn-1", 3), Error);
}

TEST_CASE("critic config validation") {
  CriticConfig cfg;
  cfg.validate();
  CHECK(CriticConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  cfg.budget = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.max_radius_offset = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
