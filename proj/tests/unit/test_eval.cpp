#include <doctest.h>

#include <random>

#include "bladecomp/eval.hpp"
#include "support/helpers.hpp"
#include "support/oracles.hpp"

using namespace bladecomp;
using namespace bladecomp::eval;
namespace ts = testing_support;

namespace {

PairedTrial trial(const std::string& id, const std::string& condition, double f1, int missing) {
  PairedTrial t;
  t.query_id = id;
  t.condition = condition;
  t.score.f1 = f1;
  t.score.missing = missing;
  return t;
}

std::unique_ptr<engine::Engine> engine_for(std::shared_ptr<llm::Backend> backend, bool use_critic) {
  return ts::make_engine(std::move(backend), use_critic);
}

const std::vector<std::string>& fixture_resources() {
  static const std::vector<std::string> r{ts::fixture_inspection(), ts::fixture_pathing()};
  return r;
}

}  // namespace

TEST_CASE("tool selection scores") {
  auto s = score_tool_selection({"A", "B", "C"}, {"A", "B", "D"});
  CHECK(s.precision == doctest::Approx(2.0 / 3.0));
  CHECK(s.recall == doctest::Approx(2.0 / 3.0));
  CHECK(s.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(s.missing == 1);

  auto same = score_tool_selection({"A", "B"}, {"B", "A"});
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f1 == 1.0);
  CHECK(same.missing == 0);

  auto none = score_tool_selection({"A"}, {});
  CHECK(none.degenerate);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);
  CHECK(none.missing == 1);

  auto empty_required = score_tool_selection({}, {});
  CHECK(empty_required.degenerate);
  CHECK(empty_required.precision == 1.0);

  auto helper = score_tool_selection({"A"}, {"A", "H"}, {"H"});
  CHECK(helper.precision == 1.0);
}

TEST_CASE("selection scores against the counting oracle on all subsets") {
  const std::vector<std::string> universe{"A", "B", "C", "D", "E"};
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      std::set<std::string> required, called_set;
      std::vector<std::string> called;
      for (int i = 0; i < 5; ++i) {
        if (r >> i & 1) required.insert(universe[i]);
        if (c >> i & 1) {
          called.push_back(universe[i]);
          called_set.insert(universe[i]);
        }
      }
      auto s = score_tool_selection(required, called);
      auto o = oracle::selection_counts(required, called_set);
      if (!required.empty() && !called.empty()) {
        CHECK(s.precision == doctest::Approx(o.p));
        CHECK(s.recall == doctest::Approx(o.r));
        if (s.precision + s.recall > 0)
          CHECK(s.f1 == doctest::Approx(2 * s.precision * s.recall / (s.precision + s.recall)));
      }
      CHECK(s.missing == o.missing);
    }
}

TEST_CASE("critic value metrics") {
  std::vector<PairedTrial> same{trial("q1", "critic", 1.0, 0), trial("q1", "no-critic", 1.0, 0)};
  auto v = critic_value_metrics(same);
  CHECK(v.improved_rate == 0.0);
  CHECK(v.reduced_missing_rate == 0.0);
  CHECK(v.full_recovery_rate == 0.0);

  auto one = critic_value_metrics({trial("q1", "critic", 1.0, 0), trial("q1", "no-critic", 0.5, 2)});
  CHECK(one.improved_rate == 1.0);
  CHECK(one.reduced_missing_rate == 1.0);
  CHECK(one.full_recovery_rate == 1.0);

  CHECK_THROWS_AS(critic_value_metrics({trial("q1", "critic", 1.0, 0)}), Error);
  CHECK_THROWS_AS(critic_value_metrics({trial("q1", "critic", 1, 0), trial("q1", "critic", 1, 0)}), Error);
  CHECK_THROWS_AS(critic_value_metrics({trial("q1", "critic", 1, 0), trial("q1", "other", 1, 0)}), Error);

  std::mt19937 rng(3);
  std::vector<PairedTrial> mixed;
  int improved = 0, reduced = 0, degraded = 0, recovered = 0;
  for (int i = 0; i < 10; ++i) {
    const std::string id = "q" + std::to_string(i);
    const int miss_nc = static_cast<int>(rng() % 3), miss_c = static_cast<int>(rng() % 3);
    const double f1_nc = 1.0 - 0.25 * miss_nc, f1_c = 1.0 - 0.25 * miss_c;
    mixed.push_back(trial(id, "no-critic", f1_nc, miss_nc));
    mixed.push_back(trial(id, "critic", f1_c, miss_c));
    improved += f1_c > f1_nc;
    reduced += miss_c < miss_nc;
    degraded += miss_nc >= 1;
    recovered += miss_nc >= 1 && miss_c == 0;
  }
  auto m = critic_value_metrics(mixed);
  CHECK(m.pairs == 10);
  CHECK(m.degraded == degraded);
  CHECK(m.improved_rate == doctest::Approx(improved / 10.0));
  CHECK(m.reduced_missing_rate == doctest::Approx(reduced / 10.0));
  CHECK(m.full_recovery_rate == doctest::Approx(degraded ? static_cast<double>(recovered) / degraded : 0.0));
}

TEST_CASE("hint degradation") {
  const std::vector<std::string> hints{"compute_inspection_pairs", "rb_compute_wear_drift", "rb_compute_average"};
  CHECK(degrade_routing("q1", hints, 0.0, 7).empty());
  CHECK(degrade_routing("q1", hints, 1.0, 7) == hints);
  CHECK(degrade_routing("q1", {}, 0.5, 7).empty());
  for (int i = 0; i < 450; ++i) {
    const auto id = "trial-" + std::to_string(i);
    CHECK(degrade_routing(id, hints, 0.3, 99) == degrade_routing(id, hints, 0.3, 99));
  }
  std::size_t dropped = 0, total = 0;
  for (int i = 0; i < 400; ++i) {
    const auto d = degrade_routing("q" + std::to_string(i), hints, 0.3, 1);
    dropped += d.size();
    total += hints.size();
  }
  CHECK(total >= 1000);
  CHECK(std::abs(static_cast<double>(dropped) / total - 0.3) <= 0.05);
  for (int i = 0; i < 200; ++i) {
    const double u = hint_hash_unit("q", "h" + std::to_string(i), 5);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("benchmark judgement") {
  BenchQuery q;
  q.id = "t";
  q.level = 2;
  q.prompt = "p";
  q.required = {{"compute_inspection_pairs", json::object()}, {"rb_compute_average", {{"pair_key", "2+17"}}}};
  q.dependencies = {{0, 1}};
  using C = tools::ToolCall;
  const C pairs{1, "compute_inspection_pairs", json::object(), {}};
  const C avg{2, "rb_compute_average", {{"pair_key", "2+17"}}, {1}};

  CHECK(judge_calls(q, {pairs, avg}).pass);
  auto swapped = judge_calls(q, {C{1, "rb_compute_average", {{"pair_key", "2+17"}}, {}}, C{2, pairs.tool, {}, {}}});
  CHECK_FALSE(swapped.pass);
  CHECK(swapped.reasons.at(0).find("ordering") != std::string::npos);
  auto wrong = judge_calls(q, {pairs, C{2, "rb_compute_average", {{"pair_key", "3+18"}}, {1}}});
  CHECK_FALSE(wrong.pass);
  CHECK_FALSE(judge_calls(q, {pairs}).pass);

  BenchQuery single;
  single.id = "s";
  single.prompt = "p";
  single.required = {{"compute_inspection_pairs", json::object()}};
  CHECK(judge_calls(single, {pairs}).pass);

  // Interleaving helper calls never flips a verdict.
  const std::set<std::string> helpers{"rb_compute_surface_dev"};
  const C helper{0, "rb_compute_surface_dev", json::object(), {}};
  for (const auto& calls : std::vector<std::vector<C>>{{pairs, avg}, {avg, pairs}, {pairs}}) {
    for (std::size_t pos = 0; pos <= calls.size(); ++pos) {
      auto with = calls;
      with.insert(with.begin() + static_cast<long>(pos), helper);
      CHECK(judge_calls(q, with, helpers).pass == judge_calls(q, calls, helpers).pass);
    }
  }
}

TEST_CASE("synthetic depth queries are well formed") {
  const auto queries = synthetic_depth_queries();
  std::map<int, int> per_level;
  std::set<std::string> ids;
  for (const auto& q : queries) {
    q.validate();
    ++per_level[q.level];
    CHECK(ids.insert(q.id).second);
    CHECK(BenchQuery::from_json(q.to_json()).to_json() == q.to_json());
  }
  CHECK(per_level == std::map<int, int>{{1, 25}, {2, 25}, {3, 25}});
  CHECK(load_bench_queries(bench_queries_json(queries)).size() == queries.size());
}

TEST_CASE("defect assignment hits the requested counts") {
  const auto queries = synthetic_depth_queries();
  const std::map<int, double> rates{{1, 0.2}, {2, 0.4}, {3, 0.6}};
  auto defects = assign_defects(queries, rates, 11);
  CHECK(defects == assign_defects(queries, rates, 11));
  std::map<int, int> hits;
  for (const auto& q : queries)
    if (defects.count(q.id) && defects.at(q.id) != DefectKind::none) ++hits[q.level];
  CHECK(hits == std::map<int, int>{{1, 5}, {2, 10}, {3, 15}});

  for (const auto& q : queries) {
    auto plan = reference_plan(q, DefectKind::none);
    std::vector<tools::ToolCall> calls;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      std::vector<int> deps = plan[i].value("depends_on", std::vector<int>{});
      calls.push_back({static_cast<int>(i + 1), plan[i]["tool"], plan[i].value("args", json::object()), deps});
    }
    CHECK_MESSAGE(judge_calls(q, calls).pass, q.id);
  }
}

TEST_CASE("depth benchmark pass rates follow the injected defects") {
  auto queries = synthetic_depth_queries();
  const std::map<int, double> rates{{1, 0.2}, {2, 0.4}, {3, 0.6}};
  auto backend = make_reference_backend(queries, assign_defects(queries, rates, 3));
  auto eng = ts::make_engine(backend, false);
  auto report = run_depth_benchmark(queries, *eng, fixture_resources());
  REQUIRE(report.levels.size() == 3);
  CHECK(report.levels[0].pass_rate == doctest::Approx(0.8));
  CHECK(report.levels[1].pass_rate == doctest::Approx(0.6));
  CHECK(report.levels[2].pass_rate == doctest::Approx(0.4));
  CHECK(report.rows.size() == 75);
  CHECK(report.levels_csv().find("level") == 0);
}

TEST_CASE("critic suite recovers dropped hints") {
  auto queries = synthetic_critic_queries(12, *ts::registry());
  REQUIRE(queries.size() == 12);
  for (const auto& q : queries) CHECK(CriticQuery::from_json(q.to_json()).to_json() == q.to_json());
  auto report = run_critic_suite(queries, engine_for, fixture_resources(), 0.3, 7);
  CHECK(report.trials.size() == 24);
  CHECK(report.value.pairs == 12);
  CHECK(report.value.degraded > 0);
  CHECK(report.value.full_recovery_rate == doctest::Approx(1.0));
  double f1_c = 0, f1_nc = 0;
  for (const auto& t : report.trials) (t.condition == "critic" ? f1_c : f1_nc) += t.score.f1;
  CHECK(f1_c > f1_nc);

  auto none = run_critic_suite(queries, engine_for, fixture_resources(), 0.0, 7);
  CHECK(none.value.degraded == 0);
  CHECK(none.value.improved_rate == 0.0);
}

TEST_CASE("open answer scoring") {
  QAItem item;
  item.id = "qa";
  item.prompt = "p";
  item.targets = {{0.0035, 0.0001, "in"}, {25.0, 0.5, ""}};
  item.required_terms = {"radius", "tilt"};
  CHECK(score_qa(item, "Radius offset 0.0035 in at a tilt of 25 degrees").score == doctest::Approx(1.0));
  CHECK(score_qa(item, "Radius offset 0.0035 in with the tilt unchanged").score == doctest::Approx(0.75));
  CHECK(score_qa(item, "Radius offset 0.0889 mm, tilt 25").score == doctest::Approx(1.0));
  CHECK(score_qa(item, "").score == 0.0);

  QAItem terms_only;
  terms_only.id = "t";
  terms_only.prompt = "p";
  terms_only.required_terms = {"coolant"};
  CHECK(score_qa(terms_only, "Use COOLANT").score == 1.0);

  auto nums = extract_numbers("0.25 mm and 12 um and 3.5e-3 in, plus 7");
  REQUIRE(nums.size() == 4);
  CHECK(nums[0].unit == "mm");
  CHECK(nums[1].unit == "um");
  CHECK(nums[2].value == doctest::Approx(0.0035));
  CHECK(nums[3].unit.empty());
  CHECK(*convert_length(25.4, "mm", "in") == doctest::Approx(1.0));
  CHECK(*convert_length(1.0, "in", "um") == doctest::Approx(25400.0));
  CHECK(*convert_length(3.0, "", "mm") == 3.0);
  CHECK_FALSE(convert_length(1.0, "in", "ft").has_value());
}

TEST_CASE("multiple choice generation") {
  QAItem open;
  open.id = "m";
  open.prompt = "What is the value?";
  open.targets = {{100.0, 2.0, ""}};
  auto a = generate_mcq(open, 17);
  REQUIRE(a.item);
  const auto& mcq = *a.item;
  CHECK(mcq.format == "mcq");
  REQUIRE(mcq.options.size() == 4);
  REQUIRE(mcq.correct >= 0);
  for (int i = 0; i < 4; ++i) {
    const double v = std::stod(mcq.options[i]);
    if (i == mcq.correct)
      CHECK(v == doctest::Approx(100.0));
    else
      CHECK(std::abs(v - 100.0) > 2.0);
  }
  auto b = generate_mcq(open, 17);
  CHECK(b.item->options == mcq.options);
  CHECK(b.item->correct == mcq.correct);

  const std::string letter(1, static_cast<char>('A' + mcq.correct));
  CHECK(score_qa(mcq, letter).correct);
  CHECK_FALSE(score_qa(mcq, std::string(1, static_cast<char>('A' + (mcq.correct + 1) % 4))).correct);
  CHECK(pick_option(mcq, "I think it is 100") == letter);

  QAItem wide = open;
  wide.targets = {{100.0, 90.0, ""}};
  auto skipped = generate_mcq(wide, 17);
  CHECK_FALSE(skipped.item.has_value());
  CHECK_FALSE(skipped.report.empty());
}

TEST_CASE("paired QA report") {
  QAItem item;
  item.id = "q";
  item.prompt = "p";
  item.required_terms = {"coolant"};
  auto report = run_qa({item}, [](const QAItem&) { return "coolant"; }, [](const QAItem&) { return "no idea"; });
  CHECK(report.mean_score.at("kg") == 1.0);
  CHECK(report.mean_score.at("no-kg") == 0.0);
  CHECK(report.rows.size() == 2);
}
