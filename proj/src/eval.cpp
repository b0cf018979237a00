#include "bladecomp/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <regex>

#include "bladecomp/analytics.hpp"

namespace bladecomp::eval {

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::string fmt(double v, int decimals = 4) { return format_fixed(v, decimals); }

// The "QUERY: ..." line of a planner or routing prompt.
std::string prompt_line(const std::string& prompt, const std::string& tag) {
  auto pos = prompt.find("\n" + tag);
  std::size_t start;
  if (prompt.starts_with(tag))
    start = tag.size();
  else if (pos != std::string::npos)
    start = pos + 1 + tag.size();
  else
    return {};
  auto end = prompt.find('\n', start);
  return prompt.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

int canonical_rank(const std::string& tool) {
  const auto& names = tools::standard_tool_names();
  auto it = std::find(names.begin(), names.end(), tool);
  return it == names.end() ? static_cast<int>(names.size()) : static_cast<int>(it - names.begin());
}

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::vector<std::string> out;
  for (auto& t : v)
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  std::stable_sort(out.begin(), out.end(),
                   [](const std::string& a, const std::string& b) { return canonical_rank(a) < canonical_rank(b); });
  return out;
}

std::string pair_key(int i) { return analytics::PairKey{i, i + analytics::kPartnerOffset}.str(); }

std::set<std::string> registry_helpers(const tools::ToolRegistry& r) {
  std::set<std::string> h;
  for (const auto& n : r.names())
    if (r.find(n)->helper) h.insert(n);
  return h;
}

}  // namespace

// ---- tool-selection metrics ------------------------------------------------

SelectionScore score_tool_selection(const std::set<std::string>& required, const std::vector<std::string>& called,
                                    const std::set<std::string>& helpers) {
  std::set<std::string> c;
  for (const auto& t : called)
    if (!helpers.contains(t)) c.insert(t);
  std::size_t hit = 0;
  for (const auto& t : c) hit += required.contains(t) ? 1 : 0;
  SelectionScore s;
  s.missing = static_cast<int>(required.size() - hit);
  s.degenerate = required.empty() || c.empty();
  if (c.empty())
    s.precision = required.empty() ? 1.0 : 0.0;
  else
    s.precision = static_cast<double>(hit) / static_cast<double>(c.size());
  s.recall = required.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(required.size());
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

CriticValue critic_value_metrics(const std::vector<PairedTrial>& trials) {
  std::map<std::string, std::map<std::string, const PairedTrial*>> by_query;
  for (const auto& t : trials) {
    if (t.condition != "critic" && t.condition != "no-critic")
      throw Error(ErrorCode::invalid_argument, "unknown condition " + t.condition);
    auto& slot = by_query[t.query_id][t.condition];
    if (slot) throw Error(ErrorCode::invalid_argument, "duplicate " + t.condition + " trial for " + t.query_id);
    slot = &t;
  }
  CriticValue v;
  int improved = 0, reduced = 0, recovered = 0;
  for (const auto& [id, conds] : by_query) {
    if (conds.size() != 2) throw Error(ErrorCode::invalid_argument, "unpaired trial for query " + id);
    const auto& c = conds.at("critic")->score;
    const auto& n = conds.at("no-critic")->score;
    ++v.pairs;
    if (c.f1 > n.f1) ++improved;
    if (c.missing < n.missing) ++reduced;
    if (n.missing >= 1) {
      ++v.degraded;
      if (c.missing == 0) ++recovered;
    }
  }
  if (v.pairs > 0) {
    v.improved_rate = static_cast<double>(improved) / v.pairs;
    v.reduced_missing_rate = static_cast<double>(reduced) / v.pairs;
  }
  if (v.degraded > 0) v.full_recovery_rate = static_cast<double>(recovered) / v.degraded;
  return v;
}

double hint_hash_unit(const std::string& query_id, const std::string& hint, std::uint64_t seed) {
  std::string material = query_id;
  material.push_back('\0');
  material += hint;
  material.push_back('\0');
  material += std::to_string(seed);
  const std::string hex = sha256_hex(material).substr(0, 16);
  const std::uint64_t x = std::stoull(hex, nullptr, 16);
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

std::vector<std::string> degrade_routing(const std::string& query_id, const std::vector<std::string>& hints,
                                         double drop_p, std::uint64_t seed) {
  if (!(drop_p >= 0.0 && drop_p <= 1.0)) throw Error(ErrorCode::invalid_argument, "drop_p must be in [0, 1]");
  std::vector<std::string> dropped;
  for (const auto& h : hints)
    if (hint_hash_unit(query_id, h, seed) < drop_p) dropped.push_back(h);
  return dropped;
}

// ---- depth benchmark -------------------------------------------------------

void BenchQuery::validate() const {
  if (id.empty() || prompt.empty()) throw Error(ErrorCode::invalid_argument, "bench query needs id and prompt");
  for (const auto& [a, b] : dependencies)
    if (a < 0 || b < 0 || a >= static_cast<int>(required.size()) || b >= static_cast<int>(required.size()) || a == b)
      throw Error(ErrorCode::invalid_argument, id + ": dependency index out of range");
  switch (level) {
    case 1:
      if (required.size() != 1) throw Error(ErrorCode::invalid_argument, id + ": L1 needs exactly 1 tool");
      break;
    case 2:
      if (required.size() != 2 || dependencies.empty())
        throw Error(ErrorCode::invalid_argument, id + ": L2 needs exactly 2 tools with a dependency");
      break;
    case 3:
      if (required.size() < 3) throw Error(ErrorCode::invalid_argument, id + ": L3 needs at least 3 tools");
      break;
    default:
      throw Error(ErrorCode::invalid_argument, id + ": level must be 1, 2 or 3");
  }
}

json BenchQuery::to_json() const {
  json req = json::array(), deps = json::array();
  for (const auto& r : required) req.push_back({{"tool", r.tool}, {"args", r.args}});
  for (const auto& [a, b] : dependencies) deps.push_back({a, b});
  json j{{"id", id}, {"level", "L" + std::to_string(level)}, {"prompt", prompt}, {"required", req}, {"dependencies", deps}};
  if (!reference_values.empty()) j["reference_values"] = reference_values;
  return j;
}

BenchQuery BenchQuery::from_json(const json& j) {
  BenchQuery q;
  try {
    q.id = j.at("id").get<std::string>();
    const json& lv = j.at("level");
    q.level = lv.is_string() ? std::stoi(lv.get<std::string>().substr(1)) : lv.get<int>();
    q.prompt = j.at("prompt").get<std::string>();
    for (const auto& r : j.at("required")) q.required.push_back({r.at("tool").get<std::string>(), r.value("args", json::object())});
    for (const auto& d : j.value("dependencies", json::array())) q.dependencies.emplace_back(d.at(0).get<int>(), d.at(1).get<int>());
    q.reference_values = j.value("reference_values", std::map<std::string, double>{});
  } catch (const std::exception& e) {
    throw Error(ErrorCode::parse, std::string("malformed bench query: ") + e.what());
  }
  q.validate();
  return q;
}

std::vector<BenchQuery> load_bench_queries(const json& j) {
  const json& list = j.is_array() ? j : j.at("queries");
  std::vector<BenchQuery> out;
  std::set<std::string> ids;
  for (const auto& q : list) {
    out.push_back(BenchQuery::from_json(q));
    if (!ids.insert(out.back().id).second) throw Error(ErrorCode::invalid_argument, "duplicate bench id " + out.back().id);
  }
  return out;
}

json bench_queries_json(const std::vector<BenchQuery>& queries) {
  json list = json::array();
  for (const auto& q : queries) list.push_back(q.to_json());
  return {{"queries", list}};
}

std::vector<BenchQuery> synthetic_depth_queries() {
  std::vector<BenchQuery> out;
  char id[32];
  auto range = [](int k) {
    const int a = 1 + k % 5, b = 10 + k % 7;
    return std::pair{a, b};
  };
  for (int k = 0; k < 25; ++k) {
    BenchQuery q;
    std::snprintf(id, sizeof id, "L1-%02d", k + 1);
    q.id = id;
    q.level = 1;
    const std::string key = pair_key(2 + k % 15);
    switch (k % 4) {
      case 0:
        q.prompt = q.id + ": build the inspection pairs from the loaded measurements";
        q.required = {{"compute_inspection_pairs", json::object()}};
        break;
      case 1:
        q.prompt = q.id + ": which spanwise level holds pair " + key;
        q.required = {{"rb_compute_level", {{"pair_key", key}}}};
        break;
      case 2:
        q.prompt = q.id + ": position within its level of pair " + key;
        q.required = {{"rb_compute_position_in_level", {{"pair_key", key}}}};
        break;
      default:
        q.prompt = q.id + ": pathing deviation at pair " + key;
        q.required = {{"rb_compute_pathing_dev", {{"pair_key", key}}}};
        break;
    }
    out.push_back(q);
  }
  for (int k = 0; k < 25; ++k) {
    BenchQuery q;
    std::snprintf(id, sizeof id, "L2-%02d", k + 1);
    q.id = id;
    q.level = 2;
    const std::string key = pair_key(2 + (k * 4) % 15);
    auto [a, b] = range(k);
    const std::string parts = " over parts " + std::to_string(a) + " to " + std::to_string(b);
    const json window = json::array({a, b});
    RequiredTool second;
    switch (k % 6) {
      case 0:
        q.prompt = q.id + ": average deviation of pair " + key + parts;
        second = {"rb_compute_average", {{"pair_key", key}, {"parts", window}}};
        break;
      case 1:
        q.prompt = q.id + ": standard deviation of pair " + key + parts;
        second = {"rb_compute_std_dev", {{"pair_key", key}, {"parts", window}}};
        break;
      case 2:
        q.prompt = q.id + ": per-part values of pair " + key;
        second = {"rb_compute_values", {{"pair_key", key}}};
        break;
      case 3:
        q.prompt = q.id + ": drift of every pair" + parts;
        second = {"rb_compute_wear_drift", {{"parts", window}}};
        break;
      case 4:
        q.prompt = q.id + ": compensation offsets" + parts;
        second = {"rb_compute_pair_tool_comp", {{"parts", window}}};
        break;
      default:
        q.prompt = q.id + ": cached slice" + parts;
        second = {"fetch_inspection_slices", {{"parts", window}}};
        break;
    }
    q.required = {{"compute_inspection_pairs", json::object()}, second};
    q.dependencies = {{0, 1}};
    out.push_back(q);
  }
  for (int k = 0; k < 25; ++k) {
    BenchQuery q;
    std::snprintf(id, sizeof id, "L3-%02d", k + 1);
    q.id = id;
    q.level = 3;
    auto [a, b] = range(k + 3);
    const std::string parts = " over parts " + std::to_string(a) + " to " + std::to_string(b);
    const json window = json::array({a, b});
    const RequiredTool pairs{"compute_inspection_pairs", json::object()};
    const RequiredTool drift{"rb_compute_wear_drift", {{"parts", window}}};
    switch (k % 5) {
      case 0:
        q.prompt = q.id + ": process variability of each pair" + parts;
        q.required = {pairs, drift, {"rb_compute_process_variability", json::object()}};
        q.dependencies = {{0, 1}, {1, 2}};
        break;
      case 1:
        q.prompt = q.id + ": residual systematic term of each pair" + parts;
        q.required = {pairs, drift, {"rb_compute_residual_systematic", json::object()}};
        q.dependencies = {{0, 1}, {1, 2}};
        break;
      case 2: {
        const int target = b + 1 + k % 3;
        q.prompt = q.id + ": attribution fractions at part " + std::to_string(target) + " from the fit" + parts;
        q.required = {pairs, drift, {"rb_compute_attribution_fractions", {{"target", target}}}};
        q.dependencies = {{0, 1}, {1, 2}};
        break;
      }
      case 3:
        q.prompt = q.id + ": drift after removing pathing" + parts;
        q.required = {pairs, {"rb_compute_pathing_dev", json::object()}, drift};
        q.dependencies = {{0, 2}, {1, 2}};
        break;
      default: {
        const int target = b + 2;
        q.prompt = q.id + ": offsets from drift projected to part " + std::to_string(target) + parts;
        q.required = {pairs, drift,
                      {"rb_compute_pair_tool_comp",
                       {{"parts", window}, {"strategy", "drift-at-target"}, {"target", target}}}};
        q.dependencies = {{0, 1}, {1, 2}};
        break;
      }
    }
    out.push_back(q);
  }
  for (const auto& q : out) q.validate();
  return out;
}

namespace {

bool args_match(const json& constraints, const json& args) {
  for (const auto& [k, v] : constraints.items())
    if (!args.contains(k) || args.at(k) != v) return false;
  return true;
}

}  // namespace

BenchJudgement judge_calls(const BenchQuery& query, const std::vector<tools::ToolCall>& called,
                           const std::set<std::string>& helpers) {
  std::vector<const tools::ToolCall*> seq;
  for (const auto& c : called)
    if (!helpers.contains(c.tool)) seq.push_back(&c);
  BenchJudgement j;
  std::vector<int> pos(query.required.size(), -1);
  for (std::size_t r = 0; r < query.required.size(); ++r) {
    const auto& req = query.required[r];
    bool named = false;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i]->tool != req.tool) continue;
      named = true;
      if (args_match(req.args, seq[i]->args)) {
        pos[r] = static_cast<int>(i);
        break;
      }
    }
    if (pos[r] < 0) j.reasons.push_back((named ? "argument mismatch for " : "missing ") + req.tool);
  }
  for (const auto& [a, b] : query.dependencies) {
    if (pos[a] < 0 || pos[b] < 0) continue;
    if (pos[a] >= pos[b])
      j.reasons.push_back("ordering: " + query.required[a].tool + " must precede " + query.required[b].tool);
  }
  j.pass = j.reasons.empty();
  return j;
}

std::string_view to_string(DefectKind d) {
  switch (d) {
    case DefectKind::none: return "none";
    case DefectKind::omit: return "omit";
    case DefectKind::swap_order: return "swap-order";
    case DefectKind::wrong_arg: return "wrong-arg";
  }
  return "none";
}

namespace {

bool defect_applies(const BenchQuery& q, DefectKind d) {
  switch (d) {
    case DefectKind::none:
    case DefectKind::omit: return true;
    case DefectKind::swap_order: return !q.dependencies.empty();
    case DefectKind::wrong_arg:
      return std::any_of(q.required.begin(), q.required.end(), [](const RequiredTool& r) { return !r.args.empty(); });
  }
  return false;
}

json perturb_arg(const std::string& key, const json& v) {
  if (key == "pair_key") {
    auto k = analytics::PairKey::parse(v.get<std::string>());
    return pair_key(k.pressure == 16 ? 2 : k.pressure + 1);
  }
  if (key == "parts") {
    int a = v[0].get<int>(), b = v[1].get<int>();
    return a < b ? json::array({a + 1, b}) : json::array({a, b + 1});
  }
  if (key == "strategy") return v.get<std::string>() == "mean-deviation" ? "drift-at-target" : "mean-deviation";
  if (v.is_number_integer()) return v.get<int>() + 1;
  if (v.is_number()) return v.get<double>() * 2 + 1;
  return v;
}

}  // namespace

std::map<std::string, DefectKind> assign_defects(const std::vector<BenchQuery>& queries,
                                                 const std::map<int, double>& rate_by_level, std::uint64_t seed) {
  std::map<std::string, DefectKind> out;
  std::map<int, std::vector<const BenchQuery*>> by_level;
  for (const auto& q : queries) {
    by_level[q.level].push_back(&q);
    out[q.id] = DefectKind::none;
  }
  const std::vector<DefectKind> rotation{DefectKind::omit, DefectKind::swap_order, DefectKind::wrong_arg};
  for (auto& [level, list] : by_level) {
    auto it = rate_by_level.find(level);
    const double rate = it == rate_by_level.end() ? 0.0 : it->second;
    if (!(rate >= 0 && rate <= 1)) throw Error(ErrorCode::invalid_argument, "defect rate must be in [0, 1]");
    const auto m = static_cast<std::size_t>(std::llround(rate * static_cast<double>(list.size())));
    std::stable_sort(list.begin(), list.end(), [&](const BenchQuery* a, const BenchQuery* b) {
      return hint_hash_unit(a->id, "defect", seed) < hint_hash_unit(b->id, "defect", seed);
    });
    std::size_t turn = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const BenchQuery& q = *list[i];
      DefectKind kind = DefectKind::omit;
      for (std::size_t step = 0; step < rotation.size(); ++step) {
        DefectKind cand = rotation[(turn + step) % rotation.size()];
        if (defect_applies(q, cand)) {
          kind = cand;
          break;
        }
      }
      ++turn;
      out[q.id] = kind;
    }
  }
  return out;
}

json reference_plan(const BenchQuery& q, DefectKind defect) {
  std::vector<RequiredTool> tools_list = q.required;
  std::vector<std::vector<int>> deps(tools_list.size());
  for (const auto& [a, b] : q.dependencies) deps[b].push_back(a);
  std::vector<int> order(tools_list.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  switch (defect) {
    case DefectKind::none: break;
    case DefectKind::omit: order.pop_back(); break;
    case DefectKind::swap_order: {
      auto [a, b] = q.dependencies.front();
      std::swap(order[a], order[b]);
      break;
    }
    case DefectKind::wrong_arg:
      for (auto& r : tools_list)
        if (!r.args.empty()) {
          const std::string key = r.args.begin().key();
          r.args[key] = perturb_arg(key, r.args[key]);
          break;
        }
      break;
  }
  std::map<int, int> position;  // required index -> 1-based plan position
  for (std::size_t p = 0; p < order.size(); ++p) position[order[p]] = static_cast<int>(p) + 1;
  json plan = json::array();
  for (int r : order) {
    json d = json::array();
    for (int a : deps[r])
      if (position.contains(a)) d.push_back(position[a]);
    plan.push_back({{"tool", tools_list[r].tool}, {"args", tools_list[r].args}, {"depends_on", d}});
  }
  return plan;
}

std::shared_ptr<llm::Backend> make_reference_backend(const std::vector<BenchQuery>& queries,
                                                     std::map<std::string, DefectKind> defects) {
  std::map<std::string, std::pair<BenchQuery, DefectKind>> by_prompt;
  for (const auto& q : queries) {
    auto it = defects.find(q.id);
    by_prompt[trim(q.prompt)] = {q, it == defects.end() ? DefectKind::none : it->second};
  }
  return std::make_shared<llm::FunctionBackend>([by_prompt](llm::Role role, const std::string& prompt) -> std::string {
    const std::string text = trim(prompt_line(prompt, "QUERY: "));
    auto it = by_prompt.find(text);
    if (it == by_prompt.end()) throw Error(ErrorCode::no_rule, "no bench query for prompt");
    const auto& [q, defect] = it->second;
    if (role == llm::Role::router) {
      std::vector<std::string> cats;
      auto reg = tools::ToolRegistry::builtin();
      for (const auto& r : q.required)
        if (const auto* s = reg.find(r.tool))
          if (std::find(cats.begin(), cats.end(), s->category) == cats.end()) cats.push_back(s->category);
      return json{{"agent", "analysis"}, {"instruction", q.prompt}, {"input_refs", json::array()}, {"tool_categories", cats}}
          .dump();
    }
    if (role == llm::Role::analysis_planner) return reference_plan(q, defect).dump();
    throw Error(ErrorCode::no_rule, "reference backend only routes and plans");
  });
}

std::string DepthReport::levels_csv() const {
  std::string out = "level,queries,passes,pass_rate,mean_ms\n";
  for (const auto& l : levels)
    out += "L" + std::to_string(l.level) + "," + std::to_string(l.queries) + "," + std::to_string(l.passes) + "," +
           fmt(l.pass_rate) + "," + fmt(l.mean_ms, 3) + "\n";
  return out;
}

std::string DepthReport::rows_csv() const {
  std::string out = "id,level,pass,called,reasons,elapsed_ms\n";
  for (const auto& r : rows)
    out += r.id + ",L" + std::to_string(r.level) + "," + (r.pass ? "1" : "0") + "," + csv_field(join(r.called, " ")) +
           "," + csv_field(join(r.reasons, "; ")) + "," + fmt(r.elapsed_ms, 3) + "\n";
  return out;
}

DepthReport run_depth_benchmark(const std::vector<BenchQuery>& queries, engine::Engine& eng,
                                const std::vector<std::string>& resources) {
  DepthReport report;
  const auto helpers = registry_helpers(eng.registry());
  std::map<int, LevelReport> levels;
  for (const auto& q : queries) {
    DepthRow row;
    row.id = q.id;
    row.level = q.level;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      auto ctx = eng.new_session("bench-" + q.id);
      for (const auto& r : resources) eng.load_resource(ctx, r);
      auto resp = eng.run_turn(ctx, q.prompt);
      std::vector<tools::ToolCall> calls;
      if (!resp.attempts.empty()) calls = resp.attempts.back().calls;
      for (const auto& c : calls) row.called.push_back(c.tool);
      auto judged = judge_calls(q, calls, helpers);
      row.pass = judged.pass;
      row.reasons = judged.reasons;
    } catch (const std::exception& e) {
      row.pass = false;
      row.reasons.push_back(std::string("engine failure: ") + e.what());
    }
    row.elapsed_ms = ms_since(t0);
    auto& l = levels[q.level];
    l.level = q.level;
    ++l.queries;
    l.passes += row.pass ? 1 : 0;
    l.mean_ms += row.elapsed_ms;
    report.rows.push_back(std::move(row));
  }
  for (auto& [_, l] : levels) {
    l.pass_rate = l.queries ? static_cast<double>(l.passes) / l.queries : 0.0;
    l.mean_ms = l.queries ? l.mean_ms / l.queries : 0.0;
    report.levels.push_back(l);
  }
  return report;
}

// ---- critic recovery suite -------------------------------------------------

json CriticQuery::to_json() const { return {{"id", id}, {"prompt", prompt}, {"hints", hints}}; }

CriticQuery CriticQuery::from_json(const json& j) {
  return {j.at("id").get<std::string>(), j.at("prompt").get<std::string>(), j.at("hints").get<std::vector<std::string>>()};
}

std::vector<CriticQuery> synthetic_critic_queries(std::size_t n, const tools::ToolRegistry& registry) {
  static const std::vector<std::vector<std::string>> combos{
      {"average"},        {"std"},           {"average", "std"},        {"drift"},
      {"variability"},    {"residual"},      {"compensation"},          {"drift", "variability"},
      {"attribution"},    {"pathing"},       {"average", "compensation"}, {"drift", "residual"},
      {"pathing", "drift"}, {"values"},      {"std", "compensation"}};
  static const std::map<std::string, std::string> phrase{
      {"average", "the average deviation"},       {"std", "the standard deviation"},
      {"drift", "the drift per part"},            {"variability", "the process variability"},
      {"residual", "the residual systematic term"}, {"compensation", "the compensation offsets"},
      {"attribution", "the attribution fractions"}, {"pathing", "the pathing deviation"},
      {"values", "the per-part values"}};
  std::vector<CriticQuery> out;
  char id[32];
  for (std::size_t k = 0; k < n; ++k) {
    const auto& metrics = combos[k % combos.size()];
    const int a = 1 + static_cast<int>(k % 4), b = 12 + static_cast<int>(k % 5);
    std::snprintf(id, sizeof id, "C-%02zu", k + 1);
    std::vector<std::string> parts_of_prompt, hints;
    for (const auto& m : metrics) {
      parts_of_prompt.push_back(phrase.at(m));
      for (const auto& t : registry.chain_for(tools::preferred_tool_for_metric(m))) hints.push_back(t);
    }
    CriticQuery q;
    q.id = id;
    q.prompt = q.id + ": report " + join(parts_of_prompt, " and ") + " for parts " + std::to_string(a) + " to " +
               std::to_string(b);
    q.hints = sorted_unique(hints);
    out.push_back(std::move(q));
  }
  return out;
}

std::shared_ptr<llm::Backend> make_hint_backend(const std::vector<CriticQuery>& queries,
                                                std::map<std::string, std::vector<std::string>> dropped) {
  std::map<std::string, std::vector<std::string>> kept_by_prompt;
  for (const auto& q : queries) {
    const auto& d = dropped[q.id];
    std::vector<std::string> kept;
    for (const auto& h : q.hints)
      if (std::find(d.begin(), d.end(), h) == d.end()) kept.push_back(h);
    kept_by_prompt[trim(q.prompt)] = kept;
  }
  return std::make_shared<llm::FunctionBackend>([kept_by_prompt](llm::Role role, const std::string& prompt) -> std::string {
    if (role == llm::Role::router) {
      const std::string text = trim(prompt_line(prompt, "QUERY: "));
      auto it = kept_by_prompt.find(text);
      if (it == kept_by_prompt.end()) throw Error(ErrorCode::no_rule, "no critic-suite query for prompt");
      json refs = json::array();
      std::vector<std::string> cats;
      auto reg = tools::ToolRegistry::builtin();
      for (const auto& h : it->second) {
        refs.push_back("tool:" + h);
        const auto& c = reg.find(h)->category;
        if (std::find(cats.begin(), cats.end(), c) == cats.end()) cats.push_back(c);
      }
      if (cats.empty()) cats.push_back("Data loading");
      return json{{"agent", "analysis"}, {"instruction", text}, {"input_refs", refs}, {"tool_categories", cats}}.dump();
    }
    if (role == llm::Role::analysis_planner) {
      std::vector<std::string> tools_list = json::parse(prompt_line(prompt, "HINTS: ")).get<std::vector<std::string>>();
      const std::string instruction = prompt_line(prompt, "INSTRUCTION: ");
      auto pos = instruction.find("Use tools:");
      if (pos != std::string::npos) {
        auto end = instruction.find('.', pos);
        for (const auto& t : split(instruction.substr(pos + 10, end == std::string::npos ? std::string::npos : end - pos - 10), ','))
          if (!trim(t).empty()) tools_list.push_back(trim(t));
      }
      json plan = json::array();
      for (const auto& t : sorted_unique(tools_list)) plan.push_back({{"tool", t}, {"args", json::object()}});
      return plan.dump();
    }
    throw Error(ErrorCode::no_rule, "hint backend only routes and plans");
  });
}

std::string CriticSuiteReport::trials_csv() const {
  std::string out = "query_id,condition,dropped,called,precision,recall,f1,missing,elapsed_ms\n";
  for (const auto& t : trials)
    out += t.query_id + "," + t.condition + "," + csv_field(join(t.dropped, " ")) + "," + csv_field(join(t.called, " ")) +
           "," + fmt(t.score.precision) + "," + fmt(t.score.recall) + "," + fmt(t.score.f1) + "," +
           std::to_string(t.score.missing) + "," + fmt(t.elapsed_ms, 3) + "\n";
  return out;
}

std::string CriticSuiteReport::summary_csv() const {
  double f1[2] = {0, 0};
  int n[2] = {0, 0};
  for (const auto& t : trials) {
    int i = t.condition == "critic" ? 0 : 1;
    f1[i] += t.score.f1;
    ++n[i];
  }
  std::string out = "pairs,degraded,improved_rate,reduced_missing_rate,full_recovery_rate,mean_f1_critic,mean_f1_no_critic\n";
  out += std::to_string(value.pairs) + "," + std::to_string(value.degraded) + "," + fmt(value.improved_rate) + "," +
         fmt(value.reduced_missing_rate) + "," + fmt(value.full_recovery_rate) + "," + fmt(n[0] ? f1[0] / n[0] : 0) +
         "," + fmt(n[1] ? f1[1] / n[1] : 0) + "\n";
  return out;
}

CriticSuiteReport run_critic_suite(const std::vector<CriticQuery>& queries, const EngineFactory& make_engine,
                                   const std::vector<std::string>& resources, double drop_p, std::uint64_t seed) {
  CriticSuiteReport report;
  for (const auto& q : queries) report.dropped[q.id] = degrade_routing(q.id, q.hints, drop_p, seed);
  auto backend = make_hint_backend(queries, report.dropped);
  for (const bool use_critic : {true, false}) {
    auto eng = make_engine(backend, use_critic);
    const auto helpers = registry_helpers(eng->registry());
    for (const auto& q : queries) {
      PairedTrial t;
      t.query_id = q.id;
      t.condition = use_critic ? "critic" : "no-critic";
      t.dropped = report.dropped[q.id];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        auto ctx = eng->new_session("critic-" + q.id);
        for (const auto& r : resources) eng->load_resource(ctx, r);
        auto resp = eng->run_turn(ctx, q.prompt);
        if (!resp.attempts.empty())
          for (const auto& c : resp.attempts.back().calls) t.called.push_back(c.tool);
      } catch (const std::exception&) {
      }
      t.elapsed_ms = ms_since(t0);
      t.score = score_tool_selection(std::set<std::string>(q.hints.begin(), q.hints.end()), t.called, helpers);
      report.trials.push_back(std::move(t));
    }
  }
  report.value = critic_value_metrics(report.trials);
  return report;
}

// ---- QA --------------------------------------------------------------------

json QAItem::to_json() const {
  json t = json::array();
  for (const auto& x : targets) t.push_back({{"value", x.value}, {"tolerance", x.tolerance}, {"unit", x.unit}});
  json j{{"id", id}, {"format", format}, {"prompt", prompt}, {"targets", t}, {"required_terms", required_terms}, {"seed", seed}};
  if (format == "mcq") {
    j["options"] = options;
    j["correct"] = correct;
  }
  return j;
}

QAItem QAItem::from_json(const json& j) {
  QAItem q;
  try {
    q.id = j.at("id").get<std::string>();
    q.format = j.value("format", std::string("open"));
    q.prompt = j.at("prompt").get<std::string>();
    for (const auto& t : j.value("targets", json::array()))
      q.targets.push_back({t.at("value").get<double>(), t.at("tolerance").get<double>(), t.value("unit", std::string())});
    q.required_terms = j.value("required_terms", std::vector<std::string>{});
    q.options = j.value("options", std::vector<std::string>{});
    q.correct = j.value("correct", -1);
    q.seed = j.value("seed", std::uint64_t{0});
  } catch (const std::exception& e) {
    throw Error(ErrorCode::parse, std::string("malformed QA item: ") + e.what());
  }
  if (q.format != "open" && q.format != "mcq") throw Error(ErrorCode::parse, q.id + ": format must be open or mcq");
  if (q.format == "mcq" && (q.correct < 0 || q.correct >= static_cast<int>(q.options.size())))
    throw Error(ErrorCode::parse, q.id + ": correct option out of range");
  return q;
}

std::vector<ExtractedNumber> extract_numbers(std::string_view text) {
  static const std::regex num(R"(([-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)\s*(inches|inch|in\b|mm\b|um\b|µm|%)?)");
  std::vector<ExtractedNumber> out;
  std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), num); it != std::sregex_iterator(); ++it) {
    ExtractedNumber n;
    try {
      n.value = std::stod((*it)[1].str());
    } catch (const std::exception&) {
      continue;
    }
    std::string u = (*it)[2].str();
    if (u == "inches" || u == "inch") u = "in";
    if (u == "µm") u = "um";
    n.unit = u;
    out.push_back(n);
  }
  return out;
}

std::optional<double> convert_length(double value, std::string_view from, std::string_view to) {
  if (from.empty() || to.empty() || from == to) return value;
  auto per_inch = [](std::string_view u) -> std::optional<double> {
    if (u == "in") return 1.0;
    if (u == "mm") return 25.4;
    if (u == "um") return 25400.0;
    return std::nullopt;
  };
  auto a = per_inch(from), b = per_inch(to);
  if (!a || !b) return std::nullopt;
  return value / *a * *b;
}

namespace {

bool states_target(const std::vector<ExtractedNumber>& nums, const NumericTarget& t) {
  for (const auto& n : nums) {
    auto v = convert_length(n.value, n.unit, t.unit);
    if (v && std::abs(*v - t.value) <= t.tolerance + 1e-12) return true;
  }
  return false;
}

std::string format_option(double v, const std::string& unit) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return std::string(buf) + (unit.empty() ? "" : " " + unit);
}

}  // namespace

QAScore score_qa(const QAItem& item, std::string_view answer) {
  QAScore s;
  if (trim(answer).empty()) {
    s.parse_error = true;
    return s;
  }
  if (item.format == "mcq") {
    static const std::regex letter(R"((?:^|[^A-Za-z])([A-Z])(?:[^A-Za-z]|$))");
    std::string a = trim(answer);
    std::smatch m;
    if (!std::regex_search(a, m, letter)) {
      s.parse_error = true;
      return s;
    }
    s.correct = m[1].str()[0] - 'A' == item.correct;
    s.score = s.correct ? 1.0 : 0.0;
    return s;
  }
  const auto nums = extract_numbers(answer);
  for (const auto& t : item.targets) s.targets_matched += states_target(nums, t) ? 1 : 0;
  const std::string low = to_lower(answer);
  for (const auto& term : item.required_terms) s.terms_matched += low.find(to_lower(term)) != std::string::npos ? 1 : 0;
  const bool has_t = !item.targets.empty(), has_r = !item.required_terms.empty();
  const double ft = has_t ? static_cast<double>(s.targets_matched) / item.targets.size() : 0.0;
  const double fr = has_r ? static_cast<double>(s.terms_matched) / item.required_terms.size() : 0.0;
  if (has_t && has_r)
    s.score = 0.5 * ft + 0.5 * fr;
  else if (has_t)
    s.score = ft;
  else if (has_r)
    s.score = fr;
  s.correct = s.score >= 1.0;
  return s;
}

McqResult generate_mcq(const QAItem& open, std::uint64_t seed) {
  McqResult r;
  if (open.targets.empty()) {
    r.report = open.id + ": no numeric target";
    return r;
  }
  const auto& t = open.targets.front();
  const double mag = std::abs(t.value);
  if (mag == 0.0) {
    r.report = open.id + ": zero target cannot be perturbed proportionally";
    return r;
  }
  if (t.tolerance >= 0.5 * mag) {
    r.report = open.id + ": tolerance covers every perturbation";
    return r;
  }
  std::mt19937_64 rng(seed ^ std::hash<std::string>{}(open.id));
  std::vector<double> factors{0.10, -0.10, 0.25, -0.25, 0.50, -0.50};
  for (std::size_t i = factors.size() - 1; i > 0; --i) std::swap(factors[i], factors[rng() % (i + 1)]);
  const std::string correct_text = format_option(t.value, t.unit);
  std::vector<std::string> distractors;
  for (double f : factors) {
    double step = std::abs(f);
    const double sgn = f < 0 ? -1.0 : 1.0;
    // Move outward through the perturbation scale until outside tolerance.
    while (step * mag <= t.tolerance && step < 0.5) step = step < 0.25 ? 0.25 : 0.5;
    if (step * mag <= t.tolerance) continue;
    std::string text = format_option(t.value * (1.0 + sgn * step), t.unit);
    if (text == correct_text || std::find(distractors.begin(), distractors.end(), text) != distractors.end()) continue;
    distractors.push_back(text);
    if (distractors.size() == 3) break;
  }
  if (distractors.size() < 3) {
    r.report = open.id + ": fewer than three distinct distractors";
    return r;
  }
  QAItem m = open;
  m.format = "mcq";
  m.id = open.id + "-mcq";
  m.seed = seed;
  m.options = distractors;
  m.options.push_back(correct_text);
  for (std::size_t i = m.options.size() - 1; i > 0; --i) std::swap(m.options[i], m.options[rng() % (i + 1)]);
  m.correct = static_cast<int>(std::find(m.options.begin(), m.options.end(), correct_text) - m.options.begin());
  r.item = std::move(m);
  return r;
}

std::string pick_option(const QAItem& item, std::string_view text) {
  if (item.targets.empty()) return {};
  const auto nums = extract_numbers(text);
  const double tol = item.targets.front().tolerance;
  for (std::size_t i = 0; i < item.options.size(); ++i) {
    auto opt = extract_numbers(item.options[i]);
    if (opt.empty()) continue;
    NumericTarget t{opt.front().value, tol, opt.front().unit.empty() ? item.targets.front().unit : opt.front().unit};
    if (states_target(nums, t)) return std::string(1, static_cast<char>('A' + i));
  }
  return {};
}

std::string QAReport::rows_csv() const {
  std::string out = "id,format,condition,score,correct,targets_matched,terms_matched,elapsed_ms\n";
  for (const auto& r : rows)
    out += r.id + "," + r.format + "," + r.condition + "," + fmt(r.score.score) + "," + (r.score.correct ? "1" : "0") +
           "," + std::to_string(r.score.targets_matched) + "," + std::to_string(r.score.terms_matched) + "," +
           fmt(r.elapsed_ms, 3) + "\n";
  return out;
}

std::string QAReport::summary_csv() const {
  std::string out = "condition,mean_score,mean_ms\n";
  for (const auto& [c, s] : mean_score) out += c + "," + fmt(s) + "," + fmt(mean_ms.at(c), 3) + "\n";
  return out;
}

QAReport run_qa(const std::vector<QAItem>& items, const Answerer& with_kg, const Answerer& without_kg) {
  QAReport report;
  std::map<std::string, int> counts;
  for (const auto& item : items) {
    for (const auto& [condition, answer_fn] : {std::pair{std::string("kg"), &with_kg}, std::pair{std::string("no-kg"), &without_kg}}) {
      QARow row;
      row.id = item.id;
      row.format = item.format;
      row.condition = condition;
      const auto t0 = std::chrono::steady_clock::now();
      std::string answer;
      try {
        answer = (*answer_fn)(item);
      } catch (const std::exception&) {
        answer.clear();
      }
      row.elapsed_ms = ms_since(t0);
      row.score = score_qa(item, answer);
      report.mean_score[condition] += row.score.score;
      report.mean_ms[condition] += row.elapsed_ms;
      ++counts[condition];
      report.rows.push_back(std::move(row));
    }
  }
  for (auto& [c, v] : report.mean_score) v /= counts[c];
  for (auto& [c, v] : report.mean_ms) v /= counts[c];
  return report;
}

}  // namespace bladecomp::eval
