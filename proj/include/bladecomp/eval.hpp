#pragma once

// Evaluation protocols: tool-depth benchmark, paired critic ablation under
// deterministic hint degradation, and paired KG / no-KG question answering.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bladecomp/common.hpp"
#include "bladecomp/engine.hpp"
#include "bladecomp/llm_gateway.hpp"
#include "bladecomp/tools.hpp"

namespace bladecomp::eval {

// ---- tool-selection metrics ------------------------------------------------

struct SelectionScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int missing = 0;
  bool degenerate = false;  // required or called set empty
};

// Set-based scores after removing helper calls from `called`.
SelectionScore score_tool_selection(const std::set<std::string>& required, const std::vector<std::string>& called,
                                    const std::set<std::string>& helpers = {});

struct PairedTrial {
  std::string query_id;
  std::string condition;  // critic | no-critic
  std::vector<std::string> dropped;
  std::vector<std::string> called;
  SelectionScore score;
  double elapsed_ms = 0.0;
};

struct CriticValue {
  double improved_rate = 0.0;
  double reduced_missing_rate = 0.0;
  double full_recovery_rate = 0.0;
  int pairs = 0;
  int degraded = 0;  // pairs whose no-critic trial misses a tool
};

// Throws Error(invalid_argument) when a query lacks either condition.
CriticValue critic_value_metrics(const std::vector<PairedTrial>& trials);

// Per-hint keep/drop from a keyed hash of (query id, hint, seed).
std::vector<std::string> degrade_routing(const std::string& query_id, const std::vector<std::string>& hints,
                                         double drop_p, std::uint64_t seed);
// The hash mapped to [0, 1); exposed for the drop-fraction property.
double hint_hash_unit(const std::string& query_id, const std::string& hint, std::uint64_t seed);

// ---- depth benchmark -------------------------------------------------------

struct RequiredTool {
  std::string tool;
  json args = json::object();  // every listed argument must match exactly
};

struct BenchQuery {
  std::string id;
  int level = 1;
  std::string prompt;
  std::vector<RequiredTool> required;
  std::vector<std::pair<int, int>> dependencies;  // 0-based (producer, consumer) into required
  std::map<std::string, double> reference_values;

  void validate() const;
  json to_json() const;
  static BenchQuery from_json(const json& j);
};

std::vector<BenchQuery> load_bench_queries(const json& j);
json bench_queries_json(const std::vector<BenchQuery>& queries);

// 25 queries per level over the bundled fixture.
std::vector<BenchQuery> synthetic_depth_queries();

struct BenchJudgement {
  bool pass = false;
  std::vector<std::string> reasons;
};

BenchJudgement judge_calls(const BenchQuery& query, const std::vector<tools::ToolCall>& called,
                           const std::set<std::string>& helpers = {});

enum class DefectKind { none, omit, swap_order, wrong_arg };
std::string_view to_string(DefectKind d);

// Exactly round(rate * n) queries per level get a defect, chosen by keyed
// hash; kinds rotate over those applicable to the query.
std::map<std::string, DefectKind> assign_defects(const std::vector<BenchQuery>& queries,
                                                 const std::map<int, double>& rate_by_level, std::uint64_t seed);

// Reference plan for a query with a defect applied, in planner wire form.
json reference_plan(const BenchQuery& query, DefectKind defect);

// Backend that routes every bench prompt to the analysis agent and plans the
// (possibly defective) reference sequence.
std::shared_ptr<llm::Backend> make_reference_backend(const std::vector<BenchQuery>& queries,
                                                     std::map<std::string, DefectKind> defects);

struct LevelReport {
  int level = 0;
  int queries = 0;
  int passes = 0;
  double pass_rate = 0.0;
  double mean_ms = 0.0;
};

struct DepthRow {
  std::string id;
  int level = 0;
  bool pass = false;
  std::vector<std::string> called;
  std::vector<std::string> reasons;
  double elapsed_ms = 0.0;
};

struct DepthReport {
  std::vector<LevelReport> levels;
  std::vector<DepthRow> rows;

  std::string levels_csv() const;
  std::string rows_csv() const;
};

// Fresh session per query with `resources` loaded; judged on the final
// attempt's calls. Engine failures count as fails.
DepthReport run_depth_benchmark(const std::vector<BenchQuery>& queries, engine::Engine& engine,
                                const std::vector<std::string>& resources);

// ---- critic recovery suite -------------------------------------------------

struct CriticQuery {
  std::string id;
  std::string prompt;
  std::vector<std::string> hints;  // required tools, dependency order

  json to_json() const;
  static CriticQuery from_json(const json& j);
};

// `n` metric-request queries; hints are the prerequisite chains of the
// requested metrics.
std::vector<CriticQuery> synthetic_critic_queries(std::size_t n, const tools::ToolRegistry& registry);

// Router returns the surviving hints as "tool:" refs; the planner plans the
// hinted tools plus any named after "Use tools:" in the instruction.
std::shared_ptr<llm::Backend> make_hint_backend(const std::vector<CriticQuery>& queries,
                                                std::map<std::string, std::vector<std::string>> dropped);

struct CriticSuiteReport {
  std::vector<PairedTrial> trials;
  CriticValue value;
  std::map<std::string, std::vector<std::string>> dropped;

  std::string trials_csv() const;
  std::string summary_csv() const;
};

using EngineFactory = std::function<std::unique_ptr<engine::Engine>(std::shared_ptr<llm::Backend>, bool use_critic)>;

CriticSuiteReport run_critic_suite(const std::vector<CriticQuery>& queries, const EngineFactory& make_engine,
                                   const std::vector<std::string>& resources, double drop_p, std::uint64_t seed);

// ---- QA --------------------------------------------------------------------

struct NumericTarget {
  double value = 0.0;
  double tolerance = 0.0;
  std::string unit;  // in | mm | um | "" (unitless)
};

struct QAItem {
  std::string id;
  std::string format = "open";  // open | mcq
  std::string prompt;
  std::vector<NumericTarget> targets;
  std::vector<std::string> required_terms;
  std::vector<std::string> options;
  int correct = -1;
  std::uint64_t seed = 0;

  json to_json() const;
  static QAItem from_json(const json& j);
};

struct QAScore {
  double score = 0.0;
  bool correct = false;
  int targets_matched = 0;
  int terms_matched = 0;
  bool parse_error = false;
};

struct ExtractedNumber {
  double value = 0.0;
  std::string unit;
};

std::vector<ExtractedNumber> extract_numbers(std::string_view text);
// Converts between length units; unitless numbers pass through.
std::optional<double> convert_length(double value, std::string_view from, std::string_view to);

// Open items: 0.5 * targets matched + 0.5 * terms present; when an item has
// only one component it carries the full weight. MCQ items: option match.
QAScore score_qa(const QAItem& item, std::string_view answer);

struct McqResult {
  std::optional<QAItem> item;
  std::string report;  // why the item was skipped
};

McqResult generate_mcq(const QAItem& open, std::uint64_t seed);

// Letter of the first option whose value the text states within tolerance.
std::string pick_option(const QAItem& item, std::string_view text);

struct QARow {
  std::string id;
  std::string format;
  std::string condition;  // kg | no-kg
  QAScore score;
  double elapsed_ms = 0.0;
};

struct QAReport {
  std::vector<QARow> rows;
  std::map<std::string, double> mean_score;  // per condition
  std::map<std::string, double> mean_ms;

  std::string rows_csv() const;
  std::string summary_csv() const;
};

using Answerer = std::function<std::string(const QAItem&)>;

QAReport run_qa(const std::vector<QAItem>& items, const Answerer& with_kg, const Answerer& without_kg);

}  // namespace bladecomp::eval
