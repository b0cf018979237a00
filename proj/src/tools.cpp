#include "bladecomp/tools.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include "bladecomp/kernels.hpp"

namespace bladecomp::tools {

namespace an = analytics;

namespace {

const std::map<std::string, std::string>& default_producers() {
  static const std::map<std::string, std::string> m{
      {"pairs", "compute_inspection_pairs"},
      {"pathing", "rb_compute_pathing_dev"},
      {"fits", "rb_compute_wear_drift"},
      {"retrieval", "kg_retrieve"},
  };
  return m;
}

Error missing_input(std::string_view kind) {
  auto it = default_producers().find(std::string(kind));
  std::string producer = it == default_producers().end() ? "unknown" : it->second;
  return Error(ErrorCode::tool_failure,
               "missing input " + std::string(kind) + " (produced by " + producer + ")");
}

std::optional<an::PartRange> window_of(const json& args, const Artifacts& inputs) {
  if (args.contains("parts")) return parse_part_range(args.at("parts"));
  return inputs.parts;
}

std::set<std::string> keys_of(const json& args) {
  std::set<std::string> keys;
  if (args.contains("pair_key")) keys.insert(an::PairKey::parse(args.at("pair_key").get<std::string>()).str());
  if (args.contains("pair_keys"))
    for (const auto& k : args.at("pair_keys")) keys.insert(an::PairKey::parse(k.get<std::string>()).str());
  return keys;
}

std::vector<an::PairSeries> series_for(const json& args, const Artifacts& inputs) {
  if (!inputs.pairs) throw missing_input("pairs");
  auto series = an::build_series(*inputs.pairs, window_of(args, inputs), inputs.pathing.get());
  auto keys = keys_of(args);
  if (keys.empty()) keys = inputs.pair_keys;
  if (!keys.empty()) {
    std::erase_if(series, [&](const an::PairSeries& s) { return !keys.contains(s.pair_key); });
  }
  if (series.empty()) throw Error(ErrorCode::insufficient_data, "no inspection data in the requested window");
  return series;
}

std::vector<an::DriftFit> fits_for(const json& args, const Artifacts& inputs) {
  if (!inputs.fits) throw missing_input("fits");
  auto keys = keys_of(args);
  std::vector<an::DriftFit> out;
  for (const auto& f : *inputs.fits)
    if (keys.empty() || keys.contains(f.pair_key)) out.push_back(f);
  if (out.empty()) throw Error(ErrorCode::insufficient_data, "no drift fits for the requested pairs");
  return out;
}

const session::ResourceHandle& resource_for(const json& args, const ToolEnvironment& env,
                                            session::ResourceKind kind) {
  if (!env.resources) throw Error(ErrorCode::not_found, "resource missing: no resources loaded");
  std::string name = args.value("resource", std::string(session::to_string(kind)));
  auto it = env.resources->find(name);
  if (it == env.resources->end()) {
    for (const auto& [n, h] : *env.resources)
      if (n == name || h.uri == name) return h;
    throw Error(ErrorCode::not_found, "resource missing: " + name);
  }
  return it->second;
}

std::string read_verified(const session::ResourceHandle& h) {
  std::string text = read_file(h.uri);
  if (sha256_hex(text) != h.checksum)
    throw Error(ErrorCode::integrity, "resource " + h.uri + " changed since it was loaded");
  return text;
}

double delta_for(const json& args, const ToolEnvironment& env, const an::PairSeries& series,
                 const an::DriftFit* fit) {
  if (args.contains("delta")) return args.at("delta").get<double>();
  an::DeltaSelection sel = env.delta;
  if (args.contains("strategy")) sel.strategy = an::parse_delta_strategy(args.at("strategy").get<std::string>());
  if (args.contains("target")) sel.target = args.at("target").get<int>();
  if (args.contains("residual_limit")) sel.residual_limit = args.at("residual_limit").get<double>();
  return an::select_delta(sel, series, fit);
}

// Shared body of the three compensation-geometry tools.
std::vector<an::CompensationVector> compensation_for(const json& args, const Artifacts& inputs,
                                                     const ToolEnvironment& env) {
  double theta = args.value("theta", env.theta_deg);
  auto series = series_for(args, inputs);
  std::map<std::string, const an::DriftFit*> fit_by_key;
  if (inputs.fits)
    for (const auto& f : *inputs.fits) fit_by_key[f.pair_key] = &f;
  std::vector<an::CompensationVector> out;
  for (const auto& s : series) {
    auto it = fit_by_key.find(s.pair_key);
    std::optional<an::DriftFit> local;
    const an::DriftFit* fit = it == fit_by_key.end() ? nullptr : it->second;
    if (!fit && s.size() >= 2) {
      local = an::rb_compute_wear_drift(s);
      fit = &*local;
    }
    auto v = an::rb_compute_pair_tool_comp(delta_for(args, env, s, fit), theta);
    v.pair_key = s.pair_key;
    out.push_back(v);
  }
  return out;
}

json pairing_fields(const an::PairingReport& report) {
  std::set<int> parts;
  std::set<std::string> keys;
  for (const auto& p : report.pairs) {
    parts.insert(p.part);
    keys.insert(p.pair_key);
  }
  return {{"pair_count", keys.size()}, {"part_count", parts.size()}, {"measurement_count", report.pairs.size()},
          {"unmatched_count", report.unmatched.size()}};
}

json load_pairs(const json& args, const Artifacts&, const ToolEnvironment& env, Artifacts& produced) {
  const auto& h = resource_for(args, env, session::ResourceKind::inspection_csv);
  auto table = an::InspectionTable::parse_csv(read_verified(h));
  auto report = an::compute_inspection_pairs(table, env.points);
  auto fields = pairing_fields(report);
  produced.pairs = std::make_shared<const std::vector<an::PairMeasurement>>(std::move(report.pairs));
  return fields;
}

ParamSpec P(std::string name, std::string type, bool required = false) {
  return {std::move(name), std::move(type), required};
}
OutputField O(std::string name, std::string unit, std::string metric = {}) {
  return {std::move(name), std::move(unit), std::move(metric)};
}

const std::vector<ParamSpec> kWindowParams = {P("parts", "part_range"), P("pair_key", "pair_key"),
                                              P("pair_keys", "pair_keys")};

std::vector<ParamSpec> with_window(std::vector<ParamSpec> extra) {
  auto params = kWindowParams;
  params.insert(params.end(), extra.begin(), extra.end());
  return params;
}

bool type_matches(const std::string& type, const json& v) {
  if (type == "int") return v.is_number_integer();
  if (type == "number") return v.is_number();
  if (type == "string" || type == "resource") return v.is_string() && !v.get<std::string>().empty();
  if (type == "strategy") {
    if (!v.is_string()) return false;
    try {
      an::parse_delta_strategy(v.get<std::string>());
      return true;
    } catch (const Error&) {
      return false;
    }
  }
  if (type == "pair_key") {
    if (!v.is_string()) return false;
    try {
      an::PairKey::parse(v.get<std::string>());
      return true;
    } catch (const Error&) {
      return false;
    }
  }
  if (type == "pair_keys") {
    if (!v.is_array()) return false;
    return std::all_of(v.begin(), v.end(), [](const json& k) { return type_matches("pair_key", k); });
  }
  if (type == "part_range") {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) return false;
    return v[0].get<int>() >= 1 && v[0].get<int>() <= v[1].get<int>();
  }
  return false;
}

std::optional<int> coerce_int(const json& v) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_number_float()) {
    double d = v.get<double>();
    if (std::floor(d) == d) return static_cast<int>(d);
    return std::nullopt;
  }
  if (v.is_string()) {
    std::string s = trim(v.get<std::string>());
    if (s.empty()) return std::nullopt;
    try {
      std::size_t pos = 0;
      int n = std::stoi(s, &pos);
      if (pos == s.size()) return n;
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

}  // namespace

const ParamSpec* ToolSpec::param(std::string_view n) const {
  for (const auto& p : params)
    if (p.name == n) return &p;
  return nullptr;
}

const OutputField* ToolSpec::output(std::string_view n) const {
  for (const auto& o : outputs)
    if (o.name == n) return &o;
  return nullptr;
}

json ToolSpec::to_json() const {
  json params_j = json::array();
  for (const auto& p : params) params_j.push_back({{"name", p.name}, {"type", p.type}, {"required", p.required}});
  json outputs_j = json::array();
  for (const auto& o : outputs) {
    json oj{{"name", o.name}, {"unit", o.unit}};
    if (!o.metric.empty()) oj["metric"] = o.metric;
    outputs_j.push_back(oj);
  }
  json j{{"name", name},       {"category", category},         {"description", description},
         {"params", params_j}, {"outputs", outputs_j},         {"requires", requires_inputs},
         {"optional", optional_inputs}, {"produces", produces}};
  if (helper) j["helper"] = true;
  return j;
}

ToolSpec ToolSpec::from_json(const json& j) {
  ToolSpec s;
  try {
    s.name = j.at("name").get<std::string>();
    s.category = j.at("category").get<std::string>();
    s.description = j.value("description", std::string());
    for (const auto& p : j.value("params", json::array()))
      s.params.push_back(P(p.at("name").get<std::string>(), p.at("type").get<std::string>(), p.value("required", false)));
    for (const auto& o : j.value("outputs", json::array()))
      s.outputs.push_back(O(o.at("name").get<std::string>(), o.value("unit", std::string()), o.value("metric", std::string())));
    s.requires_inputs = j.value("requires", std::vector<std::string>{});
    s.optional_inputs = j.value("optional", std::vector<std::string>{});
    s.produces = j.value("produces", std::vector<std::string>{});
    s.helper = j.value("helper", false);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("malformed tool spec: ") + e.what());
  }
  return s;
}

const std::vector<std::string>& standard_categories() {
  static const std::vector<std::string> v{"Data loading",          "Statistics and indexing",
                                          "Pathing projection",    "Drift and variability proxies",
                                          "Attribution metrics",   "Compensation geometry",
                                          "Knowledge retrieval"};
  return v;
}

const std::vector<std::string>& standard_tool_names() {
  static const std::vector<std::string> v{
      "compute_inspection_pairs",        "fetch_inspection_slices",        "rb_compute_values",
      "rb_compute_average",              "rb_compute_std_dev",             "rb_compute_level",
      "rb_compute_position_in_level",    "rb_compute_pathing_dev",         "rb_compute_wear_drift",
      "rb_compute_process_variability",  "rb_compute_residual_systematic", "rb_compute_attribution_fractions",
      "rb_compute_tool_length",          "rb_compute_radius_offset",       "rb_compute_pair_tool_comp",
      "kg_initial",                      "kg_retrieve"};
  return v;
}

const std::map<std::string, std::vector<std::string>>& metric_categories() {
  static const std::map<std::string, std::vector<std::string>> m{
      {"compensation", {"Trc", "Tlc"}},
      {"average", {"Avg"}},
      {"std", {"Std"}},
      {"values", {"S"}},
      {"level", {"Level"}},
      {"position", {"Position"}},
      {"pathing", {"Pathing"}},
      {"drift", {"Drift"}},
      {"variability", {"Variability"}},
      {"residual", {"Residual"}},
      {"attribution", {"PhiP", "PhiC", "PhiD"}},
      {"prediction", {"SHat"}},
  };
  return m;
}

std::string preferred_tool_for_metric(std::string_view c) {
  static const std::map<std::string, std::string, std::less<>> m{
      {"compensation", "rb_compute_pair_tool_comp"},
      {"average", "rb_compute_average"},
      {"std", "rb_compute_std_dev"},
      {"values", "rb_compute_values"},
      {"level", "rb_compute_level"},
      {"position", "rb_compute_position_in_level"},
      {"pathing", "rb_compute_pathing_dev"},
      {"drift", "rb_compute_wear_drift"},
      {"variability", "rb_compute_process_variability"},
      {"residual", "rb_compute_residual_systematic"},
      {"attribution", "rb_compute_attribution_fractions"},
      {"prediction", "rb_compute_attribution_fractions"},
  };
  auto it = m.find(c);
  if (it == m.end()) throw Error(ErrorCode::not_found, "no tool reports metric category " + std::string(c));
  return it->second;
}

bool Artifacts::has(std::string_view kind) const {
  if (kind == "pairs") return static_cast<bool>(pairs);
  if (kind == "pathing") return static_cast<bool>(pathing);
  if (kind == "fits") return static_cast<bool>(fits);
  if (kind == "compensation") return static_cast<bool>(compensation);
  if (kind == "retrieval") return static_cast<bool>(retrieval);
  return false;
}

void Artifacts::merge_missing(const Artifacts& o) {
  if (!pairs) pairs = o.pairs;
  if (!pathing) pathing = o.pathing;
  if (!fits) fits = o.fits;
  if (!compensation) compensation = o.compensation;
  if (!retrieval) retrieval = o.retrieval;
  if (!parts) parts = o.parts;
  if (pair_keys.empty()) pair_keys = o.pair_keys;
}

void Artifacts::overlay(const Artifacts& o) {
  if (o.pairs) pairs = o.pairs;
  if (o.pathing) pathing = o.pathing;
  if (o.fits) fits = o.fits;
  if (o.compensation) compensation = o.compensation;
  if (o.retrieval) retrieval = o.retrieval;
  if (o.parts) parts = o.parts;
  if (!o.pair_keys.empty()) pair_keys = o.pair_keys;
}

json ToolCall::to_json() const {
  return {{"index", index}, {"tool", tool}, {"args", args}, {"depends_on", depends_on}};
}

std::string ToolOutput::digest() const {
  return json_digest({{"call_index", call_index}, {"tool", tool}, {"fields", fields}});
}

std::optional<an::PartRange> parse_part_range(const json& v) {
  auto bad = [&] { return Error(ErrorCode::invalid_argument, "part range must be [first, last]: " + v.dump()); };
  if (!v.is_array() || v.size() != 2) throw bad();
  auto a = coerce_int(v[0]);
  auto b = coerce_int(v[1]);
  if (!a || !b || *a < 1 || *a > *b) throw bad();
  return an::PartRange{*a, *b};
}

void ToolRegistry::add(ToolSpec spec, ToolFn fn) {
  if (index_.contains(spec.name)) throw Error(ErrorCode::config, "duplicate tool name " + spec.name);
  index_[spec.name] = order_.size();
  impls_[spec.name] = std::move(fn);
  order_.push_back(std::move(spec));
}

const ToolSpec* ToolRegistry::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &order_[it->second];
}

std::vector<std::string> ToolRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& s : order_) out.push_back(s.name);
  return out;
}

std::set<std::string> ToolRegistry::categories() const {
  std::set<std::string> out;
  for (const auto& s : order_) out.insert(s.category);
  return out;
}

json ToolRegistry::manifest() const {
  json tools = json::array();
  for (const auto& s : order_) tools.push_back(s.to_json());
  return {{"version", 1}, {"tools", tools}};
}

std::vector<std::string> ToolRegistry::validate_args(const ToolSpec& spec, const json& args) const {
  std::vector<std::string> v;
  if (!args.is_object()) return {spec.name + ": args must be an object"};
  for (const auto& p : spec.params) {
    if (!args.contains(p.name)) {
      if (p.required) v.push_back(spec.name + ": missing required argument " + p.name);
      continue;
    }
    if (!type_matches(p.type, args.at(p.name)))
      v.push_back(spec.name + ": argument " + p.name + " is not a valid " + p.type);
  }
  for (const auto& [k, _] : args.items())
    if (!spec.param(k)) v.push_back(spec.name + ": unknown argument " + k);
  return v;
}

json ToolRegistry::coerce_args(const ToolSpec& spec, const json& args, std::vector<std::string>& repairs) const {
  json out = json::object();
  if (!args.is_object()) {
    repairs.push_back(spec.name + ": replaced non-object args with {}");
    return out;
  }
  for (const auto& [k, v] : args.items()) {
    const ParamSpec* p = spec.param(k);
    if (!p) {
      repairs.push_back(spec.name + ": dropped unknown argument " + k);
      continue;
    }
    if (type_matches(p->type, v)) {
      out[k] = v;
      continue;
    }
    json fixed;
    if (p->type == "int") {
      if (auto n = coerce_int(v)) fixed = *n;
    } else if (p->type == "number") {
      if (v.is_string()) {
        try {
          fixed = std::stod(trim(v.get<std::string>()));
        } catch (const std::exception&) {
        }
      }
    } else if (p->type == "part_range") {
      if (v.is_array() && v.size() == 2) {
        auto a = coerce_int(v[0]), b = coerce_int(v[1]);
        if (a && b) fixed = json::array({*a, *b});
      } else if (v.is_string()) {
        static const std::regex re(R"(^\s*(\d+)\s*(?:-|–|to|\.\.)\s*(\d+)\s*$)");
        std::smatch m;
        std::string s = v.get<std::string>();
        if (std::regex_match(s, m, re)) fixed = json::array({std::stoi(m[1]), std::stoi(m[2])});
      } else if (auto n = coerce_int(v)) {
        fixed = json::array({*n, *n});
      }
    } else if (p->type == "pair_keys" && v.is_string()) {
      fixed = json::array({v});
    } else if (p->type == "resource" && v.is_string()) {
      std::string s = trim(v.get<std::string>());
      if (s.size() >= 2 && (s.front() == '\'' || s.front() == '"') && s.back() == s.front())
        s = s.substr(1, s.size() - 2);
      fixed = s;
    } else if (p->type == "strategy" && v.is_string()) {
      std::string s = to_lower(trim(v.get<std::string>()));
      std::replace(s.begin(), s.end(), '_', '-');
      fixed = s;
    }
    if (!fixed.is_null() && type_matches(p->type, fixed)) {
      repairs.push_back(spec.name + ": coerced " + k + " from " + v.dump() + " to " + fixed.dump());
      out[k] = fixed;
    } else {
      repairs.push_back(spec.name + ": dropped invalid argument " + k + "=" + v.dump());
    }
  }
  return out;
}

std::vector<std::string> ToolRegistry::tools_for_metric(std::string_view metric) const {
  std::vector<std::string> out;
  for (const auto& s : order_)
    for (const auto& o : s.outputs)
      if (o.metric == metric) {
        out.push_back(s.name);
        break;
      }
  return out;
}

std::optional<std::string> ToolRegistry::producer_of(std::string_view kind) const {
  auto it = default_producers().find(std::string(kind));
  if (it != default_producers().end() && find(it->second)) return it->second;
  for (const auto& s : order_)
    if (std::find(s.produces.begin(), s.produces.end(), kind) != s.produces.end()) return s.name;
  return std::nullopt;
}

std::vector<std::string> ToolRegistry::chain_for(const std::string& tool) const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  auto visit = [&](auto&& self, const std::string& name) -> void {
    if (!seen.insert(name).second) return;
    const ToolSpec* s = find(name);
    if (!s) return;
    for (const auto& kind : s->requires_inputs)
      if (auto p = producer_of(kind); p && *p != name) self(self, *p);
    out.push_back(name);
  };
  visit(visit, tool);
  return out;
}

ToolOutput ToolRegistry::invoke(const ToolCall& call, const Artifacts& inputs, const ToolEnvironment& env) const {
  const ToolSpec* spec = find(call.tool);
  if (!spec) throw Error(ErrorCode::not_found, "unknown tool " + call.tool);
  auto violations = validate_args(*spec, call.args);
  if (!violations.empty()) throw Error(ErrorCode::invalid_argument, violations.front());
  for (const auto& kind : spec->requires_inputs)
    if (!inputs.has(kind)) throw missing_input(kind);
  ToolOutput out;
  out.call_index = call.index;
  out.tool = call.tool;
  out.fields = impls_.at(call.tool)(call.args, inputs, env, out.artifacts);
  return out;
}

ToolRegistry ToolRegistry::from_manifest(const json& manifest) {
  ToolRegistry all = builtin();
  ToolRegistry out;
  const json& tools = manifest.is_array() ? manifest : manifest.value("tools", json::array());
  if (!tools.is_array() || tools.empty()) throw Error(ErrorCode::config, "manifest lists no tools");
  for (const auto& tj : tools) {
    ToolSpec spec = ToolSpec::from_json(tj);
    const ToolSpec* known = all.find(spec.name);
    if (!known) throw Error(ErrorCode::config, "manifest names unimplemented tool " + spec.name);
    if (spec.to_json() != known->to_json())
      throw Error(ErrorCode::config, "manifest spec for " + spec.name + " differs from its implementation");
    out.add(spec, all.impls_.at(spec.name));
  }
  return out;
}

ToolRegistry ToolRegistry::builtin() {
  ToolRegistry r;
  const std::string kLoad = "Data loading", kStats = "Statistics and indexing", kPath = "Pathing projection",
                    kDrift = "Drift and variability proxies", kAttr = "Attribution metrics",
                    kComp = "Compensation geometry", kKg = "Knowledge retrieval";

  r.add({"compute_inspection_pairs", kLoad, "Pair pressure/suction points per part and form per-surface deviations.",
         {P("resource", "resource")},
         {O("pair_count", "count"), O("part_count", "count"), O("measurement_count", "count"),
          O("unmatched_count", "count")},
         {}, {}, {"pairs"}},
        load_pairs);

  r.add({"fetch_inspection_slices", kLoad, "Cached normalized subset of pair measurements for parts and pair keys.",
         {P("parts", "part_range"), P("pair_keys", "pair_keys")},
         {O("row_count", "count"), O("cache_key", "")},
         {"pairs"}, {}, {"pairs"}},
        [](const json& args, const Artifacts& in, const ToolEnvironment&, Artifacts& produced) {
          an::SliceSelector sel;
          if (args.contains("parts")) sel.parts = parse_part_range(args.at("parts"));
          sel.pair_keys = keys_of(args);
          auto res = an::fetch_inspection_slices(*in.pairs, sel);
          json fields{{"row_count", res.rows.size()}, {"cache_key", res.cache_key}};
          if (res.warning) fields["warning"] = *res.warning;
          produced.pairs = std::make_shared<const std::vector<an::PairMeasurement>>(std::move(res.rows));
          produced.parts = sel.parts;
          produced.pair_keys = sel.pair_keys;
          return fields;
        });

  r.add({"rb_compute_values", kStats, "Per-part per-surface deviation values for each pair.", kWindowParams,
         {O("values", "in", "S")}, {"pairs"}, {}, {}},
        [](const json& args, const Artifacts& in, const ToolEnvironment&, Artifacts&) {
          json values = json::object();
          for (const auto& s : series_for(args, in)) {
            auto vals = an::rb_compute_values(s);
            for (std::size_t i = 0; i < vals.size(); ++i)
              values[s.pair_key + "@" + std::to_string(s.parts[i])] = vals[i];
          }
          return json{{"values", values}};
        });

  r.add({"rb_compute_average", kStats, "Mean per-surface deviation per pair.", kWindowParams,
         {O("avg", "in", "Avg"), O("n", "count")}, {"pairs"}, {}, {}},
        [](const json& args, const Artifacts& in, const ToolEnvironment&, Artifacts&) {
          json avg = json::object(), n = json::object();
          for (const auto& s : series_for(args, in)) {
            avg[s.pair_key] = an::rb_compute_average(s.s);
            n[s.pair_key] = s.size();
          }
          return json{{"avg", avg}, {"n", n}};
        });

  r.add({"rb_compute_std_dev", kStats, "Sample standard deviation of per-surface deviation per pair.", kWindowParams,
         {O("std", "in", "Std"), O("n", "count")}, {"pairs"}, {}, {}},
        [](const json& args, const Artifacts& in, const ToolEnvironment&, Artifacts&) {
          json sd = json::object(), n = json::object();
          for (const auto& s : series_for(args, in)) {
            sd[s.pair_key] = an::rb_compute_std_dev(s.s);
            n[s.pair_key] = s.size();
          }
          return json{{"std", sd}, {"n", n}};
        });

  auto index_tool = [](bool level) {
    return [level](const json& args, const Artifacts& in, const ToolEnvironment& env, Artifacts&) {
      auto keys = keys_of(args);
      if (keys.empty() && in.pairs)
        for (const auto& p : *in.pairs) keys.insert(p.pair_key);
      if (keys.empty())
        for (int i = env.layout.first_pressure; i < env.layout.first_pressure + env.layout.per_level * env.layout.levels; ++i)
          keys.insert(an::PairKey{i, i + an::kPartnerOffset}.str());
      json out = json::object();
      for (const auto& k : keys)
        out[k] = level ? an::rb_compute_level(k, env.layout) : an::rb_compute_position_in_level(k, env.layout);
      return json{{level ? "level" : "position", out}};
    };
  };
  r.add({"rb_compute_level", kStats, "Spanwise level index of each pair.",
         {P("pair_key", "pair_key"), P("pair_keys", "pair_keys")}, {O("level", "index", "Level")}, {}, {"pairs"}, {}},
        index_tool(true));
  r.add({"rb_compute_position_in_level", kStats, "Within-level position index of each pair.",
         {P("pair_key", "pair_key"), P("pair_keys", "pair_keys")}, {O("position", "index", "Position")}, {},
         {"pairs"}, {}},
        index_tool(false));

  r.add({"rb_compute_pathing_dev", kPath, "Per-surface pathing deviation from a simulated combined deviation export.",
         {P("resource", "resource"), P("pair_key", "pair_key"), P("pair_keys", "pair_keys")},
         {O("r", "in"), O("p", "in", "Pathing")}, {}, {"pairs"}, {"pathing"}},
        [](const json& args, const Artifacts& in, const ToolEnvironment& env, Artifacts& produced) {
          const auto& h = resource_for(args, env, session::ResourceKind::pathing_field);
          auto raw = an::parse_pathing_csv(read_verified(h));
          auto keyset = keys_of(args);
          if (keyset.empty() && in.pairs)
            for (const auto& p : *in.pairs) keyset.insert(p.pair_key);
          if (keyset.empty())
            for (const auto& [k, _] : raw) keyset.insert(k);
          std::vector<std::string> keys(keyset.begin(), keyset.end());
          auto field = an::rb_compute_pathing_dev(raw, keys);
          json r_j = json::object(), p_j = json::object();
          for (const auto& [k, e] : field) {
            r_j[k] = e.r;
            p_j[k] = e.p;
          }
          produced.pathing = std::make_shared<const an::PathingField>(std::move(field));
          return json{{"r", r_j}, {"p", p_j}};
        });

  r.add({"rb_compute_wear_drift", kDrift, "Least-squares drift per part and drift magnitude per pair.",
         with_window({P("parallel", "int")}),
         {O("b", "in/part", "Drift"), O("w_d", "in", "DriftMagnitude"), O("n", "count")}, {"pairs"}, {"pathing"},
         {"fits"}},
        [](const json& args, const Artifacts& in, const ToolEnvironment&, Artifacts& produced) {
          auto series = series_for(args, in);
          auto fits = args.value("parallel", 1) ? kernels::fit_series_parallel(series)
                                                : kernels::fit_series_serial(series);
          json b = json::object(), wd = json::object(), n = json::object();
          for (const auto& f : fits) {
            b[f.pair_key] = f.b;
            wd[f.pair_key] = f.w_d;
            n[f.pair_key] = f.count;
          }
          produced.fits = std::make_shared<const std::vector<an::DriftFit>>(std::move(fits));
          return json{{"b", b}, {"w_d", wd}, {"n", n}};
        });

  r.add({"rb_compute_process_variability", kDrift, "Residual dispersion of the drift fit per pair.",
         {P("pair_key", "pair_key"), P("pair_keys", "pair_keys")}, {O("w_v", "in", "Variability")}, {"fits"}, {}, {}},
        [](const json& args, const Artifacts& in, const ToolEnvironment&, Artifacts&) {
          json wv = json::object();
          json unavailable = json::array();
          for (const auto& f : fits_for(args, in)) {
            if (auto v = an::rb_compute_process_variability(f))
              wv[f.pair_key] = *v;
            else
              unavailable.push_back(f.pair_key);
          }
          json out{{"w_v", wv}};
          if (!unavailable.empty()) out["unavailable"] = unavailable;
          return out;
        });

  r.add({"rb_compute_residual_systematic", kDrift, "Baseline systematic term of the drift fit per pair.",
         {P("pair_key", "pair_key"), P("pair_keys", "pair_keys")}, {O("c", "in", "Residual"), O("note", "")},
         {"fits"}, {}, {}},
        [](const json& args, const Artifacts& in, const ToolEnvironment&, Artifacts&) {
          json c = json::object();
          std::string note;
          for (const auto& f : fits_for(args, in)) {
            auto rs = an::rb_compute_residual_systematic(f);
            c[f.pair_key] = rs.c;
            note = rs.note;
          }
          return json{{"c", c}, {"note", note}};
        });

  r.add({"rb_compute_attribution_fractions", kAttr, "Attribution fractions, variability index and predicted deviation.",
         {P("pair_key", "pair_key"), P("pair_keys", "pair_keys"), P("target", "int"), P("epsilon", "number")},
         {O("phi_p", "", "PhiP"), O("phi_c", "", "PhiC"), O("phi_d", "", "PhiD"), O("psi_v", "", "PsiV"),
          O("s_hat", "in", "SHat"), O("target", "part")},
         {"fits"}, {"pathing"}, {}},
        [](const json& args, const Artifacts& in, const ToolEnvironment& env, Artifacts&) {
          double eps = args.value("epsilon", env.epsilon);
          json pp = json::object(), pc = json::object(), pd = json::object(), pv = json::object(),
               sh = json::object(), tg = json::object();
          for (const auto& f : fits_for(args, in)) {
            int target = args.contains("target") ? args.at("target").get<int>()
                                                 : (f.parts.empty() ? 1 : f.parts.back() + 1);
            double p = 0.0;
            if (in.pathing)
              if (auto it = in.pathing->find(f.pair_key); it != in.pathing->end()) p = it->second.p;
            auto a = an::rb_compute_attribution_fractions(p, f, target, eps);
            pp[f.pair_key] = a.phi_p;
            pc[f.pair_key] = a.phi_c;
            pd[f.pair_key] = a.phi_d;
            if (a.psi_v) pv[f.pair_key] = *a.psi_v;
            sh[f.pair_key] = a.s_hat;
            tg[f.pair_key] = target;
          }
          return json{{"phi_p", pp}, {"phi_c", pc}, {"phi_d", pd}, {"psi_v", pv}, {"s_hat", sh}, {"target", tg}};
        });

  const auto comp_params = with_window({P("strategy", "strategy"), P("target", "int"), P("residual_limit", "number"),
                                        P("theta", "number"), P("delta", "number")});
  r.add({"rb_compute_tool_length", kComp, "Axial (length) offset for a signed correction.", comp_params,
         {O("tlc", "in", "Tlc")}, {"pairs"}, {"fits", "pathing"}, {}},
        [](const json& args, const Artifacts& in, const ToolEnvironment& env, Artifacts&) {
          json tl = json::object();
          for (const auto& v : compensation_for(args, in, env)) tl[v.pair_key] = v.t_l;
          return json{{"tlc", tl}};
        });
  r.add({"rb_compute_radius_offset", kComp, "Radial offset for a signed correction.", comp_params,
         {O("trc", "in", "Trc")}, {"pairs"}, {"fits", "pathing"}, {}},
        [](const json& args, const Artifacts& in, const ToolEnvironment& env, Artifacts&) {
          json tr = json::object();
          for (const auto& v : compensation_for(args, in, env)) tr[v.pair_key] = v.t_r;
          return json{{"trc", tr}};
        });
  r.add({"rb_compute_pair_tool_comp", kComp, "Radius and length offsets per pair under the fixed-tilt model.",
         comp_params, {O("trc", "in", "Trc"), O("tlc", "in", "Tlc"), O("delta", "in", "Delta"), O("theta", "deg")},
         {"pairs"}, {"fits", "pathing"}, {"compensation"}},
        [](const json& args, const Artifacts& in, const ToolEnvironment& env, Artifacts& produced) {
          auto vecs = compensation_for(args, in, env);
          json tr = json::object(), tl = json::object(), d = json::object();
          for (const auto& v : vecs) {
            tr[v.pair_key] = v.t_r;
            tl[v.pair_key] = v.t_l;
            d[v.pair_key] = v.delta;
          }
          double theta = vecs.empty() ? env.theta_deg : vecs.front().theta_deg;
          produced.compensation = std::make_shared<const std::vector<an::CompensationVector>>(std::move(vecs));
          return json{{"trc", tr}, {"tlc", tl}, {"delta", d}, {"theta", theta}};
        });

  r.add({"kg_initial", kKg, "Open the machining knowledge store.", {P("resource", "resource")},
         {O("triple_count", "count")}, {}, {}, {}},
        [](const json& args, const Artifacts&, const ToolEnvironment& env, Artifacts&) {
          const kg::TripleStore* store = env.store;
          if (!store && env.load_store) store = env.load_store(args.value("resource", std::string("kg-store")));
          if (!store) throw Error(ErrorCode::not_found, "resource missing: kg-store");
          return json{{"triple_count", store->size()}};
        });

  r.add({"kg_retrieve", kKg, "Score, select and expand evidence triples for a query.",
         {P("query", "string", true)},
         {O("selected_count", "count"), O("tau", ""), O("evidence", "ids"), O("fallback", "")}, {}, {}, {"retrieval"}},
        [](const json& args, const Artifacts&, const ToolEnvironment& env, Artifacts& produced) {
          if (!env.store) throw Error(ErrorCode::tool_failure, "missing input store (produced by kg_initial)");
          auto res = env.store->retrieve(args.at("query").get<std::string>(), env.retrieval);
          json out{{"selected_count", res.selected.size()},
                   {"tau", res.tau},
                   {"evidence", res.evidence_ids()},
                   {"fallback", res.fallback}};
          produced.retrieval = std::make_shared<const kg::RetrievalResult>(std::move(res));
          return out;
        });

  // Older name for the pairing step, kept for plans that still use it.
  r.add({"rb_compute_surface_dev", kLoad, "Alias of compute_inspection_pairs.", {P("resource", "resource")},
         {O("pair_count", "count"), O("part_count", "count"), O("measurement_count", "count"),
          O("unmatched_count", "count")},
         {}, {}, {"pairs"}, true},
        load_pairs);
  return r;
}

}  // namespace bladecomp::tools
