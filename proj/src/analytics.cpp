#include "bladecomp/analytics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

namespace bladecomp::analytics {

namespace {

int parse_int(std::string_view s, std::string_view what) {
  std::string t = trim(s);
  int value = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw Error(ErrorCode::parse, "invalid integer for " + std::string(what) + ": '" + t + "'");
  return value;
}

double parse_double(std::string_view s, std::string_view what) {
  std::string t = trim(s);
  try {
    size_t pos = 0;
    double v = std::stod(t, &pos);
    if (pos != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::parse, "invalid number for " + std::string(what) + ": '" + t + "'");
  }
}

double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

void check_theta(double theta_deg) {
  if (!(theta_deg > 0.0 && theta_deg < 90.0))
    throw Error(ErrorCode::config, "tilt angle must lie in (0, 90) degrees, got " + format_fixed(theta_deg, 3));
}

struct Columns {
  int part = -1, point = -1, deviation = -1;
};

}  // namespace

std::string PairKey::str() const { return std::to_string(pressure) + "+" + std::to_string(suction); }

PairKey PairKey::parse(std::string_view text) {
  std::string t = trim(text);
  auto plus = t.find('+');
  if (plus == std::string::npos || plus == 0 || plus + 1 == t.size())
    throw Error(ErrorCode::parse, "malformed pair key: '" + t + "'");
  PairKey k;
  k.pressure = parse_int(std::string_view(t).substr(0, plus), "pair key");
  k.suction = parse_int(std::string_view(t).substr(plus + 1), "pair key");
  if (k.pressure < 1 || k.suction != k.pressure + kPartnerOffset)
    throw Error(ErrorCode::parse, "pair key '" + t + "' violates the i+(i+15) convention");
  return k;
}

InspectionTable InspectionTable::parse_csv(std::string_view text) {
  InspectionTable table;
  Columns cols;
  bool header_seen = false;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    auto fields = split(line, ',');
    if (!header_seen) {
      for (int i = 0; i < static_cast<int>(fields.size()); ++i) {
        std::string name = to_lower(trim(fields[i]));
        if (name == "part_id") cols.part = i;
        else if (name == "point_id") cols.point = i;
        else if (name == "deviation_in") cols.deviation = i;
      }
      if (cols.part < 0 || cols.point < 0 || cols.deviation < 0)
        throw Error(ErrorCode::parse, "inspection header must contain part_id, point_id, deviation_in");
      header_seen = true;
      continue;
    }
    int need = std::max({cols.part, cols.point, cols.deviation});
    if (static_cast<int>(fields.size()) <= need)
      throw Error(ErrorCode::parse, "line " + std::to_string(line_no) + ": too few columns");
    InspectionRow row;
    row.part_id = parse_int(fields[cols.part], "part_id");
    row.point_id = parse_int(fields[cols.point], "point_id");
    row.deviation = parse_double(fields[cols.deviation], "deviation_in");
    row.line = line_no;
    table.rows.push_back(row);
  }
  if (!header_seen) throw Error(ErrorCode::parse, "inspection table is empty");
  return table;
}

std::string InspectionTable::to_csv() const {
  std::string out = "part_id,point_id,deviation_in\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g\n", r.part_id, r.point_id, r.deviation);
    out += buf;
  }
  return out;
}

PairMeasurement make_pair_measurement(std::string pair_key, int part, double delta_p, double delta_s) {
  PairMeasurement m;
  m.pair_key = std::move(pair_key);
  m.part = part;
  m.delta_p = delta_p;
  m.delta_s = delta_s;
  m.v = delta_p + delta_s;
  m.s = m.v / 2.0;
  return m;
}

PairingReport compute_inspection_pairs(const InspectionTable& table, const PointLayout& layout) {
  // (part, point) -> row
  std::map<std::pair<int, int>, const InspectionRow*> index;
  std::vector<std::string> duplicates;
  for (const auto& row : table.rows) {
    auto [it, inserted] = index.emplace(std::make_pair(row.part_id, row.point_id), &row);
    if (!inserted)
      duplicates.push_back("part " + std::to_string(row.part_id) + " point " + std::to_string(row.point_id) +
                           " (lines " + std::to_string(it->second->line) + ", " + std::to_string(row.line) + ")");
  }
  if (!duplicates.empty()) {
    std::string msg = "duplicate inspection rows:";
    for (const auto& d : duplicates) msg += " " + d + ";";
    throw Error(ErrorCode::invalid_argument, msg);
  }

  PairingReport report;
  std::set<std::pair<int, int>> used;
  std::vector<PairMeasurement> pairs;
  for (const auto& [key, row] : index) {
    auto [part, point] = key;
    if (point < layout.first_pressure || point > layout.last_pressure) continue;
    auto partner = index.find({part, point + kPartnerOffset});
    if (partner == index.end()) continue;
    pairs.push_back(make_pair_measurement(PairKey{point, point + kPartnerOffset}.str(), part, row->deviation,
                                          partner->second->deviation));
    used.insert(key);
    used.insert(partner->first);
  }
  for (const auto& [key, row] : index)
    if (!used.count(key)) report.unmatched.push_back({key.first, key.second, row->line});

  std::stable_sort(pairs.begin(), pairs.end(), [](const PairMeasurement& a, const PairMeasurement& b) {
    auto ka = PairKey::parse(a.pair_key), kb = PairKey::parse(b.pair_key);
    if (ka != kb) return ka < kb;
    return a.part < b.part;
  });
  report.pairs = std::move(pairs);
  return report;
}

std::map<std::string, double> parse_pathing_csv(std::string_view text) {
  std::map<std::string, double> out;
  bool header = true;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    auto fields = split(line, ',');
    if (header) {
      header = false;
      if (fields.size() >= 2 && to_lower(trim(fields[0])) == "pair_key") continue;
    }
    if (fields.size() < 2) throw Error(ErrorCode::parse, "pathing line " + std::to_string(line_no) + ": need 2 columns");
    std::string key = PairKey::parse(fields[0]).str();
    out[key] = parse_double(fields[1], "r_k");
  }
  return out;
}

PathingField rb_compute_pathing_dev(const std::map<std::string, double>& raw, std::span<const std::string> keys) {
  PathingField field;
  for (const auto& key : keys) {
    auto it = raw.find(key);
    if (it == raw.end()) throw Error(ErrorCode::not_found, "pathing export has no entry for pair " + key);
    field[key] = PathingEntry{it->second, it->second / 2.0};
  }
  return field;
}

std::vector<double> PairSeries::u() const {
  const double p = pathing.value_or(0.0);
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] - p;
  return out;
}

std::vector<PairSeries> build_series(std::span<const PairMeasurement> pairs, std::optional<PartRange> parts,
                                     const PathingField* pathing) {
  std::map<PairKey, PairSeries> grouped;
  for (const auto& m : pairs) {
    if (parts && !parts->contains(m.part)) continue;
    auto& series = grouped[PairKey::parse(m.pair_key)];
    series.pair_key = m.pair_key;
    series.parts.push_back(m.part);
    series.s.push_back(m.s);
  }
  std::vector<PairSeries> out;
  out.reserve(grouped.size());
  for (auto& [key, series] : grouped) {
    // Sort by part index; reject repeated parts.
    std::vector<std::size_t> order(series.parts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return series.parts[a] < series.parts[b]; });
    PairSeries sorted;
    sorted.pair_key = series.pair_key;
    for (auto i : order) {
      if (!sorted.parts.empty() && sorted.parts.back() == series.parts[i])
        throw Error(ErrorCode::invalid_argument,
                    "pair " + series.pair_key + " has repeated part " + std::to_string(series.parts[i]));
      sorted.parts.push_back(series.parts[i]);
      sorted.s.push_back(series.s[i]);
    }
    if (pathing) {
      auto it = pathing->find(sorted.pair_key);
      if (it != pathing->end()) sorted.pathing = it->second.p;
    }
    out.push_back(std::move(sorted));
  }
  return out;
}

DriftFit rb_compute_wear_drift(const PairSeries& series) {
  const std::size_t n = series.size();
  if (n < 2)
    throw Error(ErrorCode::insufficient_data,
                "drift fit for pair " + series.pair_key + " needs at least 2 parts, got " + std::to_string(n));
  const auto u = series.u();
  DriftFit fit;
  fit.pair_key = series.pair_key;
  fit.count = n;
  fit.parts = series.parts;

  double n_sum = 0.0, u_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    n_sum += series.parts[i];
    u_sum += u[i];
  }
  fit.n_bar = n_sum / static_cast<double>(n);
  fit.u_bar = u_sum / static_cast<double>(n);

  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = series.parts[i] - fit.n_bar;
    sxy += dx * (u[i] - fit.u_bar);
    sxx += dx * dx;
  }
  if (sxx <= 0.0)
    throw Error(ErrorCode::insufficient_data, "pair " + series.pair_key + " has no spread in part index");
  fit.b = sxy / sxx;
  fit.c = fit.u_bar - fit.b * (fit.n_bar - 1.0);
  fit.w_d = fit.b * static_cast<double>(n - 1);

  fit.residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i) fit.residuals[i] = u[i] - fit.c - fit.b * (series.parts[i] - 1.0);
  fit.w_v = rb_compute_process_variability(fit);
  return fit;
}

std::optional<double> rb_compute_process_variability(const DriftFit& fit) {
  if (fit.count < 3) return std::nullopt;
  double ss = 0.0;
  for (double e : fit.residuals) ss += e * e;
  return std::sqrt(ss / static_cast<double>(fit.count - 2));
}

ResidualSystematic rb_compute_residual_systematic(const DriftFit& fit) {
  return {fit.c,
          "residual systematic compliance term: absorbs stiffness-related and other unmodeled systematic "
          "effects; it is not uniquely identifiable as deflection alone"};
}

double predict_surface_deviation(double p, const DriftFit& fit, int target) {
  return p + fit.c + fit.b * (target - 1.0);
}

AttributionResult rb_compute_attribution_fractions(double p, const DriftFit& fit, int target, double epsilon) {
  if (target < 1) throw Error(ErrorCode::invalid_argument, "target part index must be >= 1");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::invalid_argument, "epsilon floor must be > 0");
  AttributionResult r;
  r.pair_key = fit.pair_key;
  r.target = target;
  r.epsilon = epsilon;
  const double pa = std::abs(p);
  const double ca = std::abs(fit.c);
  const double wa = std::abs(fit.b * (target - 1.0));
  r.total = pa + ca + wa + epsilon;
  r.phi_p = pa / r.total;
  r.phi_c = ca / r.total;
  r.phi_d = wa / r.total;
  r.s_hat = predict_surface_deviation(p, fit, target);
  if (fit.w_v) r.psi_v = *fit.w_v / (std::abs(r.s_hat) + epsilon);
  return r;
}

CompensationVector rb_compute_pair_tool_comp(double delta, double theta_deg) {
  check_theta(theta_deg);
  CompensationVector v;
  v.delta = delta;
  v.theta_deg = theta_deg;
  const double theta = deg_to_rad(theta_deg);
  v.t_l = delta * std::cos(theta);
  v.t_r = delta * std::sin(theta);
  return v;
}

double rb_compute_tool_length(double delta, double theta_deg) { return rb_compute_pair_tool_comp(delta, theta_deg).t_l; }

double rb_compute_radius_offset(double delta, double theta_deg) { return rb_compute_pair_tool_comp(delta, theta_deg).t_r; }

std::vector<double> rb_compute_values(const PairSeries& series) {
  if (series.s.empty()) throw Error(ErrorCode::insufficient_data, "series " + series.pair_key + " is empty");
  return series.s;
}

double rb_compute_average(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::insufficient_data, "average of an empty slice");
  // Welford-style running mean.
  double mean = 0.0;
  std::size_t k = 0;
  for (double x : values) mean += (x - mean) / static_cast<double>(++k);
  return mean;
}

double rb_compute_std_dev(std::span<const double> values) {
  if (values.size() < 2) throw Error(ErrorCode::insufficient_data, "sample std needs at least 2 values");
  double mean = 0.0, m2 = 0.0;
  std::size_t k = 0;
  for (double x : values) {
    ++k;
    const double d = x - mean;
    mean += d / static_cast<double>(k);
    m2 += d * (x - mean);
  }
  return std::sqrt(m2 / static_cast<double>(values.size() - 1));
}

namespace {
int pair_index(std::string_view pair_key, const LevelLayout& layout) {
  auto key = PairKey::parse(pair_key);
  int idx = key.pressure - layout.first_pressure;
  if (idx < 0 || idx >= layout.per_level * layout.levels)
    throw Error(ErrorCode::invalid_argument, "pair " + key.str() + " outside the level layout");
  return idx;
}
}  // namespace

int rb_compute_level(std::string_view pair_key, const LevelLayout& layout) {
  return pair_index(pair_key, layout) / layout.per_level + 1;
}

int rb_compute_position_in_level(std::string_view pair_key, const LevelLayout& layout) {
  return pair_index(pair_key, layout) % layout.per_level + 1;
}

json SliceSelector::to_json() const {
  json j;
  j["parts"] = parts ? json::array({parts->first, parts->last}) : json();
  j["pair_keys"] = pair_keys;
  return j;
}

SliceResult fetch_inspection_slices(std::span<const PairMeasurement> pairs, const SliceSelector& selector) {
  SliceResult result;
  for (const auto& m : pairs) {
    if (selector.parts && !selector.parts->contains(m.part)) continue;
    if (!selector.pair_keys.empty() && !selector.pair_keys.count(m.pair_key)) continue;
    result.rows.push_back(m);
  }
  result.cache_key = "slice:" + json_digest(selector.to_json()).substr(0, 16);
  if (result.rows.empty()) result.warning = "selector matched no inspection rows";
  return result;
}

std::string_view to_string(DeltaStrategy s) {
  switch (s) {
    case DeltaStrategy::drift_at_target: return "drift-at-target";
    case DeltaStrategy::bounded_residual: return "bounded-residual";
    case DeltaStrategy::mean_deviation: return "mean-deviation";
  }
  return "unknown";
}

DeltaStrategy parse_delta_strategy(std::string_view s) {
  if (s == "drift-at-target") return DeltaStrategy::drift_at_target;
  if (s == "bounded-residual") return DeltaStrategy::bounded_residual;
  if (s == "mean-deviation") return DeltaStrategy::mean_deviation;
  throw Error(ErrorCode::config, "unknown delta strategy: " + std::string(s));
}

double select_delta(const DeltaSelection& sel, const PairSeries& series, const DriftFit* fit) {
  switch (sel.strategy) {
    case DeltaStrategy::mean_deviation:
      return rb_compute_average(series.s);
    case DeltaStrategy::drift_at_target:
      if (!fit) throw Error(ErrorCode::invalid_argument, "drift-at-target needs a drift fit");
      return fit->b * (sel.target - 1.0);
    case DeltaStrategy::bounded_residual:
      if (!fit) throw Error(ErrorCode::invalid_argument, "bounded-residual needs a drift fit");
      return std::clamp(fit->c, -sel.residual_limit, sel.residual_limit);
  }
  return 0.0;
}

std::string compensation_report_csv(std::span<const CompensationRow> rows) {
  std::string out = "pair_key,Trc,Tlc\n";
  for (const auto& r : rows) out += r.pair_key + "," + format_fixed(r.trc) + "," + format_fixed(r.tlc) + "\n";
  return out;
}

std::vector<CompensationRow> parse_compensation_report_csv(std::string_view text) {
  std::vector<CompensationRow> rows;
  bool header = true;
  for (const auto& raw : split(text, '\n')) {
    std::string line = trim(raw);
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    auto f = split(line, ',');
    if (f.size() != 3) throw Error(ErrorCode::parse, "compensation row needs 3 columns: " + line);
    rows.push_back({PairKey::parse(f[0]).str(), parse_double(f[1], "Trc"), parse_double(f[2], "Tlc")});
  }
  return rows;
}

}  // namespace bladecomp::analytics
