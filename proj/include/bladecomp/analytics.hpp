#pragma once

// Deterministic blade deviation analytics: inspection pairing, pathing
// projection, per-pair affine drift decomposition, attribution and
// fixed-tilt compensation geometry. All deviations and offsets are in inches.
//
// Sign convention: a positive deviation is surplus material along the
// outward surface normal.

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bladecomp/common.hpp"

namespace bladecomp::analytics {

inline constexpr int kPartnerOffset = 15;
inline constexpr double kDefaultTiltDeg = 25.0;
inline constexpr double kDefaultEpsilon = 1e-9;

// "i+(i+15)", e.g. "2+17".
struct PairKey {
  int pressure = 0;
  int suction = 0;

  std::string str() const;
  // Throws Error(parse) for malformed keys or when suction != pressure + 15.
  static PairKey parse(std::string_view text);
  auto operator<=>(const PairKey&) const = default;
};

// Pressure-side point ids [first_pressure, last_pressure]; partners at +15.
struct PointLayout {
  int first_pressure = 2;
  int last_pressure = 16;
};

struct InspectionRow {
  int part_id = 0;
  int point_id = 0;
  double deviation = 0.0;
  std::size_t line = 0;  // 1-based line in the source file
};

struct InspectionTable {
  std::vector<InspectionRow> rows;

  // Delimited text with header columns part_id, point_id, deviation_in.
  static InspectionTable parse_csv(std::string_view text);
  std::string to_csv() const;
};

struct PairMeasurement {
  std::string pair_key;
  int part = 0;
  double delta_p = 0.0;
  double delta_s = 0.0;
  double v = 0.0;  // delta_p + delta_s
  double s = 0.0;  // v / 2
};

struct UnmatchedPoint {
  int part_id = 0;
  int point_id = 0;
  std::size_t line = 0;
};

struct PairingReport {
  std::vector<PairMeasurement> pairs;  // ordered by (pair, part)
  std::vector<UnmatchedPoint> unmatched;
};

PairMeasurement make_pair_measurement(std::string pair_key, int part, double delta_p, double delta_s);

// Throws Error(invalid_argument) listing line numbers of duplicate
// (part, point) rows.
PairingReport compute_inspection_pairs(const InspectionTable& table, const PointLayout& layout = {});

struct PathingEntry {
  double r = 0.0;  // simulated combined deviation
  double p = 0.0;  // per-surface pathing deviation, r / 2
};

using PathingField = std::map<std::string, PathingEntry>;

// "pair_key,r_k" rows.
std::map<std::string, double> parse_pathing_csv(std::string_view text);

// Throws Error(not_found) naming the first missing key.
PathingField rb_compute_pathing_dev(const std::map<std::string, double>& raw,
                                    std::span<const std::string> keys);

struct PairSeries {
  std::string pair_key;
  std::vector<int> parts;   // strictly increasing
  std::vector<double> s;    // per-surface deviation per part
  std::optional<double> pathing;

  std::size_t size() const { return parts.size(); }
  // s - p (p = 0 when no pathing is attached).
  std::vector<double> u() const;
};

struct PartRange {
  int first = 1;
  int last = 1;
  bool contains(int n) const { return n >= first && n <= last; }
};

// Groups pair measurements into per-pair series, optionally restricted to a
// part window and with pathing attached.
std::vector<PairSeries> build_series(std::span<const PairMeasurement> pairs,
                                     std::optional<PartRange> parts = std::nullopt,
                                     const PathingField* pathing = nullptr);

struct DriftFit {
  std::string pair_key;
  std::size_t count = 0;  // N
  double b = 0.0;         // drift per part
  double c = 0.0;         // residual systematic term
  double w_d = 0.0;       // b (N - 1)
  std::optional<double> w_v;  // absent when N < 3
  std::vector<double> residuals;
  std::vector<int> parts;
  double n_bar = 0.0;
  double u_bar = 0.0;

  bool variability_available() const { return w_v.has_value(); }
};

// Closed-form least squares of u = c + b (n - 1). Throws
// Error(insufficient_data) when N < 2.
DriftFit rb_compute_wear_drift(const PairSeries& series);

// sqrt(sum eps^2 / (N - 2)); nullopt when N < 3.
std::optional<double> rb_compute_process_variability(const DriftFit& fit);

struct ResidualSystematic {
  double c = 0.0;
  std::string note;
};

ResidualSystematic rb_compute_residual_systematic(const DriftFit& fit);

struct AttributionResult {
  std::string pair_key;
  int target = 1;
  double phi_p = 0.0;
  double phi_c = 0.0;
  double phi_d = 0.0;
  std::optional<double> psi_v;
  double s_hat = 0.0;
  double total = 0.0;  // a_k
  double epsilon = kDefaultEpsilon;
};

// p + c + b (n* - 1)
double predict_surface_deviation(double p, const DriftFit& fit, int target);

AttributionResult rb_compute_attribution_fractions(double p, const DriftFit& fit, int target,
                                                   double epsilon = kDefaultEpsilon);

struct CompensationVector {
  std::string pair_key;
  double delta = 0.0;
  double t_r = 0.0;  // radius offset, delta sin(theta)
  double t_l = 0.0;  // length offset, delta cos(theta)
  double theta_deg = kDefaultTiltDeg;
};

// Throws Error(config) unless theta is in (0, 90) degrees.
CompensationVector rb_compute_pair_tool_comp(double delta, double theta_deg = kDefaultTiltDeg);
double rb_compute_tool_length(double delta, double theta_deg = kDefaultTiltDeg);
double rb_compute_radius_offset(double delta, double theta_deg = kDefaultTiltDeg);

// Summary statistics. Empty input throws Error(insufficient_data).
std::vector<double> rb_compute_values(const PairSeries& series);
double rb_compute_average(std::span<const double> values);
// Sample standard deviation (divisor N - 1); needs N >= 2.
double rb_compute_std_dev(std::span<const double> values);

struct LevelLayout {
  int first_pressure = 2;
  int per_level = 3;
  int levels = 5;
};

// Row-major grouping of pairs into spanwise levels, both indices 1-based.
int rb_compute_level(std::string_view pair_key, const LevelLayout& layout = {});
int rb_compute_position_in_level(std::string_view pair_key, const LevelLayout& layout = {});

struct SliceSelector {
  std::optional<PartRange> parts;
  std::set<std::string> pair_keys;  // empty = all
  json to_json() const;
};

struct SliceResult {
  std::vector<PairMeasurement> rows;
  std::string cache_key;
  std::optional<std::string> warning;
};

SliceResult fetch_inspection_slices(std::span<const PairMeasurement> pairs, const SliceSelector& selector);

enum class DeltaStrategy { drift_at_target, bounded_residual, mean_deviation };

std::string_view to_string(DeltaStrategy s);
DeltaStrategy parse_delta_strategy(std::string_view s);

struct DeltaSelection {
  DeltaStrategy strategy = DeltaStrategy::mean_deviation;
  int target = 1;              // n* for drift_at_target
  double residual_limit = 0.010;
};

// Chooses the signed axial correction for one pair.
double select_delta(const DeltaSelection& sel, const PairSeries& series, const DriftFit* fit);

struct CompensationRow {
  std::string pair_key;
  double trc = 0.0;
  double tlc = 0.0;
};

// "pair_key,Trc,Tlc" with six decimals.
std::string compensation_report_csv(std::span<const CompensationRow> rows);
std::vector<CompensationRow> parse_compensation_report_csv(std::string_view text);

}  // namespace bladecomp::analytics
