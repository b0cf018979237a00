#include "bladecomp/fixtures.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace bladecomp::fixtures {

namespace an = analytics;

const std::vector<an::CompensationRow>& reference_rows() {
  static const std::vector<an::CompensationRow> rows{
      {"2+17", 0.001164, 0.002497},  {"3+18", 0.001030, 0.002209},  {"4+19", 0.001063, 0.002280},
      {"5+20", 0.001104, 0.002367},  {"6+21", 0.001138, 0.002440},  {"7+22", 0.001253, 0.002686},
      {"8+23", 0.001466, 0.003144},  {"9+24", 0.001290, 0.002766},  {"10+25", 0.001356, 0.002909},
      {"11+26", 0.001513, 0.003245}, {"12+27", 0.001475, 0.003163}, {"13+28", 0.001556, 0.003337},
      {"14+29", 0.001670, 0.003581}, {"15+30", 0.001528, 0.003278}, {"16+31", 0.001620, 0.003474},
  };
  return rows;
}

std::string reference_query() {
  return "load './Inspection_Aggregated.csv' and give me compensation for parts 4 to 16";
}

std::string BladeFixture::pathing_csv() const {
  std::string out = "pair_key,r_k\n";
  char buf[64];
  for (const auto& t : truth) {
    std::snprintf(buf, sizeof buf, "%s,%.17g\n", t.pair_key.c_str(), t.r);
    out += buf;
  }
  return out;
}

BladeFixture make_blade_fixture() {
  BladeFixture f;
  const double sin_theta = std::sin(an::kDefaultTiltDeg * std::numbers::pi / 180.0);
  for (const auto& row : reference_rows()) {
    const auto key = an::PairKey::parse(row.pair_key);
    const int i = key.pressure;
    PairTruth t;
    t.pair_key = row.pair_key;
    t.delta = row.trc / sin_theta;
    t.r = 0.0002 + 0.00002 * (i - 2);
    t.p = t.r / 2.0;
    t.b = 0.000015 * (1 + i % 4);
    for (int n = 1; n <= kBladeParts; ++n) t.eps.push_back(0.00008 * (((i * 31 + n * 17) % 11) - 5) / 5.0);
    double eps_window = 0.0;
    for (int n = kTableWindow.first; n <= kTableWindow.last; ++n) eps_window += t.eps[n - 1];
    eps_window /= (kTableWindow.last - kTableWindow.first + 1);
    const double n_mid = (kTableWindow.first + kTableWindow.last) / 2.0;
    t.c = t.delta - t.p - t.b * (n_mid - 1.0) - eps_window;
    f.pathing_raw[t.pair_key] = t.r;
    f.truth.push_back(t);
  }
  for (int n = 1; n <= kBladeParts; ++n) {
    for (const auto& t : f.truth) {
      const auto key = an::PairKey::parse(t.pair_key);
      const double s = t.p + t.c + t.b * (n - 1) + t.eps[n - 1];
      // Uneven split between the two surfaces; only the mean matters.
      const double h = 0.0003 * ((key.pressure + n) % 5 - 2);
      f.table.rows.push_back({n, key.pressure, s + h, 0});
      f.table.rows.push_back({n, key.suction, s - h, 0});
    }
  }
  return f;
}

void write_blade_fixture(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto f = make_blade_fixture();
  write_file((dir / "Inspection_Aggregated.csv").string(), f.inspection_csv());
  write_file((dir / "pathing_field.csv").string(), f.pathing_csv());
  write_file((dir / "reference_compensation.csv").string(), an::compensation_report_csv(reference_rows()));
}

std::vector<tsv::TripleFields> synthetic_triples(std::size_t n, std::uint64_t seed) {
  static const std::vector<std::string> subjects{
      "tool wear",       "spindle thermal growth", "blade deflection", "fixture compliance", "coolant flow",
      "feed rate",       "cutting force",          "surface roughness", "chatter",           "tool runout",
      "probe calibration", "leading edge",         "trailing edge",     "root fillet",       "tip section",
      "path tracking error", "ball end mill",      "workholding clamp", "airfoil thickness", "machine axis"};
  static const std::vector<std::string> relations{"causes", "increases", "reduces", "requires", "limits",
                                                  "is_measured_by", "recommended_for", "affects", "avoid_with"};
  static const std::vector<std::string> words{
      "thin",   "wall",    "thickness", "offset",   "radial", "axial",  "drift",    "variability", "pass",
      "finish", "rough",   "stiffness", "vibration", "heat",  "probe",  "deviation", "tolerance",  "mean",
      "sample", "surface", "normal",    "chord",    "span",  "stock",  "allowance", "lead",       "tilt"};
  std::mt19937_64 rng(seed);
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  std::vector<tsv::TripleFields> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    tsv::TripleFields t;
    t.subject = pick(subjects);
    t.relation = pick(relations);
    do {
      t.object = pick(subjects);
    } while (t.object == t.subject);
    std::string desc = t.subject + " " + t.relation + " " + t.object;
    const int extra = 3 + static_cast<int>(rng() % 6);
    for (int w = 0; w < extra; ++w) desc += " " + pick(words);
    desc += " case " + std::to_string(k);
    t.description = desc;
    t.figure_ref = rng() % 4 == 0 ? "Figure " + std::to_string(1 + rng() % 9) : "";
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace bladecomp::fixtures
