#pragma once

// Bundled fixtures: a 16-part synthetic blade whose parts 4-16 reproduce the
// reference compensation table under mean-deviation selection, the table
// itself, and a seeded synthetic triple generator.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bladecomp/analytics.hpp"
#include "bladecomp/triple_tsv.hpp"

namespace bladecomp::fixtures {

inline constexpr int kBladeParts = 16;
inline constexpr analytics::PartRange kTableWindow{4, 16};

// Reference (pair_key, Trc, Tlc) rows, inches.
const std::vector<analytics::CompensationRow>& reference_rows();

// The query whose transcript produced those rows.
std::string reference_query();

struct PairTruth {
  std::string pair_key;
  double r = 0.0;      // combined pathing deviation
  double p = 0.0;      // r / 2
  double c = 0.0;
  double b = 0.0;
  std::vector<double> eps;  // per part 1..16
  double delta = 0.0;  // mean s over the table window
};

struct BladeFixture {
  analytics::InspectionTable table;
  std::map<std::string, double> pathing_raw;
  std::vector<PairTruth> truth;

  std::string inspection_csv() const { return table.to_csv(); }
  std::string pathing_csv() const;
};

BladeFixture make_blade_fixture();

// Writes Inspection_Aggregated.csv, pathing_field.csv and
// reference_compensation.csv into dir.
void write_blade_fixture(const std::filesystem::path& dir);

// Deterministic triples over a small machining vocabulary.
std::vector<tsv::TripleFields> synthetic_triples(std::size_t n, std::uint64_t seed);

}  // namespace bladecomp::fixtures
