#pragma once

// Five-field triple lines:
//   ENTITY_1 <TAB> RELATIONSHIP_TYPE <TAB> ENTITY_2 <TAB> "RELATIONSHIP_DESCRIPTION" <TAB> FIGURE_REFERENCE
//
// Repair rules, applied in this order:
//   doubled-tab      empty fields produced by repeated tabs are removed (a trailing empty
//                    figure field is kept)
//   missing-figure   a line with four fields ending in a quoted description gains an empty
//                    figure reference
//   stray-quote      quotes are stripped from entity/relation fields and the description is re-quoted
// Anything else that does not yield exactly five fields with non-empty
// entities and relation is rejected.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bladecomp::tsv {

inline constexpr std::string_view kFieldFormat =
    "ENTITY_1 <TAB> RELATIONSHIP_TYPE <TAB> ENTITY_2 <TAB> \"RELATIONSHIP_DESCRIPTION\" <TAB> FIGURE_REFERENCE";

struct TripleFields {
  std::string subject;
  std::string relation;
  std::string object;
  std::string description;  // without the surrounding quotes
  std::string figure_ref;
  bool operator==(const TripleFields&) const = default;
};

enum class LineStatus { valid, repaired, rejected };

struct ParsedLine {
  std::string text;
  LineStatus status = LineStatus::rejected;
  std::optional<TripleFields> fields;
  std::vector<std::string> repairs;  // repair rule names applied
  std::string reason;                // rejection reason
};

ParsedLine parse_line(std::string_view line);
std::string serialize(const TripleFields& t);

}  // namespace bladecomp::tsv
