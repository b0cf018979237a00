#include "bladecomp/triple_tsv.hpp"

#include "bladecomp/common.hpp"

namespace bladecomp::tsv {

namespace {

bool is_quoted(std::string_view s) { return s.size() >= 2 && s.front() == '"' && s.back() == '"'; }

std::string strip_quotes(std::string_view s) {
  std::string out;
  for (char c : s)
    if (c != '"') out.push_back(c);
  return trim(out);
}

}  // namespace

std::string serialize(const TripleFields& t) {
  std::string out;
  out.reserve(t.subject.size() + t.relation.size() + t.object.size() + t.description.size() + t.figure_ref.size() + 8);
  out += t.subject;
  out += '\t';
  out += t.relation;
  out += '\t';
  out += t.object;
  out += "\t\"";
  out += t.description;
  out += "\"\t";
  out += t.figure_ref;
  return out;
}

ParsedLine parse_line(std::string_view line) {
  ParsedLine result;
  std::string_view body = line;
  while (!body.empty() && (body.back() == '\r' || body.back() == '\n')) body.remove_suffix(1);
  result.text = std::string(body);

  if (body.find('\t') == std::string_view::npos) {
    result.reason = "no tab separators";
    return result;
  }
  auto fields = split(body, '\t');

  // doubled-tab: drop empty fields other than a trailing (figure) field.
  {
    std::vector<std::string> kept;
    bool dropped = false;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      bool is_last = i + 1 == fields.size();
      if (fields[i].empty() && !is_last) {
        dropped = true;
        continue;
      }
      kept.push_back(fields[i]);
    }
    if (dropped) {
      fields = std::move(kept);
      result.repairs.push_back("doubled-tab");
    }
  }

  if (fields.size() == 4 && is_quoted(fields[3])) {
    fields.emplace_back();
    result.repairs.push_back("missing-figure");
  }
  if (fields.size() != 5) {
    result.reason = "expected 5 fields, found " + std::to_string(fields.size());
    result.repairs.clear();
    return result;
  }

  bool quote_repair = false;
  for (int i = 0; i < 3; ++i) {
    if (fields[i].find('"') != std::string::npos) {
      fields[i] = strip_quotes(fields[i]);
      quote_repair = true;
    }
  }
  std::string description;
  if (is_quoted(fields[3])) {
    description = fields[3].substr(1, fields[3].size() - 2);
  } else {
    description = strip_quotes(fields[3]);
    quote_repair = true;
  }
  if (fields[4].find('"') != std::string::npos) {
    fields[4] = strip_quotes(fields[4]);
    quote_repair = true;
  }
  if (quote_repair) result.repairs.push_back("stray-quote");

  if (trim(fields[0]).empty() || trim(fields[1]).empty() || trim(fields[2]).empty()) {
    result.reason = "empty entity or relation";
    result.repairs.clear();
    return result;
  }
  result.fields = TripleFields{fields[0], fields[1], fields[2], description, fields[4]};
  result.status = result.repairs.empty() ? LineStatus::valid : LineStatus::repaired;
  return result;
}

}  // namespace bladecomp::tsv
