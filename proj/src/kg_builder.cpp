#include "bladecomp/kg_builder.hpp"

#include <set>

#include "bladecomp/llm_gateway.hpp"

namespace bladecomp::kgb {

std::vector<ChunkWindow> chunk_document(std::string_view text, const std::string& doc_id) {
  std::vector<ChunkWindow> windows;
  const std::size_t len = text.size();
  if (len == 0) return windows;
  const std::size_t stride = kWindowSize - kWindowOverlap;
  const std::size_t margin = kWindowOverlap / 2;
  for (std::size_t start = 0;; start += stride) {
    ChunkWindow w;
    w.doc_id = doc_id;
    w.index = windows.size();
    w.start = start;
    w.end = std::min(start + kWindowSize, len);
    windows.push_back(w);
    if (w.end == len) break;
  }
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto& w = windows[i];
    w.main.start = i == 0 ? 0 : w.start + margin;
    w.main.end = i + 1 == windows.size() ? len : windows[i + 1].start + margin;
    w.context_before = {w.start, w.main.start};
    w.context_after = {w.main.end, w.end};
  }
  return windows;
}

std::string build_prompt(const ChunkWindow& window, std::string_view text) {
  auto slice = [&](const Span& s) { return std::string(text.substr(s.start, s.size())); };
  std::string p;
  p += "Extract knowledge-graph triples from a technical machining document.\n";
  p += "Extract triples from the CHUNK_MAIN region only. Use CONTEXT_BEFORE and CONTEXT_AFTER only to resolve "
       "references to tables and figures.\n";
  p += "Write one triple per line in this exact five-field format:\n";
  p += tsv::kFieldFormat;
  p += "\n\n";
  p += "CONTEXT_BEFORE:\n" + slice(window.context_before) + "\n";
  p += "<CHUNK_MAIN>\n" + slice(window.main) + "\n</CHUNK_MAIN>\n";
  p += "CONTEXT_AFTER:\n" + slice(window.context_after) + "\n";
  p += "WINDOW: " + window.id() + "\n";
  return p;
}

ParseOutput parse_triples(std::string_view model_output, const std::string& doc_id, std::size_t window) {
  ParseOutput out;
  for (const auto& line : split(model_output, '\n')) {
    if (trim(line).empty()) continue;
    auto parsed = tsv::parse_line(line);
    if (!parsed.fields) {
      out.rejects.push_back(std::move(parsed));
      continue;
    }
    TripleDraft d;
    d.fields = *parsed.fields;
    d.doc_id = doc_id;
    d.window = window;
    d.repaired = parsed.status == tsv::LineStatus::repaired;
    d.repairs = parsed.repairs;
    out.drafts.push_back(std::move(d));
  }
  return out;
}

namespace {
bool is_table_ref(std::string_view ref) {
  auto r = to_lower(trim(ref));
  return r.rfind("table", 0) == 0;
}
}  // namespace

PropagationResult propagate_table_refs(std::vector<TripleDraft> drafts) {
  PropagationResult result;
  // (window, subject) -> table refs
  std::map<std::pair<std::size_t, std::string>, std::set<std::string>> schema;
  for (const auto& d : drafts)
    if (is_table_ref(d.fields.figure_ref))
      schema[{d.window, normalize_text(d.fields.subject)}].insert(trim(d.fields.figure_ref));

  for (auto& d : drafts) {
    if (!trim(d.fields.figure_ref).empty()) continue;
    auto it = schema.find({d.window, normalize_text(d.fields.subject)});
    if (it == schema.end()) continue;
    if (it->second.size() == 1) {
      d.fields.figure_ref = *it->second.begin();
    } else {
      std::string refs;
      for (const auto& r : it->second) refs += (refs.empty() ? "" : ", ") + r;
      result.warnings.push_back("ambiguous table reference for subject '" + d.fields.subject + "': " + refs);
    }
  }
  result.drafts = std::move(drafts);
  return result;
}

CorpusSummary summarize(std::span<const TripleDraft> drafts) {
  std::set<std::string> entities, relations;
  for (const auto& d : drafts) {
    entities.insert(normalize_text(d.fields.subject));
    entities.insert(normalize_text(d.fields.object));
    relations.insert(normalize_text(d.fields.relation));
  }
  return {drafts.size(), entities.size(), relations.size()};
}

AggregateOutput aggregate(std::span<const DocumentTriples> docs) {
  AggregateOutput out;
  std::vector<TripleDraft> all;
  std::size_t line = 0;
  for (const auto& doc : docs) {
    std::string text;
    for (const auto& d : doc.drafts) {
      const std::string serialized = tsv::serialize(d.fields);
      text += serialized + "\n";
      out.global_tsv += serialized + "\n";
      out.provenance_sidecar += std::to_string(++line) + "\t" + doc.doc_id + "\n";
      all.push_back(d);
    }
    out.per_doc_tsv[doc.doc_id] = std::move(text);
    out.per_doc_summary[doc.doc_id] = summarize(doc.drafts);
  }
  out.summary = summarize(all);
  return out;
}

void write_aggregate(const AggregateOutput& out, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "docs");
  for (const auto& [doc, text] : out.per_doc_tsv) write_file((dir / "docs" / (doc + ".tsv")).string(), text);
  write_file((dir / "global.tsv").string(), out.global_tsv);
  write_file((dir / "global.provenance.tsv").string(), out.provenance_sidecar);
  json summary = out.summary.to_json();
  json per_doc = json::object();
  for (const auto& [doc, s] : out.per_doc_summary) per_doc[doc] = s.to_json();
  summary["documents"] = per_doc;
  write_file((dir / "summary.json").string(), summary.dump(2) + "\n");
}

Transcript load_transcript(const std::string& path) {
  json j = json::parse(read_file(path));
  Transcript t;
  for (auto it = j.begin(); it != j.end(); ++it) t[it.key()] = it.value().get<std::string>();
  return t;
}

Extractor transcript_extractor(Transcript transcript) {
  return [t = std::move(transcript)](const ChunkWindow& w, const std::string&) -> std::string {
    auto it = t.find(w.id());
    return it == t.end() ? std::string() : it->second;
  };
}

Extractor backend_extractor(llm::Backend& backend) {
  return [&backend](const ChunkWindow&, const std::string& prompt) {
    return backend.complete(llm::Role::extractor, prompt);
  };
}

BuildResult build_corpus(const std::vector<std::pair<std::string, std::string>>& docs, const Extractor& extractor) {
  BuildResult result;
  std::vector<DocumentTriples> per_doc;
  for (const auto& [doc_id, text] : docs) {
    DocumentReport report;
    report.doc_id = doc_id;
    DocumentTriples triples;
    triples.doc_id = doc_id;
    for (const auto& w : chunk_document(text, doc_id)) {
      ++report.windows;
      auto parsed = parse_triples(extractor(w, build_prompt(w, text)), doc_id, w.index);
      report.rejected += parsed.rejects.size();
      for (auto& d : parsed.drafts) {
        (d.repaired ? report.repaired : report.valid)++;
        triples.drafts.push_back(std::move(d));
      }
    }
    auto propagated = propagate_table_refs(std::move(triples.drafts));
    triples.drafts = std::move(propagated.drafts);
    report.warnings = std::move(propagated.warnings);
    per_doc.push_back(std::move(triples));
    result.reports.push_back(std::move(report));
  }
  result.output = aggregate(per_doc);
  return result;
}

}  // namespace bladecomp::kgb
