#pragma once

// Markdown-to-triples construction pipeline: windowing, extraction prompt
// assembly, TSV parsing with repair, table-reference propagation and
// per-document aggregation.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bladecomp/common.hpp"
#include "bladecomp/triple_tsv.hpp"

namespace bladecomp::llm {
class Backend;
}

namespace bladecomp::kgb {

inline constexpr std::size_t kWindowSize = 1000;
inline constexpr std::size_t kWindowOverlap = 500;

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - start; }
  bool operator==(const Span&) const = default;
};

struct ChunkWindow {
  std::string doc_id;
  std::size_t index = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  Span main;
  Span context_before;
  Span context_after;

  std::string id() const { return doc_id + "#" + std::to_string(index); }
};

// Windows of at most 1000 characters with stride 500; the last window ends
// at the document end. Main spans are the non-overlapped centers and tile
// [0, len) exactly.
std::vector<ChunkWindow> chunk_document(std::string_view text, const std::string& doc_id = "doc");

std::string build_prompt(const ChunkWindow& window, std::string_view text);

struct TripleDraft {
  tsv::TripleFields fields;
  std::string doc_id;
  std::size_t window = 0;
  bool repaired = false;
  std::vector<std::string> repairs;
};

struct ParseOutput {
  std::vector<TripleDraft> drafts;
  std::vector<tsv::ParsedLine> rejects;
};

ParseOutput parse_triples(std::string_view model_output, const std::string& doc_id, std::size_t window = 0);

struct PropagationResult {
  std::vector<TripleDraft> drafts;
  std::vector<std::string> warnings;
};

// A schema triple is a draft whose figure reference names a table
// ("Table ..."). Drafts with an empty reference inherit the table reference
// of schema triples sharing their subject within the same window; two
// different references leave the draft unchanged and emit a warning.
PropagationResult propagate_table_refs(std::vector<TripleDraft> drafts);

struct DocumentTriples {
  std::string doc_id;
  std::vector<TripleDraft> drafts;
};

struct CorpusSummary {
  std::size_t triples = 0;
  std::size_t entities = 0;
  std::size_t relations = 0;
  bool operator==(const CorpusSummary&) const = default;
  json to_json() const { return {{"triples", triples}, {"unique_entities", entities}, {"unique_relations", relations}}; }
};

// Entities are subjects and objects; uniqueness is case-folded.
CorpusSummary summarize(std::span<const TripleDraft> drafts);

struct AggregateOutput {
  std::map<std::string, std::string> per_doc_tsv;
  std::string global_tsv;
  std::string provenance_sidecar;  // line number <TAB> doc id
  CorpusSummary summary;
  std::map<std::string, CorpusSummary> per_doc_summary;
};

// Concatenates without deduplication.
AggregateOutput aggregate(std::span<const DocumentTriples> docs);
void write_aggregate(const AggregateOutput& out, const std::filesystem::path& dir);

// window id -> extraction text
using Transcript = std::map<std::string, std::string>;
Transcript load_transcript(const std::string& path);

using Extractor = std::function<std::string(const ChunkWindow&, const std::string& prompt)>;
Extractor transcript_extractor(Transcript transcript);
Extractor backend_extractor(llm::Backend& backend);

struct DocumentReport {
  std::string doc_id;
  std::size_t windows = 0;
  std::size_t valid = 0;
  std::size_t repaired = 0;
  std::size_t rejected = 0;
  std::vector<std::string> warnings;
};

struct BuildResult {
  AggregateOutput output;
  std::vector<DocumentReport> reports;
};

// Runs the full pipeline over (doc id, markdown text) pairs.
BuildResult build_corpus(const std::vector<std::pair<std::string, std::string>>& docs, const Extractor& extractor);

}  // namespace bladecomp::kgb
