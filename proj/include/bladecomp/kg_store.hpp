#pragma once

// Triple store and retrieval.
//
// Scoring: s_i = cos(q, v_i) + lambda * cos(q, u_i), where v_i embeds the
// full triple text plus context and u_i the context alone. Only the top
// p = min(N, max(m, floor(alpha N))) items by cos(q, v_i) are scored. The
// inclusion floor is tau = mu + z sigma over the pooled scores (population
// sigma); an empty floor set falls back to the top k0. The selected count
// is clamped to [k_min, k_max] and the selection is then widened by a
// breadth-first expansion over shared-entity adjacency.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bladecomp/common.hpp"
#include "bladecomp/triple_tsv.hpp"

namespace bladecomp::kg {

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  // Unit-norm embedding. Throws Error(backend_failure) on failure.
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

// Signed feature hashing of lower-cased word tokens and word bigrams.
class HashedEmbedder : public Embedder {
 public:
  explicit HashedEmbedder(std::size_t dim = 256) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  std::vector<double> embed(std::string_view text) const override;

 private:
  std::size_t dim_;
};

// POST {model, input} to an embeddings endpoint; reads data[0].embedding.
class HttpEmbedder : public Embedder {
 public:
  HttpEmbedder(std::string endpoint, std::string model, std::size_t dim, std::string path = "/v1/embeddings");
  std::size_t dim() const override { return dim_; }
  std::vector<double> embed(std::string_view text) const override;

 private:
  std::string endpoint_, model_, path_;
  std::size_t dim_;
};

struct TripleRecord {
  std::string id;
  std::string subject, relation, object;
  std::string context;  // relationship description
  std::string figure_ref;
  std::string source_doc;
  std::vector<double> v_embedding;
  std::vector<double> u_embedding;

  tsv::TripleFields fields() const { return {subject, relation, object, context, figure_ref}; }
  std::string triple_text() const;
  json to_json(bool with_embeddings = false) const;
};

struct RetrievalConfig {
  double lambda = 0.5;
  double alpha = 0.2;
  int min_pool = 20;
  double z = 0.5;
  int k0 = 5;
  int k_min = 3;
  int k_max = 15;
  int depth = 1;
  int beam = 5;
  bool parallel = true;

  void validate() const;
  static RetrievalConfig from_json(const json& j);
  json to_json() const;
};

struct ScoredItem {
  std::string id;
  double score = 0.0;
  double base = 0.0;
};

struct ExpandedItem {
  std::string id;
  int hop = 0;
  double base = 0.0;
};

struct Selection {
  std::vector<ScoredItem> selected;
  double tau = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  bool fallback = false;
  bool floor_empty = false;
};

struct RetrievalResult {
  std::vector<ScoredItem> selected;
  std::vector<ExpandedItem> expanded;
  double tau = 0.0;
  int pool_size = 0;
  bool fallback = false;
  bool empty_knowledge = false;

  std::vector<std::string> evidence_ids() const;
  json to_json() const;
  std::string digest() const { return json_digest(to_json()); }
};

struct IngestReport {
  std::size_t added = 0;
  std::size_t skipped_existing = 0;
  std::vector<tsv::ParsedLine> rejected;
};

// p = min(N, max(m, floor(alpha N)))
std::size_t pool_size(std::size_t n, double alpha, int min_pool);

class TripleStore {
 public:
  explicit TripleStore(std::shared_ptr<const Embedder> embedder);

  // Parses a five-field TSV text and appends records with stable ids;
  // re-ingesting identical content adds nothing.
  IngestReport ingest_tsv(std::string_view tsv_text, const std::string& source_doc);
  // Adds one record; returns false when its id already exists.
  bool add(const tsv::TripleFields& fields, const std::string& source_doc, std::size_t ordinal);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const TripleRecord* find(const std::string& id) const;
  const std::vector<TripleRecord>& records() const { return records_; }
  const Embedder& embedder() const { return *embedder_; }

  // Pre-pool by base similarity, then combined score for pooled items.
  // Sorted by (score desc, id asc).
  std::vector<ScoredItem> score(std::string_view query, const RetrievalConfig& config) const;
  std::vector<ExpandedItem> expand(const std::vector<std::string>& core, const RetrievalConfig& config,
                                   std::span<const double> query_embedding) const;
  RetrievalResult retrieve(std::string_view query, const RetrievalConfig& config) const;

  // Directory layout: records.jsonl (append-only) + embeddings.bin.
  void save(const std::filesystem::path& dir) const;
  static TripleStore load(const std::filesystem::path& dir, std::shared_ptr<const Embedder> embedder);

 private:
  std::vector<double> base_similarities(std::span<const double> q, bool parallel) const;

  std::shared_ptr<const Embedder> embedder_;
  std::vector<TripleRecord> records_;
  std::map<std::string, std::size_t> by_id_;
  std::map<std::string, std::vector<std::size_t>> by_entity_;
  std::vector<double> v_matrix_;
  std::vector<double> u_matrix_;
};

// Floor selection over pooled combined scores.
Selection select_candidates(std::vector<ScoredItem> pooled, const RetrievalConfig& config);

std::string stable_triple_id(const std::string& source_doc, std::size_t ordinal, const tsv::TripleFields& fields);

}  // namespace bladecomp::kg
