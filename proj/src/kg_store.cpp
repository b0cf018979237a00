#include "bladecomp/kg_store.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <httplib.h>

#include "bladecomp/kernels.hpp"

namespace bladecomp::kg {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '-' || ch == '.') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  for (auto& t : tokens) {
    while (!t.empty() && (t.back() == '.' || t.back() == '-')) t.pop_back();
  }
  std::erase_if(tokens, [](const std::string& t) { return t.empty(); });
  return tokens;
}

void normalize(std::vector<double>& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  if (n2 == 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    if (!v.empty()) v[0] = 1.0;
    return;
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
}

bool by_score_then_id(const ScoredItem& a, const ScoredItem& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

constexpr char kEmbeddingMagic[8] = {'B', 'C', 'K', 'G', 'E', 'M', 'B', '1'};

}  // namespace

std::vector<double> HashedEmbedder::embed(std::string_view text) const {
  std::vector<double> v(dim_, 0.0);
  auto tokens = tokenize(text);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto h = fnv1a(tokens[i]);
    v[h % dim_] += (h >> 63) ? -1.0 : 1.0;
    if (i + 1 < tokens.size()) {
      auto hb = fnv1a(tokens[i] + " " + tokens[i + 1]);
      v[hb % dim_] += (hb >> 63) ? -0.5 : 0.5;
    }
  }
  normalize(v);
  return v;
}

HttpEmbedder::HttpEmbedder(std::string endpoint, std::string model, std::size_t dim, std::string path)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), path_(std::move(path)), dim_(dim) {}

std::vector<double> HttpEmbedder::embed(std::string_view text) const {
  httplib::Client client(endpoint_);
  json body = {{"model", model_}, {"input", std::string(text)}};
  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res || res->status != 200)
    throw Error(ErrorCode::backend_failure, "embedding endpoint " + endpoint_ + " failed");
  json j = json::parse(res->body, nullptr, false);
  std::vector<double> v;
  try {
    v = j.at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::backend_failure, std::string("malformed embedding response: ") + e.what());
  }
  if (v.size() != dim_) throw Error(ErrorCode::backend_failure, "embedding dimension mismatch");
  normalize(v);
  return v;
}

std::string TripleRecord::triple_text() const {
  return subject + " " + relation + " " + object + " " + context;
}

json TripleRecord::to_json(bool with_embeddings) const {
  json j = {{"id", id},           {"subject", subject},       {"relation", relation},
            {"object", object},   {"context", context},       {"figure_ref", figure_ref},
            {"source_doc", source_doc}};
  if (with_embeddings) {
    j["v_embedding"] = v_embedding;
    j["u_embedding"] = u_embedding;
  }
  return j;
}

void RetrievalConfig::validate() const {
  if (lambda < 0.0 || lambda > 1.0) throw Error(ErrorCode::config, "lambda must lie in [0, 1]");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorCode::config, "alpha must lie in (0, 1]");
  if (min_pool < 1) throw Error(ErrorCode::config, "min_pool must be >= 1");
  if (k0 < 1) throw Error(ErrorCode::config, "k0 must be >= 1");
  if (k_min < 0 || k_min > k_max) throw Error(ErrorCode::config, "need 0 <= k_min <= k_max");
  if (depth < 0) throw Error(ErrorCode::config, "depth must be >= 0");
  if (beam < 1) throw Error(ErrorCode::config, "beam must be >= 1");
}

RetrievalConfig RetrievalConfig::from_json(const json& j) {
  RetrievalConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.alpha = j.value("alpha", c.alpha);
  c.min_pool = j.value("min_pool", c.min_pool);
  c.z = j.value("z", c.z);
  c.k0 = j.value("k0", c.k0);
  c.k_min = j.value("k_min", c.k_min);
  c.k_max = j.value("k_max", c.k_max);
  c.depth = j.value("depth", c.depth);
  c.beam = j.value("beam", c.beam);
  c.parallel = j.value("parallel", c.parallel);
  c.validate();
  return c;
}

json RetrievalConfig::to_json() const {
  return {{"lambda", lambda}, {"alpha", alpha}, {"min_pool", min_pool}, {"z", z},       {"k0", k0},
          {"k_min", k_min},   {"k_max", k_max}, {"depth", depth},       {"beam", beam}, {"parallel", parallel}};
}

std::vector<std::string> RetrievalResult::evidence_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : selected) ids.push_back(s.id);
  for (const auto& e : expanded) ids.push_back(e.id);
  return ids;
}

json RetrievalResult::to_json() const {
  json sel = json::array();
  for (const auto& s : selected) sel.push_back({{"id", s.id}, {"score", s.score}, {"base", s.base}});
  json exp = json::array();
  for (const auto& e : expanded) exp.push_back({{"id", e.id}, {"hop", e.hop}, {"base", e.base}});
  return {{"selected", sel},     {"expanded", exp},         {"tau", tau},
          {"pool_size", pool_size}, {"fallback", fallback}, {"empty_knowledge", empty_knowledge}};
}

std::size_t pool_size(std::size_t n, double alpha, int min_pool) {
  const auto frac = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n)));
  return std::min(n, std::max(static_cast<std::size_t>(min_pool), frac));
}

std::string stable_triple_id(const std::string& source_doc, std::size_t ordinal, const tsv::TripleFields& fields) {
  return "t" + sha256_hex(source_doc + "\n" + std::to_string(ordinal) + "\n" + tsv::serialize(fields)).substr(0, 12);
}

TripleStore::TripleStore(std::shared_ptr<const Embedder> embedder) : embedder_(std::move(embedder)) {
  if (!embedder_) throw Error(ErrorCode::invalid_argument, "triple store needs an embedder");
}

bool TripleStore::add(const tsv::TripleFields& fields, const std::string& source_doc, std::size_t ordinal) {
  std::string id = stable_triple_id(source_doc, ordinal, fields);
  if (by_id_.count(id)) return false;
  TripleRecord r;
  r.id = id;
  r.subject = fields.subject;
  r.relation = fields.relation;
  r.object = fields.object;
  r.context = fields.description;
  r.figure_ref = fields.figure_ref;
  r.source_doc = source_doc;
  r.v_embedding = embedder_->embed(r.triple_text());
  r.u_embedding = embedder_->embed(r.context);
  const std::size_t idx = records_.size();
  v_matrix_.insert(v_matrix_.end(), r.v_embedding.begin(), r.v_embedding.end());
  u_matrix_.insert(u_matrix_.end(), r.u_embedding.begin(), r.u_embedding.end());
  by_id_.emplace(id, idx);
  std::set<std::string> entities{normalize_text(r.subject), normalize_text(r.object)};
  for (const auto& e : entities) by_entity_[e].push_back(idx);
  records_.push_back(std::move(r));
  return true;
}

IngestReport TripleStore::ingest_tsv(std::string_view tsv_text, const std::string& source_doc) {
  IngestReport report;
  std::size_t ordinal = 0;
  for (const auto& line : split(tsv_text, '\n')) {
    if (trim(line).empty()) continue;
    auto parsed = tsv::parse_line(line);
    if (!parsed.fields) {
      report.rejected.push_back(std::move(parsed));
      continue;
    }
    if (add(*parsed.fields, source_doc, ordinal++))
      ++report.added;
    else
      ++report.skipped_existing;
  }
  return report;
}

const TripleRecord* TripleStore::find(const std::string& id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

std::vector<double> TripleStore::base_similarities(std::span<const double> q, bool parallel) const {
  std::vector<double> out(records_.size());
  if (parallel)
    kernels::dot_scores_parallel(q, v_matrix_, embedder_->dim(), out);
  else
    kernels::dot_scores_serial(q, v_matrix_, embedder_->dim(), out);
  return out;
}

std::vector<ScoredItem> TripleStore::score(std::string_view query, const RetrievalConfig& config) const {
  config.validate();
  if (records_.empty()) return {};
  const auto q = embedder_->embed(query);
  const auto base = base_similarities(q, config.parallel);

  std::vector<std::size_t> order(records_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t p = pool_size(records_.size(), config.alpha, config.min_pool);
  auto cmp = [&](std::size_t a, std::size_t b) {
    if (base[a] != base[b]) return base[a] > base[b];
    return records_[a].id < records_[b].id;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(p), order.end(), cmp);

  const std::size_t dim = embedder_->dim();
  std::vector<ScoredItem> pooled;
  pooled.reserve(p);
  for (std::size_t k = 0; k < p; ++k) {
    const std::size_t i = order[k];
    double ctx = 0.0;
    const double* u = u_matrix_.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) ctx += q[j] * u[j];
    pooled.push_back({records_[i].id, base[i] + config.lambda * ctx, base[i]});
  }
  std::sort(pooled.begin(), pooled.end(), by_score_then_id);
  return pooled;
}

Selection select_candidates(std::vector<ScoredItem> pooled, const RetrievalConfig& config) {
  Selection sel;
  if (pooled.empty()) return sel;
  std::sort(pooled.begin(), pooled.end(), by_score_then_id);
  const double n = static_cast<double>(pooled.size());
  const double hi = pooled.front().score, lo = pooled.back().score;
  double sum = 0.0;
  for (const auto& s : pooled) sum += s.score;
  sel.mu = sum / n;
  double ss = 0.0;
  for (const auto& s : pooled) ss += (s.score - sel.mu) * (s.score - sel.mu);
  sel.sigma = std::sqrt(ss / n);
  if (hi == lo) {
    // Degenerate dispersion: every item sits on the floor.
    sel.mu = hi;
    sel.sigma = 0.0;
  }
  sel.tau = sel.mu + config.z * sel.sigma;

  std::size_t above = 0;
  if (hi == lo)
    above = pooled.size();
  else
    while (above < pooled.size() && pooled[above].score >= sel.tau) ++above;

  std::size_t take = above;
  if (above == 0) {
    sel.floor_empty = true;
    sel.fallback = true;
    take = std::min<std::size_t>(static_cast<std::size_t>(config.k0), pooled.size());
  }
  take = std::min<std::size_t>(take, static_cast<std::size_t>(config.k_max));
  take = std::max<std::size_t>(take, std::min<std::size_t>(static_cast<std::size_t>(config.k_min), pooled.size()));
  sel.selected.assign(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(take));
  return sel;
}

std::vector<ExpandedItem> TripleStore::expand(const std::vector<std::string>& core, const RetrievalConfig& config,
                                              std::span<const double> query_embedding) const {
  std::vector<ExpandedItem> expanded;
  if (config.depth <= 0 || records_.empty()) return expanded;
  const std::size_t dim = embedder_->dim();
  auto base_of = [&](std::size_t i) {
    double acc = 0.0;
    const double* v = v_matrix_.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) acc += query_embedding[j] * v[j];
    return acc;
  };

  std::set<std::size_t> visited;
  std::vector<std::size_t> frontier;
  for (const auto& id : core) {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) continue;
    if (visited.insert(it->second).second) frontier.push_back(it->second);
  }
  for (int hop = 1; hop <= config.depth && !frontier.empty(); ++hop) {
    std::set<std::size_t> candidates;
    for (auto idx : frontier) {
      const auto& r = records_[idx];
      for (const auto& ent : {normalize_text(r.subject), normalize_text(r.object)}) {
        auto it = by_entity_.find(ent);
        if (it == by_entity_.end()) continue;
        for (auto nb : it->second)
          if (!visited.count(nb)) candidates.insert(nb);
      }
    }
    std::vector<std::pair<double, std::size_t>> ranked;
    for (auto c : candidates) ranked.emplace_back(base_of(c), c);
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return records_[a.second].id < records_[b.second].id;
    });
    if (ranked.size() > static_cast<std::size_t>(config.beam)) ranked.resize(static_cast<std::size_t>(config.beam));
    frontier.clear();
    for (const auto& [score, idx] : ranked) {
      visited.insert(idx);
      frontier.push_back(idx);
      expanded.push_back({records_[idx].id, hop, score});
    }
  }
  return expanded;
}

RetrievalResult TripleStore::retrieve(std::string_view query, const RetrievalConfig& config) const {
  RetrievalResult result;
  if (records_.empty()) {
    result.empty_knowledge = true;
    return result;
  }
  auto pooled = score(query, config);
  result.pool_size = static_cast<int>(pooled.size());
  auto sel = select_candidates(std::move(pooled), config);
  result.selected = std::move(sel.selected);
  result.tau = sel.tau;
  result.fallback = sel.fallback;
  std::vector<std::string> core;
  for (const auto& s : result.selected) core.push_back(s.id);
  result.expanded = expand(core, config, embedder_->embed(query));
  return result;
}

void TripleStore::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::string lines;
  for (const auto& r : records_) lines += r.to_json().dump() + "\n";
  write_file((dir / "records.jsonl").string(), lines);

  std::ofstream out(dir / "embeddings.bin", std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write embeddings.bin");
  const std::uint64_t dim = embedder_->dim(), count = records_.size();
  out.write(kEmbeddingMagic, sizeof(kEmbeddingMagic));
  out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& r : records_) {
    out.write(reinterpret_cast<const char*>(r.v_embedding.data()), static_cast<std::streamsize>(dim * sizeof(double)));
    out.write(reinterpret_cast<const char*>(r.u_embedding.data()), static_cast<std::streamsize>(dim * sizeof(double)));
  }
}

TripleStore TripleStore::load(const std::filesystem::path& dir, std::shared_ptr<const Embedder> embedder) {
  TripleStore store(std::move(embedder));
  const std::string text = read_file((dir / "records.jsonl").string());
  std::vector<TripleRecord> records;
  for (const auto& line : split(text, '\n')) {
    if (trim(line).empty()) continue;
    json j = json::parse(line);
    TripleRecord r;
    r.id = j.at("id");
    r.subject = j.at("subject");
    r.relation = j.at("relation");
    r.object = j.at("object");
    r.context = j.at("context");
    r.figure_ref = j.value("figure_ref", "");
    r.source_doc = j.value("source_doc", "");
    records.push_back(std::move(r));
  }

  std::ifstream in(dir / "embeddings.bin", std::ios::binary);
  bool have_matrix = false;
  std::uint64_t dim = 0, count = 0;
  if (in) {
    char magic[8];
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    have_matrix = in && std::memcmp(magic, kEmbeddingMagic, 8) == 0 && dim == store.embedder_->dim() &&
                  count == records.size();
  }
  for (auto& r : records) {
    if (have_matrix) {
      r.v_embedding.resize(dim);
      r.u_embedding.resize(dim);
      in.read(reinterpret_cast<char*>(r.v_embedding.data()), static_cast<std::streamsize>(dim * sizeof(double)));
      in.read(reinterpret_cast<char*>(r.u_embedding.data()), static_cast<std::streamsize>(dim * sizeof(double)));
      if (!in) throw Error(ErrorCode::io, "truncated embeddings.bin");
    } else {
      // Sidecar missing or built by another embedder: re-embed.
      r.v_embedding = store.embedder_->embed(r.triple_text());
      r.u_embedding = store.embedder_->embed(r.context);
    }
    const std::size_t idx = store.records_.size();
    store.v_matrix_.insert(store.v_matrix_.end(), r.v_embedding.begin(), r.v_embedding.end());
    store.u_matrix_.insert(store.u_matrix_.end(), r.u_embedding.begin(), r.u_embedding.end());
    store.by_id_.emplace(r.id, idx);
    std::set<std::string> entities{normalize_text(r.subject), normalize_text(r.object)};
    for (const auto& e : entities) store.by_entity_[e].push_back(idx);
    store.records_.push_back(std::move(r));
  }
  return store;
}

}  // namespace bladecomp::kg
