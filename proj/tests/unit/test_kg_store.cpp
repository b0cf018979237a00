#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "bladecomp/kg_store.hpp"
#include "support/helpers.hpp"
#include "support/oracles.hpp"

using namespace bladecomp;
using namespace bladecomp::kg;
namespace ts = testing_support;

namespace {

std::shared_ptr<const Embedder> hashed() { return std::make_shared<HashedEmbedder>(128); }

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<ScoredItem> items(const std::vector<double>& scores) {
  std::vector<ScoredItem> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "t%03zu", i);
    out.push_back({id, scores[i], scores[i]});
  }
  return out;
}

std::set<std::string> ids(const std::vector<ScoredItem>& v) {
  std::set<std::string> out;
  for (const auto& s : v) out.insert(s.id);
  return out;
}

}  // namespace

TEST_CASE("ingest embeds twice and is idempotent") {
  TripleStore store(hashed());
  const std::string row = "Ti-6Al-4V\thas property\tlow thermal conductivity\t\"reduces heat dissipation\"\tFigure 3\n";
  auto r = store.ingest_tsv(row, "doc-a");
  CHECK(r.added == 1);
  REQUIRE(store.size() == 1);
  const auto& rec = store.records().front();
  CHECK(std::abs(norm(rec.v_embedding) - 1.0) < 1e-12);
  CHECK(std::abs(norm(rec.u_embedding) - 1.0) < 1e-12);
  CHECK(rec.source_doc == "doc-a");

  auto again = store.ingest_tsv(row, "doc-a");
  CHECK(again.added == 0);
  CHECK(again.skipped_existing == 1);
  CHECK(store.size() == 1);

  auto bad = store.ingest_tsv("just prose without tabs\n", "doc-a");
  CHECK(bad.rejected.size() == 1);
  CHECK(store.size() == 1);
}

TEST_CASE("pre-pool size") {
  CHECK(pool_size(10, 0.2, 20) == 10);
  CHECK(pool_size(1000, 0.2, 20) == 200);
  CHECK(pool_size(50, 0.2, 20) == 20);
  for (std::size_t n = 0; n < 400; n += 7) {
    std::size_t expected = std::min<std::size_t>(n, std::max<std::size_t>(20, static_cast<std::size_t>(std::floor(0.3 * n))));
    CHECK(pool_size(n, 0.3, 20) == expected);
  }
}

TEST_CASE("inclusion floor on a hand-evaluated pool") {
  RetrievalConfig cfg;
  cfg.z = 0.5;
  cfg.k_min = 1;
  auto sel = select_candidates(items({1.0, 0.5, 0.0}), cfg);
  CHECK(sel.tau == doctest::Approx(0.5 + 0.5 * std::sqrt(1.0 / 6.0)).epsilon(1e-12));
  CHECK(sel.tau == doctest::Approx(0.7041).epsilon(1e-4));
  REQUIRE(sel.selected.size() == 1);
  CHECK(sel.selected[0].score == 1.0);
  CHECK_FALSE(sel.fallback);

  cfg.k_min = 2;
  auto padded = select_candidates(items({1.0, 0.5, 0.0}), cfg);
  REQUIRE(padded.selected.size() == 2);
  CHECK(padded.selected[1].score == 0.5);
}

TEST_CASE("equal scores select everything up to the cap") {
  RetrievalConfig cfg;
  cfg.k_max = 4;
  auto sel = select_candidates(items(std::vector<double>(9, 0.3)), cfg);
  CHECK(sel.sigma == 0.0);
  CHECK(sel.tau == doctest::Approx(0.3));
  REQUIRE(sel.selected.size() == 4);
  // Ties are broken by id.
  CHECK(sel.selected[0].id == "t000");
  CHECK(sel.selected[3].id == "t003");
}

TEST_CASE("selection properties over random pools") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  for (int trial = 0; trial < 300; ++trial) {
    RetrievalConfig cfg;
    cfg.z = std::uniform_real_distribution<double>(-1.0, 2.5)(rng);
    cfg.k_min = 1 + static_cast<int>(rng() % 4);
    cfg.k_max = cfg.k_min + static_cast<int>(rng() % 10);
    cfg.k0 = 1 + static_cast<int>(rng() % 6);
    std::vector<double> scores(1 + rng() % 40);
    for (auto& s : scores) s = u(rng);
    auto sel = select_candidates(items(scores), cfg);

    const double tau = oracle::floor_threshold(scores, cfg.z);
    CHECK(sel.tau == doctest::Approx(tau).epsilon(1e-9));
    std::size_t above = 0;
    for (double s : scores) above += s >= tau ? 1 : 0;
    CHECK(sel.fallback == (above == 0));
    const std::size_t lo = std::min<std::size_t>(cfg.k_min, scores.size());
    CHECK(sel.selected.size() >= lo);
    CHECK(sel.selected.size() <= static_cast<std::size_t>(cfg.k_max));
    for (std::size_t i = 1; i < sel.selected.size(); ++i) {
      const auto& a = sel.selected[i - 1];
      const auto& b = sel.selected[i];
      CHECK((a.score > b.score || (a.score == b.score && a.id < b.id)));
    }

    // Positive affine transforms leave the selected set unchanged.
    const double scale = std::uniform_real_distribution<double>(0.1, 10.0)(rng);
    const double shift = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
    std::vector<double> moved;
    for (double s : scores) moved.push_back(scale * s + shift);
    auto sel2 = select_candidates(items(moved), cfg);
    // Scores within rounding of tau can flip; skip those draws.
    bool near_floor = false;
    for (double s : scores) near_floor = near_floor || std::abs(s - tau) < 1e-9;
    if (!near_floor) CHECK(ids(sel.selected) == ids(sel2.selected));
  }
}

TEST_CASE("expansion over shared entities") {
  TripleStore store(hashed());
  store.ingest_tsv(
      "A\tlinks\tB\t\"a to b\"\t\n"
      "B\tlinks\tC\t\"b to c\"\t\n"
      "D\tlinks\tE\t\"unrelated\"\t\n",
      "chain");
  REQUIRE(store.size() == 3);
  std::string ab, bc, de;
  for (const auto& r : store.records()) {
    if (r.subject == "A") ab = r.id;
    if (r.subject == "B") bc = r.id;
    if (r.subject == "D") de = r.id;
  }
  const auto q = store.embedder().embed("a to b");
  RetrievalConfig cfg;
  cfg.depth = 0;
  CHECK(store.expand({ab}, cfg, q).empty());
  cfg.depth = 1;
  cfg.beam = 1;
  auto ex = store.expand({ab}, cfg, q);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].id == bc);
  CHECK(ex[0].hop == 1);

  TripleStore cyc(hashed());
  cyc.ingest_tsv("X\tnext\tY\t\"x y\"\t\nY\tnext\tX\t\"y x\"\t\nY\talso\tZ\t\"y z\"\t\n", "cycle");
  std::string xy;
  for (const auto& r : cyc.records())
    if (r.subject == "X") xy = r.id;
  cfg.depth = 3;
  cfg.beam = 5;
  auto cx = cyc.expand({xy}, cfg, cyc.embedder().embed("x"));
  std::set<std::string> seen;
  for (const auto& e : cx) {
    CHECK(e.id != xy);
    CHECK(seen.insert(e.id).second);
  }
  CHECK(cx.size() == 2);
  // Bound: sum of beam^d over depths.
  CHECK(cx.size() <= 5 + 25 + 125);
}

TEST_CASE("retrieval over the bundled corpus") {
  const auto& store = *ts::corpus_store();
  CHECK(store.size() == 30);
  RetrievalConfig cfg;
  auto r = store.retrieve("Ti-6Al-4V cutter flank wear and tool life", cfg);
  CHECK(r.pool_size == 20);
  REQUIRE(r.selected.size() >= 3);
  for (int i = 0; i < 3; ++i) CHECK(store.find(r.selected[i].id)->source_doc == "ti64_tool_wear");
  CHECK(r.digest() == store.retrieve("Ti-6Al-4V cutter flank wear and tool life", cfg).digest());

  cfg.lambda = 0.0;
  for (const auto& s : store.score("inspection scanner alignment", cfg)) CHECK(s.score == doctest::Approx(s.base));

  cfg.parallel = false;
  auto serial = store.retrieve("thin wall deflection", cfg);
  cfg.parallel = true;
  CHECK(serial.digest() == store.retrieve("thin wall deflection", cfg).digest());
}

TEST_CASE("store triple count equals the per-file line counts") {
  std::size_t expected = 0;
  for (const auto& entry : std::filesystem::directory_iterator(ts::data_dir() / "kg_store" / "docs")) {
    const auto text = read_file(entry.path().string());
    for (char c : text) expected += c == '\n';
  }
  CHECK(ts::corpus_store()->size() == expected);
}

TEST_CASE("empty store signals empty knowledge") {
  TripleStore store(hashed());
  auto r = store.retrieve("anything", {});
  CHECK(r.empty_knowledge);
  CHECK(r.selected.empty());
  CHECK(r.expanded.empty());
}

TEST_CASE("store persistence round trip") {
  ts::TempDir dir("kgstore");
  const auto& store = *ts::corpus_store();
  store.save(dir.path());
  auto loaded = TripleStore::load(dir.path(), std::make_shared<HashedEmbedder>(store.embedder().dim()));
  CHECK(loaded.size() == store.size());
  RetrievalConfig cfg;
  CHECK(loaded.retrieve("tilt angle offsets", cfg).digest() == store.retrieve("tilt angle offsets", cfg).digest());
}

TEST_CASE("retrieval config validation") {
  RetrievalConfig cfg;
  cfg.validate();
  CHECK(RetrievalConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  auto bad = cfg;
  bad.lambda = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.k_min = 20;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.depth = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
}
