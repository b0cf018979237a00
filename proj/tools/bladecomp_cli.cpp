// Command-line entry point: REPL, HTTP service, evaluation drivers, KG
// construction and fixture generation.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <httplib.h>

#include "bladecomp/eval.hpp"
#include "bladecomp/fixtures.hpp"
#include "bladecomp/kg_builder.hpp"
#include "bladecomp/service.hpp"

namespace fs = std::filesystem;
using namespace bladecomp;

namespace {

service::AppConfig load_config(const std::string& path) {
  if (!path.empty()) return service::AppConfig::load(path);
  const fs::path fallback = fs::path(BLADECOMP_DATA_DIR) / "config.json";
  if (fs::exists(fallback)) return service::AppConfig::load(fallback);
  return service::AppConfig::from_json(json::object());
}

void write_out(const fs::path& dir, const std::string& name, const std::string& text) {
  fs::create_directories(dir);
  write_file((dir / name).string(), text);
  std::cout << "wrote " << (dir / name).string() << "\n";
}

std::map<int, double> parse_rates(const std::string& spec) {
  std::map<int, double> rates;
  for (const auto& item : split(spec, ',')) {
    auto parts = split(item, '=');
    if (parts.size() != 2) throw Error(ErrorCode::invalid_argument, "rates look like 1=0.2,2=0.4,3=0.6");
    std::string level = trim(parts[0]);
    if (!level.empty() && (level[0] == 'L' || level[0] == 'l')) level = level.substr(1);
    rates[std::stoi(level)] = std::stod(parts[1]);
  }
  return rates;
}

std::vector<std::pair<std::string, std::string>> read_corpus(const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> docs;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".md") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) docs.emplace_back(f.stem().string(), read_file(f.string()));
  return docs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blade compensation decision-support engine"};
  app.require_subcommand(1);
  std::string config_path, profile;
  std::vector<std::string> autoload;
  bool autoload_fixture = false;
  app.add_option("-c,--config", config_path, "Config document (JSON)");
  app.add_option("-b,--backend", profile, "Backend profile name; 'offline' disables model calls");
  app.add_option("--autoload", autoload, "Resources to load at session start");
  app.add_flag("--fixture", autoload_fixture, "Autoload the bundled blade fixture");

  auto* repl = app.add_subcommand("repl", "Interactive session");
  std::string session_id = "repl";
  repl->add_option("--session", session_id, "Session id");

  auto* serve = app.add_subcommand("serve", "HTTP API for the operator console");
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  auto* ev = app.add_subcommand("eval", "Evaluation drivers");
  ev->require_subcommand(1);
  std::string out_dir = "eval_out";
  std::uint64_t seed = 7;
  ev->add_option("--out", out_dir, "Directory for CSV reports");
  ev->add_option("--seed", seed);
  auto* depth = ev->add_subcommand("depth", "Tool-call depth benchmark");
  std::string queries_path, rates = "1=0.2,2=0.4,3=0.6";
  depth->add_option("--queries", queries_path, "Bench query file (default: synthetic set)");
  depth->add_option("--rates", rates, "Per-level defect rates for the reference planner");
  auto* crit = ev->add_subcommand("critic", "Critic recovery suite");
  std::size_t n_queries = 30;
  double drop_p = 0.3;
  crit->add_option("--queries", n_queries);
  crit->add_option("--drop-p", drop_p);
  auto* qa = ev->add_subcommand("kg-qa", "Knowledge QA with and without retrieval");
  std::string items_path;
  qa->add_option("--items", items_path, "QA item file")->required();

  auto* kgcmd = app.add_subcommand("kg", "Knowledge store");
  kgcmd->require_subcommand(1);
  auto* build = kgcmd->add_subcommand("build", "Build triples and the store from a markdown corpus");
  std::string corpus_dir, transcript_path, store_out;
  build->add_option("--corpus", corpus_dir)->required();
  build->add_option("--transcript", transcript_path, "Recorded extraction outputs keyed by window id");
  build->add_option("--out", store_out)->required();

  auto* fixture = app.add_subcommand("fixture", "Write the synthetic blade fixture");
  std::string fixture_out = "fixture";
  fixture->add_option("--out", fixture_out);

  auto* manifest = app.add_subcommand("manifest", "Print the tool manifest");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto config = load_config(config_path);
    std::vector<std::string> resources = config.autoload;
    resources.insert(resources.end(), autoload.begin(), autoload.end());
    // The benchmarks are defined over the bundled fixture.
    if (autoload_fixture || ((*depth || *crit) && resources.empty())) {
      const fs::path dir = fs::path(BLADECOMP_DATA_DIR) / "fixtures";
      resources.push_back((dir / "Inspection_Aggregated.csv").string());
      resources.push_back((dir / "pathing_field.csv").string());
    }

    if (*manifest) {
      std::cout << tools::ToolRegistry::builtin().manifest().dump(2) << "\n";
      return 0;
    }
    if (*fixture) {
      fixtures::write_blade_fixture(fixture_out);
      write_out(fixture_out, "depth_queries.json", eval::bench_queries_json(eval::synthetic_depth_queries()).dump(1) + "\n");
      std::cout << "wrote fixture to " << fixture_out << "\n";
      return 0;
    }
    if (*build) {
      kgb::Extractor extractor;
      std::shared_ptr<llm::Backend> backend;
      if (!transcript_path.empty()) {
        extractor = kgb::transcript_extractor(kgb::load_transcript(transcript_path));
      } else {
        backend = service::make_backend(config, profile);
        if (!backend) throw Error(ErrorCode::config, "kg build needs --transcript or a backend profile");
        extractor = kgb::backend_extractor(*backend);
      }
      auto docs = read_corpus(corpus_dir);
      auto result = kgb::build_corpus(docs, extractor);
      kgb::write_aggregate(result.output, store_out);
      kg::TripleStore store(config.embedder.make());
      for (const auto& [doc, tsv_text] : result.output.per_doc_tsv) store.ingest_tsv(tsv_text, doc);
      store.save(store_out);
      for (const auto& r : result.reports)
        std::cout << r.doc_id << ": windows=" << r.windows << " valid=" << r.valid << " repaired=" << r.repaired
                  << " rejected=" << r.rejected << "\n";
      std::cout << result.output.summary.to_json().dump() << "\n" << store.size() << " triples stored in " << store_out << "\n";
      return 0;
    }
    if (*repl) {
      auto eng = service::make_engine(config, profile);
      service::ReplOptions opts;
      opts.session_id = session_id;
      opts.autoload = resources;
      if (!config.audit_dir.empty()) opts.audit_dir = config.audit_dir;
      return service::run_repl(*eng, std::cin, std::cout, opts);
    }
    if (*serve) {
      auto eng = service::make_engine(config, profile);
      service::ApiService api(*eng, config.audit_dir.empty() ? std::nullopt : std::optional(config.audit_dir));
      httplib::Server server;
      api.bind(server);
      std::cout << "listening on " << host << ":" << port << "\n";
      return server.listen(host, port) ? 0 : 1;
    }
    if (*depth) {
      auto queries = queries_path.empty() ? eval::synthetic_depth_queries()
                                          : eval::load_bench_queries(json::parse(read_file(queries_path)));
      auto cfg = config.engine;
      cfg.use_critic = false;
      engine::Engine eng(cfg, std::make_shared<tools::ToolRegistry>(tools::ToolRegistry::builtin()),
                         eval::make_reference_backend(queries, eval::assign_defects(queries, parse_rates(rates), seed)));
      eng.resource_root = config.resource_root;
      auto report = eval::run_depth_benchmark(queries, eng, resources);
      write_out(out_dir, "depth_levels.csv", report.levels_csv());
      write_out(out_dir, "depth_rows.csv", report.rows_csv());
      std::cout << report.levels_csv();
      return 0;
    }
    if (*crit) {
      auto registry = std::make_shared<tools::ToolRegistry>(tools::ToolRegistry::builtin());
      auto queries = eval::synthetic_critic_queries(n_queries, *registry);
      auto factory = [&](std::shared_ptr<llm::Backend> backend, bool use_critic) {
        auto cfg = config.engine;
        cfg.use_critic = use_critic;
        auto eng = std::make_unique<engine::Engine>(cfg, registry, std::move(backend));
        eng->resource_root = config.resource_root;
        return eng;
      };
      auto report = eval::run_critic_suite(queries, factory, resources, drop_p, seed);
      write_out(out_dir, "critic_trials.csv", report.trials_csv());
      write_out(out_dir, "critic_summary.csv", report.summary_csv());
      std::cout << report.summary_csv();
      return 0;
    }
    if (*qa) {
      std::vector<eval::QAItem> items;
      const json j = json::parse(read_file(items_path));
      for (const auto& it : j.is_array() ? j : j.at("items")) items.push_back(eval::QAItem::from_json(it));
      auto store = service::load_store(config);
      auto backend = service::make_backend(config, profile);
      auto with_kg = [&](const eval::QAItem& item) {
        auto ans = engine::answer_with_kg(item.prompt, item.prompt, store.get(), config.engine.retrieval, backend.get());
        std::string text = ans.narrative;
        if (item.format == "mcq") text = eval::pick_option(item, text);
        return text;
      };
      auto without_kg = [&](const eval::QAItem& item) -> std::string {
        if (!backend) return "";
        std::string text = backend->complete(llm::Role::kg_synthesizer, "SYNTHESIZE\nQUESTION: " + item.prompt);
        return item.format == "mcq" ? eval::pick_option(item, text) : text;
      };
      auto report = eval::run_qa(items, with_kg, without_kg);
      write_out(out_dir, "kgqa_rows.csv", report.rows_csv());
      write_out(out_dir, "kgqa_summary.csv", report.summary_csv());
      std::cout << report.summary_csv();
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
