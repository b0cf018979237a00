#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>

#include "bladecomp/engine.hpp"
#include "bladecomp/fixtures.hpp"
#include "bladecomp/kg_store.hpp"

namespace testing_support {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("bladecomp-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline fs::path data_dir() { return fs::path(BLADECOMP_DATA_DIR); }

inline std::string fixture_inspection() { return (data_dir() / "fixtures" / "Inspection_Aggregated.csv").string(); }
inline std::string fixture_pathing() { return (data_dir() / "fixtures" / "pathing_field.csv").string(); }

inline std::shared_ptr<const bladecomp::tools::ToolRegistry> registry() {
  static auto r = std::make_shared<const bladecomp::tools::ToolRegistry>(bladecomp::tools::ToolRegistry::builtin());
  return r;
}

inline std::shared_ptr<const bladecomp::kg::TripleStore> corpus_store() {
  static auto s = std::make_shared<const bladecomp::kg::TripleStore>(bladecomp::kg::TripleStore::load(
      data_dir() / "kg_store", std::make_shared<bladecomp::kg::HashedEmbedder>(256)));
  return s;
}

inline std::unique_ptr<bladecomp::engine::Engine> make_engine(std::shared_ptr<bladecomp::llm::Backend> backend,
                                                              bool use_critic = true, int budget = 3,
                                                              std::shared_ptr<const bladecomp::kg::TripleStore> store = nullptr) {
  bladecomp::engine::EngineConfig cfg;
  cfg.use_critic = use_critic;
  cfg.critic.budget = budget;
  auto eng = std::make_unique<bladecomp::engine::Engine>(cfg, registry(), std::move(backend), std::move(store));
  eng->resource_root = data_dir() / "fixtures";
  std::int64_t t = 1000;
  eng->clock = [t]() mutable { return t++; };
  return eng;
}

}  // namespace testing_support
