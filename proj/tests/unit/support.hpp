#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "relforge/corpus.hpp"
#include "relforge/relation_registry.hpp"

namespace testsupport {

inline std::filesystem::path data_dir() { return RELFORGE_TEST_DATA_DIR; }
inline std::filesystem::path fixture(const std::string& name) { return data_dir() / "fixtures" / name; }

inline const relforge::Registry& registry() {
  static const relforge::Registry r = relforge::load_registry(data_dir() / "relations.json");
  return r;
}

inline const relforge::Registry& constrained_registry() {
  static const relforge::Registry r = registry().with_constraints(
      relforge::load_constraint_table(data_dir() / "type_constraints.json"));
  return r;
}

inline relforge::Corpus fixture_corpus() {
  return relforge::load_corpus(fixture("corpus5.json"), registry());
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("relforge-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testsupport
