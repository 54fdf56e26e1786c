#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "synthalign/backend.hpp"
#include "synthalign/fixtures.hpp"
#include "synthalign/stage.hpp"

namespace testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("synthalign-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline synthalign::BackendOptions fast_options() {
  synthalign::BackendOptions o;
  o.retry.base_delay = std::chrono::milliseconds(0);
  o.retry.max_delay = std::chrono::milliseconds(0);
  return o;
}

// A backend whose roles are all answered by scripted transcripts.
struct Harness {
  synthalign::Backend backend;
  synthalign::StageContext ctx{backend};

  explicit Harness(synthalign::BackendOptions options = fast_options()) : backend(options) {}

  std::shared_ptr<synthalign::ScriptedProvider> bind(
      synthalign::Role role, const synthalign::fixtures::TranscriptBuilder& t) {
    auto p = t.provider(std::string(synthalign::to_string(role)));
    backend.bind(role, p, {std::string(synthalign::to_string(role)), 2048});
    return p;
  }
};

}  // namespace testing
