#pragma once

#include <gtest/gtest.h>
#include <unistd.h>

#include "gradient_oracle.hpp"

namespace baple::testing {

using oracle::random_image;
using oracle::tiny_encoder;

// Default-config workspace, pretrained once per test binary.
inline const Workspace& shared_workspace() {
  static const Workspace w = build_workspace(ExperimentConfig{});
  return w;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("baple_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace baple::testing
