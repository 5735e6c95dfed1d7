#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "routenav/error.hpp"
#include "routenav/traversal.hpp"

namespace testing_util {

// Runs `stmt` and checks it throws routenav::Error of `kind` whose message
// contains `fragment`.
#define EXPECT_ROUTENAV_ERROR(stmt, error_kind, fragment)                                       \
  do {                                                                                          \
    try {                                                                                       \
      stmt;                                                                                     \
      ADD_FAILURE() << "expected " << #error_kind << " error";                                  \
    } catch (const routenav::Error& e) {                                                        \
      EXPECT_EQ(e.kind(), error_kind) << e.what();                                              \
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();           \
    }                                                                                           \
  } while (0)

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = std::filesystem::temp_directory_path() /
            ("routenav_" + tag + "_" + (info ? std::string(info->name()) : std::string("x")));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// N frames whose descriptors cycle through the axes of R^dim.
inline routenav::Traversal axis_route(std::size_t n, std::size_t dim = 4, std::string name = "route",
                                      routenav::Condition condition = routenav::Condition::reference) {
  std::vector<routenav::Frame> frames;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> d(dim, 0.0f);
    d[i % dim] = 1.0f;
    frames.push_back({i, d, std::nullopt});
  }
  return routenav::Traversal(std::move(name), condition, std::move(frames));
}

}  // namespace testing_util
