#pragma once

#include "prevalid/common.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

namespace prevalid::test {

inline Mat random_matrix(Rng& rng, Index rows, Index cols) { return rng.normal_matrix(rows, cols); }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string temp_path(const std::string& name) {
  const char* dir = std::getenv("TMPDIR");
  return std::string(dir ? dir : "/tmp") + "/prevalid_test_" + name;
}

}  // namespace prevalid::test
