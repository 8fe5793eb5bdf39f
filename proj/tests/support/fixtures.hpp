#pragma once

#include <fstream>
#include <sstream>
#include <string>

#ifndef DIVASM_FIXTURE_DIR
#define DIVASM_FIXTURE_DIR "tests/fixtures"
#endif

namespace divasm::testsupport {

inline std::string fixture_path(const std::string& name) {
  return std::string(DIVASM_FIXTURE_DIR) + "/" + name;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline std::string load_fixture(const std::string& name) {
  return read_file(fixture_path(name));
}

}  // namespace divasm::testsupport
