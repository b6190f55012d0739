#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace gbgnn::acceptance {

struct Outcome {
  int id = 0;
  std::string title;
  bool pass = false;
  std::string detail;
};

inline void print(const Outcome& o) {
  std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", o.id, o.title.c_str(),
              o.detail.c_str());
  std::fflush(stdout);
}

inline int summarize(const std::vector<Outcome>& all) {
  int failed = 0;
  for (const auto& o : all) failed += o.pass ? 0 : 1;
  std::printf("%zu criteria, %d failed\n", all.size(), failed);
  return failed == 0 ? 0 : 1;
}

inline std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

}  // namespace gbgnn::acceptance
