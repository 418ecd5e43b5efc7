// Regenerates the checked-in wire transcript. Usage:
//   gen_golden > tests/golden/enroll_verify_transcript.hex
#include <cstdio>
#include <string>

#include "golden_scenario.hpp"

int main() {
  const std::string text = golden::render_transcript();
  std::fwrite(text.data(), 1, text.size(), stdout);
  return 0;
}
