// Replays the seeded enrollment/verification scenario and compares every wire
// byte against the checked-in transcript. A mismatch means the wire format or
// a seeded RNG stream changed; if that was intentional, regenerate the file
// with the gen_golden tool.
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "golden_scenario.hpp"

namespace {

std::string g_golden_path;

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("the wire transcript matches the checked-in golden file") {
  std::ifstream in(g_golden_path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "cannot open " << g_golden_path);
  std::string expected((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const std::string actual = golden::render_transcript();
  if (actual == expected) return;  // byte-identical, done

  // Diverged: report the first differing line for a usable failure message.
  const auto want = lines_of(expected);
  const auto got = lines_of(actual);
  const std::size_t n = std::min(want.size(), got.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (want[i] != got[i]) {
      FAIL("transcript line " << (i + 1) << " differs\n  expected: " << want[i].substr(0, 96)
                              << "\n  actual:   " << got[i].substr(0, 96));
    }
  }
  FAIL("transcript has " << got.size() << " lines, golden file has " << want.size());
}

TEST_CASE("the scenario outcome is stable") {
  const golden::ScenarioResult r = golden::run_scenario();
  CHECK(r.genuine_status == vvv::protocol::VerifyStatus::Accepted);
  CHECK(r.imposter_status == vvv::protocol::VerifyStatus::Rejected);
  // Two runs agree byte for byte (fresh server, same seeds).
  CHECK(golden::render_transcript() == golden::render_transcript());
}

int main(int argc, char** argv) {
  if (argc > 1 && argv[1][0] != '-') {
    g_golden_path = argv[1];
    --argc;
    ++argv;
    argv[0] = const_cast<char*>("test_golden");
  }
  if (g_golden_path.empty()) {
    std::fprintf(stderr, "usage: test_golden <golden-file> [doctest options]\n");
    return 1;
  }
  doctest::Context ctx;
  ctx.applyCommandLine(argc, argv);
  return ctx.run();
}
