#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gridparse/error.hpp"
#include "gridparse/harness.hpp"

using namespace gridparse;

namespace {

std::uint64_t fnv(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gridparse_unit_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("every command has a schema") {
  for (const char* c : {"train", "eval-length", "eval-depth", "analyze", "intervene", "sweep-seeds", "sweep-capacity",
                        "baseline-tf", "export-figure-data", "self-test"}) {
    CHECK(command_schema(c).name == c);
  }
  CHECK_THROWS_AS(command_schema("fly"), Error);
}

TEST_CASE("config files") {
  const auto& s = command_schema("train");
  const RunConfig c = RunConfig::parse(s, "# comment\nd = 8\n\nseed=3   # trailing\nlanguage = dyck1\n");
  CHECK(c.integer("d") == 8);
  CHECK(c.integer("seed") == 3);
  CHECK(c.str("language") == "dyck1");
  CHECK(c.integer("batch") == 64);  // default kept
  CHECK_THROWS_AS(RunConfig::parse(s, "depth = 3\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse(s, "d 8\n"), Error);
  RunConfig m(s);
  CHECK_THROWS_AS(m.set("nope", "1"), Error);
  m.set("d", "eight");
  CHECK_THROWS_AS(m.integer("d"), Error);
  m.set("deep_augment", "maybe");
  CHECK_THROWS_AS(m.flag("deep_augment"), Error);
  for (const char* t : {"true", "1", "yes"}) {
    m.set("deep_augment", t);
    CHECK(m.flag("deep_augment"));
  }
}

TEST_CASE("config hash is FNV-1a of the canonical text") {
  const auto& s = command_schema("eval-length");
  RunConfig a(s), b(s);
  CHECK(a.hash() == b.hash());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv(a.canonical())));
  CHECK(a.hash() == buf);
  b.set("seed", "1");
  CHECK(a.hash() != b.hash());
  CHECK(a.canonical().rfind("command=eval-length\n", 0) == 0);
  b = a;
  b.set("out", "elsewhere");
  CHECK(a.hash() == b.hash());
}

TEST_CASE("integer lists") {
  CHECK(parse_int_list("1,2,5") == std::vector<int>{1, 2, 5});
  CHECK(parse_int_list("0..3, 10") == std::vector<int>{0, 1, 2, 3, 10});
  CHECK(parse_int_list(" 7 ") == std::vector<int>{7});
  CHECK_THROWS_AS(parse_int_list(""), Error);
  CHECK_THROWS_AS(parse_int_list("3..1"), Error);
  CHECK_THROWS_AS(parse_int_list("1,x"), Error);
  CHECK_THROWS_AS(parse_int_list("2.5"), Error);
}

TEST_CASE("report formats") {
  RunConfig c(command_schema("self-test"));
  const auto env = report_envelope(c, {{"x", 1}});
  CHECK(env["format_version"] == kReportFormatVersion);
  CHECK(env["command"] == "self-test");
  CHECK(env["config_hash"] == c.hash());
  CHECK(env["result"]["x"] == 1);
  CHECK(env["config"]["gradcheck_d"] == "4");
  const std::string csv = csv_with_header(c, "a,b\n1,2\n");
  CHECK(csv == "# format_version=1 command=self-test config_hash=" + c.hash() + "\na,b\n1,2\n");
}

TEST_CASE("pgm encoding") {
  Eigen::MatrixXd m(2, 3);
  m << 0.0, 1.0, 0.5, -1.0, 2.0, -0.25;
  const std::string pgm = encode_pgm(m);
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(pgm.size() == header.size() + 6);
  CHECK(pgm.substr(0, header.size()) == header);
  const auto* px = reinterpret_cast<const unsigned char*>(pgm.data() + header.size());
  CHECK(px[0] == 0);
  CHECK(px[1] == 255);
  CHECK(px[2] == 128);  // 127.5 rounds up
  CHECK(px[3] == 128);
  CHECK(px[4] == 255);
  CHECK(px[5] == 128);
  CHECK(encode_pgm(m, "hi").substr(0, 8) == "P5\n# hi\n");
  CHECK(matrix_csv(m).substr(0, 2) == "0,");
}

TEST_CASE("missing checkpoint gives a structured error") {
  const auto dir = scratch("err");
  RunConfig c(command_schema("eval-length"));
  c.set("checkpoint", (dir / "absent.ckpt").string());
  c.set("out", dir.string());
  CHECK(run_command(c) == 2);
  const auto rec = nlohmann::json::parse(slurp(dir / "error.json"));
  CHECK(rec["command"] == "eval-length");
  CHECK(rec["config_hash"] == c.hash());
  CHECK(rec["error"]["kind"] == "io");
  std::filesystem::remove_all(dir);
}

TEST_CASE("self-test suites pass") {
  CHECK(selftest_param_count().passed);
  const auto g = selftest_gradcheck(4);
  CHECK_MESSAGE(g.passed, g.detail);
  const auto o = selftest_oracle(50);
  CHECK_MESSAGE(o.passed, o.detail);
  const auto d = selftest_determinism();
  CHECK_MESSAGE(d.passed, d.detail);
}

TEST_CASE("train then evaluate end to end") {
  const auto dir = scratch("e2e");
  RunConfig t(command_schema("train"));
  t.set("d", "4");
  t.set("steps", "3");
  t.set("batch", "8");
  t.set("eval_every", "0");
  t.set("out", dir.string());
  REQUIRE(run_command(t) == 0);
  CHECK(std::filesystem::exists(dir / "model.ckpt"));
  RunConfig e(command_schema("eval-length"));
  e.set("checkpoint", (dir / "model.ckpt").string());
  e.set("lengths", "5");
  e.set("per_class", "2");
  e.set("out", (dir / "eval").string());
  REQUIRE(run_command(e) == 0);
  bool found_csv = false;
  for (const auto& f : std::filesystem::directory_iterator(dir / "eval"))
    if (f.path().extension() == ".csv") {
      found_csv = true;
      CHECK(slurp(f.path()).rfind("# format_version=1 command=eval-length", 0) == 0);
    }
  CHECK(found_csv);
  std::filesystem::remove_all(dir);
}
