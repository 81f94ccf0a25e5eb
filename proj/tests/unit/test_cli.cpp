#include <doctest.h>

#include <cstdio>
#include <json.hpp>
#include <sys/wait.h>

#include "biaslens/binary_io.hpp"
#include "support/fixtures.hpp"

#ifndef BIASLENS_CLI
#error "BIASLENS_CLI must name the command-line executable"
#endif
#ifndef BIASLENS_DATA_DIR
#error "BIASLENS_DATA_DIR must name the packaged demo data directory"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using doctest::Approx;

namespace {

struct Result {
  int code;
  std::string out;
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(BIASLENS_CLI) + " " + args + " 2>/dev/null";
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  const int status = ::pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string data(const std::string& name) { return (fs::path(BIASLENS_DATA_DIR) / name).string(); }

fs::path copy_demo(const fixtures::TempDir& dir) {
  fs::copy_file(data("config.json"), dir.path() / "config.json");
  return dir.path() / "config.json";
}

}  // namespace

TEST_CASE("cli stage by stage") {
  fixtures::TempDir dir("cli");
  const auto cfg = copy_demo(dir).string();
  CHECK(cli("probe-gen --config " + cfg).code == 0);
  CHECK(cli("extract --config " + cfg).code == 0);
  CHECK(cli("cav-train --config " + cfg + " --jobs 2").code == 0);
  CHECK(cli("steer --config " + cfg + " --prompt-id p1 --trace").code == 0);
  CHECK(cli("steer --config " + cfg + " --prompt-id p2").code == 0);
  CHECK(cli("steer --config " + cfg + " --prompt-id nope").code == 2);
  CHECK(cli("concept --config " + cfg).code == 0);
  const auto grid = cli("bias-grid --config " + cfg);
  CHECK(grid.code == 0);
  CHECK(grid.out.find("male/female,doctor,") != std::string::npos);
  const auto run = dir.path() / "run";
  CHECK(fs::exists(run / "steer" / "p1" / "doctor.trace.txt"));
  CHECK(cli("report --run " + run.string()).code == 0);
  CHECK(fs::exists(run / "report" / "bias_scores.csv"));

  // Identical inputs give identical bytes.
  const auto before = biaslens::io::read_text(run / "grid" / "p1.json");
  CHECK(cli("bias-grid --config " + cfg).code == 0);
  CHECK(biaslens::io::read_text(run / "grid" / "p1.json") == before);

  // Tampering is a provenance failure.
  const auto cav = run / "cavs" / "male.blcv";
  auto bytes = biaslens::io::read_file(cav);
  bytes[30] ^= 1;
  biaslens::io::write_file(cav, bytes);
  CHECK(cli("report --run " + run.string()).code == 4);
}

TEST_CASE("cli exit codes") {
  fixtures::TempDir dir("cli-codes");
  const auto cfg = copy_demo(dir).string();
  CHECK(cli("cav-train --config " + cfg).code == 3);
  biaslens::io::write_text(dir.path() / "broken.json", R"({"seed": 1})");
  CHECK(cli("probe-gen --config " + (dir.path() / "broken.json").string()).code == 2);
  CHECK(cli("probe-gen").code == 2);
  CHECK(cli("metrics nonsense --in " + data("predictions.csv")).code == 2);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("cli correlate reproduces the packaged example") {
  const auto r = cli("correlate --a " + data("metrics_a.csv") + " --b " + data("metrics_b.csv"));
  REQUIRE(r.code == 0);
  const auto doc = json::parse(r.out);
  CHECK(doc.at("r").get<double>() == Approx(0.8).epsilon(1e-12));
  CHECK(doc.at("n_used") == 4);
  const auto filtered = json::parse(cli("correlate --a " + data("metrics_a.csv") + " --b " + data("metrics_b.csv") +
                                        " --p-threshold 0.035").out);
  CHECK(filtered.at("n_used") == 3);
}

TEST_CASE("cli metrics") {
  fixtures::TempDir dir("cli-metrics");
  auto metric = [&](const std::string& name, const std::string& file) {
    const auto out = dir.path() / (name + ".json");
    REQUIRE(cli("metrics " + name + " --in " + data(file) + " --out " + out.string()).code == 0);
    return json::parse(biaslens::io::read_text(out));
  };
  CHECK(metric("f1diff", "predictions.csv").at("value").get<double>() == Approx(8.0 / 9.0 - 0.75).epsilon(1e-12));
  CHECK(metric("eod", "eod.csv").at("value").get<double>() == Approx(0.2).epsilon(1e-12));
  CHECK(metric("if", "template_scores.csv").at("value").get<double>() > 0.0);
  CHECK(metric("gf", "template_scores.csv").at("value").get<double>() > 0.0);
  const auto seat = metric("seat", "associations.csv");
  CHECK(seat.at("raw").get<double>() > 0.0);
  CHECK(seat.at("exhaustive") == true);
  const auto ppl = metric("ppl", "perplexities.csv");
  CHECK(ppl.at("p_value").get<double>() >= 0.0);
  CHECK(ppl.at("p_value").get<double>() <= 1.0);
  CHECK(ppl.at("df") == 4);
}
