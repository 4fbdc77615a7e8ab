#include "helpers.hpp"

#include "urec/checkpoint.hpp"
#include "urec/cli.hpp"

#include <doctest.h>

#include <sstream>

using namespace urec;
namespace fs = io::fs;

namespace {

struct Outcome
{
  int code;
  std::string out;
  std::string err;
};

auto run(std::vector<std::string> args) -> Outcome
{
  std::ostringstream out, err;
  int const code = cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

auto file_bytes(fs::path const &dir) -> std::map<std::string, std::vector<std::byte>>
{
  std::map<std::string, std::vector<std::byte>> files;
  for (auto const &e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) {
      files[fs::relative(e.path(), dir).string()] = io::read_bytes(e.path());
    }
  }
  return files;
}

} // namespace

TEST_SUITE("cli")
{
  TEST_CASE("count-params")
  {
    auto r = run({"count-params", "--arch", "d5c5"});
    CHECK(r.code == 0);
    CHECK(r.out == "144650\n");
    CHECK(run({"count-params", "--arch", "d5c5", "--anatomies", "5"}).out == "151050\n");
    CHECK(run({"count-params", "--scope", "per-anatomy"}).out == "1280\n");
    r = run({"count-params", "--breakdown"});
    CHECK(r.out.find("0.885%") != std::string::npos);
  }

  TEST_CASE("usage errors exit non-zero with help text")
  {
    auto r = run({"count-params", "--bogus"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--arch") != std::string::npos);
    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"evaluate", "--model", "/nonexistent", "--data", "x", "--out", "y"}).code == 2);
    r = run({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("pretrain-universal") != std::string::npos);
  }

  TEST_CASE("gen-data is byte-identical on re-run")
  {
    test::TempDir dir("cli_gen");
    auto const a = run({"gen-data", "--anatomy-profile", "brain", "--size", "32", "--count", "12", "--seed", "4",
                        "--out", (dir / "a").string()});
    REQUIRE(a.code == 0);
    auto const b = run({"gen-data", "--anatomy-profile", "brain", "--size", "32", "--count", "12", "--seed", "4",
                        "--out", (dir / "b").string()});
    REQUIRE(b.code == 0);
    auto const fa = file_bytes(dir / "a");
    CHECK(fa.size() == 12 + 2);
    CHECK(fa == file_bytes(dir / "b"));
    CHECK(run({"gen-data", "--anatomy-profile", "elbow", "--out", (dir / "c").string()}).code != 0);
  }

  TEST_CASE("tiny pipeline end to end")
  {
    test::TempDir dir("cli_pipeline");
    auto const p = [&](std::string const &name) { return (dir / name).string(); };
    io::write_json(dir / "config.json",
                   io::Json{{"epochs", 1},
                            {"batch_size", 2},
                            {"distill_layer", 2},
                            {"architecture", {{"cascades", 2}, {"conv_layers", 3}, {"features", 4}}}});
    for (auto name : {"brain", "knee", "cardiac"}) {
      REQUIRE(run({"gen-data", "--anatomy-profile", name, "--size", "32", "--count", "10", "--seed", "1", "--out",
                   p(name)})
                  .code == 0);
    }
    auto const cfg = p("config.json");
    REQUIRE(run({"train-independent", "--config", cfg, "--data", p("brain"), "--out", p("s1_brain")}).code == 0);
    REQUIRE(run({"train-independent", "--config", cfg, "--data", p("knee"), "--out", p("s1_knee")}).code == 0);
    auto const s2 = run({"pretrain-universal", "--config", cfg, "--epochs", "2", "--data", p("brain"), "--data",
                         p("knee"), "--out", p("s2")});
    REQUIRE(s2.code == 0);
    auto const m2 = io::load_run_manifest(p("s2"));
    CHECK(m2.config.at("epochs") == 2);
    CHECK(m2.config.at("architecture").at("features") == 4);
    CHECK(m2.metrics.size() == 4);
    REQUIRE(run({"pretrain-universal", "--config", cfg, "--no-aspin", "--data", p("brain"), "--data", p("knee"),
                 "--out", p("shared")})
                .code == 0);
    auto const s3 = run({"distill", "--config", cfg, "--base", p("s2/checkpoint"), "--teacher",
                         p("s1_brain/checkpoint"), "--teacher", p("s1_knee/checkpoint"), "--data", p("brain"),
                         "--data", p("knee"), "--omega", "0.001", "--out", p("s3")});
    REQUIRE(s3.code == 0);
    CHECK(io::load_run_manifest(p("s3")).config.at("omega") == 0.001);
    // A run manifest can stand in for the config, including its inputs.
    REQUIRE(run({"distill", "--config", p("s3/run_manifest.json"), "--distill-layer", "3", "--out", p("s3_l3")})
                .code == 0);
    CHECK(io::load_run_manifest(p("s3_l3")).config.at("distill_layer") == 3);
    REQUIRE(run({"adapt", "--config", cfg, "--base", p("s3/checkpoint"), "--data", p("cardiac"), "--out", p("s4")})
                .code == 0);
    CHECK(io::load_run_manifest(p("s4")).results.at("base_parameters_unchanged") == true);
    CHECK(io::load_checkpoint(p("s4/checkpoint")).stage == io::Stage::S4);

    for (auto [model, label] : {std::pair{"s1_brain", "Independent"}, {"shared", "Shared"}, {"s4", "Universal"}}) {
      std::vector<std::string> args{"evaluate", "--model", p(std::string(model) + "/checkpoint"), "--data", p("brain"),
                                    "--data", p("knee"), "--label", label, "--out", p(std::string("eval_") + model)};
      REQUIRE(run(args).code == 0);
    }
    auto const rep = run({"report", "--runs", dir.path().string(), "--out", p("report")});
    REQUIRE(rep.code == 0);
    CHECK(rep.out.rfind("model", 0) == 0);
    auto const manifest = io::load_run_manifest(p("report"));
    CHECK(manifest.results.at("columns") ==
          io::Json::array({"model", "anatomy", "accel", "PSNR(dB)", "SSIM(%)", "params"}));
    // Undersampled, Independent, Shared, Universal x (brain, knee, avg)
    CHECK(manifest.results.at("rows").size() == 12);
    CHECK(fs::exists(dir / "report" / "report.csv"));
    CHECK(run({"report", "--runs", p("brain"), "--out", p("empty_report")}).code != 0);
  }
}
