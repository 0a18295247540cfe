#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "geocov/descent.hpp"
#include "geocov/family.hpp"
#include "geocov/matrix_io.hpp"
#include "geocov/rng.hpp"

#include <json.hpp>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using namespace geocov;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in.good()) return {};
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream outStream(p, std::ios::binary);
  outStream << text;
}

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("geocov_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunResult run(const std::string& args, const fs::path& dir) {
  const fs::path outFile = dir / "stdout.txt";
  const fs::path errFile = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + GEOCOV_BIN + "\" " + args + " > \"" +
                          outFile.string() + "\" 2> \"" + errFile.string() + "\"";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(outFile);
  r.err = slurp(errFile);
  return r;
}

SpdMatrix random_spd(int n, Rng& rng) {
  Matrix g(n, 2 * n);
  for (Index i = 0; i < g.rows(); ++i) {
    for (Index j = 0; j < g.cols(); ++j) g(i, j) = rng.gauss();
  }
  return SpdMatrix(Matrix(g * g.transpose() / double(2 * n)));
}

// Write a two-anchor family and an on-family covariance at t = 0.37; returns
// (family path, covariance path).
std::pair<fs::path, fs::path> write_on_family_instance(const fs::path& dir) {
  Rng rng(501);
  const SpdMatrix a1 = random_spd(3, rng);
  const SpdMatrix a2 = random_spd(3, rng);
  write_matrix_json(dir / "a1.json", a1.mat());
  write_matrix_json(dir / "a2.json", a2.mat());
  spit(dir / "family.json",
       "{\"shape\": \"unbalanced\", \"anchors\": [\"a1.json\", \"a2.json\"]}");
  const FamilyTree tree = FamilyTree::unbalanced({a1, a2});
  write_matrix_json(dir / "target.json", tree.eval({0.37}).mat(), 500);
  return {dir / "family.json", dir / "target.json"};
}

std::string tiny_experiment_config(int anchorCount) {
  json anchors = json::array();
  anchors.push_back(json{{"ell", 20.0}, {"sigma2", 0.3}});
  anchors.push_back(json{{"ell", 30.0}, {"sigma2", 0.3}});
  if (anchorCount >= 3) anchors.push_back(json{{"ell", 25.0}, {"sigma2", 0.3}});
  const json cfg{{"geom", json{{"gridNodes", 21}, {"nObs", 3}}},
                 {"anchors", anchors},
                 {"target", json{{"ell", 25.0}, {"sigma2", 0.3}}},
                 {"anchorQ", 300},
                 {"targetQ", 50},
                 {"trials", 3},
                 {"seed", 2},
                 {"threads", 1},
                 {"method", "natural"}};
  return cfg.dump(2);
}

}  // namespace

TEST_CASE("project recovers an on-family parameter") {
  const fs::path dir = temp_dir("project");
  const auto [fam, cov] = write_on_family_instance(dir);

  const RunResult r = run("project --family \"" + fam.string() + "\" --covariance \"" +
                              cov.string() + "\" --method natural",
                          dir);
  REQUIRE(r.code == 0);
  const json out = json::parse(r.out);
  REQUIRE(out.at("results").size() == 1);
  const json& res = out.at("results").at(0);
  CHECK(res.at("method") == "natural");
  CHECK(res.at("converged") == true);
  CHECK(std::abs(res.at("tOpt").at(0).get<double>() - 0.37) < 1e-6);
  CHECK(res.at("objective").get<double>() < 1e-6);  // on-family: distance ~ 0
  CHECK(res.at("stationarity").get<double>() < 1e-4);
  CHECK(res.contains("projected"));  // inline matrix when --out is absent
}

TEST_CASE("project --method all runs the three projections") {
  const fs::path dir = temp_dir("project_all");
  const auto [fam, cov] = write_on_family_instance(dir);
  const fs::path outDir = dir / "results";

  const RunResult r = run("project --family \"" + fam.string() + "\" --covariance \"" +
                              cov.string() + "\" --method all --out \"" + outDir.string() + "\"",
                          dir);
  REQUIRE(r.code == 0);
  const json out = json::parse(r.out);
  REQUIRE(out.at("results").size() == 3);
  for (const json& res : out.at("results")) {
    CHECK(std::abs(res.at("tOpt").at(0).get<double>() - 0.37) < 1e-6);
    CHECK(fs::exists(outDir / res.at("projectedFile").get<std::string>()));
  }
  CHECK(fs::exists(outDir / "result.json"));
  const RunManifest manifest = read_manifest(outDir / "manifest.json");
  CHECK(manifest.command == "project");
  CHECK(manifest.outputs.size() == 4);  // three projections + result.json
}

TEST_CASE("project output matches the in-process coordinate descent") {
  const fs::path dir = temp_dir("project_match");
  const auto [fam, cov] = write_on_family_instance(dir);

  const RunResult r = run("project --family \"" + fam.string() + "\" --covariance \"" +
                              cov.string() + "\" --method iproj",
                          dir);
  REQUIRE(r.code == 0);
  const double cliT = json::parse(r.out).at("results").at(0).at("tOpt").at(0).get<double>();

  const FamilyTree tree = read_family(fam);
  const CovarianceFile file = read_covariance(cov);
  DescentConfig cfg;
  cfg.objective = Method::iproj;
  const DescentResult want = coordinate_descent(
      tree, SampleCovariance(file.matrix, file.sampleCount, CovConvention::centered), cfg);
  // Same inputs, same arithmetic; JSON uses shortest-round-trip doubles.
  CHECK(cliT == want.params.at(0));
}

TEST_CASE("project rejects broken inputs with the documented exit codes") {
  const fs::path dir = temp_dir("project_err");
  const auto [fam, cov] = write_on_family_instance(dir);

  SUBCASE("unknown method: exit 2 with an error report") {
    const RunResult r = run("project --family \"" + fam.string() + "\" --covariance \"" +
                                cov.string() + "\" --method bogus",
                            dir);
    CHECK(r.code == 2);
    const json err = json::parse(r.err);
    CHECK(err.at("error").at("type") == "config");
    CHECK(err.at("error").contains("message"));
  }
  SUBCASE("covariance that is not positive definite: exit 3") {
    spit(dir / "npd.csv", "1.0,2.0,0.0\n2.0,1.0,0.0\n0.0,0.0,1.0\n");
    const RunResult r = run("project --family \"" + fam.string() + "\" --covariance \"" +
                                (dir / "npd.csv").string() + "\"",
                            dir);
    CHECK(r.code == 3);
    CHECK(json::parse(r.err).at("error").at("type") == "numeric");
  }
  SUBCASE("dimension mismatch between family and covariance: exit 2") {
    spit(dir / "small.csv", "1.0,0.0\n0.0,1.0\n");
    const RunResult r = run("project --family \"" + fam.string() + "\" --covariance \"" +
                                (dir / "small.csv").string() + "\"",
                            dir);
    CHECK(r.code == 2);
  }
  SUBCASE("missing required flag: exit 2") {
    const RunResult r = run("project --family \"" + fam.string() + "\"", dir);
    CHECK(r.code == 2);
  }
  SUBCASE("unknown flag: exit 2") {
    const RunResult r = run("project --nope", dir);
    CHECK(r.code == 2);
  }
}

TEST_CASE("help exits zero") {
  const fs::path dir = temp_dir("help");
  CHECK(run("--help", dir).code == 0);
  CHECK(run("project --help", dir).code == 0);
}

TEST_CASE("build-anchors is deterministic and honors config overrides") {
  const fs::path dir = temp_dir("anchors");
  const json cfg{{"geom", json{{"gridNodes", 21}, {"nObs", 3}}},
                 {"anchors", json::array({json{{"ell", 20.0}, {"sigma2", 0.3}},
                                          json{{"ell", 30.0}, {"sigma2", 0.3}}})},
                 {"q", 50},
                 {"seed", 5}};
  spit(dir / "cfg.json", cfg.dump(2));

  const RunResult r1 = run("build-anchors --config \"" + (dir / "cfg.json").string() +
                               "\" --out \"" + (dir / "runA").string() + "\"",
                           dir);
  REQUIRE(r1.code == 0);
  const RunResult r2 = run("build-anchors --config \"" + (dir / "cfg.json").string() +
                               "\" --out \"" + (dir / "runB").string() + "\"",
                           dir);
  REQUIRE(r2.code == 0);
  for (const char* name : {"anchor1.json", "anchor2.json", "manifest.json"}) {
    const std::string a = slurp(dir / "runA" / name);
    REQUIRE(!a.empty());
    CHECK(a == slurp(dir / "runB" / name));
  }
  const CovarianceFile a1 = read_covariance(dir / "runA" / "anchor1.json");
  CHECK(a1.matrix.dim() == 3);
  CHECK(a1.sampleCount == 50);

  SUBCASE("--seed override changes the result") {
    const RunResult r3 = run("build-anchors --config \"" + (dir / "cfg.json").string() +
                                 "\" --seed 6 --out \"" + (dir / "runC").string() + "\"",
                             dir);
    REQUIRE(r3.code == 0);
    CHECK(slurp(dir / "runC" / "anchor1.json") != slurp(dir / "runA" / "anchor1.json"));
  }
  SUBCASE("config without anchors: exit 2") {
    spit(dir / "bad.json", "{\"q\": 50}");
    CHECK(run("build-anchors --config \"" + (dir / "bad.json").string() + "\"", dir).code == 2);
  }
  SUBCASE("nonpositive kernel variance: exit 2") {
    json bad = cfg;
    bad["anchors"][0]["sigma2"] = -1.0;
    spit(dir / "badsig.json", bad.dump());
    CHECK(run("build-anchors --config \"" + (dir / "badsig.json").string() + "\" --out \"" +
                  (dir / "runD").string() + "\"",
              dir)
              .code == 2);
  }
}

TEST_CASE("experiment regularization: threads invariance and manifest re-run") {
  const fs::path dir = temp_dir("exp_reg");
  spit(dir / "cfg.json", tiny_experiment_config(2));

  const RunResult r1 = run("experiment regularization --config \"" + (dir / "cfg.json").string() +
                               "\" --out \"" + (dir / "runA").string() + "\"",
                           dir);
  REQUIRE(r1.code == 0);
  const std::string trialsA = slurp(dir / "runA" / "trials.csv");
  REQUIRE(!trialsA.empty());
  CHECK(trialsA.rfind("trial,stream,bPrime,b,ratio,t0,converged,sweeps\n", 0) == 0);

  SUBCASE("--threads 2 reproduces the same rows") {
    const RunResult r2 = run("experiment regularization --config \"" +
                                 (dir / "cfg.json").string() + "\" --threads 2 --out \"" +
                                 (dir / "runB").string() + "\"",
                             dir);
    REQUIRE(r2.code == 0);
    CHECK(slurp(dir / "runB" / "trials.csv") == trialsA);
  }
  SUBCASE("re-running from the manifest reproduces every output byte for byte") {
    const RunResult r3 = run("experiment regularization --config \"" +
                                 (dir / "runA" / "manifest.json").string() + "\" --out \"" +
                                 (dir / "runC").string() + "\"",
                             dir);
    REQUIRE(r3.code == 0);
    for (const char* name : {"trials.csv", "summary.json", "manifest.json"}) {
      CHECK(slurp(dir / "runC" / name) == slurp(dir / "runA" / name));
    }
  }
  SUBCASE("a manifest from another experiment is rejected") {
    const RunResult r4 = run("experiment noise --config \"" +
                                 (dir / "runA" / "manifest.json").string() + "\" --out \"" +
                                 (dir / "runD").string() + "\"",
                             dir);
    CHECK(r4.code == 2);
  }
}

TEST_CASE("experiment noise honors --alpha-grid") {
  const fs::path dir = temp_dir("exp_noise");
  spit(dir / "cfg.json", tiny_experiment_config(2));
  const RunResult r = run("experiment noise --config \"" + (dir / "cfg.json").string() +
                              "\" --alpha-grid 0,0.5 --trials 2 --out \"" +
                              (dir / "run").string() + "\"",
                          dir);
  REQUIRE(r.code == 0);
  const json summary = json::parse(slurp(dir / "run" / "summary.json"));
  REQUIRE(summary.at("cells").size() == 4);  // two alphas x two methods
  CHECK(summary.at("cells").at(0).at("alpha") == 0.0);
  CHECK(summary.at("cells").at(2).at("alpha") == 0.5);
  const std::string cells = slurp(dir / "run" / "cells.csv");
  CHECK(cells.rfind("alpha,method,trial,stream,bPrime,b,ratio,tOpt\n", 0) == 0);
}

TEST_CASE("experiment multiparam reports non-convergence with exit 4 but keeps outputs") {
  const fs::path dir = temp_dir("exp_multi");
  json cfg = json::parse(tiny_experiment_config(3));
  cfg["trials"] = 2;
  cfg["maxOuterIters"] = 1;
  cfg["coordTol"] = 1e-12;
  spit(dir / "cfg.json", cfg.dump(2));

  const RunResult r = run("experiment multiparam --config \"" + (dir / "cfg.json").string() +
                              "\" --out \"" + (dir / "run").string() + "\"",
                          dir);
  CHECK(r.code == 4);
  CHECK(json::parse(r.err).at("error").at("type") == "convergence");
  for (const char* name : {"trials.csv", "traces.csv", "contour.csv", "summary.json",
                           "manifest.json"}) {
    CHECK(fs::exists(dir / "run" / name));
  }
  const json summary = json::parse(slurp(dir / "run" / "summary.json"));
  CHECK(summary.at("convergedCount").get<long>() < 2);
}

TEST_CASE("experiment name and config validation") {
  const fs::path dir = temp_dir("exp_err");
  spit(dir / "cfg.json", tiny_experiment_config(2));

  SUBCASE("unknown experiment name: exit 2") {
    const RunResult r =
        run("experiment bogus --config \"" + (dir / "cfg.json").string() + "\"", dir);
    CHECK(r.code == 2);
    CHECK(json::parse(r.err).at("error").at("type") == "config");
  }
  SUBCASE("missing config file: exit 2") {
    const RunResult r =
        run("experiment regularization --config \"" + (dir / "nothere.json").string() + "\"", dir);
    CHECK(r.code == 2);
  }
  SUBCASE("multiparam needs a third anchor: exit 2") {
    const RunResult r = run("experiment multiparam --config \"" + (dir / "cfg.json").string() +
                                "\" --out \"" + (dir / "run").string() + "\"",
                            dir);
    CHECK(r.code == 2);
  }
}

TEST_CASE("experiment local-analysis writes its curves") {
  const fs::path dir = temp_dir("exp_local");
  spit(dir / "cfg.json", "{\"dim\": 5, \"seed\": 3}");
  const RunResult r = run("experiment local-analysis --config \"" + (dir / "cfg.json").string() +
                              "\" --out \"" + (dir / "run").string() + "\"",
                          dir);
  REQUIRE(r.code == 0);
  const std::string curves = slurp(dir / "run" / "curves.csv");
  CHECK(curves.rfind("eps,deltaNat,deltaHat,deltaCheck\n", 0) == 0);
  const json summary = json::parse(slurp(dir / "run" / "summary.json"));
  CHECK(summary.contains("hatSecondDeriv"));
  CHECK(summary.contains("fittedHatCurvature"));
}

TEST_CASE("experiment flat-vs-geodesic writes the grid") {
  const fs::path dir = temp_dir("exp_flat");
  json cfg = json::parse(tiny_experiment_config(2));
  cfg["tMin"] = -1.0;
  cfg["tMax"] = 2.0;
  cfg["tSteps"] = 11;
  spit(dir / "cfg.json", cfg.dump(2));
  const RunResult r = run("experiment flat-vs-geodesic --config \"" + (dir / "cfg.json").string() +
                              "\" --out \"" + (dir / "run").string() + "\"",
                          dir);
  REQUIRE(r.code == 0);
  const std::string grid = slurp(dir / "run" / "grid.csv");
  CHECK(grid.rfind("t,flatDefined,flatDistance,geoDistance\n", 0) == 0);
  // header + 11 grid rows
  CHECK(std::count(grid.begin(), grid.end(), '\n') == 12);
}
