#include "geocov/aquifer.hpp"
#include "geocov/descent.hpp"
#include "geocov/experiments.hpp"
#include "geocov/family.hpp"
#include "geocov/manifold.hpp"
#include "geocov/matrix_io.hpp"
#include "geocov/projection.hpp"
#include "geocov/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace geocov;

namespace {

constexpr std::uint64_t kSetupStreamBase = 1ULL << 62;

// ---- config plumbing --------------------------------------------------------

json parse_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("invalid JSON in " + path.string() + ": " + e.what());
  }
}

template <typename T>
void maybe_get(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument(std::string("config field \"") + key + "\": " + e.what());
    }
  }
}

AquiferConfig geom_from_json(const json& j) {
  AquiferConfig cfg;
  maybe_get(j, "L", cfg.L);
  maybe_get(j, "H1", cfg.H1);
  maybe_get(j, "H2", cfg.H2);
  maybe_get(j, "Q", cfg.Q);
  maybe_get(j, "nObs", cfg.nObs);
  maybe_get(j, "gridNodes", cfg.gridNodes);
  maybe_get(j, "gpMean", cfg.gpMean);
  return cfg;
}

json geom_to_json(const AquiferConfig& cfg) {
  return json{{"L", cfg.L},           {"H1", cfg.H1},
              {"H2", cfg.H2},         {"Q", cfg.Q},
              {"nObs", cfg.nObs},     {"gridNodes", cfg.gridNodes},
              {"gpMean", cfg.gpMean}};
}

struct KernelPair {
  double ell = 0.0;
  double sigma2 = 0.0;
};

std::vector<KernelPair> anchors_from_json(const json& j, size_t minCount) {
  if (!j.contains("anchors") || !j.at("anchors").is_array() ||
      j.at("anchors").size() < minCount) {
    std::ostringstream os;
    os << "config must list at least " << minCount << " anchors";
    throw std::invalid_argument(os.str());
  }
  std::vector<KernelPair> out;
  for (const json& a : j.at("anchors")) {
    KernelPair k;
    if (!a.contains("ell") || !a.contains("sigma2")) {
      throw std::invalid_argument("every anchor needs \"ell\" and \"sigma2\"");
    }
    k.ell = a.at("ell").get<double>();
    k.sigma2 = a.at("sigma2").get<double>();
    out.push_back(k);
  }
  return out;
}

ExperimentSetup setup_from_json(const json& j, size_t minAnchors) {
  ExperimentSetup s;
  if (j.contains("geom")) s.geom = geom_from_json(j.at("geom"));
  const std::vector<KernelPair> anchors = anchors_from_json(j, minAnchors);
  s.ell1 = anchors[0].ell;
  s.sig1 = anchors[0].sigma2;
  s.ell2 = anchors[1].ell;
  s.sig2 = anchors[1].sigma2;
  if (anchors.size() >= 3) {
    s.ell3 = anchors[2].ell;
    s.sig3 = anchors[2].sigma2;
  }
  if (j.contains("target")) {
    maybe_get(j.at("target"), "ell", s.targetEll);
    maybe_get(j.at("target"), "sigma2", s.targetSig);
  }
  maybe_get(j, "anchorQ", s.anchorQ);
  maybe_get(j, "targetQ", s.targetQ);
  maybe_get(j, "trials", s.trials);
  maybe_get(j, "seed", s.seed);
  maybe_get(j, "threads", s.threads);
  if (j.contains("method")) s.method = method_from_string(j.at("method").get<std::string>());
  return s;
}

json setup_to_json(const ExperimentSetup& s, bool thirdAnchor) {
  json anchors = json::array();
  anchors.push_back(json{{"ell", s.ell1}, {"sigma2", s.sig1}});
  anchors.push_back(json{{"ell", s.ell2}, {"sigma2", s.sig2}});
  if (thirdAnchor) anchors.push_back(json{{"ell", s.ell3}, {"sigma2", s.sig3}});
  return json{{"geom", geom_to_json(s.geom)},
              {"anchors", std::move(anchors)},
              {"target", json{{"ell", s.targetEll}, {"sigma2", s.targetSig}}},
              {"anchorQ", s.anchorQ},
              {"targetQ", s.targetQ},
              {"trials", s.trials},
              {"seed", s.seed},
              {"threads", s.threads},
              {"method", to_string(s.method)}};
}

std::vector<double> parse_double_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stod(cell, &used));
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string(what) + ": non-numeric entry \"" + cell + "\"");
    }
  }
  if (out.empty()) throw std::invalid_argument(std::string(what) + ": empty list");
  return out;
}

// ---- output helpers ---------------------------------------------------------

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write file: " + path.string());
  out << text;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::invalid_argument("cannot create output directory: " + dir.string());
}

std::string csv_of_trials(const std::vector<TrialRecord>& rows, int paramCount) {
  std::string text = "trial,stream,bPrime,b,ratio";
  for (int k = 0; k < paramCount; ++k) text += ",t" + std::to_string(k);
  text += ",converged,sweeps\n";
  for (const TrialRecord& r : rows) {
    text += std::to_string(r.trial) + "," + std::to_string(r.stream) + "," +
            format_double(r.bPrime) + "," + format_double(r.b) + "," + format_double(r.ratio);
    for (int k = 0; k < paramCount; ++k) {
      text += ",";
      text += k < int(r.tOpt.size()) ? format_double(r.tOpt[size_t(k)]) : "";
    }
    text += std::string(",") + (r.converged ? "1" : "0") + "," + std::to_string(r.sweeps) + "\n";
  }
  return text;
}

struct ErrorReport {
  const char* type;
  int code;
};

int fail(const ErrorReport& kind, const std::string& message) {
  const json j{{"error", json{{"type", kind.type}, {"message", message}}}};
  std::cerr << j.dump() << "\n";
  return kind.code;
}

// ---- command implementations ------------------------------------------------

struct ProjectArgs {
  std::string familyPath;
  std::string covariancePath;
  std::string method = "natural";
  std::string outDir;
};

int cmd_project(const ProjectArgs& args) {
  const FamilyTree tree = read_family(args.familyPath);
  const CovarianceFile cov = read_covariance(args.covariancePath);
  if (cov.matrix.dim() != tree.dim()) {
    throw std::invalid_argument("covariance and family dimensions differ");
  }
  const SampleCovariance sample(cov.matrix, std::max<long>(cov.sampleCount, 1),
                                CovConvention::centered);

  std::vector<Method> methods;
  if (args.method == "all") {
    methods = {Method::natural, Method::reverseI, Method::iproj};
  } else {
    methods = {method_from_string(args.method)};
  }

  json results = json::array();
  bool allConverged = true;
  std::vector<std::pair<std::string, Matrix>> projectedFiles;
  for (const Method m : methods) {
    DescentConfig cfg;
    cfg.objective = m;
    const DescentResult dr = coordinate_descent(tree, sample, cfg);
    allConverged = allConverged && dr.converged;
    const std::vector<double> stat = coordinate_stationarity(tree, sample, dr.params, m);
    double maxStat = 0.0;
    for (size_t j = 0; j < stat.size(); ++j) {
      bool skippedJ = false;
      for (int sc : dr.skippedCoords) skippedJ = skippedJ || sc == int(j);
      if (!skippedJ) maxStat = std::max(maxStat, stat[j]);
    }
    json r{{"method", to_string(m)},
           {"tOpt", dr.params},
           {"objective", dr.objectiveTrace.back()},
           {"converged", dr.converged},
           {"sweeps", dr.outerIters},
           {"skippedCoords", dr.skippedCoords},
           {"stationarity", maxStat}};
    if (!args.outDir.empty()) {
      const std::string name = "projected_" + to_string(m) + ".json";
      r["projectedFile"] = name;
      projectedFiles.emplace_back(name, dr.projected.mat());
    } else {
      json rows = json::array();
      for (Index i = 0; i < dr.projected.mat().rows(); ++i) {
        json row = json::array();
        for (Index k = 0; k < dr.projected.mat().cols(); ++k) {
          row.push_back(dr.projected.mat()(i, k));
        }
        rows.push_back(std::move(row));
      }
      r["projected"] = json{{"dim", dr.projected.dim()}, {"rows", std::move(rows)}};
    }
    results.push_back(std::move(r));
  }

  const json out{{"results", std::move(results)}};
  std::cout << out.dump(2) << "\n";

  if (!args.outDir.empty()) {
    ensure_dir(args.outDir);
    std::vector<std::string> outputs;
    for (const auto& [name, m] : projectedFiles) {
      write_matrix_json(fs::path(args.outDir) / name, m);
      outputs.push_back(name);
    }
    write_text_file(fs::path(args.outDir) / "result.json", out.dump(2) + "\n");
    outputs.push_back("result.json");
    RunManifest manifest;
    manifest.command = "project";
    manifest.configJson = json{{"family", args.familyPath},
                               {"covariance", args.covariancePath},
                               {"method", args.method}}
                              .dump();
    manifest.seed = 0;
    manifest.outputs = outputs;
    write_manifest(args.outDir, manifest);
  }
  if (!allConverged) {
    return fail({"convergence", 4}, "coordinate descent did not converge");
  }
  return 0;
}

struct BuildAnchorsArgs {
  std::string configPath;
  std::optional<long> q;
  std::optional<std::uint64_t> seed;
  std::string outDir = "geocov-anchors";
};

int cmd_build_anchors(const BuildAnchorsArgs& args) {
  const json cfgJson = parse_json_file(args.configPath);
  AquiferConfig geom;
  if (cfgJson.contains("geom")) geom = geom_from_json(cfgJson.at("geom"));
  const std::vector<KernelPair> anchors = anchors_from_json(cfgJson, 2);
  long q = 100000;
  maybe_get(cfgJson, "q", q);
  if (args.q) q = *args.q;
  std::uint64_t seed = 1;
  maybe_get(cfgJson, "seed", seed);
  if (args.seed) seed = *args.seed;

  ensure_dir(args.outDir);
  std::vector<std::string> outputs;
  json resolvedAnchors = json::array();
  for (size_t i = 0; i < anchors.size(); ++i) {
    AquiferConfig cfg = geom;
    cfg.kernel.ell = anchors[i].ell;
    cfg.kernel.sigma2 = anchors[i].sigma2;
    Rng rng(Rng::derive_stream(seed, kSetupStreamBase + i));
    const SampleCovariance cov = monte_carlo_covariance(cfg, q, rng);
    const std::string name = "anchor" + std::to_string(i + 1) + ".json";
    write_matrix_json(fs::path(args.outDir) / name, cov.matrix().mat(), q);
    outputs.push_back(name);
    resolvedAnchors.push_back(json{{"ell", anchors[i].ell}, {"sigma2", anchors[i].sigma2}});
  }

  RunManifest manifest;
  manifest.command = "build-anchors";
  manifest.configJson = json{{"geom", geom_to_json(geom)},
                             {"anchors", std::move(resolvedAnchors)},
                             {"q", q},
                             {"seed", seed}}
                            .dump();
  manifest.seed = seed;
  manifest.outputs = outputs;
  write_manifest(args.outDir, manifest);
  std::cout << json{{"outDir", args.outDir}, {"outputs", outputs}}.dump(2) << "\n";
  return 0;
}

struct ExperimentArgs {
  std::string name;
  std::string configPath;
  std::string outDir;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<long> q;
  std::optional<std::string> alphaGrid;
  std::optional<int> threads;
  std::optional<std::string> method;
};

json stats_to_json(const SummaryStats& s) {
  return json{{"mean", s.mean}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3}};
}

int cmd_experiment(const ExperimentArgs& args) {
  static const std::set<std::string> kNames{"regularization", "noise", "multiparam",
                                            "local-analysis", "flat-vs-geodesic"};
  if (!kNames.count(args.name)) {
    throw std::invalid_argument("unknown experiment \"" + args.name +
                                "\" (expected regularization|noise|multiparam|local-analysis|"
                                "flat-vs-geodesic)");
  }
  json cfgJson = parse_json_file(args.configPath);
  const bool isManifest = cfgJson.is_object() && cfgJson.contains("command");
  std::optional<std::uint64_t> manifestSeed;
  if (isManifest) {
    const RunManifest m = read_manifest(args.configPath);
    const std::string expected = "experiment " + args.name;
    if (m.command != expected) {
      throw std::invalid_argument("manifest records command \"" + m.command +
                                  "\", not \"" + expected + "\"");
    }
    cfgJson = json::parse(m.configJson);
    manifestSeed = m.seed;
  }

  const std::string outDir = args.outDir.empty() ? ("geocov-" + args.name) : args.outDir;
  ensure_dir(outDir);

  const bool needsThirdAnchor = args.name == "multiparam";
  std::vector<std::string> outputs;
  json summary;
  json resolved;
  std::uint64_t seedUsed = 1;
  bool convergedAll = true;

  if (args.name == "local-analysis") {
    LocalAnalysisSetup setup;
    maybe_get(cfgJson, "dim", setup.dim);
    maybe_get(cfgJson, "seed", setup.seed);
    if (cfgJson.contains("epsilons")) {
      setup.epsilons = cfgJson.at("epsilons").get<std::vector<double>>();
    }
    if (manifestSeed) setup.seed = *manifestSeed;
    if (args.seed) setup.seed = *args.seed;
    seedUsed = setup.seed;
    const LocalAnalysisExperiment ex = experiment_local_analysis(setup);
    std::string csv = "eps,deltaNat,deltaHat,deltaCheck\n";
    for (size_t i = 0; i < ex.result.epsilons.size(); ++i) {
      csv += format_double(ex.result.epsilons[i]) + "," +
             format_double(ex.result.deltaNat[i]) + "," + format_double(ex.result.deltaHat[i]) +
             "," + format_double(ex.result.deltaCheck[i]) + "\n";
    }
    write_text_file(fs::path(outDir) / "curves.csv", csv);
    outputs.push_back("curves.csv");
    summary = json{{"hatSecondDeriv", ex.result.hatSecondDeriv},
                   {"fittedHatCurvature", ex.fittedHatCurvature},
                   {"fittedCheckCurvature", ex.fittedCheckCurvature}};
    resolved = json{{"dim", setup.dim},
                    {"epsilons", ex.result.epsilons},
                    {"seed", setup.seed}};
  } else {
    ExperimentSetup setup = setup_from_json(cfgJson, needsThirdAnchor ? 3 : 2);
    if (manifestSeed) setup.seed = *manifestSeed;
    if (args.seed) setup.seed = *args.seed;
    if (args.trials) setup.trials = *args.trials;
    if (args.q) setup.targetQ = *args.q;
    if (args.threads) setup.threads = *args.threads;
    if (args.method) setup.method = method_from_string(*args.method);
    seedUsed = setup.seed;
    resolved = setup_to_json(setup, needsThirdAnchor);

    if (args.name == "regularization") {
      const RegularizationResult res = experiment_regularization(setup);
      write_text_file(fs::path(outDir) / "trials.csv", csv_of_trials(res.rows, 1));
      outputs.push_back("trials.csv");
      summary = json{{"meanBPrime", res.meanBPrime},
                     {"meanB", res.meanB},
                     {"meanRatio", res.meanRatio},
                     {"excluded", res.excluded},
                     {"trials", setup.trials},
                     {"method", to_string(setup.method)}};
    } else if (args.name == "noise") {
      std::vector<double> alphas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
      if (cfgJson.contains("alphas")) alphas = cfgJson.at("alphas").get<std::vector<double>>();
      if (args.alphaGrid) alphas = parse_double_list(*args.alphaGrid, "--alpha-grid");
      resolved["alphas"] = alphas;
      const std::vector<NoiseCell> cells = experiment_noise(setup, alphas);
      std::string csv = "alpha,method,trial,stream,bPrime,b,ratio,tOpt\n";
      json cellStats = json::array();
      for (const NoiseCell& cell : cells) {
        for (const TrialRecord& r : cell.rows) {
          csv += format_double(cell.alpha) + "," + to_string(cell.method) + "," +
                 std::to_string(r.trial) + "," + std::to_string(r.stream) + "," +
                 format_double(r.bPrime) + "," + format_double(r.b) + "," +
                 format_double(r.ratio) + "," + format_double(r.tOpt.at(0)) + "\n";
        }
        cellStats.push_back(json{{"alpha", cell.alpha},
                                 {"method", to_string(cell.method)},
                                 {"ratio", stats_to_json(cell.ratio)}});
      }
      write_text_file(fs::path(outDir) / "cells.csv", csv);
      outputs.push_back("cells.csv");
      summary = json{{"cells", std::move(cellStats)}, {"trials", setup.trials}};
    } else if (args.name == "multiparam") {
      DescentConfig descent;
      maybe_get(cfgJson, "coordTol", descent.coordTol);
      maybe_get(cfgJson, "maxOuterIters", descent.maxOuterIters);
      resolved["coordTol"] = descent.coordTol;
      resolved["maxOuterIters"] = descent.maxOuterIters;
      const MultiparamResult res = experiment_multiparam(setup, descent);
      const int paramCount = res.rows.empty() ? 2 : int(res.rows.front().tOpt.size());
      write_text_file(fs::path(outDir) / "trials.csv", csv_of_trials(res.rows, paramCount));
      outputs.push_back("trials.csv");
      std::string traces = "trial,sweep,objective\n";
      for (size_t i = 0; i < res.objectiveTraces.size(); ++i) {
        for (size_t s = 0; s < res.objectiveTraces[i].size(); ++s) {
          traces += std::to_string(i) + "," + std::to_string(s) + "," +
                    format_double(res.objectiveTraces[i][s]) + "\n";
        }
      }
      write_text_file(fs::path(outDir) / "traces.csv", traces);
      outputs.push_back("traces.csv");
      std::string contour = "t1,t2,dEstimate,dTruth\n";
      for (const auto& row : res.contour) {
        contour += format_double(row[0]) + "," + format_double(row[1]) + "," +
                   format_double(row[2]) + "," + format_double(row[3]) + "\n";
      }
      write_text_file(fs::path(outDir) / "contour.csv", contour);
      outputs.push_back("contour.csv");
      summary = json{{"meanBPrime", res.meanBPrime},
                     {"meanB", res.meanB},
                     {"meanRatio", res.meanRatio},
                     {"excluded", res.excluded},
                     {"convergedCount", res.convergedCount},
                     {"trials", setup.trials},
                     {"method", to_string(setup.method)}};
      convergedAll = res.convergedCount == setup.trials;
    } else {  // flat-vs-geodesic
      double tMin = -2.0, tMax = 3.0;
      int tSteps = 101;
      maybe_get(cfgJson, "tMin", tMin);
      maybe_get(cfgJson, "tMax", tMax);
      maybe_get(cfgJson, "tSteps", tSteps);
      resolved["tMin"] = tMin;
      resolved["tMax"] = tMax;
      resolved["tSteps"] = tSteps;
      const FlatVsGeodesicResult res = flat_vs_geodesic(setup, tMin, tMax, tSteps);
      std::string csv = "t,flatDefined,flatDistance,geoDistance\n";
      for (const FlatVsGeodesicRow& r : res.rows) {
        csv += format_double(r.t) + "," + (r.flatDefined ? "1" : "0") + "," +
               (r.flatDefined ? format_double(r.flatDistance) : std::string("")) + "," +
               format_double(r.geoDistance) + "\n";
      }
      write_text_file(fs::path(outDir) / "grid.csv", csv);
      outputs.push_back("grid.csv");
      summary = json{{"flatUndefinedCount", res.flatUndefinedCount}, {"tSteps", tSteps}};
    }
  }

  write_text_file(fs::path(outDir) / "summary.json", summary.dump(2) + "\n");
  outputs.push_back("summary.json");
  RunManifest manifest;
  manifest.command = "experiment " + args.name;
  manifest.configJson = resolved.dump();
  manifest.seed = seedUsed;
  manifest.outputs = outputs;
  write_manifest(outDir, manifest);
  std::cout << json{{"outDir", outDir}, {"summary", summary}}.dump(2) << "\n";

  if (!convergedAll) {
    return fail({"convergence", 4}, "one or more trials did not converge");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geodesic covariance families: projection and experiments"};
  app.require_subcommand(1);

  ProjectArgs projectArgs;
  CLI::App* project = app.add_subcommand("project", "Project a covariance onto a family");
  project->add_option("--family", projectArgs.familyPath, "Family JSON file")->required();
  project->add_option("--covariance", projectArgs.covariancePath, "Covariance JSON/CSV file")
      ->required();
  project->add_option("--method", projectArgs.method, "natural|mle|iproj|all");
  project->add_option("--out", projectArgs.outDir, "Output directory");

  BuildAnchorsArgs anchorArgs;
  CLI::App* anchors = app.add_subcommand("build-anchors", "Estimate anchor covariances");
  anchors->add_option("--config", anchorArgs.configPath, "Config JSON file")->required();
  anchors->add_option("--q", anchorArgs.q, "Monte-Carlo draws per anchor");
  anchors->add_option("--seed", anchorArgs.seed, "Master seed");
  anchors->add_option("--out", anchorArgs.outDir, "Output directory");

  ExperimentArgs expArgs;
  CLI::App* exp = app.add_subcommand("experiment", "Run a case-study experiment");
  exp->add_option("name", expArgs.name,
                  "regularization|noise|multiparam|local-analysis|flat-vs-geodesic")
      ->required();
  exp->add_option("--config", expArgs.configPath, "Config JSON file (or a manifest to re-run)")
      ->required();
  exp->add_option("--out", expArgs.outDir, "Output directory");
  exp->add_option("--seed", expArgs.seed, "Master seed override");
  exp->add_option("--trials", expArgs.trials, "Trial count override");
  exp->add_option("--q", expArgs.q, "Target sample count override");
  exp->add_option("--alpha-grid", expArgs.alphaGrid, "Comma-separated noise magnitudes");
  exp->add_option("--threads", expArgs.threads, "Worker thread count");
  exp->add_option("--method", expArgs.method, "natural|mle|iproj");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (project->parsed()) return cmd_project(projectArgs);
    if (anchors->parsed()) return cmd_build_anchors(anchorArgs);
    return cmd_experiment(expArgs);
  } catch (const ConvergenceError& e) {
    return fail({"convergence", 4}, e.what());
  } catch (const std::invalid_argument& e) {
    return fail({"config", 2}, e.what());
  } catch (const std::domain_error& e) {
    return fail({"numeric", 3}, e.what());
  } catch (const std::exception& e) {
    return fail({"internal", 1}, e.what());
  }
}
