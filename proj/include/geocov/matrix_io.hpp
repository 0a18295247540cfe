#pragma once

#include "geocov/family.hpp"
#include "geocov/manifold.hpp"
#include "geocov/projection.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace geocov {

inline constexpr const char* kArtifactVersion = "1.0.0";

// Matrix files: JSON {"dim": n, "rows": [[...], ...]} with an optional
// "sampleCount", or CSV (n rows of n comma-separated values; sampleCount
// defaults to 1). Readers enforce the SPD invariants.
struct CovarianceFile {
  SpdMatrix matrix;
  long sampleCount = 1;
};

CovarianceFile read_covariance(const std::filesystem::path& path);
void write_matrix_json(const std::filesystem::path& path, const Matrix& m,
                       std::optional<long> sampleCount = std::nullopt);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);

// Family files: JSON {"shape": "...", "anchors": [...]} where shape is
// "unbalanced", "balanced", or a nested-parentheses string, and each anchor is
// an inline matrix object or a path (relative to the family file).
FamilyTree read_family(const std::filesystem::path& path);

// Every experiment output directory gets exactly one manifest recording the
// command, the fully resolved configuration, the seed, and the files written;
// re-running from the manifest reproduces the outputs byte for byte.
struct RunManifest {
  std::string command;
  std::string configJson;  // fully resolved configuration, serialized JSON
  std::uint64_t seed = 0;
  std::string artifactVersion = kArtifactVersion;
  std::vector<std::string> outputs;
};

void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& path);

// Deterministic float formatting (shortest round-trip) used by all writers.
std::string format_double(double v);

}  // namespace geocov
