#include "geocov/matrix_io.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace geocov {

namespace {

using nlohmann::json;

json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("invalid JSON in " + path.string() + ": " + e.what());
  }
}

Matrix matrix_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("dim") || !j.contains("rows")) {
    throw std::invalid_argument(where + ": expected an object with \"dim\" and \"rows\"");
  }
  const long n = j.at("dim").get<long>();
  const json& rows = j.at("rows");
  if (n < 1 || !rows.is_array() || rows.size() != static_cast<size_t>(n)) {
    throw std::invalid_argument(where + ": \"rows\" must hold dim rows");
  }
  Matrix m(n, n);
  for (long i = 0; i < n; ++i) {
    const json& row = rows.at(static_cast<size_t>(i));
    if (!row.is_array() || row.size() != static_cast<size_t>(n)) {
      throw std::invalid_argument(where + ": every row must hold dim values");
    }
    for (long k = 0; k < n; ++k) m(i, k) = row.at(static_cast<size_t>(k)).get<double>();
  }
  return m;
}

Matrix read_csv_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open file: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw std::invalid_argument(path.string() + ": non-numeric CSV cell \"" + cell + "\"");
      }
    }
    rows.push_back(std::move(row));
  }
  const size_t n = rows.size();
  if (n == 0) throw std::invalid_argument(path.string() + ": empty CSV matrix");
  Matrix m(static_cast<long>(n), static_cast<long>(n));
  for (size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n) {
      throw std::invalid_argument(path.string() + ": CSV matrix must be square");
    }
    for (size_t k = 0; k < n; ++k) m(static_cast<long>(i), static_cast<long>(k)) = rows[i][k];
  }
  return m;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return json{{"dim", m.rows()}, {"rows", std::move(rows)}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write file: " + path.string());
  out << text;
  if (!out) throw std::invalid_argument("write failed: " + path.string());
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

CovarianceFile read_covariance(const std::filesystem::path& path) {
  if (path.extension() == ".json") {
    const json j = parse_file(path);
    Matrix m = matrix_from_json(j, path.string());
    long q = 1;
    if (j.contains("sampleCount")) {
      q = j.at("sampleCount").get<long>();
      if (q < 1) throw std::invalid_argument(path.string() + ": sampleCount must be >= 1");
    }
    return {SpdMatrix(std::move(m)), q};
  }
  return {SpdMatrix(read_csv_matrix(path)), 1};
}

void write_matrix_json(const std::filesystem::path& path, const Matrix& m,
                       std::optional<long> sampleCount) {
  json j = matrix_to_json(m);
  if (sampleCount) j["sampleCount"] = *sampleCount;
  write_text(path, j.dump(2) + "\n");
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::string text;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index k = 0; k < m.cols(); ++k) {
      if (k) text += ',';
      text += format_double(m(i, k));
    }
    text += '\n';
  }
  write_text(path, text);
}

FamilyTree read_family(const std::filesystem::path& path) {
  const json j = parse_file(path);
  if (!j.is_object() || !j.contains("shape") || !j.contains("anchors")) {
    throw std::invalid_argument(path.string() +
                                ": expected an object with \"shape\" and \"anchors\"");
  }
  const std::string shape = j.at("shape").get<std::string>();
  const json& anchorsJson = j.at("anchors");
  if (!anchorsJson.is_array() || anchorsJson.size() < 2) {
    throw std::invalid_argument(path.string() + ": \"anchors\" must list at least two entries");
  }
  std::vector<SpdMatrix> anchors;
  anchors.reserve(anchorsJson.size());
  for (size_t i = 0; i < anchorsJson.size(); ++i) {
    const json& a = anchorsJson.at(i);
    if (a.is_string()) {
      const std::filesystem::path ref = path.parent_path() / a.get<std::string>();
      anchors.push_back(read_covariance(ref).matrix);
    } else {
      std::ostringstream where;
      where << path.string() << ": anchor " << i;
      anchors.push_back(SpdMatrix(matrix_from_json(a, where.str())));
    }
  }
  return build_tree(anchors, shape);
}

void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest) {
  json config;
  try {
    config = json::parse(manifest.configJson);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("write_manifest: configJson is not valid JSON: ") +
                                e.what());
  }
  const json j{{"command", manifest.command},
               {"config", std::move(config)},
               {"seed", manifest.seed},
               {"artifactVersion", manifest.artifactVersion},
               {"outputs", manifest.outputs}};
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

RunManifest read_manifest(const std::filesystem::path& path) {
  const json j = parse_file(path);
  for (const char* key : {"command", "config", "seed", "artifactVersion", "outputs"}) {
    if (!j.is_object() || !j.contains(key)) {
      throw std::invalid_argument(path.string() + ": manifest missing \"" + key + "\"");
    }
  }
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.configJson = j.at("config").dump();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.artifactVersion = j.at("artifactVersion").get<std::string>();
  m.outputs = j.at("outputs").get<std::vector<std::string>>();
  return m;
}

}  // namespace geocov
