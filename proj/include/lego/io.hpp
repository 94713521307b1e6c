#pragma once

// CSV and JSON artifact serialization.
//
// Every floating-point value written here survives a write/read cycle
// bit-exactly: CSV cells are printed with %.17g (17 significant digits are
// sufficient to reconstruct any IEEE double), and the bundled JSON library
// emits shortest-round-trip representations. Downstream metrics recomputed
// from reloaded artifacts therefore match the originals bit for bit.

#include "lego/common.hpp"
#include "lego/metrics.hpp"
#include "lego/tangent.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace lego::io {

using Json = nlohmann::json;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Generic CSV tables
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  Matrix values;  // rows x header.size()

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
};

inline void write_csv(const std::string& path, const CsvTable& table) {
  if (static_cast<Index>(table.header.size()) != table.values.cols())
    throw InvalidArgumentError("write_csv: header width does not match value columns");
  std::ofstream out(path);
  if (!out) throw IoError("write_csv: cannot open " + path);
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c) out << ',';
    out << table.header[c];
  }
  out << '\n';
  for (Index r = 0; r < table.values.rows(); ++r) {
    for (Index c = 0; c < table.values.cols(); ++c) {
      if (c) out << ',';
      out << format_double(table.values(r, c));
    }
    out << '\n';
  }
  if (!out) throw IoError("write_csv: write failed for " + path);
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("read_csv: empty file " + path);
  CsvTable table;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) table.header.push_back(cell);
  }
  const auto width = static_cast<Index>(table.header.size());
  std::vector<double> data;
  Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const char* cursor = line.c_str();
    for (Index c = 0; c < width; ++c) {
      char* end = nullptr;
      data.push_back(std::strtod(cursor, &end));
      if (end == cursor)
        throw IoError("read_csv: bad numeric cell in " + path + " row " +
                      std::to_string(rows));
      cursor = (*end == ',') ? end + 1 : end;
    }
    ++rows;
  }
  table.values.resize(rows, width);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < width; ++c) table.values(r, c) = data[r * width + c];
  return table;
}

// Convenience: matrix with generated column names and an optional leading
// index column (used for embeddings and per-point score tables).
inline CsvTable matrix_table(const Matrix& mat, const std::string& prefix,
                             bool with_index = false) {
  CsvTable table;
  const Index extra = with_index ? 1 : 0;
  table.values.resize(mat.rows(), mat.cols() + extra);
  if (with_index) {
    table.header.push_back("index");
    for (Index r = 0; r < mat.rows(); ++r) table.values(r, 0) = double(r);
  }
  for (Index c = 0; c < mat.cols(); ++c) {
    table.header.push_back(prefix + std::to_string(c));
    table.values.col(c + extra) = mat.col(c);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Tangent frames
// ---------------------------------------------------------------------------
//
// Long format: one row per frame axis, so per-point dimensions may vary.
// Columns: point, axis, then the p ambient components of that axis.

inline void write_frames_csv(const std::string& path, const TangentFrameSet& frames) {
  Index total = 0, p = 0;
  for (const Matrix& q : frames.frames) {
    total += q.cols();
    p = q.rows();
  }
  CsvTable table;
  table.header = {"point", "axis"};
  for (Index c = 0; c < p; ++c) table.header.push_back("e" + std::to_string(c));
  table.values.resize(total, 2 + p);
  Index row = 0;
  for (Index j = 0; j < frames.n(); ++j) {
    const Matrix& q = frames.frames[j];
    for (Index a = 0; a < q.cols(); ++a, ++row) {
      table.values(row, 0) = double(j);
      table.values(row, 1) = double(a);
      table.values.row(row).tail(p) = q.col(a).transpose();
    }
  }
  write_csv(path, table);
}

inline TangentFrameSet read_frames_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  if (table.cols() < 3)
    throw IoError("read_frames_csv: expected point, axis and components in " + path);
  const Index p = table.cols() - 2;
  Index n = 0;
  for (Index r = 0; r < table.rows(); ++r)
    n = std::max(n, static_cast<Index>(table.values(r, 0)) + 1);
  TangentFrameSet frames;
  frames.frames.assign(n, Matrix::Zero(p, 0));
  std::vector<Index> counts(n, 0);
  for (Index r = 0; r < table.rows(); ++r)
    ++counts[static_cast<Index>(table.values(r, 0))];
  for (Index j = 0; j < n; ++j) frames.frames[j].resize(p, counts[j]);
  for (Index r = 0; r < table.rows(); ++r) {
    const auto j = static_cast<Index>(table.values(r, 0));
    const auto a = static_cast<Index>(table.values(r, 1));
    if (a < 0 || a >= frames.frames[j].cols())
      throw IoError("read_frames_csv: axis index out of range in " + path);
    frames.frames[j].col(a) = table.values.row(r).tail(p).transpose();
  }
  frames.dims.resize(n);
  for (Index j = 0; j < n; ++j) {
    if (counts[j] == 0)
      throw IoError("read_frames_csv: point " + std::to_string(j) + " has no axes");
    frames.dims[j] = counts[j];
  }
  return frames;
}

// ---------------------------------------------------------------------------
// JSON views of core records
// ---------------------------------------------------------------------------

inline const char* method_name(FrameMethod method) {
  return method == FrameMethod::lego ? "lego" : "lpca";
}

inline FrameMethod method_from_name(const std::string& name) {
  if (name == "lego") return FrameMethod::lego;
  if (name == "lpca") return FrameMethod::lpca;
  throw InvalidArgumentError("unknown method name: " + name);
}

inline Json to_json(const DimPolicy& policy) {
  if (policy.kind == DimPolicy::Kind::fixed)
    return Json{{"kind", "fixed"}, {"d", policy.d}};
  return Json{{"kind", "threshold"}, {"f_var", policy.f_var}};
}

inline DimPolicy dim_policy_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "fixed") return DimPolicy::fixed(j.at("d").get<int>());
  if (kind == "threshold") return DimPolicy::threshold(j.at("f_var").get<double>());
  throw InvalidArgumentError("unknown dim policy kind: " + kind);
}

inline Json to_json(const DiscrepancyReport& report) {
  return Json{{"method", method_name(report.method)},
              {"mean", report.mean},
              {"median", report.median},
              {"p90", report.p90},
              {"points", report.per_point.size()},
              {"hyperparams",
               {{"k_nn", report.hyperparams.k_nn},
                {"m", report.hyperparams.m},
                {"m0", report.hyperparams.m0},
                {"dim_policy", to_json(report.hyperparams.policy)}}}};
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("write_json: cannot open " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write_json: write failed for " + path);
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_json: cannot open " + path);
  Json j = Json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw IoError("read_json: invalid JSON in " + path);
  return j;
}

}  // namespace lego::io
