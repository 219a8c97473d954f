#pragma once

// Run artifacts: CSV tables with full-precision numbers, JSON documents and
// a manifest, written to a temporary directory that is renamed into place
// once complete.
//
// Manifest (schema "flatmin.manifest/1"):
//   scenario      {name, protocol, source, values}
//   seeds         seeds used, one per repetition
//   code_version  git describe of the build
//   dataset_hash  content hash of the first run's serialized dataset
//   files         [{name, kind: "csv" | "json", columns, rows}]
//   runs          [{index, seed, sweep_value, status: "ok" | "failed", error}]

#include <string>
#include <vector>

#include "flatmin/serialize.hpp"
#include "flatmin/training.hpp"

namespace flatmin {

inline constexpr const char* kManifestSchema = "flatmin.manifest/1";

/// %.17g, with "nan", "inf" and "-inf" for non-finite values.
std::string format_double(double v);

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> row);
  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }
  std::string text() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// iter, train_loss, test_loss, train_err, test_err, norm_total,
/// norm_layer_1..L, null_norm, preceded by any leading columns.
std::vector<std::string> checkpoint_columns(std::size_t layers,
                                            const std::vector<std::string>& leading = {});
std::vector<std::string> checkpoint_cells(const Checkpoint& c);

CsvTable run_record_table(const RunRecord& rec);

class ArtifactWriter {
 public:
  /// Files go to <dir>.tmp-<pid> until commit() renames it to dir.
  explicit ArtifactWriter(std::string dir);
  ~ArtifactWriter();
  ArtifactWriter(const ArtifactWriter&) = delete;
  ArtifactWriter& operator=(const ArtifactWriter&) = delete;

  void write_csv(const std::string& name, const CsvTable& table);
  void write_json(const std::string& name, const Json& j);
  const Json& files() const { return files_; }

  /// Writes manifest.json (with the file list added) and moves the
  /// directory into place, replacing any previous artifact.
  void commit(Json manifest);

 private:
  std::string dir_;
  std::string tmp_;
  Json files_ = Json::array();
  bool committed_ = false;
};

}  // namespace flatmin
