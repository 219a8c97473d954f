#include "flatmin/artifacts.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "flatmin/error.hpp"

namespace fs = std::filesystem;

namespace flatmin {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size())
    throw Error("csv: row has " + std::to_string(row.size()) + " cells, header has " +
                std::to_string(header_.size()));
  rows_.push_back(std::move(row));
}

std::string CsvTable::text() const {
  std::string out;
  const auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out;
}

std::vector<std::string> checkpoint_columns(std::size_t layers, const std::vector<std::string>& leading) {
  std::vector<std::string> c = leading;
  for (const char* s : {"iter", "train_loss", "test_loss", "train_err", "test_err", "norm_total"}) c.push_back(s);
  for (std::size_t k = 1; k <= layers; ++k) c.push_back("norm_layer_" + std::to_string(k));
  c.push_back("null_norm");
  return c;
}

std::vector<std::string> checkpoint_cells(const Checkpoint& c) {
  std::vector<std::string> r{std::to_string(c.iter),     format_double(c.train_loss),
                             format_double(c.test_loss), format_double(c.train_err),
                             format_double(c.test_err),  format_double(c.norm_total)};
  for (double v : c.norm_layers) r.push_back(format_double(v));
  r.push_back(format_double(c.null_norm));
  return r;
}

CsvTable run_record_table(const RunRecord& rec) {
  CsvTable t(checkpoint_columns(rec.final_net.weights.size()));
  for (const auto& c : rec.checkpoints) t.add_row(checkpoint_cells(c));
  return t;
}

ArtifactWriter::ArtifactWriter(std::string dir) : dir_(std::move(dir)) {
  if (dir_.empty()) throw InvalidInput("artifact directory must not be empty");
  while (dir_.size() > 1 && dir_.back() == '/') dir_.pop_back();
  tmp_ = dir_ + ".tmp-" + std::to_string(::getpid());
  std::error_code ec;
  fs::remove_all(tmp_, ec);
  fs::create_directories(tmp_, ec);
  if (ec) throw Error("cannot create " + tmp_ + ": " + ec.message());
}

ArtifactWriter::~ArtifactWriter() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(tmp_, ec);
  }
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out) throw Error("write failed: " + path);
}

}  // namespace

void ArtifactWriter::write_csv(const std::string& name, const CsvTable& table) {
  write_text(tmp_ + "/" + name, table.text());
  files_.push_back({{"name", name}, {"kind", "csv"}, {"columns", table.header()}, {"rows", table.rows()}});
}

void ArtifactWriter::write_json(const std::string& name, const Json& j) {
  write_text(tmp_ + "/" + name, j.dump(2) + "\n");
  files_.push_back({{"name", name}, {"kind", "json"}});
}

void ArtifactWriter::commit(Json manifest) {
  manifest["files"] = files_;
  write_text(tmp_ + "/manifest.json", manifest.dump(2) + "\n");
  std::error_code ec;
  if (fs::exists(dir_)) fs::remove_all(dir_, ec);
  if (ec) throw Error("cannot replace " + dir_ + ": " + ec.message());
  const fs::path parent = fs::path(dir_).parent_path();
  if (!parent.empty()) fs::create_directories(parent, ec);
  fs::rename(tmp_, dir_, ec);
  if (ec) throw Error("cannot move artifact into " + dir_ + ": " + ec.message());
  committed_ = true;
}

}  // namespace flatmin
