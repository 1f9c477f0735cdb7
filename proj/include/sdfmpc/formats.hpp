#pragma once

// Small text-artifact helpers shared by the harness and CLI: CSV tables and
// JSON-lines traces. Numbers are written with round-trip precision so rerun
// artifacts are byte-identical.

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdfmpc {

inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline void save_csv(const CsvTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open csv for writing: " + path);
  for (size_t i = 0; i < table.header.size(); ++i)
    out << table.header[i] << (i + 1 < table.header.size() ? "," : "");
  out << '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size())
      throw std::runtime_error("csv row width mismatch: " + path);
    for (size_t i = 0; i < row.size(); ++i) out << row[i] << (i + 1 < row.size() ? "," : "");
    out << '\n';
  }
  if (!out) throw std::runtime_error("csv write failed: " + path);
}

inline CsvTable load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv: " + path);
  CsvTable table;
  std::string line;
  const auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.push_back("");
    return cells;
  };
  if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path);
  table.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) table.rows.push_back(split(line));
  return table;
}

inline void save_jsonl(const std::vector<nlohmann::json>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open jsonl for writing: " + path);
  for (const auto& row : rows) out << row.dump() << '\n';
  if (!out) throw std::runtime_error("jsonl write failed: " + path);
}

inline std::vector<nlohmann::json> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open jsonl: " + path);
  std::vector<nlohmann::json> rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
  return rows;
}

}  // namespace sdfmpc
