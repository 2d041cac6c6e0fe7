#pragma once

// Trace and summary CSV files. Numbers use the shortest decimal string that
// round-trips to the same double, so rewriting a parsed file is byte-exact.

#include <ddvi/error.hpp>
#include <ddvi/trace.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

namespace ddvi::harness {

inline constexpr const char* kTraceHeader = "iteration,cost_index,norm_err_l1,sup_err,wallclock_s";
inline constexpr const char* kSummaryHeader =
    "algo,env,seed_count,param,mean_err,stderr,iters_to_target,rate_fit,cost_shift";

inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  if (res.ec != std::errc()) throw Error("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

inline std::string format_int(std::int64_t x) { return std::to_string(x); }

inline double parse_double(const std::string& s) {
  double out = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error("bad number '" + s + "' in CSV");
  return out;
}

inline std::int64_t parse_int(const std::string& s) {
  std::int64_t out = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error("bad integer '" + s + "' in CSV");
  return out;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trace_csv(const SolveTrace& trace) {
  std::string out = std::string(kTraceHeader) + "\n";
  for (const TraceRecord& r : trace.records) {
    out += format_int(r.iteration) + "," + format_int(r.cost_index) + "," + format_double(r.norm_err_l1) + "," +
           format_double(r.sup_err) + "," + format_double(r.wallclock_s) + "\n";
  }
  return out;
}

inline std::vector<TraceRecord> parse_trace_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) throw Error("trace CSV: unexpected header");
  std::vector<TraceRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_line(line);
    if (cells.size() != 5) throw Error("trace CSV: expected 5 columns in '" + line + "'");
    out.push_back({parse_int(cells[0]), parse_int(cells[1]), parse_double(cells[2]), parse_double(cells[3]),
                   parse_double(cells[4])});
  }
  return out;
}

/// One summary line per algorithm. Empty optionals print as empty cells:
/// no run reached the target, or no rate could be fitted.
struct SummaryRow {
  std::string algo;
  std::string env;
  int seed_count = 0;
  std::string param;
  double mean_err = 0.0;
  double stderr_err = 0.0;
  std::optional<double> iters_to_target;
  std::optional<double> rate_fit;
  std::int64_t cost_shift = 0;
};

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = std::string(kSummaryHeader) + "\n";
  for (const SummaryRow& r : rows) {
    out += r.algo + "," + r.env + "," + std::to_string(r.seed_count) + "," + r.param + "," +
           format_double(r.mean_err) + "," + format_double(r.stderr_err) + "," +
           (r.iters_to_target ? format_double(*r.iters_to_target) : "") + "," +
           (r.rate_fit ? format_double(*r.rate_fit) : "") + "," + format_int(r.cost_shift) + "\n";
  }
  return out;
}

inline std::vector<SummaryRow> parse_summary_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kSummaryHeader) throw Error("summary CSV: unexpected header");
  std::vector<SummaryRow> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> c = split_line(line);
    if (c.size() != 9) throw Error("summary CSV: expected 9 columns in '" + line + "'");
    SummaryRow r;
    r.algo = c[0];
    r.env = c[1];
    r.seed_count = static_cast<int>(parse_int(c[2]));
    r.param = c[3];
    r.mean_err = parse_double(c[4]);
    r.stderr_err = parse_double(c[5]);
    if (!c[6].empty()) r.iters_to_target = parse_double(c[6]);
    if (!c[7].empty()) r.rate_fit = parse_double(c[7]);
    r.cost_shift = parse_int(c[8]);
    out.push_back(std::move(r));
  }
  return out;
}

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never see a partial file.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw Error("write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ddvi::harness
