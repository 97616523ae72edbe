#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sketchgrad/common.hpp"
#include "sketchgrad/optimizer.hpp"

namespace sketchgrad {

// Fixed CSV schema, bit-exact: LF line endings, shortest round-trip floats.
inline constexpr const char* kTraceHeader =
    "iter,f,grad_sq_norm,estimator_gap,lyapunov,stepsize,comm_scalars,side";

inline void write_trace_csv(const std::string& path, const RunTrace& trace) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open trace file for writing: " + path);
  f << kTraceHeader << "\n";
  for (const TraceRow& r : trace.rows) {
    f << r.iter << ',' << format_double(r.f) << ',' << format_double(r.grad_sq_norm) << ','
      << format_double(r.estimator_gap) << ',' << format_double(r.lyapunov) << ','
      << format_double(r.stepsize) << ',' << format_double(r.comm_scalars) << ',' << r.side
      << "\n";
  }
  if (!f) throw InputError("failed writing trace file: " + path);
}

struct LoadedTrace {
  std::vector<TraceRow> rows;
};

inline LoadedTrace read_trace_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open trace file: " + path);
  std::string line;
  if (!std::getline(f, line)) throw InputError("malformed CSV (empty file): " + path);
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
  if (line != kTraceHeader)
    throw InputError("malformed CSV (unexpected header) in file: " + path);
  LoadedTrace out;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> parts;
    std::string item;
    std::istringstream ss(line);
    while (std::getline(ss, item, ',')) parts.push_back(item);
    if (parts.size() != 8)
      throw InputError("malformed CSV row (line " + std::to_string(line_no) + ") in file: " +
                       path);
    TraceRow r;
    char* end = nullptr;
    r.iter = static_cast<int>(std::strtol(parts[0].c_str(), &end, 10));
    auto num = [&](const std::string& s) {
      return std::strtod(s.c_str(), nullptr);
    };
    r.f = num(parts[1]);
    r.grad_sq_norm = num(parts[2]);
    r.estimator_gap = num(parts[3]);
    r.lyapunov = num(parts[4]);
    r.stepsize = num(parts[5]);
    r.comm_scalars = num(parts[6]);
    r.side = parts[7].empty() ? '-' : parts[7][0];
    out.rows.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-iteration aggregation across seeds. Shorter traces (early stops) carry
// their last row forward so every iteration has one value per seed.

namespace detail {

inline double percentile_sorted(std::vector<double>& v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  for (double x : v)
    if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  if (q == 0.5) {
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
  // nearest-rank
  std::size_t rank = static_cast<std::size_t>(std::ceil(q * n));
  if (rank == 0) rank = 1;
  return v[rank - 1];
}

}  // namespace detail

// quantile q over seeds for every column of every iteration (q = 0.5, 0.25, 0.75)
inline std::vector<TraceRow> aggregate_traces(const std::vector<LoadedTrace>& traces,
                                              double q) {
  require(!traces.empty(), "aggregate_traces: no traces");
  std::size_t t_max = 0;
  for (const auto& t : traces) t_max = std::max(t_max, t.rows.size());
  std::vector<TraceRow> out;
  out.reserve(t_max);
  for (std::size_t t = 0; t < t_max; ++t) {
    auto column = [&](auto getter) {
      std::vector<double> vals;
      vals.reserve(traces.size());
      for (const auto& tr : traces) {
        if (tr.rows.empty()) continue;
        const TraceRow& r = t < tr.rows.size() ? tr.rows[t] : tr.rows.back();
        vals.push_back(getter(r));
      }
      return detail::percentile_sorted(vals, q);
    };
    TraceRow r;
    r.iter = static_cast<int>(t);
    r.f = column([](const TraceRow& x) { return x.f; });
    r.grad_sq_norm = column([](const TraceRow& x) { return x.grad_sq_norm; });
    r.estimator_gap = column([](const TraceRow& x) { return x.estimator_gap; });
    r.lyapunov = column([](const TraceRow& x) { return x.lyapunov; });
    r.stepsize = column([](const TraceRow& x) { return x.stepsize; });
    r.comm_scalars = column([](const TraceRow& x) { return x.comm_scalars; });
    r.side = '-';
    out.push_back(r);
  }
  return out;
}

inline void write_rows_csv(const std::string& path, const std::vector<TraceRow>& rows) {
  RunTrace t;
  t.rows = rows;
  write_trace_csv(path, t);
}

}  // namespace sketchgrad
