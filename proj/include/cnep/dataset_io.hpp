#pragma once

// Dataset CSV layout:
//   traj_id,t,sm_0,...,sm_{dm-1}
// one row per sample, rows of a trajectory contiguous, times ascending.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cnep/errors.hpp"
#include "cnep/trajectory.hpp"

namespace cnep {

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string format_real(double v, int digits = 17) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

}  // namespace detail

/// Parses the CSV text. Times of each trajectory are rescaled to [0, 1] when
/// they do not already span it.
inline Dataset parse_dataset(std::istream& in) {
  std::string line;
  std::size_t row = 0;
  if (!std::getline(in, line) || detail::trim(line).empty())
    throw ParseError("no trajectories: file is empty");
  ++row;
  const auto header = detail::split_commas(detail::trim(line));
  if (header.size() < 3 || detail::trim(header[0]) != "traj_id" || detail::trim(header[1]) != "t")
    throw ParseError("row 1: malformed header, expected traj_id,t,sm_0,...");
  const Index dm = static_cast<Index>(header.size()) - 2;
  for (Index k = 0; k < dm; ++k)
    if (detail::trim(header[static_cast<std::size_t>(k) + 2]) != "sm_" + std::to_string(k))
      throw ParseError("row 1: malformed header, column " + std::to_string(k + 3) + " should be sm_" +
                       std::to_string(k));

  struct Pending {
    std::string id;
    std::vector<double> times;
    std::vector<double> values;
  };
  std::vector<Pending> parsed;
  std::vector<std::string> seen;

  while (std::getline(in, line)) {
    ++row;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto cells = detail::split_commas(body);
    if (cells.size() != header.size())
      throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                       " cells, found " + std::to_string(cells.size()));
    const std::string id(detail::trim(cells[0]));
    if (id.empty()) throw ParseError("row " + std::to_string(row) + ": empty traj_id");
    if (parsed.empty() || parsed.back().id != id) {
      for (const auto& s : seen)
        if (s == id)
          throw ParseError("row " + std::to_string(row) + ": rows of trajectory '" + id +
                           "' are not contiguous");
      seen.push_back(id);
      parsed.push_back({id, {}, {}});
    }
    Pending& cur = parsed.back();
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const auto cell = detail::trim(cells[c]);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      const std::string where =
          "row " + std::to_string(row) + ", column " + std::string(detail::trim(header[c]));
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw ParseError(where + ": not a number '" + std::string(cell) + "'");
      if (!std::isfinite(v)) throw ParseError(where + ": non-finite value '" + std::string(cell) + "'");
      if (c == 1) {
        if (!cur.times.empty() && !(v > cur.times.back()))
          throw ParseError(where + ": times must be strictly increasing within trajectory '" + id + "'");
        cur.times.push_back(v);
      } else {
        cur.values.push_back(v);
      }
    }
  }
  if (parsed.empty()) throw ParseError("no trajectories: file has a header but no rows");

  Dataset ds;
  ds.dm = dm;
  ds.normalization = Normalization::identity(dm);
  const std::size_t T = parsed.front().times.size();
  for (const auto& p : parsed) {
    if (p.times.size() < 2) throw ParseError("trajectory '" + p.id + "' has fewer than 2 samples");
    if (p.times.size() != T)
      throw ParseError("trajectory '" + p.id + "' has " + std::to_string(p.times.size()) +
                       " samples, expected " + std::to_string(T));
    Trajectory tr;
    tr.id = p.id;
    tr.times.resize(static_cast<Index>(T));
    const double t0 = p.times.front();
    const double t1 = p.times.back();
    const bool unit = t0 == 0.0 && t1 == 1.0;
    for (std::size_t i = 0; i < T; ++i)
      tr.times(static_cast<Index>(i)) = unit ? p.times[i] : (p.times[i] - t0) / (t1 - t0);
    if (!unit) {
      tr.times(0) = 0.0;
      tr.times(static_cast<Index>(T) - 1) = 1.0;
    }
    tr.sm.resize(static_cast<Index>(T), dm);
    for (std::size_t i = 0; i < T; ++i)
      for (Index k = 0; k < dm; ++k)
        tr.sm(static_cast<Index>(i), k) = p.values[i * static_cast<std::size_t>(dm) + static_cast<std::size_t>(k)];
    ds.trajectories.push_back(std::move(tr));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  return parse_dataset(in);
}

/// Full precision by default, so parse_dataset recovers the values exactly.
inline void write_dataset(const Dataset& ds, std::ostream& out, int digits = 17) {
  validate_dataset(ds);
  out << "traj_id,t";
  for (Index k = 0; k < ds.dm; ++k) out << ",sm_" << k;
  out << '\n';
  for (const auto& tr : ds.trajectories) {
    for (Index i = 0; i < tr.length(); ++i) {
      out << tr.id << ',' << detail::format_real(tr.times(i), digits);
      for (Index k = 0; k < ds.dm; ++k) out << ',' << detail::format_real(tr.sm(i, k), digits);
      out << '\n';
    }
  }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset '" + path + "'");
  write_dataset(ds, out);
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace cnep
