#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "nbo/solver.hpp"

namespace nbo {

/// Header of the trace CSV, in column order.
const std::vector<std::string>& trace_csv_columns();

/// Shortest form with 17 significant digits, which round-trips every double.
std::string format_double(double v);
/// Inverse of format_double; throws ConfigError on malformed text.
double parse_double(std::string_view s);

void write_trace_csv(const RunTrace& trace, std::ostream& out);
/// Throws ConfigError naming the path when the file cannot be written.
void write_trace_csv(const RunTrace& trace, const std::filesystem::path& path);

/// Records of a CSV written by write_trace_csv (iterates are not stored).
std::vector<TraceRecord> read_trace_csv(std::istream& in);
std::vector<TraceRecord> read_trace_csv(const std::filesystem::path& path);

}  // namespace nbo
