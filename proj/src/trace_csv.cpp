#include "nbo/trace_csv.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

namespace nbo {

const std::vector<std::string>& trace_csv_columns() {
  static const std::vector<std::string> cols{
      "k",          "wall_seconds", "f_value",   "phi_value",  "hypergrad_norm",
      "exact_grad_norm", "dist_y",  "dist_u",    "val_error",  "test_error",
      "hvp_count",  "grad_count",   "jvp_count"};
  return cols;
}

std::string format_double(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  if (ec != std::errc()) throw ConfigError("cannot format number");
  return std::string(buf, end);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(fmt::format("malformed number '{}'", s));
  }
  return v;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> parse_opt(std::string_view s) {
  if (s.empty()) return std::nullopt;
  return parse_double(s);
}

long parse_long(std::string_view s) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(fmt::format("malformed integer '{}'", s));
  }
  return v;
}

}  // namespace

void write_trace_csv(const RunTrace& trace, std::ostream& out) {
  const auto& cols = trace_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : trace.records) {
    out << r.k << ',' << format_double(r.wall_seconds) << ',' << format_double(r.f_value) << ','
        << opt(r.phi_value) << ',' << format_double(r.hypergrad_norm) << ','
        << opt(r.exact_grad_norm) << ',' << opt(r.dist_y) << ',' << opt(r.dist_u) << ','
        << opt(r.val_error) << ',' << opt(r.test_error) << ',' << r.hvp_count << ','
        << r.grad_count << ',' << r.jvp_count << '\n';
  }
}

void write_trace_csv(const RunTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  write_trace_csv(trace, out);
  out.flush();
  if (!out) throw ConfigError(fmt::format("write to '{}' failed", path.string()));
}

std::vector<TraceRecord> read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("trace CSV is empty");
  const auto& cols = trace_csv_columns();
  std::string expected;
  for (std::size_t i = 0; i < cols.size(); ++i) expected += (i ? "," : "") + cols[i];
  if (line != expected) throw ConfigError("trace CSV header does not match the schema");

  std::vector<TraceRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (f.size() != cols.size()) throw ConfigError("trace CSV row has the wrong field count");
    TraceRecord r;
    r.k = static_cast<int>(parse_long(f[0]));
    r.wall_seconds = parse_double(f[1]);
    r.f_value = parse_double(f[2]);
    r.phi_value = parse_opt(f[3]);
    r.hypergrad_norm = parse_double(f[4]);
    r.exact_grad_norm = parse_opt(f[5]);
    r.dist_y = parse_opt(f[6]);
    r.dist_u = parse_opt(f[7]);
    r.val_error = parse_opt(f[8]);
    r.test_error = parse_opt(f[9]);
    r.hvp_count = parse_long(f[10]);
    r.grad_count = parse_long(f[11]);
    r.jvp_count = parse_long(f[12]);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<TraceRecord> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
  return read_trace_csv(in);
}

}  // namespace nbo
