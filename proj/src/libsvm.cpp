#include <charconv>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "nbo/problem.hpp"

namespace nbo {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

std::string_view next_token(std::string_view& rest) {
  std::size_t a = 0;
  while (a < rest.size() && is_space(rest[a])) ++a;
  std::size_t b = a;
  while (b < rest.size() && !is_space(rest[b])) ++b;
  auto tok = rest.substr(a, b - a);
  rest.remove_prefix(b);
  return tok;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

DatasetSplit load_libsvm(const std::filesystem::path& path, std::optional<Index> expected_dim,
                         SplitRole role) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open LIBSVM file '{}'", path.string()));
  if (expected_dim && *expected_dim < 0) throw ConfigError("expected_dim must be non-negative");

  std::vector<double> labels;
  std::vector<std::vector<std::pair<Index, double>>> rows;
  Index width = expected_dim.value_or(0);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view rest(line);
    if (auto hash = rest.find('#'); hash != std::string_view::npos) rest = rest.substr(0, hash);
    auto label_tok = next_token(rest);
    if (label_tok.empty()) continue;

    double label = 0.0;
    if (!parse_number(label_tok, label)) {
      throw ParseError(fmt::format("{}: bad label '{}'", path.string(), label_tok), line_no);
    }
    std::vector<std::pair<Index, double>> entries;
    Index last = 0;
    for (auto tok = next_token(rest); !tok.empty(); tok = next_token(rest)) {
      const auto colon = tok.find(':');
      long long idx = 0;
      double val = 0.0;
      if (colon == std::string_view::npos || !parse_number(tok.substr(0, colon), idx) ||
          !parse_number(tok.substr(colon + 1), val)) {
        throw ParseError(fmt::format("{}: bad feature '{}'", path.string(), tok), line_no);
      }
      if (idx < 1) {
        throw ParseError(fmt::format("{}: feature index {} is not 1-based", path.string(), idx),
                         line_no);
      }
      if (idx <= last) {
        throw ParseError(fmt::format("{}: feature indices must increase", path.string()), line_no);
      }
      if (expected_dim && idx > *expected_dim) {
        throw ParseError(fmt::format("{}: feature index {} exceeds dimension {}", path.string(),
                                     idx, *expected_dim),
                         line_no);
      }
      last = static_cast<Index>(idx);
      entries.emplace_back(last - 1, val);
    }
    if (!expected_dim) width = std::max(width, last);
    labels.push_back(label);
    rows.push_back(std::move(entries));
  }
  if (in.bad()) throw ConfigError(fmt::format("read error on '{}'", path.string()));

  DatasetSplit out{Matrix::Zero(static_cast<Index>(rows.size()), width),
                   Vector(static_cast<Index>(rows.size())), role};
  for (std::size_t e = 0; e < rows.size(); ++e) {
    out.labels(static_cast<Index>(e)) = labels[e];
    for (auto [j, v] : rows[e]) out.features(static_cast<Index>(e), j) = v;
  }
  out.validate();
  return out;
}

}  // namespace nbo
