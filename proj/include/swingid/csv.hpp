#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

// Minimal numeric CSV support shared by every table writer.
namespace swingid::csv {

/// Shortest representation that round-trips exactly.
std::string format(double value);

struct Table {
  std::vector<std::string> header;
  /// Empty fields are std::nullopt.
  std::vector<std::vector<std::optional<double>>> rows;
};

/// Parses a numeric table with a header row. Throws std::runtime_error on
/// ragged rows or non-numeric fields.
Table read(std::istream& in);

}  // namespace swingid::csv
