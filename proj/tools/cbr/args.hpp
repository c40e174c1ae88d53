#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cbr::cli {

/// "3", "1,4,7", "10-20", "1-3,8"; ranges are inclusive.
std::vector<int> parse_int_list(const std::string& text);
/// "0,-0.2,-0.4" or "0.4:1.6:0.1" (start:stop:step, stop inclusive).
std::vector<double> parse_double_list(const std::string& text);
/// Comma-separated, whitespace trimmed, empty items dropped.
std::vector<std::string> split_list(const std::string& text);

/// Flat `key = value` lines; '#' starts a comment. Keys are normalized to
/// dashes ("n_points" -> "n-points"). Throws ValidationError naming the line
/// on malformed input.
struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};
std::vector<ConfigEntry> parse_config(const std::string& text);

/// Simple CSV reader for the tables this tool writes: header row, no quoting.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int column(const std::string& name) const;  // -1 when absent
};
Table parse_csv(const std::string& text);

}  // namespace cbr::cli
