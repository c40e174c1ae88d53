#include "args.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cbr/error.hpp"

namespace cbr::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& s, const std::string& whole) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ValidationError(ErrorCode::usage, "bad integer list '" + whole + "'");
  return v;
}

double to_double(const std::string& s, const std::string& whole) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v)) {
    throw ValidationError(ErrorCode::usage, "bad number list '" + whole + "'");
  }
  return v;
}

}  // namespace

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (const auto& item : split_list(text)) {
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(to_int(item, text));
      continue;
    }
    const int a = to_int(item.substr(0, dash), text);
    const int b = to_int(item.substr(dash + 1), text);
    if (b < a) throw ValidationError(ErrorCode::usage, "descending range in '" + text + "'");
    for (int i = a; i <= b; ++i) out.push_back(i);
  }
  if (out.empty()) throw ValidationError(ErrorCode::usage, "empty integer list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string p;
    while (std::getline(ss, p, ':')) parts.push_back(trim(p));
    if (parts.size() != 3) throw ValidationError(ErrorCode::usage, "ranges are start:stop:step, got '" + text + "'");
    const double a = to_double(parts[0], text), b = to_double(parts[1], text), step = to_double(parts[2], text);
    if (step == 0 || (b - a) / step < 0) throw ValidationError(ErrorCode::usage, "range '" + text + "' never reaches its stop");
    std::vector<double> out;
    const auto n = static_cast<long>(std::floor((b - a) / step + 1e-9));
    for (long i = 0; i <= n; ++i) out.push_back(std::round((a + i * step) * 1e12) / 1e12);
    return out;
  }
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(to_double(item, text));
  if (out.empty()) throw ValidationError(ErrorCode::usage, "empty number list");
  return out;
}

std::vector<ConfigEntry> parse_config(const std::string& text) {
  std::vector<ConfigEntry> out;
  std::stringstream ss(text);
  std::string line;
  int no = 0;
  while (std::getline(ss, line)) {
    ++no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(ErrorCode::usage, "config line " + std::to_string(no) + ": expected key = value");
    }
    ConfigEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), no};
    if (e.key.empty()) throw ValidationError(ErrorCode::usage, "config line " + std::to_string(no) + ": empty key");
    std::replace(e.key.begin(), e.key.end(), '_', '-');
    if (e.value.size() >= 2 && e.value.front() == '"' && e.value.back() == '"') e.value = e.value.substr(1, e.value.size() - 2);
    out.push_back(std::move(e));
  }
  return out;
}

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

Table parse_csv(const std::string& text) {
  Table t;
  std::stringstream ss(text);
  std::string line;
  bool first = true;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw FormatError("csv row has " + std::to_string(cells.size()) + " fields, header has " + std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw FormatError("csv input is empty");
  return t;
}

}  // namespace cbr::cli
