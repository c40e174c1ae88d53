#include "io.hpp"

#include <fstream>
#include <sstream>

#include "cbr/error.hpp"

namespace cbr::detail {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("error while reading '" + path + "'");
  return std::move(buf).str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  out.flush();
  if (!out) throw IoError("error while writing '" + path + "'");
}

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(e.byte > 0 ? e.byte - 1 : 0, what + ": invalid JSON");
  }
}

namespace {

const char* type_name(json::value_t t) {
  switch (t) {
    case json::value_t::object: return "object";
    case json::value_t::array: return "array";
    case json::value_t::string: return "string";
    case json::value_t::boolean: return "boolean";
    case json::value_t::number_integer:
    case json::value_t::number_unsigned: return "integer";
    case json::value_t::number_float: return "number";
    case json::value_t::null: return "null";
    default: return "value";
  }
}

bool matches(const json& j, json::value_t t) {
  switch (t) {
    case json::value_t::number_integer:
    case json::value_t::number_unsigned: return j.is_number_integer();
    case json::value_t::number_float: return j.is_number();
    default: return j.type() == t;
  }
}

}  // namespace

const json& member(const json& obj, const char* key, const std::string& what) {
  if (!obj.is_object()) throw FormatError(what + ": expected a JSON object");
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(what + ": missing field '" + key + "'");
  return *it;
}

const json& member(const json& obj, const char* key, json::value_t type, const std::string& what) {
  const json& v = member(obj, key, what);
  if (!matches(v, type)) {
    throw FormatError(what + ": field '" + key + "' must be " + type_name(type));
  }
  return v;
}

std::string dump_json(const json& j) { return j.dump(); }

}  // namespace cbr::detail
