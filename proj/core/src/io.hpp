#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <string_view>

namespace cbr::detail {

using nlohmann::json;

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

json parse_json(std::string_view text, const std::string& what);

/// Fetches a required member, raising FormatError naming `what` and `key`.
const json& member(const json& obj, const char* key, const std::string& what);
const json& member(const json& obj, const char* key, json::value_t type, const std::string& what);

std::string dump_json(const json& j);

}  // namespace cbr::detail
