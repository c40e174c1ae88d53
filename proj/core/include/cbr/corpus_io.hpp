#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "cbr/corpus.hpp"

namespace cbr {

nlohmann::json to_json(const RelationalTable& table);
nlohmann::json to_json(const QuerySpec& query);
nlohmann::json to_json(const CorpusSample& sample);

RelationalTable table_from_json(const nlohmann::json& j);
QuerySpec query_from_json(const nlohmann::json& j);
/// Parses one corpus line and re-validates spans against the text.
CorpusSample sample_from_json(const nlohmann::json& j);

/// One JSON object per line, newline-terminated.
std::string corpus_to_jsonl(const std::vector<CorpusSample>& samples);
std::vector<CorpusSample> corpus_from_jsonl(std::string_view text);

void write_corpus(const std::string& path, const std::vector<CorpusSample>& samples);
std::vector<CorpusSample> read_corpus(const std::string& path);

}  // namespace cbr
