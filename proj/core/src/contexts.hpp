#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "cbr/corpus.hpp"

namespace cbr::detail {

/// Fixed surface templates for one context. Placeholders: {e} entity,
/// {a} clause attribute, {a1}..{a4} attributes of a full sentence.
struct ContextSchema {
  Context context;
  InventoryId entity_source;
  InventoryId attribute_source;
  std::string entity_header;
  std::array<std::string, kRelationCount> relation_labels;
  std::string subject_start;  // sentence-initial subject, e.g. "The {e}"
  std::string subject_mid;    // subject inside a prompt, e.g. "the {e}"
  std::string pronoun;
  std::string full_sentence;
  std::array<std::string, kRelationCount> clauses;
  std::array<std::string, kRelationCount> direct_queries;
  std::optional<std::array<std::string, kRelationCount>> positive_clauses;
  std::optional<std::array<std::string, kRelationCount>> negative_clauses;
};

const ContextSchema& schema_for(Context context);

struct Expansion {
  std::string text;
  std::map<std::string, Span> spans;  // first occurrence of each placeholder
};

/// Substitutes `{name}` placeholders. Unknown placeholders are a template
/// error; spans are relative to the returned text.
Expansion expand(std::string_view tpl, const std::map<std::string, std::string>& values);

}  // namespace cbr::detail
