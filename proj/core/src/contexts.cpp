#include "contexts.hpp"

#include "cbr/error.hpp"

namespace cbr {

std::string_view to_string(Context c) {
  switch (c) {
    case Context::relation: return "relation";
    case Context::object: return "object";
    case Context::city: return "city";
    case Context::job: return "job";
    case Context::country: return "country";
  }
  return "?";
}

Context parse_context(std::string_view name) {
  for (Context c : kAllContexts) {
    if (to_string(c) == name) return c;
  }
  throw ValidationError(ErrorCode::usage, "unknown context '" + std::string(name) +
                                              "' (expected relation, object, city, job, country)");
}

namespace detail {
namespace {

std::array<ContextSchema, 5> build_schemas() {
  std::array<ContextSchema, 5> s;

  s[0] = ContextSchema{
      Context::relation,
      InventoryId::name,
      InventoryId::name,
      "Name",
      {"Spouse", "Child", "Teacher", "Boss"},
      "{e}",
      "{e}",
      "he",
      "{e} is married to {a1} and has a child named {a2}, he was taught by {a3} and works "
      "under {a4} .",
      {"is married to {a}", "has a child named {a}", "was taught by {a}", "works under {a}"},
      {"{s} is married to", "{s} has a child named", "{s} was taught by", "{s} works under"},
      std::nullopt,
      std::nullopt};

  s[1] = ContextSchema{
      Context::object,
      InventoryId::name,
      InventoryId::object,
      "Name",
      {"Created Object", "Bought Object", "Sold Object", "Favorite Object"},
      "{e}",
      "{e}",
      "he",
      "{e} created the {a1} and also bought the {a2}, he sold the {a3}, and his favorite "
      "object is the {a4} .",
      {"created the {a}", "bought the {a}", "sold the {a}", "has the {a} as his favorite object"},
      {"{s} created the", "{s} bought the", "{s} sold the", "{s}'s favorite object is the"},
      std::nullopt,
      std::nullopt};

  s[2] = ContextSchema{
      Context::city,
      InventoryId::name,
      InventoryId::city,
      "Name",
      {"Birthplace", "Lived City", "Loved City", "Disliked City"},
      "{e}",
      "{e}",
      "he",
      "{e} was born in {a1} and currently lives in {a2}, he loves {a3} and dislike {a4} .",
      {"was born in {a}", "currently lives in {a}", "loves {a}", "dislikes {a}"},
      {"{s} was born in", "{s} is now living in", "{s} loves", "{s} dislikes"},
      std::array<std::string, 4>{"loves {a}", "adores {a}", "is fond of {a}", "enjoys {a}"},
      std::array<std::string, 4>{"dislikes {a}", "hates {a}", "cannot stand {a}",
                                 "has an aversion to {a}"}};

  s[3] = ContextSchema{
      Context::job,
      InventoryId::name,
      InventoryId::job,
      "Name",
      {"Current Job", "Dream Job", "Previous Job", "Disliked Job"},
      "{e}",
      "{e}",
      "he",
      "{e} currently works as a {a1} and dreams of becoming a {a2}, he previously worked as a "
      "{a3}, and he dislikes being a {a4} .",
      {"currently works as a {a}", "dreams of becoming a {a}", "previously worked as a {a}",
       "dislikes being a {a}"},
      {"{s} currently works as a", "{s} dreams of becoming a", "{s} previously worked as a",
       "{s} dislikes being a"},
      std::array<std::string, 4>{"currently works as a {a}", "serves as a {a}",
                                 "takes on the role of a {a}", "enjoys working as a {a}"},
      std::array<std::string, 4>{"is frustrated at being a {a}", "dislikes being a {a}",
                                 "hates the idea of being a {a}", "finds no joy in being a {a}"}};

  s[4] = ContextSchema{
      Context::country,
      InventoryId::object,
      InventoryId::country,
      "Product",
      {"Manufactured in", "Designed in", "Exported to", "Banned in"},
      "The {e}",
      "the {e}",
      "it",
      "The {e} is manufactured in {a1} and designed in {a2}, and it is exported to {a3}, but it "
      "is banned in {a4} .",
      {"is manufactured in {a}", "is designed in {a}", "is exported to {a}", "is banned in {a}"},
      {"{s} is manufactured in", "{s} is designed in", "{s} is exported to", "{s} is banned in"},
      std::array<std::string, 4>{"is praised in {a}", "is welcomed in {a}", "is popular in {a}",
                                 "is celebrated in {a}"},
      std::array<std::string, 4>{"is banned in {a}", "is rejected in {a}", "is prohibited in {a}",
                                 "is criticized in {a}"}};
  return s;
}

}  // namespace

const ContextSchema& schema_for(Context context) {
  static const std::array<ContextSchema, 5> schemas = build_schemas();
  return schemas[static_cast<int>(context)];
}

Expansion expand(std::string_view tpl, const std::map<std::string, std::string>& values) {
  Expansion out;
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      const std::size_t close = tpl.find('}', i);
      if (close == std::string_view::npos) {
        throw ValidationError(ErrorCode::template_error,
                              "unterminated placeholder in template '" + std::string(tpl) + "'");
      }
      const std::string key(tpl.substr(i + 1, close - i - 1));
      auto it = values.find(key);
      if (it == values.end()) {
        throw ValidationError(ErrorCode::template_error,
                              "template placeholder {" + key + "} has no value");
      }
      const Span span{out.text.size(), out.text.size() + it->second.size()};
      out.spans.emplace(key, span);
      out.text += it->second;
      i = close + 1;
    } else {
      out.text += tpl[i++];
    }
  }
  return out;
}

}  // namespace detail
}  // namespace cbr
