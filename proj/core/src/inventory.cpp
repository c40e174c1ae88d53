#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "cbr/corpus.hpp"
#include "cbr/error.hpp"

namespace cbr {
namespace {

// Items named in the source material come first; the remainder are common
// single-word fillers up to the declared size.
Inventory make_inventory(InventoryId id, std::vector<std::string> items, std::size_t declared) {
  Inventory inv;
  inv.id = id;
  inv.items = std::move(items);
  inv.declared_size = declared;
  inv.verified.assign(inv.items.size(), std::nullopt);
  return inv;
}

InventorySet build_defaults() {
  InventorySet set;
  set.get(InventoryId::name) = make_inventory(
      InventoryId::name,
      {"Ray",  "Eric", "Leo",  "Ross", "James", "Matt", "Brad", "Jeff", "Todd", "Ian",
       "Dan",  "Tara", "Jack", "Nick", "Ava",   "Paul", "Rob",  "Gary", "Kim",  "Joe",
       "Fred", "Mike", "Tom",  "Lee",  "Jake",  "Sean", "Luke", "Sam",  "Jay",  "Jose",
       "Bob",  "Rick", "Adam", "Alex", "Ben",   "Carl", "Chris", "Dave", "Greg", "Jim",
       "John", "Kate", "Mark", "Max",  "Pat",   "Roy",  "Tim"},
      47);
  set.get(InventoryId::object) = make_inventory(
      InventoryId::object,
      {"window", "glass",  "door",   "paper",  "book",   "toy",   "mirror",   "ball",
       "clock",  "boot",   "radio",  "chair",  "ring",   "plant", "jar",      "lamp",
       "brush",  "mat",    "table",  "stamp",  "shirt",  "belt",  "phone",    "fork",
       "keyboard", "flower", "basket", "monitor", "cup", "bag",   "box",      "pen",
       "hat",    "key",    "bottle", "bowl",   "knife",  "spoon", "plate",    "bed",
       "desk",   "sofa",   "shoe",   "coat",   "watch",  "bell",  "rope",     "card",
       "sock",   "candle", "camera"},
      51);
  set.get(InventoryId::city) = make_inventory(
      InventoryId::city,
      {"Atlanta", "Seattle", "Phoenix", "London", "Hamilton", "Boston", "Kansas",
       "Toronto", "Miami",   "Paris",   "Houston", "Detroit", "Austin", "Berlin",
       "Chicago", "Portland", "Split",  "Dallas",  "Perm",    "Denver"},
      20);
  set.get(InventoryId::job) = make_inventory(
      InventoryId::job,
      {"writer", "student", "driver", "artist", "editor", "actor", "athlete", "guard",
       "chef", "builder", "coach", "judge", "teacher", "manager", "doctor", "nurse"},
      16);
  set.get(InventoryId::country) = make_inventory(
      InventoryId::country,
      {"Georgia", "India",  "Japan",  "Spain",   "Italy",  "Australia", "China", "Russia",
       "Egypt",   "Mexico", "Jordan", "Turkey",  "Brazil", "France",    "Canada", "Sweden",
       "Argentina", "Iraq", "Singapore", "Iran", "Pakistan", "Germany", "Israel"},
      23);
  for (const auto& inv : set.inventories) inv.validate();
  return set;
}

}  // namespace

std::string_view to_string(InventoryId id) {
  switch (id) {
    case InventoryId::name: return "name";
    case InventoryId::object: return "object";
    case InventoryId::city: return "city";
    case InventoryId::job: return "job";
    case InventoryId::country: return "country";
  }
  return "?";
}

InventoryId parse_inventory_id(std::string_view name) {
  for (int i = 0; i < 5; ++i) {
    auto id = static_cast<InventoryId>(i);
    if (to_string(id) == name) return id;
  }
  throw ValidationError("unknown inventory '" + std::string(name) + "'");
}

void Inventory::validate() const {
  const std::string label(to_string(id));
  if (items.size() != declared_size) {
    throw ValidationError("inventory '" + label + "' has " + std::to_string(items.size()) +
                          " items, declared " + std::to_string(declared_size));
  }
  std::set<std::string> seen;
  for (const auto& item : items) {
    if (item.empty()) throw ValidationError("inventory '" + label + "' contains an empty item");
    if (!seen.insert(item).second) {
      throw ValidationError("inventory '" + label + "' repeats item '" + item + "'");
    }
  }
  if (!verified.empty() && verified.size() != items.size()) {
    throw ValidationError("inventory '" + label + "' verification flags do not match items");
  }
}

std::size_t Inventory::index_of(std::string_view item) const {
  auto it = std::find(items.begin(), items.end(), item);
  return it == items.end() ? items.size() : static_cast<std::size_t>(it - items.begin());
}

const InventorySet& default_inventories() {
  static const InventorySet set = build_defaults();
  return set;
}

InventorySet load_inventories(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open inventory file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("inventory file '" + path + "': " + e.what());
  }
  InventorySet set = default_inventories();
  for (auto& [key, value] : doc.items()) {
    Inventory& inv = set.get(parse_inventory_id(key));
    if (!value.contains("items") || !value["items"].is_array()) {
      throw FormatError("inventory '" + key + "' lacks an items array");
    }
    inv.items = value["items"].get<std::vector<std::string>>();
    inv.declared_size = value.value("declared_size", inv.items.size());
    inv.verified.assign(inv.items.size(), std::nullopt);
    if (value.contains("verified")) {
      const auto& flags = value["verified"];
      if (!flags.is_array() || flags.size() != inv.items.size()) {
        throw FormatError("inventory '" + key + "' verified array must match items");
      }
      for (std::size_t i = 0; i < flags.size(); ++i) {
        if (flags[i].is_boolean()) inv.verified[i] = flags[i].get<bool>();
      }
    }
    inv.validate();
  }
  return set;
}

void apply_token_check(InventorySet& set, const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("token check report: ") + e.what());
  }
  for (auto& [key, value] : doc.items()) {
    Inventory& inv = set.get(parse_inventory_id(key));
    if (inv.verified.size() != inv.items.size()) inv.verified.assign(inv.items.size(), std::nullopt);
    for (auto& [item, flag] : value.items()) {
      std::size_t i = inv.index_of(item);
      if (i == inv.items.size()) {
        throw ValidationError("token check names unknown " + key + " item '" + item + "'");
      }
      inv.verified[i] = flag.get<bool>();
    }
  }
}

}  // namespace cbr
