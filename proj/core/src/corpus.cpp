#include "cbr/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "cbr/error.hpp"
#include "cbr/log.hpp"
#include "cbr/rng.hpp"
#include "contexts.hpp"

namespace cbr {

using detail::ContextSchema;
using detail::expand;
using detail::schema_for;

// ---------------------------------------------------------------------------
// Patterns and variants

std::string PatternId::name() const { return is_base() ? "base" : std::to_string(id); }

PatternId PatternId::parse(std::string_view text) {
  if (text == "base" || text == "0") return base();
  std::string_view digits = text;
  if (!digits.empty() && (digits.front() == 'p' || digits.front() == 'P')) digits.remove_prefix(1);
  int value = 0;
  if (digits.empty() || digits.size() > 2) {
    throw ValidationError(ErrorCode::usage, "invalid pattern '" + std::string(text) + "'");
  }
  for (char ch : digits) {
    if (!std::isdigit(static_cast<unsigned char>(ch))) {
      throw ValidationError(ErrorCode::usage, "invalid pattern '" + std::string(text) + "'");
    }
    value = value * 10 + (ch - '0');
  }
  if (value < 1 || value > kPatternCount) {
    throw ValidationError(ErrorCode::usage,
                          "pattern must be 'base' or 1..13, got '" + std::string(text) + "'");
  }
  return PatternId{value};
}

const std::vector<Cell>& pattern_cells(PatternId pattern) {
  static const std::vector<std::vector<Cell>> table = [] {
    std::vector<std::vector<Cell>> t(kPatternCount + 1);
    for (int i = 0; i < kCellCount; ++i) t[0].push_back(Cell::from_flat(i));
    auto c = [](int e, int r) { return Cell{e, r}; };
    t[1] = {c(1, 1), c(2, 2), c(3, 3), c(3, 4)};
    t[2] = {c(1, 1), c(2, 2), c(2, 3), c(3, 4)};
    t[3] = {c(1, 1), c(1, 2), c(2, 3), c(3, 4)};
    t[4] = {c(1, 1), c(1, 2), c(2, 2), c(2, 3), c(3, 3), c(3, 4)};
    t[5] = {c(1, 1), c(1, 2), c(2, 1), c(2, 3), c(3, 2), c(3, 4)};
    t[6] = {c(1, 1), c(1, 2), c(2, 3), c(2, 4), c(3, 1), c(3, 4)};
    t[7] = {c(1, 1), c(1, 2), c(2, 2), c(2, 3), c(2, 4), c(3, 2), c(3, 3), c(3, 4)};
    t[8] = {c(1, 1), c(1, 2), c(2, 1), c(2, 3), c(2, 4), c(3, 1), c(3, 2), c(3, 4)};
    t[9] = {c(1, 1), c(1, 2), c(2, 1), c(2, 3), c(2, 4), c(3, 1), c(3, 3), c(3, 4)};
    t[10] = {c(1, 1), c(1, 2), c(1, 3), c(2, 1), c(2, 3), c(2, 4), c(3, 2), c(3, 3), c(3, 4)};
    t[11] = {c(1, 1), c(1, 2), c(1, 3), c(2, 1), c(2, 3), c(2, 4), c(3, 1), c(3, 2), c(3, 4)};
    t[12] = {c(1, 1), c(1, 2), c(1, 3), c(2, 1), c(2, 3), c(2, 4), c(3, 1), c(3, 3), c(3, 4)};
    t[13] = {c(1, 1), c(1, 2), c(1, 3), c(2, 1), c(2, 3), c(2, 4), c(3, 1), c(3, 2), c(3, 3)};
    return t;
  }();
  if (pattern.id < 0 || pattern.id > kPatternCount) {
    throw ValidationError(ErrorCode::usage, "pattern id out of range: " + std::to_string(pattern.id));
  }
  return table[pattern.id];
}

std::string_view to_string(SemanticGroup g) {
  switch (g) {
    case SemanticGroup::two_to_two: return "2to2";
    case SemanticGroup::one_to_three: return "1to3";
    case SemanticGroup::three_to_one: return "3to1";
  }
  return "?";
}

SemanticGroup parse_semantic_group(std::string_view text) {
  if (text == "2to2") return SemanticGroup::two_to_two;
  if (text == "1to3") return SemanticGroup::one_to_three;
  if (text == "3to1") return SemanticGroup::three_to_one;
  throw ValidationError(ErrorCode::usage,
                        "unknown semantic group '" + std::string(text) + "' (2to2, 1to3, 3to1)");
}

bool is_positive_relation(SemanticGroup g, int ri) {
  switch (g) {
    case SemanticGroup::two_to_two: return ri <= 2;
    case SemanticGroup::one_to_three: return ri == 1;
    case SemanticGroup::three_to_one: return ri <= 3;
  }
  return true;
}

VariantTag VariantTag::separated(int k) {
  if (k < 1 || k > 3) {
    throw ValidationError(ErrorCode::usage, "separation must be 1..3, got " + std::to_string(k));
  }
  return {Kind::separation, k, SemanticGroup::two_to_two};
}

std::string VariantTag::name() const {
  switch (kind) {
    case Kind::none: return "none";
    case Kind::shuffled: return "shuffled";
    case Kind::ablated: return "ablated";
    case Kind::separation: return "separation:" + std::to_string(separation);
    case Kind::semantic: return "semantic:" + std::string(to_string(group));
  }
  return "?";
}

VariantTag VariantTag::parse(std::string_view text) {
  if (text == "none") return none();
  if (text == "shuffled") return shuffled();
  if (text == "ablated") return ablated();
  const auto colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  const std::string_view tail = colon == std::string_view::npos ? "" : text.substr(colon + 1);
  if (head == "separation" && tail.size() == 1 && std::isdigit(static_cast<unsigned char>(tail[0]))) {
    return separated(tail[0] - '0');
  }
  if (head == "semantic" && !tail.empty()) return semantic(parse_semantic_group(tail));
  throw ValidationError(ErrorCode::usage,
                        "unknown variant '" + std::string(text) +
                            "' (none, shuffled, ablated, separation:K, semantic:GROUP)");
}

// ---------------------------------------------------------------------------
// Worlds

void RelationalTable::validate() const {
  std::set<std::string> ents;
  for (const auto& e : entities) {
    if (e.empty()) throw ValidationError("table has an empty entity");
    if (!ents.insert(e).second) throw ValidationError("table repeats entity '" + e + "'");
  }
  std::set<std::string> attrs;
  for (const auto& row : attributes) {
    for (const auto& a : row) {
      if (a.empty()) throw ValidationError("table has an empty attribute");
      if (!attrs.insert(a).second) throw ValidationError("table repeats attribute '" + a + "'");
      if (ents.count(a)) throw ValidationError("attribute '" + a + "' is also an entity");
    }
  }
}

RelationalTable build_world(Context context, std::uint64_t seed, const InventorySet& inventories) {
  const ContextSchema& schema = schema_for(context);
  const Inventory& ent_inv = inventories.get(schema.entity_source);
  const Inventory& att_inv = inventories.get(schema.attribute_source);

  RelationalTable table;
  table.context = context;
  table.seed = seed;
  table.relations = schema.relation_labels;

  Rng rng = Rng::stream(seed, hash_name(to_string(context)));
  std::vector<std::size_t> ent_idx;
  std::vector<std::size_t> att_idx;
  const std::size_t needed = schema.entity_source == schema.attribute_source
                                 ? std::size_t{kEntityCount + kCellCount}
                                 : std::size_t{kCellCount};
  if (att_inv.items.size() < needed || ent_inv.items.size() < std::size_t{kEntityCount}) {
    throw ValidationError(ErrorCode::generation,
                          "inventory '" + std::string(to_string(att_inv.id)) + "' has " +
                              std::to_string(att_inv.items.size()) + " items; context '" +
                              std::string(to_string(context)) + "' needs " +
                              std::to_string(needed) + " distinct draws");
  }
  if (schema.entity_source == schema.attribute_source) {
    auto idx = rng.sample_without_replacement(att_inv.items.size(), needed);
    ent_idx.assign(idx.begin(), idx.begin() + kEntityCount);
    att_idx.assign(idx.begin() + kEntityCount, idx.end());
  } else {
    ent_idx = rng.sample_without_replacement(ent_inv.items.size(), kEntityCount);
    att_idx = rng.sample_without_replacement(att_inv.items.size(), kCellCount);
  }
  for (int e = 0; e < kEntityCount; ++e) table.entities[e] = ent_inv.items[ent_idx[e]];
  for (int i = 0; i < kCellCount; ++i) {
    const Cell c = Cell::from_flat(i);
    table.attributes[c.ei - 1][c.ri - 1] = att_inv.items[att_idx[i]];
  }
  table.validate();
  return table;
}

std::string render_table(const RelationalTable& table) {
  const ContextSchema& schema = schema_for(table.context);
  std::string out = "| " + schema.entity_header + " |";
  for (const auto& r : table.relations) out += " " + r + " |";
  for (int e = 0; e < kEntityCount; ++e) {
    out += "\n| " + table.entities[e] + " |";
    for (int r = 0; r < kRelationCount; ++r) out += " " + table.attributes[e][r] + " |";
  }
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_row(std::string_view line) {
  line = trim(line);
  if (line.size() < 2 || line.front() != '|' || line.back() != '|') {
    throw FormatError("table row must start and end with '|': " + std::string(line));
  }
  line = line.substr(1, line.size() - 2);
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t bar = line.find('|', start);
    cells.emplace_back(trim(line.substr(start, bar - start)));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  return cells;
}

}  // namespace

ParsedTable parse_table(std::string_view text) {
  ParsedTable parsed;
  std::size_t start = 0;
  bool first = true;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos
                                                                            : nl - start);
    if (!trim(line).empty()) {
      auto cells = split_row(line);
      if (first) {
        parsed.header = std::move(cells);
        first = false;
      } else {
        if (cells.size() != parsed.header.size()) {
          throw FormatError("table row has " + std::to_string(cells.size()) + " cells, header has " +
                            std::to_string(parsed.header.size()));
        }
        parsed.rows.push_back(std::move(cells));
      }
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  if (first) throw FormatError("empty table");
  return parsed;
}

// ---------------------------------------------------------------------------
// Discourse rendering

namespace {

struct Clause {
  Cell cell;
  std::string phrasing;  // contains {a}
};

class DiscourseBuilder {
 public:
  void sentence(const ContextSchema& schema, const std::string& entity,
                const std::vector<Clause>& clauses, const RelationalTable& table,
                bool allow_full_template) {
    if (clauses.empty()) return;
    if (!text_.empty()) text_ += ' ';
    const bool full = allow_full_template && clauses.size() == kRelationCount &&
                      std::all_of(clauses.begin(), clauses.end(), [&](const Clause& c) {
                        return c.cell.ri == static_cast<int>(&c - clauses.data()) + 1;
                      });
    if (full) {
      std::map<std::string, std::string> values{{"e", entity}};
      for (const auto& c : clauses) values["a" + std::to_string(c.cell.ri)] = table.attribute(c.cell);
      auto ex = expand(schema.full_sentence, values);
      for (const auto& c : clauses) record(ex, "a" + std::to_string(c.cell.ri), c.cell, table);
      text_ += ex.text;
      return;
    }
    auto subject = expand(schema.subject_start, {{"e", entity}});
    text_ += subject.text;
    for (std::size_t i = 0; i < clauses.size(); ++i) {
      if (i == 0) {
        text_ += ' ';
      } else if (i == 1) {
        text_ += " and ";
      } else {
        text_ += ", and " + schema.pronoun + ' ';
      }
      auto ex = expand(clauses[i].phrasing, {{"a", table.attribute(clauses[i].cell)}});
      record(ex, "a", clauses[i].cell, table);
      text_ += ex.text;
    }
    text_ += " .";
  }

  AnnotatedDiscourse finish(const RelationalTable& table, PatternId pattern, VariantTag variant) {
    std::sort(annotations_.begin(), annotations_.end(),
              [](const IRSAnnotation& a, const IRSAnnotation& b) { return a.span.begin < b.span.begin; });
    AnnotatedDiscourse d{std::move(text_), std::move(annotations_), table, pattern, variant};
    d.validate();
    return d;
  }

 private:
  void record(const detail::Expansion& ex, const std::string& key, Cell cell,
              const RelationalTable& table) {
    auto it = ex.spans.find(key);
    if (it == ex.spans.end()) {
      throw ValidationError(ErrorCode::template_error,
                            "attribute '" + table.attribute(cell) + "' for " + cell.label() +
                                " occurs zero times in its rendered sentence");
    }
    const std::size_t offset = text_.size();
    annotations_.push_back(IRSAnnotation{cell.ei, cell.ri, table.attribute(cell),
                                         Span{offset + it->second.begin, offset + it->second.end}});
  }

  std::string text_;
  std::vector<IRSAnnotation> annotations_;
};

std::vector<Cell> variant_cells(PatternId pattern, VariantTag variant) {
  std::vector<Cell> cells = pattern_cells(pattern);
  if (variant.kind == VariantTag::Kind::ablated) {
    std::erase_if(cells, [](Cell c) { return c.ei >= 2 && (c.ri == 2 || c.ri == 4); });
  }
  return cells;
}

}  // namespace

void AnnotatedDiscourse::validate() const {
  std::set<Cell> cells;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const auto& a = annotations[i];
    if (!a.cell().valid()) throw ValidationError("annotation cell out of range: " + a.cell().label());
    if (a.span.end > text.size() || a.span.empty()) {
      throw ValidationError("annotation span out of bounds for '" + a.attribute + "'");
    }
    if (text.compare(a.span.begin, a.span.size(), a.attribute) != 0) {
      throw ValidationError("annotation span does not match attribute '" + a.attribute + "'");
    }
    if (i > 0) {
      const auto& prev = annotations[i - 1];
      if (prev.span.begin > a.span.begin) throw ValidationError("annotations not sorted by span");
      if (prev.span.overlaps(a.span)) throw ValidationError("annotation spans overlap");
    }
    if (!cells.insert(a.cell()).second) {
      throw ValidationError("duplicate annotation cell " + a.cell().label());
    }
  }
}

AnnotatedDiscourse render_discourse(const RelationalTable& table, PatternId pattern,
                                    VariantTag variant) {
  table.validate();
  const ContextSchema& schema = schema_for(table.context);
  const std::vector<Cell> cells = variant_cells(pattern, variant);

  auto phrasing = [&](Cell c) -> std::string {
    if (variant.kind == VariantTag::Kind::semantic) {
      const auto& family = is_positive_relation(variant.group, c.ri) ? schema.positive_clauses
                                                                     : schema.negative_clauses;
      return (*family)[c.ri - 1];
    }
    return schema.clauses[c.ri - 1];
  };

  if (variant.kind == VariantTag::Kind::semantic &&
      (!schema.positive_clauses || !schema.negative_clauses)) {
    throw ValidationError(ErrorCode::unsupported,
                          "context '" + std::string(to_string(table.context)) +
                              "' has no like/dislike phrasing families (job, city, country only)");
  }

  std::array<std::vector<Clause>, kEntityCount> per_entity;
  for (Cell c : cells) per_entity[c.ei - 1].push_back({c, phrasing(c)});

  if (variant.kind == VariantTag::Kind::shuffled) {
    Rng rng = Rng::stream(table.seed, hash_name("shuffle"));
    for (int e = 1; e < kEntityCount; ++e) {
      auto& clauses = per_entity[e];
      if (clauses.size() < 2) continue;
      const auto original = clauses;
      do {
        rng.shuffle(clauses);
      } while (std::equal(clauses.begin(), clauses.end(), original.begin(),
                          [](const Clause& a, const Clause& b) { return a.cell == b.cell; }));
    }
  }

  DiscourseBuilder builder;
  const bool allow_full = variant.kind == VariantTag::Kind::none ||
                          variant.kind == VariantTag::Kind::shuffled ||
                          variant.kind == VariantTag::Kind::ablated;
  if (variant.kind == VariantTag::Kind::separation) {
    // Block 1 holds relations 1..k of every entity, block 2 the rest, so an
    // entity is re-mentioned only after the other entities' first block.
    for (int block = 0; block < 2; ++block) {
      for (int e = 0; e < kEntityCount; ++e) {
        std::vector<Clause> part;
        for (const auto& c : per_entity[e]) {
          const bool first = c.cell.ri <= variant.separation;
          if ((block == 0) == first) part.push_back(c);
        }
        builder.sentence(schema, table.entities[e], part, table, false);
      }
    }
  } else {
    for (int e = 0; e < kEntityCount; ++e) {
      builder.sentence(schema, table.entities[e], per_entity[e], table, allow_full);
    }
  }
  return builder.finish(table, pattern, variant);
}

AnnotatedDiscourse apply_perturbation(const AnnotatedDiscourse& discourse, VariantTag kind) {
  using K = VariantTag::Kind;
  if (discourse.variant.kind != K::none) {
    throw ValidationError(ErrorCode::usage, "discourse is already perturbed ('" +
                                                discourse.variant.name() + "')");
  }
  if (kind.kind != K::shuffled && kind.kind != K::ablated && kind.kind != K::separation) {
    throw ValidationError(ErrorCode::usage,
                          "perturbation must be shuffled, ablated or separation:K, got '" +
                              kind.name() + "'");
  }
  return render_discourse(discourse.table, discourse.pattern, kind);
}

AnnotatedDiscourse render_semantic_variant(const RelationalTable& table, SemanticGroup group) {
  return render_discourse(table, PatternId::base(), VariantTag::semantic(group));
}

// ---------------------------------------------------------------------------
// Alignment

namespace {

bool is_word_char(char ch) { return std::isalnum(static_cast<unsigned char>(ch)) != 0; }

}  // namespace

std::vector<IRSAnnotation> align_spans(std::string_view text, const RelationalTable& table,
                                       PatternId pattern) {
  std::vector<IRSAnnotation> out;
  std::vector<std::string> missing;
  std::vector<Span> claimed;
  for (Cell cell : pattern_cells(pattern)) {
    const std::string& attr = table.attribute(cell);
    std::size_t pos = 0;
    bool placed = false;
    while (!placed && (pos = text.find(attr, pos)) != std::string_view::npos) {
      const Span span{pos, pos + attr.size()};
      const bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
      const bool right_ok = span.end == text.size() || !is_word_char(text[span.end]);
      const bool free = std::none_of(claimed.begin(), claimed.end(),
                                     [&](const Span& s) { return s.overlaps(span); });
      if (left_ok && right_ok && free) {
        claimed.push_back(span);
        out.push_back({cell.ei, cell.ri, attr, span});
        placed = true;
      }
      ++pos;
    }
    if (!placed) missing.push_back(attr);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw AlignmentError(missing, "attributes absent from text: " + list);
  }
  std::sort(out.begin(), out.end(),
            [](const IRSAnnotation& a, const IRSAnnotation& b) { return a.span.begin < b.span.begin; });
  return out;
}

// ---------------------------------------------------------------------------
// Queries

std::string_view to_string(QueryKind k) { return k == QueryKind::one_shot ? "one_shot" : "direct"; }

QueryKind parse_query_kind(std::string_view text) {
  if (text == "one_shot") return QueryKind::one_shot;
  if (text == "direct") return QueryKind::direct;
  throw ValidationError(ErrorCode::usage, "unknown query kind '" + std::string(text) + "'");
}

QuerySpec make_query(const RelationalTable& table, Cell target, QueryKind kind, std::uint64_t seed,
                     std::span<const Cell> present) {
  if (!target.valid()) throw ValidationError(ErrorCode::query, "target cell out of range: " + target.label());
  std::vector<Cell> cells(present.begin(), present.end());
  if (cells.empty()) cells = pattern_cells(PatternId::base());
  if (std::find(cells.begin(), cells.end(), target) == cells.end()) {
    throw ValidationError(ErrorCode::query, "target cell " + target.label() + " is not in the discourse");
  }
  const ContextSchema& schema = schema_for(table.context);
  const std::string prefix = "Based on the context, ";

  QuerySpec q;
  q.kind = kind;
  q.target = target;
  q.answer = table.attribute(target);

  if (kind == QueryKind::direct) {
    auto subject = expand(schema.subject_mid, {{"e", table.entity(target.ei)}});
    auto body = expand(schema.direct_queries[target.ri - 1], {{"s", subject.text}});
    const std::size_t s_begin = prefix.size() + body.spans.at("s").begin;
    q.prompt = prefix + body.text;
    q.entity_span = {s_begin + subject.spans.at("e").begin, s_begin + subject.spans.at("e").end};
    return q;
  }

  std::vector<Cell> candidates;
  for (Cell c : cells) {
    if (c.ri == target.ri && c.ei != target.ei) candidates.push_back(c);
  }
  if (candidates.empty()) {
    throw ValidationError(ErrorCode::query, "no exemplar shares relation " +
                                                std::to_string(target.ri) + " with a different entity");
  }
  Rng rng = Rng::stream(seed, hash_name("exemplar"));
  const Cell ex = candidates[rng.below(candidates.size())];
  const std::string& ex_entity = table.entity(ex.ei);
  const std::string& ex_attr = table.attribute(ex);
  q.exemplar = Exemplar{ex, ex_attr};

  std::string prompt = prefix + "given like " + ex_entity + " to ";
  const std::size_t attr_begin = prompt.size();
  prompt += ex_attr + ", ";
  const std::size_t ent_begin = prompt.size();
  prompt += table.entity(target.ei) + " to";
  q.prompt = std::move(prompt);
  q.exemplar_span = Span{attr_begin, attr_begin + ex_attr.size()};
  q.entity_span = Span{ent_begin, ent_begin + table.entity(target.ei).size()};
  return q;
}

Counterfactual make_counterfactual(const AnnotatedDiscourse& discourse, const QuerySpec& query) {
  if (query.kind != QueryKind::one_shot || !query.exemplar) {
    throw ValidationError(ErrorCode::usage, "counterfactuals are built for one-shot queries");
  }
  if (query.target.ri > 2 || query.exemplar->cell.ri != query.target.ri) {
    throw ValidationError(ErrorCode::usage,
                          "counterfactual swap covers relations 1 and 2 only; query targets " +
                              query.target.label());
  }
  if (!discourse.pattern.is_base() || discourse.variant.kind != VariantTag::Kind::none) {
    throw ValidationError(ErrorCode::unsupported,
                          "counterfactual swap requires an unperturbed base-pattern discourse");
  }
  RelationalTable swapped = discourse.table;
  for (auto& row : swapped.attributes) std::swap(row[0], row[1]);

  Counterfactual cf;
  cf.discourse = render_discourse(swapped, discourse.pattern, discourse.variant);
  cf.query = query;
  cf.query.query_id = query.query_id.empty() ? "" : query.query_id + "/cf";
  cf.query.target.ri = 3 - query.target.ri;
  cf.query.exemplar->cell.ri = 3 - query.exemplar->cell.ri;
  return cf;
}

// ---------------------------------------------------------------------------
// Labels

std::string_view to_string(LabelScheme s) {
  switch (s) {
    case LabelScheme::original: return "original";
    case LabelScheme::exp: return "exp";
    case LabelScheme::log: return "log";
    case LabelScheme::manual: return "manual";
  }
  return "?";
}

LabelScheme parse_label_scheme(std::string_view text) {
  for (auto s : {LabelScheme::original, LabelScheme::exp, LabelScheme::log, LabelScheme::manual}) {
    if (to_string(s) == text) return s;
  }
  throw ValidationError(ErrorCode::usage, "unknown label scheme '" + std::string(text) + "'");
}

const std::array<double, 4>& scheme_values(LabelScheme s) {
  static const std::array<double, 4> original{1, 2, 3, 4};
  static const std::array<double, 4> exp{1, 3, 9, 27};
  static const std::array<double, 4> log{1, 4.64, 21.54, 100};
  static const std::array<double, 4> manual{1, 5, 30, 100};
  switch (s) {
    case LabelScheme::original: return original;
    case LabelScheme::exp: return exp;
    case LabelScheme::log: return log;
    case LabelScheme::manual: return manual;
  }
  return original;
}

Eigen::MatrixXd transform_labels(const Eigen::MatrixXd& labels, LabelScheme scheme) {
  if (labels.cols() != 2) {
    throw ValidationError(ErrorCode::dimension, "label matrix must have 2 columns [ei, ri]");
  }
  const auto& values = scheme_values(scheme);
  Eigen::MatrixXd out(labels.rows(), 2);
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    for (int col = 0; col < 2; ++col) {
      const double v = labels(i, col);
      const int limit = col == 0 ? kEntityCount : kRelationCount;
      const double rounded = std::round(v);
      if (v != rounded || rounded < 1 || rounded > limit) {
        throw ValidationError(ErrorCode::out_of_range,
                              std::string(col == 0 ? "ei" : "ri") + " label " + std::to_string(v) +
                                  " at row " + std::to_string(i) + " is outside 1.." +
                                  std::to_string(limit));
      }
      out(i, col) = values[static_cast<std::size_t>(rounded) - 1];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpora

std::string make_sample_id(Context context, PatternId pattern, VariantTag variant, std::size_t index) {
  std::string id(to_string(context));
  if (!pattern.is_base()) id += "-p" + std::to_string(pattern.id);
  if (variant.kind != VariantTag::Kind::none) {
    std::string v = variant.name();
    std::erase(v, ':');
    id += "-" + v;
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "-%06zu", index);
  return id + buf;
}

std::uint64_t sample_seed(std::uint64_t corpus_seed, Context context, std::size_t index) {
  std::uint64_t state = corpus_seed ^ hash_name(to_string(context));
  state ^= 0x9e3779b97f4a7c15ULL * (index + 1);
  return splitmix64(state);
}

std::vector<CorpusSample> generate_corpus(const CorpusOptions& options,
                                          const InventorySet& inventories) {
  const ContextSchema& schema = schema_for(options.context);
  std::vector<CorpusSample> corpus;
  corpus.reserve(options.n_samples);
  std::set<std::string> unverified;
  bool any_flags = false;
  for (InventoryId id : {schema.entity_source, schema.attribute_source}) {
    for (const auto& flag : inventories.get(id).verified) any_flags = any_flags || flag.has_value();
  }

  for (std::size_t i = 0; i < options.n_samples; ++i) {
    const std::uint64_t seed = sample_seed(options.seed, options.context, i);
    RelationalTable table = build_world(options.context, seed, inventories);
    CorpusSample sample;
    sample.sample_id = make_sample_id(options.context, options.pattern, options.variant, i);
    sample.discourse = render_discourse(table, options.pattern, options.variant);

    std::vector<Cell> present;
    for (const auto& a : sample.discourse.annotations) present.push_back(a.cell());
    std::sort(present.begin(), present.end());
    std::vector<Cell> with_exemplar;
    for (Cell c : present) {
      if (std::any_of(present.begin(), present.end(),
                      [&](Cell o) { return o.ri == c.ri && o.ei != c.ei; })) {
        with_exemplar.push_back(c);
      }
    }
    Rng qrng = Rng::stream(seed, hash_name("query"));
    const auto& pool = with_exemplar.empty() ? present : with_exemplar;
    const Cell target = pool[qrng.below(pool.size())];
    const std::uint64_t qseed = qrng.next_u64();
    if (!with_exemplar.empty()) {
      QuerySpec q = make_query(table, target, QueryKind::one_shot, qseed, present);
      q.query_id = sample.sample_id + "/q0";
      sample.queries.push_back(std::move(q));
    }
    QuerySpec direct = make_query(table, target, QueryKind::direct, qseed, present);
    direct.query_id = sample.sample_id + "/q" + std::to_string(sample.queries.size());
    sample.queries.push_back(std::move(direct));

    for (const auto& e : table.entities) {
      const Inventory& inv = inventories.get(schema.entity_source);
      const std::size_t k = inv.index_of(e);
      if (k < inv.verified.size() && inv.verified[k] != true) unverified.insert(e);
    }
    for (const auto& a : sample.discourse.annotations) {
      const Inventory& inv = inventories.get(schema.attribute_source);
      const std::size_t k = inv.index_of(a.attribute);
      if (k < inv.verified.size() && inv.verified[k] != true) unverified.insert(a.attribute);
    }
    corpus.push_back(std::move(sample));
  }

  if (!unverified.empty()) {
    if (any_flags) {
      std::string list;
      for (const auto& item : unverified) list += (list.empty() ? "" : ", ") + item;
      warn("corpus uses items without a passing tokenizer check: " + list);
    } else {
      warn(std::to_string(unverified.size()) +
           " inventory items used by this corpus have not been tokenizer-verified");
    }
  }
  return corpus;
}

}  // namespace cbr
