#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cbr/types.hpp"

namespace cbr {

// ---------------------------------------------------------------------------
// Inventories

enum class InventoryId { name, object, city, job, country };

std::string_view to_string(InventoryId id);
InventoryId parse_inventory_id(std::string_view name);

/// A closed set of single-token surface strings.
///
/// `verified` holds the runner's tokenizer check per item: true when the item
/// is a single token, false when it is not, empty when never checked.
struct Inventory {
  InventoryId id = InventoryId::name;
  std::vector<std::string> items;
  std::size_t declared_size = 0;
  std::vector<std::optional<bool>> verified;

  /// Throws ValidationError when the size or distinctness invariant fails.
  void validate() const;
  std::size_t index_of(std::string_view item) const;
};

struct InventorySet {
  std::array<Inventory, 5> inventories;

  const Inventory& get(InventoryId id) const { return inventories[static_cast<int>(id)]; }
  Inventory& get(InventoryId id) { return inventories[static_cast<int>(id)]; }
};

/// Built-in inventories: S_name=47, S_object=51, S_city=20, S_job=16,
/// S_country=23.
const InventorySet& default_inventories();

/// Loads `{"name": {"items": [...], "verified": [...]}, ...}`; inventories
/// absent from the file keep their defaults.
InventorySet load_inventories(const std::string& path);

/// Merges a tokenizer report `{"<inventory>": {"<item>": true|false}}`.
void apply_token_check(InventorySet& set, const std::string& json_text);

// ---------------------------------------------------------------------------
// Worlds and discourses

/// One sampled world: three entities, four relations, and the 3x4 grid of
/// attributes bound to them.
struct RelationalTable {
  Context context = Context::city;
  std::array<std::string, kEntityCount> entities;
  std::array<std::string, kRelationCount> relations;
  std::array<std::array<std::string, kRelationCount>, kEntityCount> attributes;
  std::uint64_t seed = 0;

  const std::string& attribute(Cell c) const { return attributes[c.ei - 1][c.ri - 1]; }
  const std::string& entity(int ei) const { return entities[ei - 1]; }
  void validate() const;
  bool operator==(const RelationalTable&) const = default;
};

/// Discourse pattern: 0 is the full 3x4 grid, 1..13 select cell subsets.
struct PatternId {
  int id = 0;

  static constexpr PatternId base() { return {0}; }
  bool is_base() const { return id == 0; }
  std::string name() const;
  static PatternId parse(std::string_view text);
  bool operator==(const PatternId&) const = default;
};

inline constexpr int kPatternCount = 13;

/// Cells of a pattern in rendering order.
const std::vector<Cell>& pattern_cells(PatternId pattern);

enum class SemanticGroup { two_to_two, one_to_three, three_to_one };

std::string_view to_string(SemanticGroup g);
SemanticGroup parse_semantic_group(std::string_view text);
/// Whether relation `ri` belongs to the like (positive) phrasing family.
bool is_positive_relation(SemanticGroup g, int ri);

struct VariantTag {
  enum class Kind { none, shuffled, ablated, separation, semantic };

  Kind kind = Kind::none;
  int separation = 0;
  SemanticGroup group = SemanticGroup::two_to_two;

  static VariantTag none() { return {}; }
  static VariantTag shuffled() { return {Kind::shuffled}; }
  static VariantTag ablated() { return {Kind::ablated}; }
  static VariantTag separated(int k);
  static VariantTag semantic(SemanticGroup g) { return {Kind::semantic, 0, g}; }

  /// "none", "shuffled", "ablated", "separation:2", "semantic:1to3".
  std::string name() const;
  static VariantTag parse(std::string_view text);
  bool operator==(const VariantTag&) const = default;
};

struct IRSAnnotation {
  int ei = 1;
  int ri = 1;
  std::string attribute;
  Span span;

  Cell cell() const { return {ei, ri}; }
  bool operator==(const IRSAnnotation&) const = default;
};

struct AnnotatedDiscourse {
  std::string text;
  std::vector<IRSAnnotation> annotations;
  RelationalTable table;
  PatternId pattern;
  VariantTag variant;

  /// Checks span/text agreement, ordering and non-overlap.
  void validate() const;
};

RelationalTable build_world(Context context, std::uint64_t seed,
                            const InventorySet& inventories = default_inventories());

/// Pipe-delimited table, one header row and one row per entity.
std::string render_table(const RelationalTable& table);

struct ParsedTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
ParsedTable parse_table(std::string_view text);

AnnotatedDiscourse render_discourse(const RelationalTable& table, PatternId pattern,
                                    VariantTag variant = VariantTag::none());

/// Re-renders an unperturbed discourse under a perturbation.
AnnotatedDiscourse apply_perturbation(const AnnotatedDiscourse& discourse, VariantTag kind);

/// Full-grid discourse with like/dislike phrasing families. Only the job,
/// city and country contexts define those families.
AnnotatedDiscourse render_semantic_variant(const RelationalTable& table, SemanticGroup group);

/// Greedy left-to-right alignment of the pattern's attributes in `text`.
///
/// Attributes are processed in the pattern's introduction order; each takes
/// its first whole-word occurrence not already claimed. Throws
/// AlignmentError listing every attribute that cannot be placed.
std::vector<IRSAnnotation> align_spans(std::string_view text, const RelationalTable& table,
                                       PatternId pattern);

// ---------------------------------------------------------------------------
// Queries

enum class QueryKind { one_shot, direct };

std::string_view to_string(QueryKind k);
QueryKind parse_query_kind(std::string_view text);

struct Exemplar {
  Cell cell;
  std::string attribute;
  bool operator==(const Exemplar&) const = default;
};

struct QuerySpec {
  std::string query_id;
  QueryKind kind = QueryKind::one_shot;
  std::string prompt;
  Cell target;
  std::string answer;
  std::optional<Exemplar> exemplar;
  /// Byte span of the target entity inside `prompt`.
  Span entity_span;
  /// Byte span of the exemplar attribute inside `prompt` (one-shot only).
  std::optional<Span> exemplar_span;

  bool operator==(const QuerySpec&) const = default;
};

/// `present` restricts exemplar candidates to cells that occur in the
/// discourse; empty means the full grid.
QuerySpec make_query(const RelationalTable& table, Cell target, QueryKind kind,
                     std::uint64_t seed, std::span<const Cell> present = {});

/// Counterfactual input for head patching: relation-1 and relation-2
/// attributes swap places for every entity, so a query for (ei, 2) becomes a
/// query for (ei, 1) with the same answer string (and vice versa).
struct Counterfactual {
  AnnotatedDiscourse discourse;
  QuerySpec query;
};
Counterfactual make_counterfactual(const AnnotatedDiscourse& discourse, const QuerySpec& query);

// ---------------------------------------------------------------------------
// Labels

enum class LabelScheme { original, exp, log, manual };

std::string_view to_string(LabelScheme s);
LabelScheme parse_label_scheme(std::string_view text);
/// Index values 1..4 under the scheme; entity indices use the first three.
const std::array<double, 4>& scheme_values(LabelScheme s);

/// Element-wise remap of an n x 2 [ei, ri] matrix holding integer indices.
Eigen::MatrixXd transform_labels(const Eigen::MatrixXd& labels, LabelScheme scheme);

// ---------------------------------------------------------------------------
// Corpora

struct CorpusSample {
  std::string sample_id;
  AnnotatedDiscourse discourse;
  std::vector<QuerySpec> queries;
};

struct CorpusOptions {
  Context context = Context::city;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
  PatternId pattern = PatternId::base();
  VariantTag variant = VariantTag::none();
};

std::string make_sample_id(Context context, PatternId pattern, VariantTag variant,
                           std::size_t index);

/// World seed for sample `index`; shared across patterns and variants so the
/// same index yields the same table in every condition.
std::uint64_t sample_seed(std::uint64_t corpus_seed, Context context, std::size_t index);

std::vector<CorpusSample> generate_corpus(const CorpusOptions& options,
                                          const InventorySet& inventories = default_inventories());

}  // namespace cbr
