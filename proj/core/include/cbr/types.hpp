#pragma once

#include <array>
#include <compare>
#include <string>
#include <string_view>

namespace cbr {

inline constexpr int kEntityCount = 3;
inline constexpr int kRelationCount = 4;
inline constexpr int kCellCount = kEntityCount * kRelationCount;

/// Discourse domain. Each fixes a relation schema and the inventories that
/// entities and attributes are drawn from.
enum class Context { relation, object, city, job, country };

inline constexpr std::array<Context, 5> kAllContexts = {
    Context::relation, Context::object, Context::city, Context::job, Context::country};

std::string_view to_string(Context c);
Context parse_context(std::string_view name);

/// An entity-relation index pair, 1-based on both axes.
struct Cell {
  int ei = 1;
  int ri = 1;

  auto operator<=>(const Cell&) const = default;

  /// Row-major position in the 3x4 grid, 0..11.
  int flat() const { return (ei - 1) * kRelationCount + (ri - 1); }
  static Cell from_flat(int i) { return {i / kRelationCount + 1, i % kRelationCount + 1}; }
  bool valid() const { return ei >= 1 && ei <= kEntityCount && ri >= 1 && ri <= kRelationCount; }
  std::string label() const { return "e" + std::to_string(ei) + "r" + std::to_string(ri); }
};

/// Half-open byte range [begin, end).
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool overlaps(const Span& o) const { return begin < o.end && o.begin < end; }
  auto operator<=>(const Span&) const = default;
};

}  // namespace cbr
