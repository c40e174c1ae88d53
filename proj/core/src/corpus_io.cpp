#include "cbr/corpus_io.hpp"

#include "cbr/error.hpp"
#include "io.hpp"

namespace cbr {

using detail::member;
using nlohmann::json;
using VT = json::value_t;

namespace {

json cell_json(Cell c) { return json::array({c.ei, c.ri}); }
json span_json(Span s) { return json::array({s.begin, s.end}); }

Cell cell_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw FormatError(what + ": cell must be [ei, ri]");
  }
  Cell c{j[0].get<int>(), j[1].get<int>()};
  if (!c.valid()) throw FormatError(what + ": cell " + c.label() + " out of range");
  return c;
}

Span span_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_unsigned() || !j[1].is_number_unsigned()) {
    throw FormatError(what + ": span must be [start, end)");
  }
  Span s{j[0].get<std::size_t>(), j[1].get<std::size_t>()};
  if (s.end < s.begin) throw FormatError(what + ": span end precedes start");
  return s;
}

}  // namespace

json to_json(const RelationalTable& t) {
  json attrs = json::array();
  for (const auto& row : t.attributes) attrs.push_back(row);
  return json{{"context", to_string(t.context)},
              {"entities", t.entities},
              {"relations", t.relations},
              {"attributes", attrs},
              {"seed", t.seed}};
}

json to_json(const QuerySpec& q) {
  json j{{"query_id", q.query_id},
         {"kind", to_string(q.kind)},
         {"prompt", q.prompt},
         {"target", cell_json(q.target)},
         {"answer", q.answer},
         {"entity_span", span_json(q.entity_span)},
         {"exemplar", nullptr},
         {"exemplar_span", nullptr}};
  if (q.exemplar) {
    j["exemplar"] = json{{"ei", q.exemplar->cell.ei},
                         {"ri", q.exemplar->cell.ri},
                         {"attribute", q.exemplar->attribute}};
  }
  if (q.exemplar_span) j["exemplar_span"] = span_json(*q.exemplar_span);
  return j;
}

json to_json(const CorpusSample& s) {
  json anns = json::array();
  for (const auto& a : s.discourse.annotations) {
    anns.push_back(json{{"ei", a.ei}, {"ri", a.ri}, {"attribute", a.attribute}, {"span", span_json(a.span)}});
  }
  json queries = json::array();
  for (const auto& q : s.queries) queries.push_back(to_json(q));
  return json{{"sample_id", s.sample_id},
              {"text", s.discourse.text},
              {"annotations", anns},
              {"table", to_json(s.discourse.table)},
              {"pattern", s.discourse.pattern.name()},
              {"variant", s.discourse.variant.name()},
              {"queries", queries}};
}

RelationalTable table_from_json(const json& j) {
  const std::string what = "table";
  RelationalTable t;
  try {
    t.context = parse_context(member(j, "context", VT::string, what).get<std::string>());
  } catch (const ValidationError& e) {
    throw FormatError(what + ": " + e.what());
  }
  const auto& ents = member(j, "entities", VT::array, what);
  const auto& rels = member(j, "relations", VT::array, what);
  const auto& attrs = member(j, "attributes", VT::array, what);
  if (ents.size() != kEntityCount || rels.size() != kRelationCount || attrs.size() != kEntityCount) {
    throw FormatError(what + ": expected 3 entities, 4 relations and a 3x4 attribute grid");
  }
  try {
    for (int e = 0; e < kEntityCount; ++e) {
      t.entities[e] = ents[e].get<std::string>();
      if (!attrs[e].is_array() || attrs[e].size() != kRelationCount) {
        throw FormatError(what + ": attribute row " + std::to_string(e + 1) + " must have 4 entries");
      }
      for (int r = 0; r < kRelationCount; ++r) t.attributes[e][r] = attrs[e][r].get<std::string>();
    }
    for (int r = 0; r < kRelationCount; ++r) t.relations[r] = rels[r].get<std::string>();
  } catch (const json::type_error&) {
    throw FormatError(what + ": entries must be strings");
  }
  t.seed = member(j, "seed", VT::number_unsigned, what).get<std::uint64_t>();
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw FormatError(what + ": " + e.what());
  }
  return t;
}

QuerySpec query_from_json(const json& j) {
  const std::string what = "query";
  QuerySpec q;
  q.query_id = member(j, "query_id", VT::string, what).get<std::string>();
  try {
    q.kind = parse_query_kind(member(j, "kind", VT::string, what).get<std::string>());
  } catch (const ValidationError& e) {
    throw FormatError(what + ": " + e.what());
  }
  q.prompt = member(j, "prompt", VT::string, what).get<std::string>();
  q.target = cell_from(member(j, "target", what), what);
  q.answer = member(j, "answer", VT::string, what).get<std::string>();
  q.entity_span = span_from(member(j, "entity_span", what), what);
  if (q.entity_span.end > q.prompt.size()) throw FormatError(what + ": entity_span outside prompt");
  if (auto it = j.find("exemplar"); it != j.end() && !it->is_null()) {
    q.exemplar = Exemplar{Cell{member(*it, "ei", VT::number_integer, what).get<int>(),
                               member(*it, "ri", VT::number_integer, what).get<int>()},
                          member(*it, "attribute", VT::string, what).get<std::string>()};
    if (q.exemplar->cell.ri != q.target.ri || q.exemplar->cell.ei == q.target.ei) {
      throw FormatError(what + " '" + q.query_id + "': exemplar must share ri and differ in ei");
    }
  }
  if (auto it = j.find("exemplar_span"); it != j.end() && !it->is_null()) {
    q.exemplar_span = span_from(*it, what);
    if (q.exemplar_span->end > q.prompt.size()) throw FormatError(what + ": exemplar_span outside prompt");
  }
  if (q.kind == QueryKind::one_shot && !q.exemplar) {
    throw FormatError(what + " '" + q.query_id + "': one_shot query needs an exemplar");
  }
  return q;
}

CorpusSample sample_from_json(const json& j) {
  CorpusSample s;
  s.sample_id = member(j, "sample_id", VT::string, "corpus line").get<std::string>();
  const std::string what = "sample '" + s.sample_id + "'";
  auto& d = s.discourse;
  d.text = member(j, "text", VT::string, what).get<std::string>();
  d.table = table_from_json(member(j, "table", VT::object, what));
  try {
    d.pattern = PatternId::parse(member(j, "pattern", VT::string, what).get<std::string>());
    d.variant = VariantTag::parse(member(j, "variant", VT::string, what).get<std::string>());
  } catch (const ValidationError& e) {
    throw FormatError(what + ": " + e.what());
  }
  for (const auto& a : member(j, "annotations", VT::array, what)) {
    IRSAnnotation ann;
    ann.ei = member(a, "ei", VT::number_integer, what).get<int>();
    ann.ri = member(a, "ri", VT::number_integer, what).get<int>();
    ann.attribute = member(a, "attribute", VT::string, what).get<std::string>();
    ann.span = span_from(member(a, "span", what), what);
    if (!ann.cell().valid()) throw FormatError(what + ": annotation cell out of range");
    if (d.table.attribute(ann.cell()) != ann.attribute) {
      throw FormatError(what + ": annotation " + ann.cell().label() + " disagrees with the table");
    }
    d.annotations.push_back(std::move(ann));
  }
  try {
    d.validate();
  } catch (const ValidationError& e) {
    throw FormatError(what + ": " + e.what());
  }
  for (const auto& q : member(j, "queries", VT::array, what)) {
    QuerySpec query = query_from_json(q);
    if (query.answer != d.table.attribute(query.target)) {
      throw FormatError(what + ": query answer does not match the table");
    }
    s.queries.push_back(std::move(query));
  }
  return s;
}

std::string corpus_to_jsonl(const std::vector<CorpusSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += to_json(s).dump();
    out += '\n';
  }
  return out;
}

std::vector<CorpusSample> corpus_from_jsonl(std::string_view text) {
  std::vector<CorpusSample> out;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    std::string_view line = text.substr(start, nl - start);
    if (!line.empty() && line.find_first_not_of(" \t\r") != std::string_view::npos) {
      try {
        out.push_back(sample_from_json(detail::parse_json(line, "corpus")));
      } catch (const FormatError& e) {
        throw FormatError(start + e.offset(), "corpus line " + std::to_string(line_no) + ": " + e.detail());
      }
    }
    start = nl + 1;
  }
  return out;
}

void write_corpus(const std::string& path, const std::vector<CorpusSample>& samples) {
  detail::write_file(path, corpus_to_jsonl(samples));
}

std::vector<CorpusSample> read_corpus(const std::string& path) {
  return corpus_from_jsonl(detail::read_file(path));
}

}  // namespace cbr
