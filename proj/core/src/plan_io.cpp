#include <filesystem>

#include "cbr/corpus_io.hpp"
#include "cbr/error.hpp"
#include "cbr/intervene.hpp"
#include "io.hpp"

namespace cbr {

using detail::member;
using nlohmann::json;
using VT = json::value_t;

namespace {

json span_json(const std::optional<Span>& s) {
  return s ? json::array({s->begin, s->end}) : json(nullptr);
}

std::optional<Span> span_from(const json& j, const std::string& what) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw FormatError(what + ": spans are [begin, end] integer pairs");
  }
  Span s{j[0].get<std::size_t>(), j[1].get<std::size_t>()};
  if (s.end < s.begin) throw FormatError(what + ": span ends before it begins");
  return s;
}

json target_json(const PatchTarget& t) {
  json j{{"sample_id", t.sample_id},
         {"kind", to_string(t.site)},
         {"cell", t.cell ? json::array({t.cell->ei, t.cell->ri}) : json(nullptr)},
         {"token_range", span_json(t.token_range)},
         {"char_span", span_json(t.char_span)},
         {"layers", t.layers},
         {"vector", t.vector_ref < 0 ? json(nullptr) : json(t.vector_ref)}};
  return j;
}

PatchTarget target_from(const json& j, const std::string& what) {
  PatchTarget t;
  t.sample_id = member(j, "sample_id", VT::string, what).get<std::string>();
  try {
    t.site = parse_site(member(j, "kind", VT::string, what).get<std::string>());
  } catch (const ValidationError& e) {
    throw FormatError(what + ": " + e.what());
  }
  const json& c = member(j, "cell", what);
  if (!c.is_null()) {
    if (!c.is_array() || c.size() != 2) throw FormatError(what + ": cell is [ei, ri]");
    t.cell = Cell{c[0].get<int>(), c[1].get<int>()};
  }
  t.token_range = span_from(member(j, "token_range", what), what);
  t.char_span = span_from(member(j, "char_span", what), what);
  for (const auto& l : member(j, "layers", VT::array, what)) {
    if (!l.is_number_integer()) throw FormatError(what + ": layers must be integers");
    t.layers.push_back(l.get<int>());
  }
  const json& v = member(j, "vector", what);
  if (!v.is_null()) {
    if (!v.is_number_integer()) throw FormatError(what + ": vector is an index or null");
    t.vector_ref = v.get<int>();
  }
  return t;
}

json plan_json(const PatchPlan& p) {
  json targets = json::array();
  for (const auto& t : p.targets) targets.push_back(target_json(t));
  json heads = json::array();
  for (const auto& h : p.heads) heads.push_back(json::array({h.layer, h.head}));
  json j{{"plan_id", p.plan_id},
         {"kind", to_string(p.kind)},
         {"alpha", p.alpha},
         {"targets", targets},
         {"query", to_json(p.query)},
         {"answer_candidates", p.answer_candidates},
         {"expected_answer", p.expected_answer ? json(*p.expected_answer) : json(nullptr)},
         {"heads", heads},
         {"tags", p.tags}};
  j["grid"] = p.grid ? json{{"basis", {p.grid->basis_refs[0], p.grid->basis_refs[1]}},
                            {"origin", {p.grid->origin(0), p.grid->origin(1)}}}
                     : json(nullptr);
  j["donor"] = p.donor ? json{{"text", p.donor->text}, {"query", to_json(p.donor->query)}} : json(nullptr);
  return j;
}

PatchPlan plan_from(const json& j, const std::string& outer) {
  const std::string what = outer + " plan '" + j.value("plan_id", std::string("?")) + "'";
  PatchPlan p;
  p.plan_id = member(j, "plan_id", VT::string, what).get<std::string>();
  try {
    p.kind = parse_plan_kind(member(j, "kind", VT::string, what).get<std::string>());
  } catch (const ValidationError& e) {
    throw FormatError(what + ": " + e.what());
  }
  const json& a = member(j, "alpha", what);
  if (!a.is_number()) throw FormatError(what + ": alpha must be a number");
  p.alpha = a.get<double>();
  for (const auto& t : member(j, "targets", VT::array, what)) p.targets.push_back(target_from(t, what));
  p.query = query_from_json(member(j, "query", VT::object, what));
  for (const auto& c : member(j, "answer_candidates", VT::array, what)) {
    if (!c.is_string()) throw FormatError(what + ": answer candidates are strings");
    p.answer_candidates.push_back(c.get<std::string>());
  }
  const json& e = member(j, "expected_answer", what);
  if (e.is_string()) p.expected_answer = e.get<std::string>();
  for (const auto& h : member(j, "heads", VT::array, what)) {
    if (!h.is_array() || h.size() != 2) throw FormatError(what + ": heads are [layer, head]");
    p.heads.push_back({h[0].get<int>(), h[1].get<int>()});
  }
  for (const auto& [k, v] : member(j, "tags", VT::object, what).items()) {
    if (!v.is_string()) throw FormatError(what + ": tag values are strings");
    p.tags[k] = v.get<std::string>();
  }
  const json& g = member(j, "grid", what);
  if (!g.is_null()) {
    const auto& basis = member(g, "basis", VT::array, what);
    const auto& origin = member(g, "origin", VT::array, what);
    if (basis.size() != 2 || origin.size() != 2) throw FormatError(what + ": grid basis and origin have 2 entries");
    GridSpec spec;
    spec.basis_refs = {basis[0].get<int>(), basis[1].get<int>()};
    spec.origin = Eigen::Vector2d(origin[0].get<double>(), origin[1].get<double>());
    p.grid = spec;
  }
  const json& d = member(j, "donor", what);
  if (!d.is_null()) {
    p.donor = Donor{member(d, "text", VT::string, what).get<std::string>(),
                    query_from_json(member(d, "query", VT::object, what))};
  }
  return p;
}

}  // namespace

std::string plan_set_json(const PlanSet& set, const std::string& vectors_file) {
  json points = json::array();
  for (Eigen::Index i = 0; i < set.points.rows(); ++i) points.push_back(json::array({set.points(i, 0), set.points(i, 1)}));
  json plans = json::array();
  for (const auto& p : set.plans) plans.push_back(plan_json(p));
  const json j{{"format", "cbr-plan/1"},
               {"d", set.d},
               {"n_vectors", set.vectors.size()},
               {"vectors_file", set.vectors.empty() ? json(nullptr) : json(vectors_file)},
               {"points", points},
               {"plans", plans}};
  return j.dump(1) + "\n";
}

void save_plan_set(const std::string& path, const PlanSet& set) {
  set.validate();
  const std::filesystem::path p(path);
  const std::string vectors = p.stem().string() + ".v.cbrt";
  if (!set.vectors.empty()) {
    ActivationFile v(set.vectors.size(), {0}, static_cast<std::uint64_t>(set.d));
    for (std::size_t i = 0; i < set.vectors.size(); ++i) {
      for (Eigen::Index c = 0; c < set.d; ++c) v.at(i, 0, static_cast<std::uint64_t>(c)) = static_cast<float>(set.vectors[i](c));
    }
    write_activations((p.parent_path() / vectors).string(), v);
  }
  detail::write_file(path, plan_set_json(set, vectors));
}

PlanSet load_plan_set(const std::string& path) {
  const std::string what = "plan '" + path + "'";
  const json j = detail::parse_json(detail::read_file(path), what);
  if (member(j, "format", VT::string, what) != "cbr-plan/1") throw FormatError(what + ": unknown format");
  PlanSet set;
  set.d = member(j, "d", VT::number_unsigned, what).get<Eigen::Index>();
  const auto n_vectors = member(j, "n_vectors", VT::number_unsigned, what).get<std::size_t>();
  const auto& pts = member(j, "points", VT::array, what);
  set.points.resize(static_cast<Eigen::Index>(pts.size()), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!pts[i].is_array() || pts[i].size() != 2) throw FormatError(what + ": points are [x, y] pairs");
    set.points(static_cast<Eigen::Index>(i), 0) = pts[i][0].get<double>();
    set.points(static_cast<Eigen::Index>(i), 1) = pts[i][1].get<double>();
  }
  try {
    for (const auto& p : member(j, "plans", VT::array, what)) set.plans.push_back(plan_from(p, what));
  } catch (const json::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
  if (n_vectors > 0) {
    std::filesystem::path vpath(member(j, "vectors_file", VT::string, what).get<std::string>());
    if (vpath.is_relative()) vpath = std::filesystem::path(path).parent_path() / vpath;
    const ActivationFile v = read_activations(vpath.string());
    if (v.n_tokens != n_vectors || v.n_layers != 1 || v.d != static_cast<std::uint64_t>(set.d)) {
      throw FormatError(what + ": vectors block does not match n_vectors x d");
    }
    for (std::size_t i = 0; i < n_vectors; ++i) {
      Eigen::VectorXd x(set.d);
      for (Eigen::Index c = 0; c < set.d; ++c) x(c) = v.at(i, 0, static_cast<std::uint64_t>(c));
      set.vectors.push_back(std::move(x));
    }
  }
  try {
    set.validate();
  } catch (const ValidationError& e) {
    throw FormatError(what + ": " + e.what());
  }
  return set;
}

// ---------------------------------------------------------------------------
// Results

json to_json(const InterventionResult& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j{{"plan_id", r.plan_id},
         {"query_id", r.query_id},
         {"point", r.point ? json(*r.point) : json(nullptr)},
         {"head", r.head ? json::array({r.head->layer, r.head->head}) : json(nullptr)},
         {"logit_original_before", r.logit_original_before},
         {"logit_original_after", r.logit_original_after},
         {"logit_expected_before", opt(r.logit_expected_before)},
         {"logit_expected_after", opt(r.logit_expected_after)},
         {"predicted_token", r.predicted_token},
         {"correct", r.correct}};
  if (!r.candidate_logits.empty()) j["candidate_logits"] = r.candidate_logits;
  return j;
}

InterventionResult result_from_json(const json& j) {
  const std::string what = "result";
  if (!j.is_object()) throw FormatError("result must be a JSON object");
  auto number = [&](const char* key) {
    const json& v = member(j, key, what);
    if (!v.is_number()) throw FormatError(what + ": '" + key + "' must be a number");
    return v.get<double>();
  };
  auto optional_number = [&](const char* key) -> std::optional<double> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) throw FormatError(what + ": '" + key + "' must be a number or null");
    return it->get<double>();
  };
  InterventionResult r;
  r.plan_id = member(j, "plan_id", VT::string, what).get<std::string>();
  r.query_id = member(j, "query_id", VT::string, what).get<std::string>();
  if (auto it = j.find("point"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw FormatError(what + ": point must be an integer index");
    r.point = it->get<int>();
  }
  if (auto it = j.find("head"); it != j.end() && !it->is_null()) {
    if (!it->is_array() || it->size() != 2) throw FormatError(what + ": head is [layer, head]");
    r.head = HeadRef{(*it)[0].get<int>(), (*it)[1].get<int>()};
  }
  r.logit_original_before = number("logit_original_before");
  r.logit_original_after = number("logit_original_after");
  r.logit_expected_before = optional_number("logit_expected_before");
  r.logit_expected_after = optional_number("logit_expected_after");
  r.predicted_token = member(j, "predicted_token", VT::string, what).get<std::string>();
  r.correct = member(j, "correct", VT::boolean, what).get<bool>();
  if (auto it = j.find("candidate_logits"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw FormatError(what + ": candidate_logits maps answers to logits");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_number()) throw FormatError(what + ": candidate logits must be numbers");
      r.candidate_logits[k] = v.get<double>();
    }
  }
  return r;
}

std::string results_to_jsonl(const std::vector<InterventionResult>& results) {
  std::string out;
  for (const auto& r : results) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<InterventionResult> results_from_jsonl(std::string_view text) {
  std::vector<InterventionResult> out;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    std::string_view line = text.substr(start, nl - start);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      try {
        out.push_back(result_from_json(detail::parse_json(line, "results")));
      } catch (const FormatError& e) {
        throw FormatError(start + e.offset(), "results line " + std::to_string(line_no) + ": " + e.detail());
      } catch (const json::exception& e) {
        throw FormatError(start, "results line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    start = nl + 1;
  }
  return out;
}

void write_results(const std::string& path, const std::vector<InterventionResult>& results) {
  detail::write_file(path, results_to_jsonl(results));
}

std::vector<InterventionResult> read_results(const std::string& path) {
  return results_from_jsonl(detail::read_file(path));
}

}  // namespace cbr
