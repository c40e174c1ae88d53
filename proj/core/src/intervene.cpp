#include "cbr/intervene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "cbr/error.hpp"
#include "cbr/log.hpp"
#include "cbr/rng.hpp"

namespace cbr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

std::string_view to_string(PlanKind k) {
  switch (k) {
    case PlanKind::grid_sample: return "grid_sample";
    case PlanKind::perturb_cbr: return "perturb_cbr";
    case PlanKind::perturb_random: return "perturb_random";
    case PlanKind::steer: return "steer";
    case PlanKind::head_patch: return "head_patch";
    case PlanKind::head_mean_ablate: return "head_mean_ablate";
  }
  return "?";
}

PlanKind parse_plan_kind(std::string_view text) {
  for (auto k : {PlanKind::grid_sample, PlanKind::perturb_cbr, PlanKind::perturb_random, PlanKind::steer,
                 PlanKind::head_patch, PlanKind::head_mean_ablate}) {
    if (to_string(k) == text) return k;
  }
  throw ValidationError(ErrorCode::usage, "unknown plan kind '" + std::string(text) + "'");
}

std::string_view to_string(Site s) {
  switch (s) {
    case Site::attribute: return "attribute";
    case Site::query_entity: return "query_entity";
    case Site::query_exemplar: return "query_exemplar";
    case Site::last_token: return "last_token";
  }
  return "?";
}

Site parse_site(std::string_view text) {
  for (auto s : {Site::attribute, Site::query_entity, Site::query_exemplar, Site::last_token}) {
    if (to_string(s) == text) return s;
  }
  throw ValidationError(ErrorCode::usage, "unknown target kind '" + std::string(text) +
                                              "' (attribute, query_entity, query_exemplar, last_token)");
}

std::string_view to_string(Axis a) { return a == Axis::ei ? "ei" : "ri"; }

Axis parse_axis(std::string_view text) {
  if (text == "ei") return Axis::ei;
  if (text == "ri") return Axis::ri;
  throw ValidationError(ErrorCode::usage, "axis must be ei or ri");
}

// ---------------------------------------------------------------------------
// PlanSet

int PlanSet::add_vector(const VectorXd& v) {
  if (d == 0) d = v.size();
  if (v.size() != d) throw ValidationError(ErrorCode::dimension, "plan vector width differs from plan set");
  for (std::size_t i = vectors.size(); i-- > 0;) {
    if (vectors[i] == v) return static_cast<int>(i);
  }
  vectors.push_back(v);
  return static_cast<int>(vectors.size() - 1);
}

void PlanSet::validate(int max_layer) const {
  for (const auto& v : vectors) {
    if (v.size() != d) throw ValidationError(ErrorCode::dimension, "plan vector width differs from plan set");
    if (!v.allFinite()) throw ValidationError("plan vector has non-finite entries");
  }
  std::set<std::string> ids;
  for (const auto& p : plans) {
    if (!ids.insert(p.plan_id).second) throw ValidationError("duplicate plan_id '" + p.plan_id + "'");
    if (!std::isfinite(p.alpha)) throw ValidationError("plan '" + p.plan_id + "' has non-finite alpha");
    for (const auto& t : p.targets) {
      if (t.vector_ref < -1 || t.vector_ref >= static_cast<int>(vectors.size())) {
        throw ValidationError("plan '" + p.plan_id + "' references missing vector " + std::to_string(t.vector_ref));
      }
      for (int l : t.layers) {
        if (l < 0 || l >= max_layer) {
          throw ValidationError(ErrorCode::out_of_range, "plan '" + p.plan_id + "' layer " + std::to_string(l) +
                                                             " outside model depth " + std::to_string(max_layer));
        }
      }
    }
    if (p.grid) {
      for (int r : p.grid->basis_refs) {
        if (r < 0 || r >= static_cast<int>(vectors.size())) {
          throw ValidationError("grid plan '" + p.plan_id + "' has an invalid basis reference");
        }
      }
      if (points.cols() != 2 || points.rows() == 0) throw ValidationError("grid plans need an n x 2 point set");
    }
  }
}

// ---------------------------------------------------------------------------
// Vector algebra

VectorXd apply_lift(const ProbeModel& probe, const VectorXd& h, const VectorXd& s, double alpha) {
  return h + alpha * probe.lift(s);
}

VectorXd grid_patch_vector(const ProbeModel& probe, const VectorXd& h, const Vector2d& p, double alpha) {
  if (probe.W.rows() < 2) throw ValidationError(ErrorCode::usage, "grid sampling needs a probe with k >= 2");
  const VectorXd z = probe.project(h);
  VectorXd s = VectorXd::Zero(probe.W.rows());
  s.head<2>() = p - z.head<2>();
  return alpha * probe.lift(s);
}

VectorXd perturbation_vector(const ProbeModel& probe, const MatrixXd& lifting, const VectorXd& h, double alpha) {
  if (lifting.rows() != probe.W.rows() || lifting.cols() != probe.d()) {
    throw ValidationError(ErrorCode::dimension, "lifting matrix must be k x d like the probe");
  }
  return alpha * (lifting.transpose() * probe.project(h));
}

// ---------------------------------------------------------------------------
// Builders

namespace {

struct Lookup {
  std::map<std::string, const CorpusSample*> samples;
  std::map<std::pair<std::string, Cell>, Index> rows;
  std::vector<std::string> order;  // sample ids with activations, in data order

  explicit Lookup(const PlanInputs& in) {
    if (!in.corpus) throw ValidationError(ErrorCode::usage, "plan builder needs a corpus");
    for (const auto& s : *in.corpus) samples.emplace(s.sample_id, &s);
    if (in.data) {
      std::set<std::string> seen;
      for (Index i = 0; i < in.data->size(); ++i) {
        const auto& m = in.data->meta[i];
        rows.emplace(std::make_pair(m.sample_id, Cell{m.ei, m.ri}), i);
        if (samples.count(m.sample_id) && seen.insert(m.sample_id).second) order.push_back(m.sample_id);
      }
    } else {
      for (const auto& s : *in.corpus) order.push_back(s.sample_id);
    }
  }

  std::optional<Index> row(const std::string& id, Cell c) const {
    auto it = rows.find({id, c});
    if (it == rows.end()) return std::nullopt;
    return it->second;
  }
};

std::vector<std::string> choose_samples(const std::vector<std::string>& pool, int n, std::uint64_t seed,
                                        const char* what) {
  if (pool.empty()) throw ValidationError(ErrorCode::usage, std::string(what) + ": no samples with activations");
  std::size_t k = static_cast<std::size_t>(std::max(n, 0));
  if (k > pool.size()) {
    warn(std::string(what) + ": requested " + std::to_string(k) + " samples, only " + std::to_string(pool.size()) +
         " available");
    k = pool.size();
  }
  Rng rng = Rng::stream(seed, hash_name(what));
  auto idx = rng.sample_without_replacement(pool.size(), k);
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> out;
  for (auto i : idx) out.push_back(pool[i]);
  return out;
}

std::vector<std::string> all_attributes(const RelationalTable& t) {
  std::vector<std::string> out;
  for (int i = 0; i < kCellCount; ++i) out.push_back(t.attribute(Cell::from_flat(i)));
  return out;
}

std::vector<Cell> present_cells(const CorpusSample& s) {
  std::vector<Cell> cells;
  for (const auto& a : s.discourse.annotations) cells.push_back(a.cell());
  std::sort(cells.begin(), cells.end());
  return cells;
}

std::optional<Span> token_range_of(const Manifest* manifest, const std::string& id, Cell c) {
  if (!manifest) return std::nullopt;
  auto it = manifest->find(id);
  if (it == manifest->end()) return std::nullopt;
  for (const auto& t : it->second.token_spans) {
    if (t.ei == c.ei && t.ri == c.ri) return t.token_range;
  }
  return std::nullopt;
}

std::optional<Span> char_span_of(const CorpusSample& s, Cell c) {
  for (const auto& a : s.discourse.annotations) {
    if (a.cell() == c) return a.span;
  }
  return std::nullopt;
}

PatchTarget attribute_target(const CorpusSample& s, Cell c, const Manifest* manifest, std::vector<int> layers,
                             int vector_ref) {
  PatchTarget t;
  t.sample_id = s.sample_id;
  t.site = Site::attribute;
  t.cell = c;
  t.token_range = token_range_of(manifest, s.sample_id, c);
  t.char_span = char_span_of(s, c);
  t.layers = std::move(layers);
  t.vector_ref = vector_ref;
  return t;
}

std::string make_id(const char* prefix, std::size_t n) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%06zu", prefix, n);
  return buf;
}

std::optional<QuerySpec> try_query(const CorpusSample& s, Cell target, std::uint64_t seed) {
  const auto present = present_cells(s);
  try {
    QuerySpec q = make_query(s.discourse.table, target, QueryKind::one_shot, seed, present);
    q.query_id = s.sample_id + "/" + target.label();
    return q;
  } catch (const ValidationError& e) {
    if (e.code() == ErrorCode::query) return std::nullopt;
    throw;
  }
}

}  // namespace

PlanSet plan_grid_sampling(const ProbeModel& probe, const ActivationDataset& box_data, const PlanInputs& in,
                           const GridOptions& opt) {
  if (probe.W.rows() < 2) throw ValidationError(ErrorCode::usage, "grid sampling needs a probe with k >= 2");
  if (opt.n_points < 1) throw ValidationError(ErrorCode::usage, "n_points must be positive");
  if (!in.data) throw ValidationError(ErrorCode::usage, "grid sampling needs target activations");
  const MatrixXd S = probe.project_rows(box_data.H).leftCols(2);
  if (S.rows() == 0) throw ValidationError("grid sampling needs projected training data");
  const Vector2d lo = S.colwise().minCoeff().transpose();
  const Vector2d hi = S.colwise().maxCoeff().transpose();
  if (!((hi - lo).array() > 0).all()) {
    throw ValidationError("projected training data span a degenerate box; cannot sample a grid");
  }

  PlanSet set;
  set.d = probe.d();
  Rng rng = Rng::stream(opt.seed, hash_name("grid-points"));
  set.points.resize(opt.n_points, 2);
  for (Index i = 0; i < opt.n_points; ++i) {
    set.points(i, 0) = rng.uniform(lo(0), hi(0));
    set.points(i, 1) = rng.uniform(lo(1), hi(1));
  }
  const std::array<int, 2> basis{set.add_vector(probe.W.row(0).transpose()),
                                 set.add_vector(probe.W.row(1).transpose())};

  Lookup look(in);
  for (const auto& id : choose_samples(look.order, opt.n_samples, opt.seed, "grid")) {
    const CorpusSample& s = *look.samples.at(id);
    for (const auto& a : s.discourse.annotations) {
      const auto row = look.row(id, a.cell());
      if (!row) continue;
      auto q = try_query(s, a.cell(), opt.seed ^ hash_name(id));
      if (!q) continue;
      PatchPlan p;
      p.plan_id = make_id("grid", set.plans.size());
      p.kind = PlanKind::grid_sample;
      p.alpha = opt.alpha;
      p.targets.push_back(attribute_target(s, a.cell(), in.manifest, {opt.layer}, -1));
      p.query = std::move(*q);
      p.answer_candidates = all_attributes(s.discourse.table);
      const VectorXd z = probe.project(in.data->H.row(*row).transpose());
      p.grid = GridSpec{basis, z.head<2>()};
      p.tags["context"] = std::string(to_string(s.discourse.table.context));
      set.plans.push_back(std::move(p));
    }
  }
  return set;
}

PlanSet plan_perturbation(const ProbeModel& probe, const MatrixXd& W_rand, const PlanInputs& in,
                          const PerturbOptions& opt) {
  if (!in.data) throw ValidationError(ErrorCode::usage, "perturbation plans need target activations");
  if (W_rand.rows() != probe.W.rows() || W_rand.cols() != probe.d()) {
    throw ValidationError(ErrorCode::dimension, "random projection must have the probe's k x d shape");
  }
  PlanSet set;
  set.d = probe.d();
  Lookup look(in);
  Rng rng = Rng::stream(opt.seed, hash_name("perturb-targets"));
  std::size_t counter = 0;
  for (const auto& id : choose_samples(look.order, opt.n_samples, opt.seed, "perturb")) {
    const CorpusSample& s = *look.samples.at(id);
    std::vector<Cell> candidates;
    for (const auto& a : s.discourse.annotations) {
      if (look.row(id, a.cell()) && try_query(s, a.cell(), 0)) candidates.push_back(a.cell());
    }
    if (candidates.empty()) continue;
    const Cell target = candidates[rng.below(candidates.size())];
    const QuerySpec query = *try_query(s, target, opt.seed ^ hash_name(id));
    for (double alpha : opt.alphas) {
      for (PlanKind kind : {PlanKind::perturb_cbr, PlanKind::perturb_random}) {
        const MatrixXd& lifting = kind == PlanKind::perturb_cbr ? probe.W : W_rand;
        PatchPlan p;
        p.plan_id = make_id(kind == PlanKind::perturb_cbr ? "perturb-cbr" : "perturb-rand", counter);
        p.kind = kind;
        p.alpha = alpha;
        for (const auto& a : s.discourse.annotations) {
          const auto row = look.row(id, a.cell());
          if (!row) continue;
          const VectorXd v = perturbation_vector(probe, lifting, in.data->H.row(*row).transpose(), alpha);
          p.targets.push_back(attribute_target(s, a.cell(), in.manifest, {opt.layer}, set.add_vector(v)));
        }
        p.query = query;
        p.answer_candidates = all_attributes(s.discourse.table);
        p.tags["context"] = std::string(to_string(s.discourse.table.context));
        set.plans.push_back(std::move(p));
      }
      ++counter;
    }
  }
  return set;
}

SteeringVector steering_vector(const ProbeModel& probe, const ActivationDataset& data, Axis axis, int from_j,
                               int to_j) {
  if (std::abs(to_j - from_j) != 1) {
    throw ValidationError(ErrorCode::usage, "steering moves one index step (|to - from| = 1)");
  }
  const int limit = axis == Axis::ei ? kEntityCount : kRelationCount;
  if (from_j < 1 || from_j > limit || to_j < 1 || to_j > limit) {
    throw ValidationError(ErrorCode::out_of_range, "steering index outside 1.." + std::to_string(limit));
  }
  std::map<std::pair<std::string, Cell>, Index> rows;
  for (Index i = 0; i < data.size(); ++i) rows.emplace(std::make_pair(data.meta[i].sample_id, Cell{data.meta[i].ei, data.meta[i].ri}), i);
  SteeringVector sv;
  sv.axis = axis;
  sv.from_j = from_j;
  sv.to_j = to_j;
  sv.s = VectorXd::Zero(probe.W.rows());
  for (const auto& [key, i] : rows) {
    const Cell c = key.second;
    if ((axis == Axis::ri ? c.ri : c.ei) != from_j) continue;
    const Cell partner = axis == Axis::ri ? Cell{c.ei, to_j} : Cell{to_j, c.ri};
    auto it = rows.find({key.first, partner});
    if (it == rows.end()) continue;
    sv.s += probe.project(data.H.row(it->second).transpose()) - probe.project(data.H.row(i).transpose());
    ++sv.n_pairs;
  }
  if (sv.n_pairs == 0) {
    throw ValidationError(ErrorCode::empty_cell, "no paired rows for " + std::string(to_string(axis)) + " " +
                                                     std::to_string(from_j) + " -> " + std::to_string(to_j));
  }
  sv.s /= static_cast<double>(sv.n_pairs);
  return sv;
}

std::vector<double> default_steering_alphas() {
  std::vector<double> out;
  for (int i = 4; i <= 16; ++i) out.push_back(i / 10.0);
  return out;
}

PlanSet plan_steering(const ProbeModel& probe, const SteeringVector& sv, const PlanInputs& in,
                      const SteerOptions& opt) {
  if (sv.s.size() != probe.W.rows()) {
    throw ValidationError(ErrorCode::dimension, "steering vector has k=" + std::to_string(sv.s.size()) +
                                                    ", probe has k=" + std::to_string(probe.W.rows()));
  }
  if (opt.first_layer > opt.last_layer) throw ValidationError(ErrorCode::usage, "empty steering layer range");
  const Site site = opt.site.value_or(sv.axis == Axis::ri ? Site::query_exemplar : Site::query_entity);
  const std::vector<double> alphas = opt.alphas.empty() ? default_steering_alphas() : opt.alphas;
  std::vector<int> layers;
  for (int l = opt.first_layer; l <= opt.last_layer; ++l) layers.push_back(l);

  PlanSet set;
  set.d = probe.d();
  PlanInputs no_data = in;
  no_data.data = nullptr;
  Lookup look(in.data ? in : no_data);
  Rng rng = Rng::stream(opt.seed, hash_name("steer-targets"));
  std::size_t counter = 0;

  struct Instance {
    const CorpusSample* sample;
    QuerySpec query;
    Cell expected;
  };
  std::vector<Instance> instances;
  for (const auto& id : choose_samples(look.order, opt.n_samples, opt.seed, "steer")) {
    const CorpusSample& s = *look.samples.at(id);
    const auto present = present_cells(s);
    std::vector<std::pair<Cell, Cell>> options;  // (target, expected)
    for (Cell c : present) {
      if ((sv.axis == Axis::ri ? c.ri : c.ei) != sv.from_j) continue;
      const Cell expected = sv.axis == Axis::ri ? Cell{c.ei, sv.to_j} : Cell{sv.to_j, c.ri};
      if (!std::binary_search(present.begin(), present.end(), expected)) continue;
      if (!try_query(s, c, 0)) continue;
      options.emplace_back(c, expected);
    }
    if (options.empty()) continue;
    const auto [target, expected] = options[rng.below(options.size())];
    instances.push_back({&s, *try_query(s, target, opt.seed ^ hash_name(id)), expected});
  }
  if (instances.empty()) throw ValidationError(ErrorCode::query, "no sample supports the requested steering step");

  for (double alpha : alphas) {
    const int ref = set.add_vector(alpha * probe.lift(sv.s));
    for (const auto& inst : instances) {
      const CorpusSample& s = *inst.sample;
      auto make_target = [&](std::vector<int> ls) {
        PatchTarget t;
        t.sample_id = s.sample_id;
        t.site = site;
        t.layers = std::move(ls);
        t.vector_ref = ref;
        switch (site) {
          case Site::query_exemplar: t.char_span = inst.query.exemplar_span; break;
          case Site::query_entity: t.char_span = inst.query.entity_span; break;
          case Site::attribute: {
            const Cell c = sv.axis == Axis::ri ? inst.query.exemplar->cell : inst.query.target;
            t.cell = c;
            t.char_span = char_span_of(s, c);
            t.token_range = token_range_of(in.manifest, s.sample_id, c);
            break;
          }
          case Site::last_token: break;
        }
        return t;
      };
      auto make_plan = [&](std::vector<int> ls, const std::string& layer_tag) {
        PatchPlan p;
        p.plan_id = make_id("steer", counter++);
        p.kind = PlanKind::steer;
        p.alpha = alpha;
        p.targets.push_back(make_target(std::move(ls)));
        p.query = inst.query;
        p.answer_candidates = all_attributes(s.discourse.table);
        p.expected_answer = s.discourse.table.attribute(inst.expected);
        p.tags["context"] = std::string(to_string(s.discourse.table.context));
        p.tags["axis"] = std::string(to_string(sv.axis));
        p.tags["from"] = std::to_string(sv.from_j);
        p.tags["to"] = std::to_string(sv.to_j);
        p.tags["layers"] = layer_tag;
        set.plans.push_back(std::move(p));
      };
      if (opt.per_layer) {
        for (int l : layers) make_plan({l}, std::to_string(l));
      } else {
        make_plan(layers, std::to_string(opt.first_layer) + "-" + std::to_string(opt.last_layer));
      }
    }
  }
  return set;
}

namespace {

struct HeadInstance {
  const CorpusSample* sample;
  QuerySpec query;
};

std::vector<HeadInstance> head_instances(const std::vector<CorpusSample>& corpus, const HeadOptions& opt) {
  std::vector<std::string> pool;
  std::map<std::string, const CorpusSample*> by_id;
  for (const auto& s : corpus) {
    if (s.discourse.pattern.is_base() && s.discourse.variant.kind == VariantTag::Kind::none) {
      pool.push_back(s.sample_id);
      by_id[s.sample_id] = &s;
    }
  }
  if (pool.empty()) {
    throw ValidationError(ErrorCode::unsupported, "head analysis needs unperturbed base-pattern samples");
  }
  Rng rng = Rng::stream(opt.seed, hash_name("head-targets"));
  std::vector<HeadInstance> out;
  for (const auto& id : choose_samples(pool, opt.n_instances, opt.seed, "heads")) {
    const CorpusSample& s = *by_id.at(id);
    const Cell target{static_cast<int>(rng.below(kEntityCount)) + 1, static_cast<int>(rng.below(2)) + 1};
    auto q = try_query(s, target, opt.seed ^ hash_name(id));
    if (q) out.push_back({&s, std::move(*q)});
  }
  return out;
}

void check_heads(const std::vector<HeadRef>& heads, const HeadOptions& opt) {
  for (const auto& h : heads) {
    if (h.layer < 0 || h.layer >= opt.n_layers || h.head < 0 || h.head >= opt.n_heads) {
      throw ValidationError(ErrorCode::out_of_range, "head (" + std::to_string(h.layer) + ", " +
                                                         std::to_string(h.head) + ") outside " +
                                                         std::to_string(opt.n_layers) + " x " +
                                                         std::to_string(opt.n_heads));
    }
  }
}

PatchTarget last_token_target(const CorpusSample& s, std::vector<int> layers) {
  PatchTarget t;
  t.sample_id = s.sample_id;
  t.site = Site::last_token;
  t.layers = std::move(layers);
  return t;
}

}  // namespace

PlanSet plan_head_patching(const std::vector<CorpusSample>& corpus, const HeadOptions& opt) {
  if (opt.n_layers < 1 || opt.n_heads < 1) throw ValidationError(ErrorCode::usage, "need positive layer/head counts");
  std::vector<HeadRef> heads;
  for (int l = 0; l < opt.n_layers; ++l) {
    for (int h = 0; h < opt.n_heads; ++h) heads.push_back({l, h});
  }
  PlanSet set;
  for (const auto& inst : head_instances(corpus, opt)) {
    const Counterfactual cf = make_counterfactual(inst.sample->discourse, inst.query);
    PatchPlan p;
    p.plan_id = make_id("head-patch", set.plans.size());
    p.kind = PlanKind::head_patch;
    p.alpha = 1.0;
    std::vector<int> layers(static_cast<std::size_t>(opt.n_layers));
    for (int l = 0; l < opt.n_layers; ++l) layers[static_cast<std::size_t>(l)] = l;
    p.targets.push_back(last_token_target(*inst.sample, std::move(layers)));
    p.query = inst.query;
    p.answer_candidates = all_attributes(inst.sample->discourse.table);
    p.heads = heads;
    p.donor = Donor{cf.discourse.text, cf.query};
    p.tags["context"] = std::string(to_string(inst.sample->discourse.table.context));
    p.tags["n_layers"] = std::to_string(opt.n_layers);
    p.tags["n_heads"] = std::to_string(opt.n_heads);
    set.plans.push_back(std::move(p));
  }
  return set;
}

PlanSet plan_head_ablation(const std::vector<CorpusSample>& corpus, const std::vector<HeadRef>& ranking,
                           const std::vector<int>& ms, const HeadOptions& opt) {
  check_heads(ranking, opt);
  const auto instances = head_instances(corpus, opt);
  PlanSet set;
  const auto total = static_cast<std::size_t>(opt.n_layers) * static_cast<std::size_t>(opt.n_heads);
  for (int m : ms) {
    if (m < 0 || static_cast<std::size_t>(m) > ranking.size() || static_cast<std::size_t>(m) > total) {
      throw ValidationError(ErrorCode::out_of_range, "m=" + std::to_string(m) + " exceeds the " +
                                                         std::to_string(ranking.size()) + " ranked heads");
    }
    Rng rng = Rng::stream(opt.seed, hash_name("random-heads") ^ static_cast<std::uint64_t>(m));
    std::vector<HeadRef> random_heads;
    for (auto i : rng.sample_without_replacement(total, static_cast<std::size_t>(m))) {
      random_heads.push_back({static_cast<int>(i / static_cast<std::size_t>(opt.n_heads)),
                              static_cast<int>(i % static_cast<std::size_t>(opt.n_heads))});
    }
    std::sort(random_heads.begin(), random_heads.end());
    const std::vector<HeadRef> ranked(ranking.begin(), ranking.begin() + m);
    for (bool random : {false, true}) {
      for (const auto& inst : instances) {
        PatchPlan p;
        p.plan_id = make_id(random ? "ablate-rand" : "ablate-top", set.plans.size());
        p.kind = PlanKind::head_mean_ablate;
        p.alpha = 1.0;
        std::set<int> layer_set;
        for (const auto& h : random ? random_heads : ranked) layer_set.insert(h.layer);
        p.targets.push_back(last_token_target(*inst.sample, {layer_set.begin(), layer_set.end()}));
        p.query = inst.query;
        p.answer_candidates = all_attributes(inst.sample->discourse.table);
        p.heads = random ? random_heads : ranked;
        p.tags["m"] = std::to_string(m);
        p.tags["control"] = random ? "random" : "ranked";
        p.tags["context"] = std::string(to_string(inst.sample->discourse.table.context));
        set.plans.push_back(std::move(p));
      }
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Result checks

std::vector<std::string> before_value_mismatches(const std::vector<InterventionResult>& results, double tol) {
  struct Before {
    double original;
    std::optional<double> expected;
  };
  std::map<std::string, Before> first;
  std::set<std::string> bad;
  for (const auto& r : results) {
    auto [it, fresh] = first.try_emplace(r.query_id, Before{r.logit_original_before, r.logit_expected_before});
    if (fresh) continue;
    if (std::abs(it->second.original - r.logit_original_before) > tol) bad.insert(r.query_id);
    if (it->second.expected && r.logit_expected_before &&
        std::abs(*it->second.expected - *r.logit_expected_before) > tol) {
      bad.insert(r.query_id);
    }
    if (!it->second.expected && r.logit_expected_before) it->second.expected = r.logit_expected_before;
  }
  return {bad.begin(), bad.end()};
}

// ---------------------------------------------------------------------------
// Landscape

GridAccumulator::GridAccumulator(const MatrixXd& points)
    : points_(points), sum_(MatrixXd::Zero(points.rows(), kCellCount)),
      count_(MatrixXd::Zero(points.rows(), kCellCount)) {}

void GridAccumulator::add(Index point, int flat_cell, double logit) {
  sum_(point, flat_cell) += logit;
  count_(point, flat_cell) += 1.0;
}

void GridAccumulator::add_row(Index point, const Eigen::Matrix<double, 1, kCellCount>& logits) {
  sum_.row(point) += logits;
  count_.row(point).array() += 1.0;
}

bool is_unimodal(const std::vector<double>& v, double tolerance) {
  if (v.size() < 3) return true;
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double slack = tolerance * (*mx - *mn);
  const std::size_t peak = static_cast<std::size_t>(mx - v.begin());
  for (std::size_t i = 1; i <= peak; ++i) {
    if (v[i] < v[i - 1] - slack) return false;
  }
  for (std::size_t i = peak + 1; i < v.size(); ++i) {
    if (v[i] > v[i - 1] + slack) return false;
  }
  return true;
}

LogitLandscape GridAccumulator::finish(int bins, double tolerance) const {
  LogitLandscape out;
  out.points = points_;
  const Index n = points_.rows();
  out.logits = MatrixXd::Constant(n, kCellCount, std::numeric_limits<double>::quiet_NaN());
  out.argmax.assign(static_cast<std::size_t>(n), -1);
  for (Index i = 0; i < n; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < kCellCount; ++c) {
      if (count_(i, c) == 0) continue;
      const double v = sum_(i, c) / count_(i, c);
      out.logits(i, c) = v;
      if (v > best) {  // strict: ties keep the lowest cell
        best = v;
        out.argmax[static_cast<std::size_t>(i)] = c;
      }
    }
  }

  // Directions along which the argmax ei and ri labels grow fastest.
  MatrixXd A(n, 3);
  Eigen::VectorXd yei(n), yri(n);
  Index m = 0;
  for (Index i = 0; i < n; ++i) {
    const int c = out.argmax[static_cast<std::size_t>(i)];
    if (c < 0) continue;
    A.row(m) << 1.0, points_(i, 0), points_(i, 1);
    yei(m) = Cell::from_flat(c).ei;
    yri(m) = Cell::from_flat(c).ri;
    ++m;
  }
  if (m >= 3) {
    const auto solver = A.topRows(m).colPivHouseholderQr();
    const Eigen::Vector3d bei = solver.solve(yei.head(m));
    const Eigen::Vector3d bri = solver.solve(yri.head(m));
    out.ei_direction = bei.tail<2>();
    out.ri_direction = bri.tail<2>();
    if (out.ei_direction.norm() > 0) out.ei_direction.normalize();
    if (out.ri_direction.norm() > 0) out.ri_direction.normalize();
  }

  for (int c = 0; c < kCellCount; ++c) {
    if (!(count_.col(c).array() > 0).any()) continue;
    const Index pk = out.peak(Cell::from_flat(c));
    for (Axis axis : {Axis::ei, Axis::ri}) {
      const Vector2d u = axis == Axis::ei ? out.ei_direction : out.ri_direction;
      if (u.norm() == 0) continue;
      const Vector2d nrm(-u(1), u(0));
      const Vector2d p0 = points_.row(pk).transpose();
      Eigen::VectorXd along = (points_.rowwise() - p0.transpose()) * u;
      Eigen::VectorXd across = (points_.rowwise() - p0.transpose()) * nrm;
      const double band = (across.maxCoeff() - across.minCoeff()) / 40.0;
      const double lo = along.minCoeff();
      const double hi = along.maxCoeff();
      if (!(hi > lo)) continue;
      std::vector<double> sum(static_cast<std::size_t>(bins), 0.0), cnt(static_cast<std::size_t>(bins), 0.0);
      for (Index i = 0; i < n; ++i) {
        if (std::abs(across(i)) > band || std::isnan(out.logits(i, c))) continue;
        auto b = static_cast<int>((along(i) - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        sum[static_cast<std::size_t>(b)] += out.logits(i, c);
        cnt[static_cast<std::size_t>(b)] += 1.0;
      }
      CrossSection cs;
      cs.cell = Cell::from_flat(c);
      cs.axis = axis;
      for (int b = 0; b < bins; ++b) {
        if (cnt[static_cast<std::size_t>(b)] == 0) continue;
        cs.position.push_back(lo + (b + 0.5) * (hi - lo) / bins);
        cs.logit.push_back(sum[static_cast<std::size_t>(b)] / cnt[static_cast<std::size_t>(b)]);
      }
      cs.unimodal = is_unimodal(cs.logit, tolerance);
      out.sections.push_back(std::move(cs));
    }
  }
  return out;
}

int LogitLandscape::occupied_cells() const {
  std::set<int> cells(argmax.begin(), argmax.end());
  cells.erase(-1);
  return static_cast<int>(cells.size());
}

Index LogitLandscape::peak(Cell cell) const {
  Index best = -1;
  double v = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < logits.rows(); ++i) {
    const double x = logits(i, cell.flat());
    if (!std::isnan(x) && x > v) {
      v = x;
      best = i;
    }
  }
  return best;
}

std::string LogitLandscape::to_csv() const {
  std::ostringstream out;
  out << "point,x,y,argmax_ei,argmax_ri";
  for (int c = 0; c < kCellCount; ++c) out << ",logit_" << Cell::from_flat(c).label();
  out << "\n";
  char buf[32];
  for (Index i = 0; i < points.rows(); ++i) {
    const int a = argmax[static_cast<std::size_t>(i)];
    out << i;
    std::snprintf(buf, sizeof buf, ",%.6g,%.6g", points(i, 0), points(i, 1));
    out << buf;
    if (a >= 0) {
      out << "," << Cell::from_flat(a).ei << "," << Cell::from_flat(a).ri;
    } else {
      out << ",NA,NA";
    }
    for (int c = 0; c < kCellCount; ++c) {
      if (std::isnan(logits(i, c))) {
        out << ",NA";
      } else {
        std::snprintf(buf, sizeof buf, ",%.6g", logits(i, c));
        out << buf;
      }
    }
    out << "\n";
  }
  return out.str();
}

std::string LogitLandscape::sections_csv() const {
  std::ostringstream out;
  out << "cell,axis,position,logit,unimodal\n";
  char buf[64];
  for (const auto& s : sections) {
    for (std::size_t i = 0; i < s.position.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.6g,%.6g", s.position[i], s.logit[i]);
      out << s.cell.label() << "," << to_string(s.axis) << "," << buf << "," << (s.unimodal ? 1 : 0) << "\n";
    }
  }
  return out.str();
}

LogitLandscape eval_grid(const std::vector<InterventionResult>& results, const PlanSet& plans) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < plans.plans.size(); ++i) {
    if (plans.plans[i].kind == PlanKind::grid_sample) index.emplace(plans.plans[i].plan_id, i);
  }
  if (index.empty()) throw ValidationError(ErrorCode::usage, "plan set has no grid plans");
  const Index n = plans.points.rows();
  GridAccumulator acc(plans.points);
  std::vector<char> seen(index.size() * static_cast<std::size_t>(n), 0);
  std::map<std::size_t, std::size_t> slot;
  for (const auto& [id, i] : index) slot.emplace(i, slot.size());
  for (const auto& r : results) {
    auto it = index.find(r.plan_id);
    if (it == index.end() || !r.point) continue;
    if (*r.point < 0 || *r.point >= n) throw ValidationError(ErrorCode::out_of_range, "result point out of range");
    const PatchPlan& p = plans.plans[it->second];
    for (std::size_t c = 0; c < p.answer_candidates.size() && c < static_cast<std::size_t>(kCellCount); ++c) {
      auto lit = r.candidate_logits.find(p.answer_candidates[c]);
      if (lit != r.candidate_logits.end()) acc.add(*r.point, static_cast<int>(c), lit->second);
    }
    seen[slot.at(it->second) * static_cast<std::size_t>(n) + static_cast<std::size_t>(*r.point)] = 1;
  }
  std::vector<std::string> missing;
  std::size_t n_missing = 0;
  for (const auto& [id, i] : index) {
    for (Index j = 0; j < n; ++j) {
      if (!seen[slot.at(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)]) {
        if (missing.size() < 10) missing.push_back(id + "@" + std::to_string(j));
        ++n_missing;
      }
    }
  }
  if (n_missing > 0) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ValidationError(ErrorCode::assembly,
                          std::to_string(n_missing) + " grid points lack results, e.g. " + list);
  }
  return acc.finish();
}

// ---------------------------------------------------------------------------
// Curves and tables

namespace {

std::map<std::string, const PatchPlan*> plan_index(const PlanSet& plans) {
  std::map<std::string, const PatchPlan*> out;
  for (const auto& p : plans.plans) out.emplace(p.plan_id, &p);
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::vector<AccuracyPoint> eval_perturbation(const std::vector<InterventionResult>& results, const PlanSet& plans) {
  const auto idx = plan_index(plans);
  std::map<std::pair<int, double>, std::pair<std::size_t, std::size_t>> groups;
  for (const auto& r : results) {
    auto it = idx.find(r.plan_id);
    if (it == idx.end()) continue;
    const PlanKind k = it->second->kind;
    if (k != PlanKind::perturb_cbr && k != PlanKind::perturb_random) continue;
    auto& g = groups[{static_cast<int>(k), it->second->alpha}];
    ++g.second;
    if (r.correct) ++g.first;
  }
  if (groups.empty()) throw ValidationError(ErrorCode::empty_cell, "no perturbation results to evaluate");
  std::vector<AccuracyPoint> out;
  for (const auto& [key, g] : groups) {
    out.push_back({static_cast<PlanKind>(key.first), key.second,
                   static_cast<double>(g.first) / static_cast<double>(g.second), g.second});
  }
  std::stable_sort(out.begin(), out.end(), [](const AccuracyPoint& a, const AccuracyPoint& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    return std::abs(a.alpha) < std::abs(b.alpha);
  });
  return out;
}

std::string accuracy_csv(const std::vector<AccuracyPoint>& curve) {
  std::string out = "kind,alpha,accuracy,n\n";
  for (const auto& p : curve) {
    out += std::string(to_string(p.kind)) + "," + num(p.alpha) + "," + num(p.accuracy) + "," + std::to_string(p.n) + "\n";
  }
  return out;
}

std::vector<SteeringRow> eval_steering(const std::vector<InterventionResult>& results, const PlanSet& plans) {
  const auto idx = plan_index(plans);
  std::map<std::pair<std::string, double>, SteeringRow> groups;
  std::map<std::pair<std::string, double>, std::size_t> flips;
  for (const auto& r : results) {
    auto it = idx.find(r.plan_id);
    if (it == idx.end() || it->second->kind != PlanKind::steer) continue;
    if (!r.logit_expected_before || !r.logit_expected_after) {
      throw ValidationError("steering result for '" + r.plan_id + "' lacks expected-answer logits");
    }
    const std::string ctx = it->second->tags.count("context") ? it->second->tags.at("context") : "";
    auto& row = groups[{ctx, it->second->alpha}];
    row.context = ctx;
    row.alpha = it->second->alpha;
    row.original_before += r.logit_original_before;
    row.original_after += r.logit_original_after;
    row.expected_before += *r.logit_expected_before;
    row.expected_after += *r.logit_expected_after;
    ++row.n;
    if (*r.logit_expected_after > r.logit_original_after) ++flips[{ctx, it->second->alpha}];
  }
  std::vector<SteeringRow> out;
  for (auto& [key, row] : groups) {
    const auto n = static_cast<double>(row.n);
    row.original_before /= n;
    row.original_after /= n;
    row.expected_before /= n;
    row.expected_after /= n;
    row.flip_rate = static_cast<double>(flips[key]) / n;
    out.push_back(row);
  }
  return out;
}

std::string steering_csv(const std::vector<SteeringRow>& rows) {
  std::string out = "context,alpha,original_before,original_after,expected_before,expected_after,flip_rate,n\n";
  for (const auto& r : rows) {
    out += r.context + "," + num(r.alpha) + "," + num(r.original_before) + "," + num(r.original_after) + "," +
           num(r.expected_before) + "," + num(r.expected_after) + "," + num(r.flip_rate) + "," + std::to_string(r.n) +
           "\n";
  }
  return out;
}

std::vector<SteeringRow> best_alpha(const std::vector<SteeringRow>& rows) {
  std::map<std::string, SteeringRow> best;
  for (const auto& r : rows) {
    auto [it, fresh] = best.try_emplace(r.context, r);
    if (!fresh && r.flip_rate > it->second.flip_rate) it->second = r;
  }
  std::vector<SteeringRow> out;
  for (auto& [c, r] : best) out.push_back(r);
  return out;
}

double head_patch_score(double logit_org, double logit_patch) {
  if (logit_org == 0.0) {
    throw ValidationError(ErrorCode::undefined_score, "head patching score undefined when the original logit is 0");
  }
  return (logit_patch - logit_org) / logit_org;
}

HeadScores eval_heads(const std::vector<InterventionResult>& results, const PlanSet& plans) {
  const auto idx = plan_index(plans);
  HeadScores hs;
  for (const auto& p : plans.plans) {
    if (p.kind != PlanKind::head_patch) continue;
    for (const auto& h : p.heads) {
      hs.n_layers = std::max(hs.n_layers, h.layer + 1);
      hs.n_heads = std::max(hs.n_heads, h.head + 1);
    }
  }
  if (hs.n_layers == 0) throw ValidationError(ErrorCode::usage, "plan set has no head_patch plans");
  hs.mean = MatrixXd::Zero(hs.n_layers, hs.n_heads);
  hs.count = Eigen::MatrixXi::Zero(hs.n_layers, hs.n_heads);
  std::size_t undefined = 0;
  for (const auto& r : results) {
    auto it = idx.find(r.plan_id);
    if (it == idx.end() || it->second->kind != PlanKind::head_patch || !r.head) continue;
    if (r.head->layer < 0 || r.head->layer >= hs.n_layers || r.head->head < 0 || r.head->head >= hs.n_heads) {
      throw ValidationError(ErrorCode::out_of_range, "result names a head outside the plan grid");
    }
    if (r.logit_original_before == 0.0) {
      ++undefined;
      continue;
    }
    hs.mean(r.head->layer, r.head->head) += head_patch_score(r.logit_original_before, r.logit_original_after);
    ++hs.count(r.head->layer, r.head->head);
  }
  if (undefined > 0) warn(std::to_string(undefined) + " head results skipped: original logit 0, score undefined");
  for (int l = 0; l < hs.n_layers; ++l) {
    for (int h = 0; h < hs.n_heads; ++h) {
      if (hs.count(l, h) > 0) {
        hs.mean(l, h) /= hs.count(l, h);
        hs.ranking.push_back({l, h});
      }
    }
  }
  std::stable_sort(hs.ranking.begin(), hs.ranking.end(), [&](const HeadRef& a, const HeadRef& b) {
    return std::abs(hs.mean(a.layer, a.head)) > std::abs(hs.mean(b.layer, b.head));
  });
  return hs;
}

std::string HeadScores::to_csv() const {
  std::string out = "layer,head,score,n\n";
  for (int l = 0; l < n_layers; ++l) {
    for (int h = 0; h < n_heads; ++h) {
      out += std::to_string(l) + "," + std::to_string(h) + "," + (count(l, h) ? num(mean(l, h)) : "NA") + "," +
             std::to_string(count(l, h)) + "\n";
    }
  }
  return out;
}

std::vector<AblationPoint> eval_head_ablation(const std::vector<InterventionResult>& results, const PlanSet& plans) {
  const auto idx = plan_index(plans);
  std::map<std::pair<int, bool>, std::pair<std::size_t, std::size_t>> groups;
  for (const auto& r : results) {
    auto it = idx.find(r.plan_id);
    if (it == idx.end() || it->second->kind != PlanKind::head_mean_ablate) continue;
    const auto& tags = it->second->tags;
    const int m = tags.count("m") ? std::stoi(tags.at("m")) : static_cast<int>(it->second->heads.size());
    const bool random = tags.count("control") && tags.at("control") == "random";
    auto& g = groups[{m, random}];
    ++g.second;
    if (r.correct) ++g.first;
  }
  std::vector<AblationPoint> out;
  for (const auto& [key, g] : groups) {
    out.push_back({key.first, key.second, static_cast<double>(g.first) / static_cast<double>(g.second), g.second});
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationPoint>& rows) {
  std::string out = "m,control,accuracy,n\n";
  for (const auto& r : rows) {
    out += std::to_string(r.m) + "," + (r.random ? "random" : "ranked") + "," + num(r.accuracy) + "," +
           std::to_string(r.n) + "\n";
  }
  return out;
}

}  // namespace cbr
