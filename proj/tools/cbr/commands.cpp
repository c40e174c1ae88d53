#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "args.hpp"
#include "cbr/corpus_io.hpp"
#include "cbr/error.hpp"
#include "cbr/intervene.hpp"
#include "cbr/log.hpp"
#include "cbr/oracle.hpp"
#include "cbr/schema.hpp"
#include "cbr/subspace.hpp"
#include "cbr/tensorstore.hpp"
#include "cbr/transfer.hpp"

namespace cbr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void need(const std::string& value, const char* flag, const char* command) {
  if (value.empty()) throw ValidationError(ErrorCode::usage, std::string(command) + " needs " + flag);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write to '" + path + "' failed");
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json r2_json(const R2& r) {
  return json{{"ei", opt_json(r.per_target[0])}, {"ri", opt_json(r.per_target[1])}, {"avg", opt_json(r.averaged)}};
}

std::vector<Context> contexts_of(const Options& o) {
  std::vector<Context> out;
  for (const auto& c : split_list(o.contexts)) out.push_back(parse_context(c));
  if (out.empty()) throw ValidationError(ErrorCode::usage, "--context is empty");
  return out;
}

/// Corpus/manifest pairs merged into one corpus and one manifest with
/// absolute activation paths.
struct Inputs {
  std::vector<CorpusSample> corpus;
  Manifest manifest;
};

Inputs load_inputs(const Options& o, const char* command, bool need_activations = true) {
  if (o.corpus.empty()) throw ValidationError(ErrorCode::usage, std::string(command) + " needs --corpus");
  if (need_activations && o.activations.size() != o.corpus.size()) {
    throw ValidationError(ErrorCode::usage, std::string(command) + " needs one --activations manifest per --corpus (got " +
                                                std::to_string(o.activations.size()) + " for " +
                                                std::to_string(o.corpus.size()) + ")");
  }
  Inputs in;
  for (std::size_t i = 0; i < o.corpus.size(); ++i) {
    auto part = read_corpus(o.corpus[i]);
    in.corpus.insert(in.corpus.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    if (i >= o.activations.size()) continue;
    const fs::path base = fs::absolute(fs::path(o.activations[i])).parent_path();
    for (auto& [id, entry] : read_manifest(o.activations[i])) {
      if (fs::path(entry.file).is_relative()) entry.file = (base / entry.file).string();
      if (!in.manifest.emplace(id, std::move(entry)).second) {
        throw ValidationError("sample '" + id + "' appears in more than one manifest");
      }
    }
  }
  std::set<std::string> ids;
  for (const auto& s : in.corpus) {
    if (!ids.insert(s.sample_id).second) throw ValidationError("sample '" + s.sample_id + "' appears twice in the corpora");
  }
  return in;
}

AssembleOptions assemble_options(const Options& o) {
  AssembleOptions a;
  a.layer = o.layer;
  a.pooling = parse_pooling(o.pooling);
  return a;
}

ActivationDataset load_design(const Options& o, const Inputs& in) {
  return assemble_design(in.corpus, in.manifest, assemble_options(o));
}

std::vector<ProbeMethod> methods_of(const Options& o) {
  std::vector<ProbeMethod> out;
  for (const auto& m : split_list(o.method)) out.push_back(parse_probe_method(m));
  if (out.empty()) throw ValidationError(ErrorCode::usage, "--method is empty");
  return out;
}

int single_int(const std::optional<std::string>& text, int fallback, const char* flag) {
  if (!text) return fallback;
  const auto v = parse_int_list(*text);
  if (v.size() != 1) throw ValidationError(ErrorCode::usage, std::string(flag) + " takes a single value here");
  return v.front();
}

/// Condition label of a sample: context, plus pattern and variant when set.
std::string condition_of(const CorpusSample& s) {
  std::string name(to_string(s.discourse.table.context));
  if (!s.discourse.pattern.is_base()) name += "/p" + s.discourse.pattern.name();
  if (s.discourse.variant.kind != VariantTag::Kind::none) name += "/" + s.discourse.variant.name();
  return name;
}

std::map<std::string, ActivationDataset> split_conditions(const ActivationDataset& data, const Inputs& in) {
  std::map<std::string, std::string> cond;
  for (const auto& s : in.corpus) cond[s.sample_id] = condition_of(s);
  std::map<std::string, std::vector<Eigen::Index>> rows;
  for (Eigen::Index i = 0; i < data.size(); ++i) rows[cond.at(data.meta[static_cast<std::size_t>(i)].sample_id)].push_back(i);
  std::map<std::string, ActivationDataset> out;
  for (const auto& [name, r] : rows) out[name] = data.subset(r);
  return out;
}

ProbeModel load_probe_for(const Options& o, const char* command) {
  need(o.probe, "--probe", command);
  ProbeModel m = load_probe(o.probe);
  if (m.layer >= 0 && m.layer != o.layer) {
    warn("probe was fitted at layer " + std::to_string(m.layer) + ", activations are read at layer " +
         std::to_string(o.layer));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Results, from a file or from the oracle

struct Evaluated {
  PlanSet plans;
  std::vector<InterventionResult> results;
  std::optional<LogitLandscape> landscape;  // oracle fast path for grid plans
};

bool has_kind(const PlanSet& p, std::initializer_list<PlanKind> kinds) {
  for (const auto& plan : p.plans) {
    if (std::find(kinds.begin(), kinds.end(), plan.kind) != kinds.end()) return true;
  }
  return false;
}

Evaluated evaluate(const Options& o, const char* command, bool want_results) {
  need(o.plan, "--plan", command);
  Evaluated ev;
  ev.plans = load_plan_set(o.plan);
  if (o.oracle.empty()) {
    need(o.results, "--results (or --oracle)", command);
    ev.results = read_results(o.results);
    const auto bad = before_value_mismatches(ev.results, 1e-6);
    if (!bad.empty()) {
      warn(std::to_string(bad.size()) + " queries report different baseline logits across plans, e.g. '" + bad.front() + "'");
    }
    return ev;
  }
  const PlantSpec spec = load_plant((fs::path(o.oracle) / "plant.json").string());
  const SynthOutput data = read_synth(o.oracle, {o.layer});
  const OracleWorld world{&spec, &data, o.layer};
  const bool grid_only = !has_kind(ev.plans, {PlanKind::perturb_cbr, PlanKind::perturb_random, PlanKind::steer,
                                              PlanKind::head_patch, PlanKind::head_mean_ablate});
  if (grid_only && o.results.empty() && !want_results) {
    ev.landscape = oracle_grid_landscape(ev.plans, world);
    return ev;
  }
  ev.results = oracle_execute(ev.plans, world);
  if (!o.results.empty()) write_results(o.results, ev.results);
  return ev;
}

LogitLandscape landscape_of(const Evaluated& ev) {
  return ev.landscape ? *ev.landscape : eval_grid(ev.results, ev.plans);
}

std::vector<HeadRef> read_ranking(const std::string& path, const HeadOptions& h) {
  const Table t = parse_csv(slurp(path));
  const int cl = t.column("layer"), ch = t.column("head"), cs = t.column("score");
  if (cl < 0 || ch < 0 || cs < 0) throw FormatError("'" + path + "': head ranking needs layer,head,score columns");
  std::vector<std::pair<double, HeadRef>> scored;
  for (const auto& r : t.rows) {
    if (r[static_cast<std::size_t>(cs)] == "NA") continue;
    try {
      scored.push_back({std::abs(std::stod(r[static_cast<std::size_t>(cs)])),
                        HeadRef{std::stoi(r[static_cast<std::size_t>(cl)]), std::stoi(r[static_cast<std::size_t>(ch)])}});
    } catch (const std::exception&) {
      throw FormatError("'" + path + "': non-numeric head score row");
    }
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<HeadRef> out;
  for (const auto& [s, ref] : scored) {
    if (ref.layer < h.n_layers && ref.head < h.n_heads) out.push_back(ref);
  }
  return out;
}

std::string matrix_csv(const Eigen::MatrixXd& M, const std::vector<std::string>& labels) {
  std::string out = "label";
  for (const auto& l : labels) out += "," + l;
  out += "\n";
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    out += labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < M.cols(); ++j) out += "," + (std::isnan(M(i, j)) ? std::string("NA") : num(M(i, j)));
    out += "\n";
  }
  return out;
}

ProbeModel with_control(ProbeModel m, const Options& o) {
  if (o.control == "random") {
    m.W = random_projection(m.d(), m.k, o.seed, m, false).W;
    m.orthonormal = false;
  } else if (o.control != "none" && o.control != "orthogonal") {
    throw ValidationError(ErrorCode::usage, "--control is none or random for projection reports");
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_gen_corpus(const Options& o) {
  need(o.out, "--out", "gen-corpus");
  InventorySet inv = o.inventories.empty() ? default_inventories() : load_inventories(o.inventories);
  if (!o.token_check.empty()) apply_token_check(inv, slurp(o.token_check));
  std::vector<CorpusSample> all;
  for (Context c : contexts_of(o)) {
    CorpusOptions co;
    co.context = c;
    co.n_samples = o.n.value_or(1000);
    co.seed = o.seed;
    co.pattern = PatternId::parse(o.pattern);
    co.variant = VariantTag::parse(o.variant);
    auto part = generate_corpus(co, inv);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  write_corpus(o.out, all);
  std::cerr << "wrote " << all.size() << " samples to " << o.out << "\n";
  return 0;
}

int cmd_synth(const Options& o) {
  need(o.out, "--out", "synth");
  PlantOptions po;
  po.d = o.d;
  po.scheme = parse_label_scheme(o.scheme);
  po.contexts = contexts_of(o);
  po.seed = o.seed;
  if (!o.semantic_groups.empty()) {
    std::stringstream ss(o.semantic_groups);
    std::string group;
    while (std::getline(ss, group, ';')) po.semantic_groups.push_back(parse_int_list(group));
  }
  PlantSpec spec = make_plant(po);
  const double sigma = o.noise ? *o.noise : sigma_for_snr(spec, po.peak_layer, o.snr);
  if (sigma < 0) throw ValidationError(ErrorCode::usage, "--noise must be non-negative");
  spec.noise_sigma = sigma;
  SynthOptions so;
  so.contexts = po.contexts;
  so.n_samples = o.n.value_or(100);
  so.pattern = PatternId::parse(o.pattern);
  so.variant = VariantTag::parse(o.variant);
  so.layers = parse_int_list(o.layers.value_or("15"));
  so.corpus_seed = o.seed;
  const SynthOutput out = synth_dataset(spec, so);
  write_synth(o.out, out);
  save_plant((fs::path(o.out) / "plant.json").string(), po, sigma);
  std::cerr << "wrote " << out.corpus.size() << " samples (" << out.by_layer.begin()->second.size()
            << " attribute rows per layer, sigma " << num(sigma) << ") to " << o.out << "\n";
  return 0;
}

int cmd_fit(const Options& o) {
  need(o.out, "--out", "fit");
  const Inputs in = load_inputs(o, "fit");
  const ActivationDataset data = load_design(o, in);
  const int k = single_int(o.k, 2, "--k");
  const ProbeMethod method = methods_of(o).front();
  if (o.eval_fraction < 0 || o.eval_fraction >= 1) throw ValidationError(ErrorCode::usage, "--eval-fraction must be in [0, 1)");
  ActivationDataset train = data, held;
  if (o.eval_fraction > 0) {
    const Split split = split_by_sample(data, 1.0 - o.eval_fraction, o.seed);
    train = data.subset(split.train);
    held = data.subset(split.eval);
  }
  ProbeModel m = fit_probe(method, train, k);
  if (o.basis == "orthonormal") {
    m = m.orthonormalized();
  } else if (o.basis != "rotations") {
    throw ValidationError(ErrorCode::usage, "--basis is rotations or orthonormal");
  }
  save_probe(o.out, m);
  json rep{{"probe", o.out},     {"layer", m.layer},         {"k", m.k},
           {"method", to_string(m.method)}, {"basis", o.basis}, {"n_train", train.size()},
           {"n_eval", held.size()}, {"fit_r2", r2_json(m.fit_r2)}};
  rep["eval_r2"] = held.size() > 0 ? r2_json(r2_score(held.Y, m.predict(held.H))) : json(nullptr);
  std::cout << rep.dump(1) << "\n";
  return 0;
}

int cmd_sweep(const Options& o) {
  const Inputs in = load_inputs(o, "sweep");
  SweepOptions sw;
  sw.layers = o.layers ? parse_int_list(*o.layers) : common_layers(in.manifest);
  sw.ks = parse_int_list(o.k.value_or("1-5"));
  sw.methods = methods_of(o);
  sw.random_labels = !o.no_control;
  sw.seed = o.seed;
  if (o.eval_fraction <= 0 || o.eval_fraction >= 1) throw ValidationError(ErrorCode::usage, "--eval-fraction must be in (0, 1)");
  sw.train_fraction = 1.0 - o.eval_fraction;
  std::vector<int> available;
  const auto have = common_layers(in.manifest);
  for (int l : sw.layers) {
    if (std::find(have.begin(), have.end(), l) != have.end()) available.push_back(l);
  }
  const auto by_layer = assemble_layers(in.corpus, in.manifest, available, assemble_options(o));
  emit(sweep(by_layer, sw).to_csv(), o.out);
  return 0;
}

int cmd_transfer(const Options& o) {
  const Inputs in = load_inputs(o, "transfer");
  const auto sets = split_conditions(load_design(o, in), in);
  if (sets.size() < 2) throw ValidationError(ErrorCode::usage, "transfer needs at least two contexts or conditions");
  const int k = single_int(o.k, 15, "--k");
  const ProbeMethod method = methods_of(o).front();
  std::map<std::string, ProbeModel> probes;
  for (const auto& [name, ds] : sets) probes[name] = fit_probe(method, ds, k);
  const std::vector<std::string> modes = o.mode == "all" ? standard_transfer_modes() : split_list(o.mode);
  std::string csv;
  bool header = true;
  for (const auto& mode : modes) {
    csv += cross_fit(probes, sets, mode, standard_transform(mode, sets, o.seed, o.ridge)).to_csv(header);
    header = false;
  }
  emit(csv, o.out);
  return 0;
}

int cmd_plan(const Options& o) {
  need(o.kind, "--kind", "plan");
  need(o.out, "--out", "plan");
  PlanSet set;
  if (o.kind == "head-patch" || o.kind == "head-ablate") {
    const Inputs in = load_inputs(o, "plan", false);
    HeadOptions h;
    h.n_instances = o.n_instances;
    h.n_layers = o.n_layers;
    h.n_heads = o.n_heads;
    h.seed = o.seed;
    if (o.kind == "head-patch") {
      set = plan_head_patching(in.corpus, h);
    } else {
      need(o.ranking, "--ranking", "plan --kind head-ablate");
      set = plan_head_ablation(in.corpus, read_ranking(o.ranking, h), parse_int_list(o.m), h);
    }
  } else {
    const ProbeModel probe = load_probe_for(o, "plan");
    const Inputs in = load_inputs(o, "plan");
    const ActivationDataset data = load_design(o, in);
    const PlanInputs pin{&in.corpus, &data, &in.manifest};
    if (o.kind == "grid") {
      GridOptions g;
      g.n_points = o.n_points;
      if (o.alpha) {
        const auto a = parse_double_list(*o.alpha);
        if (a.size() != 1) throw ValidationError(ErrorCode::usage, "grid plans take a single --alpha");
        g.alpha = a.front();
      }
      g.n_samples = o.n_samples;
      g.layer = o.layer;
      g.seed = o.seed;
      set = plan_grid_sampling(probe, data, pin, g);
    } else if (o.kind == "perturb") {
      PerturbOptions p;
      if (o.alpha) p.alphas = parse_double_list(*o.alpha);
      p.n_samples = o.n_samples;
      p.layer = o.layer;
      p.seed = o.seed;
      if (o.control != "orthogonal" && o.control != "random") {
        throw ValidationError(ErrorCode::usage, "--control is orthogonal or random for perturbation plans");
      }
      const auto rp = random_projection(probe.d(), probe.k, o.seed, probe, o.control == "orthogonal");
      set = plan_perturbation(probe, rp.W, pin, p);
    } else if (o.kind == "steer") {
      const SteeringVector sv = steering_vector(probe, data, parse_axis(o.axis), o.from, o.to);
      SteerOptions s;
      if (o.alpha) s.alphas = parse_double_list(*o.alpha);
      if (!o.site.empty()) s.site = parse_site(o.site);
      const auto layers = parse_int_list(o.layers.value_or("10-20"));
      s.first_layer = *std::min_element(layers.begin(), layers.end());
      s.last_layer = *std::max_element(layers.begin(), layers.end());
      if (static_cast<int>(layers.size()) != s.last_layer - s.first_layer + 1) {
        throw ValidationError(ErrorCode::usage, "steering layers must be a contiguous range");
      }
      s.per_layer = o.per_layer;
      s.n_samples = o.n_samples;
      s.seed = o.seed;
      set = plan_steering(probe, sv, pin, s);
    } else {
      throw ValidationError(ErrorCode::usage, "unknown plan kind '" + o.kind +
                                                  "' (grid, perturb, steer, head-patch, head-ablate)");
    }
  }
  save_plan_set(o.out, set);
  std::cerr << "wrote " << set.plans.size() << " plans, " << set.vectors.size() << " vectors";
  if (set.points.rows() > 0) std::cerr << ", " << set.points.rows() << " grid points";
  std::cerr << " to " << o.out << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const Evaluated ev = evaluate(o, "eval", false);
  json summary{{"plans", ev.plans.plans.size()}, {"results", ev.results.size()}};
  if (has_kind(ev.plans, {PlanKind::grid_sample})) {
    const LogitLandscape land = landscape_of(ev);
    int unimodal = 0;
    for (const auto& s : land.sections) unimodal += s.unimodal ? 1 : 0;
    json peaks = json::object();
    for (int c = 0; c < kCellCount; ++c) {
      const auto p = land.peak(Cell::from_flat(c));
      if (p >= 0) peaks[Cell::from_flat(c).label()] = {land.points(p, 0), land.points(p, 1)};
    }
    summary["grid"] = {{"points", land.points.rows()},
                       {"occupied_cells", land.occupied_cells()},
                       {"sections", land.sections.size()},
                       {"unimodal_sections", unimodal},
                       {"peaks", peaks}};
  }
  if (has_kind(ev.plans, {PlanKind::perturb_cbr, PlanKind::perturb_random})) {
    json curve = json::array();
    for (const auto& a : eval_perturbation(ev.results, ev.plans)) {
      curve.push_back({{"kind", to_string(a.kind)}, {"alpha", a.alpha}, {"accuracy", a.accuracy}, {"n", a.n}});
    }
    summary["perturbation"] = curve;
  }
  if (has_kind(ev.plans, {PlanKind::steer})) {
    json best = json::array();
    for (const auto& r : best_alpha(eval_steering(ev.results, ev.plans))) {
      best.push_back({{"context", r.context}, {"alpha", r.alpha}, {"flip_rate", r.flip_rate}, {"n", r.n}});
    }
    summary["steering_best"] = best;
  }
  if (has_kind(ev.plans, {PlanKind::head_patch})) {
    const HeadScores hs = eval_heads(ev.results, ev.plans);
    json top = json::array();
    for (std::size_t i = 0; i < hs.ranking.size() && i < 10; ++i) {
      const auto& h = hs.ranking[i];
      top.push_back({{"layer", h.layer}, {"head", h.head}, {"score", hs.mean(h.layer, h.head)}});
    }
    summary["top_heads"] = top;
  }
  if (has_kind(ev.plans, {PlanKind::head_mean_ablate})) {
    json curve = json::array();
    for (const auto& a : eval_head_ablation(ev.results, ev.plans)) {
      curve.push_back({{"m", a.m}, {"control", a.random ? "random" : "ranked"}, {"accuracy", a.accuracy}, {"n", a.n}});
    }
    summary["head_ablation"] = curve;
  }
  emit(summary.dump(1) + "\n", o.out);
  return 0;
}

int cmd_report(const Options& o) {
  need(o.kind, "--kind", "report");
  const std::string& k = o.kind;
  if (k == "grid" || k == "sections") {
    const LogitLandscape land = landscape_of(evaluate(o, "report", false));
    emit(k == "grid" ? land.to_csv() : land.sections_csv(), o.out);
  } else if (k == "perturbation") {
    const Evaluated ev = evaluate(o, "report", true);
    emit(accuracy_csv(eval_perturbation(ev.results, ev.plans)), o.out);
  } else if (k == "steering" || k == "steering-best") {
    const Evaluated ev = evaluate(o, "report", true);
    const auto rows = eval_steering(ev.results, ev.plans);
    emit(steering_csv(k == "steering" ? rows : best_alpha(rows)), o.out);
  } else if (k == "heads") {
    const Evaluated ev = evaluate(o, "report", true);
    emit(eval_heads(ev.results, ev.plans).to_csv(), o.out);
  } else if (k == "ablation") {
    const Evaluated ev = evaluate(o, "report", true);
    emit(ablation_csv(eval_head_ablation(ev.results, ev.plans)), o.out);
  } else if (k == "projection" || k == "cosine" || k == "relation-cosine" || k == "centroids") {
    const ProbeModel m = with_control(load_probe_for(o, "report"), o);
    const Inputs in = load_inputs(o, "report");
    const ActivationDataset data = load_design(o, in);
    if (k == "projection") {
      const Eigen::MatrixXd S = m.project_rows(data.H);
      std::string out = "sample_id,context,ei,ri,attribute";
      for (int c = 0; c < m.k; ++c) out += ",c" + std::to_string(c + 1);
      out += "\n";
      for (Eigen::Index i = 0; i < data.size(); ++i) {
        const auto& meta = data.meta[static_cast<std::size_t>(i)];
        out += meta.sample_id + "," + std::string(to_string(meta.context)) + "," + std::to_string(meta.ei) + "," +
               std::to_string(meta.ri) + "," + meta.attribute;
        for (int c = 0; c < m.k; ++c) out += "," + num(S(i, c));
        out += "\n";
      }
      emit(out, o.out);
    } else if (k == "centroids") {
      std::string out = "ei,ri";
      for (int c = 0; c < m.k; ++c) out += ",c" + std::to_string(c + 1);
      out += "\n";
      for (const auto& [cell, v] : cell_centroids(m, data, m.k)) {
        out += std::to_string(cell.ei) + "," + std::to_string(cell.ri);
        for (Eigen::Index c = 0; c < v.size(); ++c) out += "," + num(v(c));
        out += "\n";
      }
      emit(out, o.out);
    } else if (k == "cosine") {
      std::vector<std::string> labels;
      for (int c = 0; c < kCellCount; ++c) labels.push_back(Cell::from_flat(c).label());
      emit(matrix_csv(cell_cosine_matrix(m, data), labels), o.out);
    } else {
      emit(matrix_csv(relation_cosine_matrix(m, data), {"r1", "r2", "r3", "r4"}), o.out);
    }
  } else if (k == "sweep") {
    need(o.input, "--input (a sweep CSV)", "report --kind sweep");
    const Table t = parse_csv(slurp(o.input));
    const int cl = t.column("layer"), ck = t.column("k"), cm = t.column("method"), cc = t.column("control"),
              cr = t.column("r2_avg");
    if (cl < 0 || ck < 0 || cm < 0 || cc < 0 || cr < 0) throw FormatError("'" + o.input + "' is not a sweep CSV");
    const std::string method = methods_of(o).front() == ProbeMethod::pls ? "pls" : "pcr";
    std::map<int, std::map<int, std::string>> grid;
    std::set<int> ks;
    for (const auto& r : t.rows) {
      if (r[static_cast<std::size_t>(cm)] != method || r[static_cast<std::size_t>(cc)] != "none") continue;
      const int layer = std::stoi(r[static_cast<std::size_t>(cl)]), kk = std::stoi(r[static_cast<std::size_t>(ck)]);
      grid[layer][kk] = r[static_cast<std::size_t>(cr)];
      ks.insert(kk);
    }
    std::string out = "layer";
    for (int kk : ks) out += ",k" + std::to_string(kk);
    out += "\n";
    for (const auto& [layer, row] : grid) {
      out += std::to_string(layer);
      for (int kk : ks) out += "," + (row.count(kk) ? row.at(kk) : std::string("NA"));
      out += "\n";
    }
    emit(out, o.out);
  } else if (k == "crossfit") {
    need(o.input, "--input (a transfer CSV)", "report --kind crossfit");
    const Table t = parse_csv(slurp(o.input));
    const int cs = t.column("source"), ct = t.column("target"), cm = t.column("mode"), cr = t.column("r2");
    if (cs < 0 || ct < 0 || cm < 0 || cr < 0) throw FormatError("'" + o.input + "' is not a transfer CSV");
    std::map<std::string, std::map<std::string, std::map<std::string, std::string>>> grid;
    std::set<std::string> targets;
    for (const auto& r : t.rows) {
      grid[r[static_cast<std::size_t>(cm)]][r[static_cast<std::size_t>(cs)]][r[static_cast<std::size_t>(ct)]] =
          r[static_cast<std::size_t>(cr)];
      targets.insert(r[static_cast<std::size_t>(ct)]);
    }
    std::string out = "mode,source";
    for (const auto& tg : targets) out += "," + tg;
    out += "\n";
    for (const auto& [mode, rows] : grid) {
      for (const auto& [src, row] : rows) {
        out += mode + "," + src;
        for (const auto& tg : targets) out += "," + (row.count(tg) ? row.at(tg) : std::string("NA"));
        out += "\n";
      }
    }
    emit(out, o.out);
  } else {
    throw ValidationError(ErrorCode::usage, "unknown report kind '" + k +
                                                "' (projection, centroids, cosine, relation-cosine, sweep, crossfit, "
                                                "grid, sections, perturbation, steering, steering-best, heads, ablation)");
  }
  return 0;
}

int cmd_validate(const Options& o) {
  if (o.files.empty()) throw ValidationError(ErrorCode::usage, "validate needs at least one file");
  int bad = 0;
  for (const auto& f : o.files) {
    const ArtifactKind kind = o.kind.empty() ? guess_artifact_kind(f) : parse_artifact_kind(o.kind);
    const SchemaReport r = validate_artifact(kind, f);
    if (r.ok()) {
      std::cout << "ok " << to_string(kind) << " " << f << " (" << r.records << " records)\n";
    } else {
      ++bad;
      for (const auto& e : r.errors) std::cout << "invalid " << to_string(kind) << " " << f << ": " << e << "\n";
    }
  }
  return bad > 0 ? 2 : 0;
}

}  // namespace cbr::cli
