#include "cbr/oracle.hpp"

#include <cmath>
#include <filesystem>
#include <limits>

#include "cbr/corpus_io.hpp"
#include "cbr/error.hpp"
#include "cbr/rng.hpp"
#include "cbr/subspace.hpp"
#include "io.hpp"

namespace cbr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

using Logits = Eigen::Matrix<double, 1, kCellCount>;

// ---------------------------------------------------------------------------
// Plant

void PlantSpec::validate() const {
  if (d < 2) throw ValidationError(ErrorCode::dimension, "planted dimension must be at least 2");
  if (u_ei.size() != d || u_ri.size() != d) throw ValidationError(ErrorCode::dimension, "index directions must have length d");
  if (std::abs(u_ei.norm() - 1.0) > 1e-12 || std::abs(u_ri.norm() - 1.0) > 1e-12) {
    throw ValidationError("index directions must be unit vectors");
  }
  if (std::abs(u_ei.dot(u_ri)) > 1e-12) throw ValidationError("index directions must be orthogonal");
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be non-negative");
  for (const auto& [c, v] : context_offset) {
    if (v.size() != d) throw ValidationError(ErrorCode::dimension, "context offset must have length d");
  }
  for (const auto& n : nuisance) {
    if (n.direction.size() != d || n.variance < 0.0) throw ValidationError("nuisance needs a d-vector and variance >= 0");
  }
  for (const auto& [ri, v] : semantic) {
    if (v.size() != d || ri < 1 || ri > kRelationCount) throw ValidationError("semantic vectors are keyed by ri 1..4, length d");
  }
}

double PlantSpec::gain(int layer) const {
  auto it = layer_profile.find(layer);
  if (it == layer_profile.end()) {
    throw ValidationError(ErrorCode::out_of_range, "layer " + std::to_string(layer) + " has no planted gain");
  }
  return it->second;
}

VectorXd PlantSpec::center(Context context, Cell cell, int layer) const {
  const auto& v = scheme_values(scheme);
  VectorXd h = gain(layer) * (v[cell.ei - 1] * u_ei + v[cell.ri - 1] * u_ri);
  if (auto it = context_offset.find(context); it != context_offset.end()) h += it->second;
  if (auto it = semantic.find(cell.ri); it != semantic.end()) h += it->second;
  return h;
}

namespace {

VectorXd random_direction(Index d, Rng rng) {
  VectorXd v(d);
  for (Index i = 0; i < d; ++i) v(i) = rng.normal();
  return v.normalized();
}

}  // namespace

PlantSpec make_plant(const PlantOptions& opt) {
  if (opt.d < 2 + opt.n_nuisance) {
    throw ValidationError(ErrorCode::dimension, "d must hold both index directions and the nuisance directions");
  }
  PlantSpec spec;
  spec.d = opt.d;
  spec.scheme = opt.scheme;
  spec.noise_sigma = opt.noise_sigma;
  spec.seed = opt.seed;
  const MatrixXd rows = random_orthonormal_rows(opt.d, 2 + opt.n_nuisance, Rng::stream(opt.seed, hash_name("plant-axes")).next_u64());
  spec.u_ei = rows.row(0).transpose();
  spec.u_ri = rows.row(1).transpose();
  for (int j = 0; j < opt.n_nuisance; ++j) spec.nuisance.push_back({rows.row(2 + j).transpose(), opt.nuisance_variance});
  for (Context c : opt.contexts) {
    spec.context_offset[c] =
        opt.offset_norm * random_direction(opt.d, Rng::stream(opt.seed, hash_name("offset:" + std::string(to_string(c)))));
  }
  for (std::size_t g = 0; g < opt.semantic_groups.size(); ++g) {
    const VectorXd v = opt.semantic_norm * random_direction(opt.d, Rng::stream(opt.seed, hash_name("semantic") + g));
    for (int ri : opt.semantic_groups[g]) {
      if (ri < 1 || ri > kRelationCount || spec.semantic.count(ri)) {
        throw ValidationError(ErrorCode::usage, "semantic groups must partition relation indices 1..4");
      }
      spec.semantic[ri] = v;
    }
  }
  for (int l = 0; l < opt.n_layers; ++l) {
    const double z = (l - opt.peak_layer) / opt.profile_width;
    spec.layer_profile[l] = std::exp(-0.5 * z * z);
  }
  spec.validate();
  return spec;
}

double sigma_for_snr(const PlantSpec& spec, int layer, double snr) {
  if (!(snr > 0)) throw ValidationError(ErrorCode::usage, "snr must be positive");
  const auto& v = scheme_values(spec.scheme);
  auto var = [](const double* x, int n) {
    double m = 0, s = 0;
    for (int i = 0; i < n; ++i) m += x[i] / n;
    for (int i = 0; i < n; ++i) s += (x[i] - m) * (x[i] - m) / n;
    return s;
  };
  const double g = spec.gain(layer);
  const double power = g * g * (var(v.data(), kEntityCount) + var(v.data(), kRelationCount));
  return std::sqrt(power / (snr * static_cast<double>(spec.d)));
}

// ---------------------------------------------------------------------------
// Datasets

SynthOutput synth_dataset(const PlantSpec& spec, const SynthOptions& opt) {
  spec.validate();
  std::vector<int> layers = opt.layers;
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  if (layers.empty()) throw ValidationError(ErrorCode::usage, "synth needs at least one layer");
  for (int l : layers) spec.gain(l);

  SynthOutput out;
  std::map<int, std::vector<VectorXd>> rows;
  std::map<int, std::vector<RowMeta>> metas;
  const std::vector<std::int32_t> layer_ids(layers.begin(), layers.end());
  for (Context ctx : opt.contexts) {
    CorpusOptions copt;
    copt.context = ctx;
    copt.n_samples = opt.n_samples;
    copt.seed = opt.corpus_seed;
    copt.pattern = opt.pattern;
    copt.variant = opt.variant;
    for (auto& sample : generate_corpus(copt)) {
      const auto& ann = sample.discourse.annotations;
      const auto n_tokens = static_cast<std::uint64_t>(ann.size() + 1);
      ActivationFile file(n_tokens, layer_ids, static_cast<std::uint64_t>(spec.d));
      ManifestEntry entry;
      entry.layer_ids = layers;
      entry.file = "activations/" + sample.sample_id + ".cbrt";
      Rng rng = Rng::stream(spec.seed, hash_name(sample.sample_id));
      const VectorXd offset = spec.context_offset.count(ctx) ? spec.context_offset.at(ctx) : VectorXd::Zero(spec.d);
      for (std::uint64_t t = 0; t < n_tokens; ++t) {
        VectorXd shared = offset;
        std::optional<Cell> cell;
        if (t < ann.size()) {
          cell = ann[t].cell();
          for (const auto& n : spec.nuisance) shared += std::sqrt(n.variance) * rng.normal() * n.direction;
          entry.token_spans.push_back({cell->ei, cell->ri, Span{t, t + 1}});
        }
        // One noise draw per token, carried through every layer.
        if (spec.noise_sigma > 0) {
          for (Index j = 0; j < spec.d; ++j) shared(j) += spec.noise_sigma * rng.normal();
        }
        for (std::size_t li = 0; li < layers.size(); ++li) {
          VectorXd h = shared;
          if (cell) h += spec.center(ctx, *cell, layers[li]) - offset;
          for (Index j = 0; j < spec.d; ++j) file.at(t, li, static_cast<std::uint64_t>(j)) = static_cast<float>(h(j));
          if (cell) {
            rows[layers[li]].push_back(h);
            metas[layers[li]].push_back({sample.sample_id, ctx, cell->ei, cell->ri, ann[t].attribute, layers[li]});
          }
        }
      }
      out.manifest[sample.sample_id] = std::move(entry);
      out.files[sample.sample_id] = std::move(file);
      out.corpus.push_back(std::move(sample));
    }
  }
  for (int l : layers) {
    ActivationDataset ds;
    const auto& r = rows[l];
    ds.H.resize(static_cast<Index>(r.size()), spec.d);
    ds.Y.resize(static_cast<Index>(r.size()), 2);
    for (std::size_t i = 0; i < r.size(); ++i) {
      ds.H.row(static_cast<Index>(i)) = r[i].transpose();
      ds.Y(static_cast<Index>(i), 0) = metas[l][i].ei;
      ds.Y(static_cast<Index>(i), 1) = metas[l][i].ri;
    }
    ds.meta = std::move(metas[l]);
    out.by_layer[l] = std::move(ds);
  }
  return out;
}

void write_synth(const std::string& dir, const SynthOutput& out) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "activations", ec);
  if (ec) throw IoError("cannot create '" + dir + "/activations': " + ec.message());
  write_corpus((fs::path(dir) / "corpus.jsonl").string(), out.corpus);
  write_manifest((fs::path(dir) / "manifest.json").string(), out.manifest);
  for (const auto& [id, file] : out.files) {
    write_activations((fs::path(dir) / out.manifest.at(id).file).string(), file);
  }
}

void save_plant(const std::string& path, const PlantOptions& o, double noise_sigma) {
  nlohmann::json contexts = nlohmann::json::array();
  for (Context c : o.contexts) contexts.push_back(to_string(c));
  const nlohmann::json j{{"format", "cbr-plant/1"},
                         {"d", o.d},
                         {"scheme", to_string(o.scheme)},
                         {"contexts", contexts},
                         {"offset_norm", o.offset_norm},
                         {"n_nuisance", o.n_nuisance},
                         {"nuisance_variance", o.nuisance_variance},
                         {"noise_sigma", noise_sigma},
                         {"n_layers", o.n_layers},
                         {"peak_layer", o.peak_layer},
                         {"profile_width", o.profile_width},
                         {"semantic_groups", o.semantic_groups},
                         {"semantic_norm", o.semantic_norm},
                         {"seed", o.seed}};
  detail::write_file(path, j.dump(1) + "\n");
}

PlantSpec load_plant(const std::string& path) {
  using VT = nlohmann::json::value_t;
  const std::string what = "plant '" + path + "'";
  const auto j = detail::parse_json(detail::read_file(path), what);
  if (detail::member(j, "format", VT::string, what) != "cbr-plant/1") throw FormatError(what + ": unknown format");
  PlantOptions o;
  double sigma = 0;
  try {
    o.d = j.at("d").get<Index>();
    o.scheme = parse_label_scheme(j.at("scheme").get<std::string>());
    o.contexts.clear();
    for (const auto& c : j.at("contexts")) o.contexts.push_back(parse_context(c.get<std::string>()));
    o.offset_norm = j.at("offset_norm").get<double>();
    o.n_nuisance = j.at("n_nuisance").get<int>();
    o.nuisance_variance = j.at("nuisance_variance").get<double>();
    sigma = j.at("noise_sigma").get<double>();
    o.n_layers = j.at("n_layers").get<int>();
    o.peak_layer = j.at("peak_layer").get<int>();
    o.profile_width = j.at("profile_width").get<double>();
    o.semantic_groups = j.at("semantic_groups").get<std::vector<std::vector<int>>>();
    o.semantic_norm = j.at("semantic_norm").get<double>();
    o.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": " + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(what + ": " + e.what());
  }
  PlantSpec spec = make_plant(o);
  spec.noise_sigma = sigma;
  spec.validate();
  return spec;
}

SynthOutput read_synth(const std::string& dir, const std::vector<int>& layers) {
  namespace fs = std::filesystem;
  SynthOutput out;
  out.corpus = read_corpus((fs::path(dir) / "corpus.jsonl").string());
  out.manifest = read_manifest((fs::path(dir) / "manifest.json").string());
  AssembleOptions opt;
  opt.base_dir = dir;
  out.by_layer = assemble_layers(out.corpus, out.manifest, layers, opt);
  return out;
}

// ---------------------------------------------------------------------------
// Decoder

void DecoderSpec::validate() const {
  if (!(temperature > 0)) throw ValidationError("decoder temperature must be positive");
  for (int a = 0; a < kCellCount; ++a) {
    for (int b = a + 1; b < kCellCount; ++b) {
      if ((centers.row(a) - centers.row(b)).norm() == 0.0) {
        throw ValidationError("decoder cells " + Cell::from_flat(a).label() + " and " + Cell::from_flat(b).label() +
                              " share a readout");
      }
    }
  }
}

DecoderSpec make_decoder(const PlantSpec& spec, Context context, int layer, double temperature) {
  DecoderSpec dec;
  dec.U.resize(2, spec.d);
  dec.U.row(0) = spec.u_ei.transpose();
  dec.U.row(1) = spec.u_ri.transpose();
  for (int c = 0; c < kCellCount; ++c) {
    dec.centers.row(c) = (dec.U * spec.center(context, Cell::from_flat(c), layer)).transpose();
  }
  dec.temperature = temperature;
  dec.validate();
  return dec;
}

Logits decoder_logits(const DecoderSpec& dec, const Vector2d& z) {
  Logits out;
  for (int c = 0; c < kCellCount; ++c) out(c) = -(z - dec.centers.row(c).transpose()).squaredNorm() / dec.temperature;
  return out;
}

Logits synth_logits(const DecoderSpec& dec, const VectorXd& h) {
  if (h.size() != dec.U.cols()) throw ValidationError(ErrorCode::dimension, "activation width differs from decoder");
  return decoder_logits(dec, dec.U * h);
}

// ---------------------------------------------------------------------------
// Closed loop

namespace {

struct Prepared {
  const PatchPlan* plan;
  const DecoderSpec* decoder;
  Vector2d z_before;
  Vector2d z_after;      // non-grid plans
  Eigen::Matrix2d G;     // grid: U [basis_0 basis_1]
  int answer = -1;
  int expected = -1;
};

class Executor {
 public:
  explicit Executor(const PlanSet& plans, const OracleWorld& world) : plans_(plans), world_(world) {
    if (!world.spec || !world.data) throw ValidationError(ErrorCode::usage, "oracle world needs a plant and data");
    auto it = world.data->by_layer.find(world.layer);
    if (it == world.data->by_layer.end()) {
      throw ValidationError(ErrorCode::out_of_range, "oracle data lack layer " + std::to_string(world.layer));
    }
    data_ = &it->second;
    for (Index i = 0; i < data_->size(); ++i) {
      const auto& m = data_->meta[static_cast<std::size_t>(i)];
      rows_.emplace(std::make_pair(m.sample_id, Cell{m.ei, m.ri}), i);
      context_.emplace(m.sample_id, m.context);
    }
    if (!plans.vectors.empty() && plans.d != world.spec->d) {
      throw ValidationError(ErrorCode::dimension, "plan vectors have d=" + std::to_string(plans.d) + ", oracle has d=" +
                                                      std::to_string(world.spec->d));
    }
  }

  Prepared prepare(const PatchPlan& p) {
    if (p.kind == PlanKind::head_patch || p.kind == PlanKind::head_mean_ablate) {
      throw ValidationError(ErrorCode::unsupported, "the oracle does not model attention heads (plan '" + p.plan_id + "')");
    }
    if (p.targets.empty()) throw ValidationError("plan '" + p.plan_id + "' has no targets");
    const std::string& sid = p.targets.front().sample_id;
    auto ctx = context_.find(sid);
    if (ctx == context_.end()) throw ValidationError(ErrorCode::assembly, "oracle has no activations for '" + sid + "'");
    Prepared out;
    out.plan = &p;
    out.decoder = &decoder(ctx->second);
    const DecoderSpec& dec = *out.decoder;
    const Cell target = p.query.target;
    auto row = rows_.find({sid, target});
    if (row == rows_.end()) {
      throw ValidationError(ErrorCode::assembly, "oracle has no activation for " + sid + " " + target.label());
    }
    const VectorXd h = data_->H.row(row->second).transpose();
    out.z_before = dec.U * h;
    out.z_after = out.z_before;
    for (const auto& t : p.targets) {
      if (t.vector_ref < 0 || t.layers.empty()) continue;
      const VectorXd& v = plans_.vectors[static_cast<std::size_t>(t.vector_ref)];
      switch (t.site) {
        case Site::attribute:
          if (t.cell && *t.cell == target) out.z_after += dec.U * v;
          break;
        case Site::query_entity: out.z_after(0) += dec.U.row(0).dot(v); break;
        case Site::query_exemplar: out.z_after(1) += dec.U.row(1).dot(v); break;
        case Site::last_token: break;
      }
    }
    if (p.grid) {
      out.G.col(0) = dec.U * plans_.vectors[static_cast<std::size_t>(p.grid->basis_refs[0])];
      out.G.col(1) = dec.U * plans_.vectors[static_cast<std::size_t>(p.grid->basis_refs[1])];
    }
    out.answer = candidate(p, p.query.answer);
    if (out.answer < 0) throw ValidationError("plan '" + p.plan_id + "' does not list its answer among the candidates");
    if (p.expected_answer) out.expected = candidate(p, *p.expected_answer);
    return out;
  }

  static Vector2d grid_point(const Prepared& pr, const Vector2d& p) {
    return pr.z_before + pr.plan->alpha * pr.G * (p - pr.plan->grid->origin);
  }

  /// Candidate logits in the plan's candidate order.
  static std::vector<double> candidate_logits(const Prepared& pr, const Vector2d& z) {
    const Logits l = decoder_logits(*pr.decoder, z);
    std::vector<double> out(pr.plan->answer_candidates.size());
    for (std::size_t i = 0; i < out.size() && i < static_cast<std::size_t>(kCellCount); ++i) out[i] = l(static_cast<int>(i));
    return out;
  }

  static InterventionResult result(const Prepared& pr, const Vector2d& z_after, bool keep_candidates) {
    const PatchPlan& p = *pr.plan;
    const auto before = candidate_logits(pr, pr.z_before);
    const auto after = candidate_logits(pr, z_after);
    InterventionResult r;
    r.plan_id = p.plan_id;
    r.query_id = p.query.query_id;
    r.logit_original_before = before[static_cast<std::size_t>(pr.answer)];
    r.logit_original_after = after[static_cast<std::size_t>(pr.answer)];
    if (pr.expected >= 0) {
      r.logit_expected_before = before[static_cast<std::size_t>(pr.expected)];
      r.logit_expected_after = after[static_cast<std::size_t>(pr.expected)];
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < after.size(); ++i) {
      if (after[i] > after[best]) best = i;
    }
    r.predicted_token = p.answer_candidates[best];
    r.correct = r.predicted_token == p.query.answer;
    if (keep_candidates) {
      for (std::size_t i = 0; i < after.size(); ++i) r.candidate_logits[p.answer_candidates[i]] = after[i];
    }
    return r;
  }

 private:
  static int candidate(const PatchPlan& p, const std::string& answer) {
    for (std::size_t i = 0; i < p.answer_candidates.size(); ++i) {
      if (p.answer_candidates[i] == answer) return static_cast<int>(i);
    }
    return -1;
  }

  const DecoderSpec& decoder(Context c) {
    auto it = decoders_.find(c);
    if (it == decoders_.end()) {
      it = decoders_.emplace(c, make_decoder(*world_.spec, c, world_.layer, world_.temperature)).first;
    }
    return it->second;
  }

  const PlanSet& plans_;
  const OracleWorld& world_;
  const ActivationDataset* data_ = nullptr;
  std::map<std::pair<std::string, Cell>, Index> rows_;
  std::map<std::string, Context> context_;
  std::map<Context, DecoderSpec> decoders_;
};

}  // namespace

void oracle_execute(const PlanSet& plans, const OracleWorld& world,
                    const std::function<void(InterventionResult&&)>& sink) {
  Executor ex(plans, world);
  for (const auto& p : plans.plans) {
    const Prepared pr = ex.prepare(p);
    if (p.grid) {
      for (Index i = 0; i < plans.points.rows(); ++i) {
        InterventionResult r = Executor::result(pr, Executor::grid_point(pr, plans.points.row(i).transpose()), true);
        r.point = static_cast<int>(i);
        sink(std::move(r));
      }
    } else {
      sink(Executor::result(pr, pr.z_after, false));
    }
  }
}

std::vector<InterventionResult> oracle_execute(const PlanSet& plans, const OracleWorld& world) {
  std::vector<InterventionResult> out;
  oracle_execute(plans, world, [&](InterventionResult&& r) { out.push_back(std::move(r)); });
  return out;
}

LogitLandscape oracle_grid_landscape(const PlanSet& plans, const OracleWorld& world, int bins, double tolerance) {
  Executor ex(plans, world);
  GridAccumulator acc(plans.points);
  bool any = false;
  for (const auto& p : plans.plans) {
    if (!p.grid) continue;
    if (p.answer_candidates.size() != static_cast<std::size_t>(kCellCount)) {
      throw ValidationError("grid plan '" + p.plan_id + "' must list all 12 candidates");
    }
    any = true;
    const Prepared pr = ex.prepare(p);
    for (Index i = 0; i < plans.points.rows(); ++i) {
      acc.add_row(i, decoder_logits(*pr.decoder, Executor::grid_point(pr, plans.points.row(i).transpose())));
    }
  }
  if (!any) throw ValidationError(ErrorCode::usage, "plan set has no grid plans");
  return acc.finish(bins, tolerance);
}

}  // namespace cbr
