// One PASS/FAIL line per primary acceptance criterion. Exit status is the
// number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>

#include "cbr/corpus_io.hpp"
#include "cbr/error.hpp"
#include "cbr/intervene.hpp"
#include "cbr/log.hpp"
#include "cbr/oracle.hpp"
#include "cbr/rng.hpp"
#include "cbr/schema.hpp"
#include "cbr/subspace.hpp"
#include "cbr/tensorstore.hpp"
#include "cbr/transfer.hpp"

namespace fs = std::filesystem;
using namespace cbr;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

int failures = 0;
int known_failures = 0;
std::set<std::string> allowed;  // criteria with a documented, analysed shortfall

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (pass) return;
  if (allowed.count(name)) {
    ++known_failures;
  } else {
    ++failures;
  }
}

void run(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    auto [pass, detail] = body();
    report(name, pass, detail);
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Planted {
  PlantSpec spec;
  SynthOutput out;
};

Planted planted(PlantOptions po, SynthOptions so, double snr) {
  Planted p;
  p.spec = make_plant(po);
  if (snr > 0) p.spec.noise_sigma = sigma_for_snr(p.spec, po.peak_layer, snr);
  p.out = synth_dataset(p.spec, so);
  return p;
}

/// Held-out averaged R² of a probe fitted on the train split.
double heldout_r2(const ActivationDataset& data, const MatrixXd& labels, int k, std::uint64_t seed) {
  const Split split = split_by_sample(data, 0.8, seed);
  MatrixXd Htr(split.train.size(), data.dim()), Ytr(split.train.size(), 2);
  MatrixXd Hev(split.eval.size(), data.dim()), Yev(split.eval.size(), 2);
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    Htr.row(i) = data.H.row(split.train[i]);
    Ytr.row(i) = labels.row(split.train[i]);
  }
  for (std::size_t i = 0; i < split.eval.size(); ++i) {
    Hev.row(i) = data.H.row(split.eval[i]);
    Yev.row(i) = labels.row(split.eval[i]);
  }
  const ProbeModel m = fit_pls(Htr, Ytr, k);
  return r2_score(Yev, m.predict(Hev)).averaged.value_or(NAN);
}

/// Minimum-norm least squares prediction of centered Y from centered H.
MatrixXd ols_prediction(const MatrixXd& H, const MatrixXd& Y) {
  const Eigen::RowVectorXd mh = H.colwise().mean();
  const Eigen::RowVectorXd my = Y.colwise().mean();
  const MatrixXd Hc = H.rowwise() - mh;
  const MatrixXd Yc = Y.rowwise() - my;
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(Hc.rows(), Hc.cols());
  cod.setThreshold(1e-10);
  cod.compute(Hc);
  return (Hc * cod.solve(Yc)).rowwise() + my;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cbr-accept-" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--allow-fail") allowed.insert(argv[++i]);
  }
  set_warning_sink([](std::string_view) {});

  run("pls_correctness", [] {
    PlantOptions po;
    po.n_nuisance = 0;
    SynthOptions so;
    so.n_samples = 1000;
    const Planted p = planted(po, so, 0.0);
    const auto& D = p.out.by_layer.at(15);
    const auto t0 = std::chrono::steady_clock::now();
    const ProbeModel m = fit_pls(D.H, D.Y, 2);
    const double secs = seconds_since(t0);
    const double r2 = r2_score(D.Y, m.predict(D.H)).averaged.value();

    // Rank-8 data in d=64: PLS with k = rank must reproduce least squares.
    Rng rng(11);
    const Index n = 500, d = 64, r = 8;
    MatrixXd A(n, r), B(r, d), Y(n, 2);
    for (Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
    for (Index i = 0; i < B.size(); ++i) B.data()[i] = rng.normal();
    for (Index i = 0; i < Y.size(); ++i) Y.data()[i] = rng.normal();
    const MatrixXd H = A * B;
    const double gap = (fit_pls(H, Y, static_cast<int>(r)).predict(H) - ols_prediction(H, Y)).cwiseAbs().maxCoeff();
    const double gap_planted = (m.predict(D.H) - ols_prediction(D.H, D.Y)).cwiseAbs().maxCoeff();
    const bool pass = r2 >= 1 - 1e-8 && gap <= 1e-8 && gap_planted <= 1e-8 && secs < 5.0;
    return std::make_pair(pass, "R2=" + fmt("%.12f", r2) + " |pls-ols| rank8=" + fmt("%.2e", gap) +
                                    " planted=" + fmt("%.2e", gap_planted) + " fit " + fmt("%.3f", secs) +
                                    "s at n=" + std::to_string(D.size()) + " d=64");
  });

  run("low_k_fit", [] {
    std::vector<double> fits, controls;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      PlantOptions po;
      po.seed = seed;
      SynthOptions so;
      so.n_samples = 1000;
      so.corpus_seed = seed;
      const Planted p = planted(po, so, 10.0);
      SweepOptions sw;
      sw.layers = {15};
      sw.ks = {2};
      sw.seed = seed;
      const SweepReport rep = sweep(p.out.by_layer, sw);
      fits.push_back(rep.find(15, 2, ProbeMethod::pls, "none")->eval.averaged.value());
      controls.push_back(rep.find(15, 2, ProbeMethod::pls, "random_labels")->eval.averaged.value_or(0.0));
    }
    double mean = 0, cmean = 0, spread = 0;
    for (double f : fits) mean += f / 5;
    for (double c : controls) cmean += c / 5;
    bool pass = mean >= 0.95 && cmean <= 0.05;
    for (std::size_t i = 0; i < fits.size(); ++i) {
      spread = std::max(spread, std::abs(fits[i] - mean));
      pass = pass && fits[i] >= 0.95 - 0.03 && controls[i] <= 0.05 + 0.03;
    }
    pass = pass && spread <= 0.03;
    return std::make_pair(pass, "mean R2(k=2)=" + fmt("%.4f", mean) + " max dev " + fmt("%.4f", spread) +
                                    " random-label mean=" + fmt("%.4f", cmean) + " over 5 seeds");
  });

  run("grid_geometry", [] {
    SynthOptions so;
    so.n_samples = 1000;
    const Planted p = planted(PlantOptions{}, so, 10.0);
    const auto& D = p.out.by_layer.at(15);
    const Split split = split_by_sample(D, 0.8, 3);
    const ActivationDataset tr = D.subset(split.train), ev = D.subset(split.eval);
    const ProbeModel m = fit_probe(ProbeMethod::pls, tr, 2);
    const double acc = nearest_centroid_accuracy(m, tr, ev, 2);
    return std::make_pair(acc >= 0.95, "nearest-centroid accuracy " + fmt("%.4f", acc) + " on " +
                                           std::to_string(ev.size()) + " held-out rows");
  });

  run("sweep_shape", [] {
    PlantOptions po;
    po.profile_width = 3.0;
    SynthOptions so;
    so.n_samples = 500;
    for (int l = 5; l <= 25; ++l) so.layers.push_back(l);
    const Planted p = planted(po, so, 0.5);
    SweepOptions sw;
    sw.layers = so.layers;
    sw.random_labels = false;
    const SweepReport rep = sweep(p.out.by_layer, sw);
    int best = -1;
    double best_r2 = -1e9;
    for (int l : sw.layers) {
      const double v = rep.find(l, 2, ProbeMethod::pls, "none")->eval.averaged.value();
      if (v > best_r2) {
        best_r2 = v;
        best = l;
      }
    }
    bool monotone = true, plateau = true;
    for (int k = 2; k <= 5; ++k) {
      const double prev = rep.find(15, k - 1, ProbeMethod::pls, "none")->eval.averaged.value();
      const double cur = rep.find(15, k, ProbeMethod::pls, "none")->eval.averaged.value();
      monotone = monotone && cur >= prev - 0.02;
      if (k > 2) plateau = plateau && std::abs(cur - best_r2) <= 0.02;
    }
    const double r1 = rep.find(15, 1, ProbeMethod::pls, "none")->eval.averaged.value();
    const double r5 = rep.find(15, 5, ProbeMethod::pls, "none")->eval.averaged.value();
    return std::make_pair(best == 15 && monotone && plateau,
                          "argmax layer " + std::to_string(best) + ", R2 k=1 " + fmt("%.4f", r1) + " k=2 " +
                              fmt("%.4f", best_r2) + " k=5 " + fmt("%.4f", r5));
  });

  run("monotonic_encoding", [] {
    std::string detail;
    bool pass = true;
    for (LabelScheme s : {LabelScheme::original, LabelScheme::exp, LabelScheme::log, LabelScheme::manual}) {
      PlantOptions po;
      po.scheme = s;
      SynthOptions so;
      so.n_samples = 500;
      const Planted p = planted(po, so, 10.0);
      const auto& D = p.out.by_layer.at(15);
      const double r2 = heldout_r2(D, transform_labels(D.Y, s), 2, 5);
      pass = pass && r2 >= 0.9;
      detail += std::string(to_string(s)) + "=" + fmt("%.4f", r2) + " ";
    }
    SynthOptions so;
    so.n_samples = 500;
    const Planted p = planted(PlantOptions{}, so, 10.0);
    const auto& D = p.out.by_layer.at(15);
    LabelScheme best = LabelScheme::original;
    double best_r2 = -1e9;
    for (LabelScheme s : {LabelScheme::original, LabelScheme::exp, LabelScheme::log, LabelScheme::manual}) {
      const double r2 = heldout_r2(D, transform_labels(D.Y, s), 2, 5);
      if (r2 > best_r2) {
        best_r2 = r2;
        best = s;
      }
    }
    pass = pass && best == LabelScheme::original;
    return std::make_pair(pass, "matched " + detail + "| argmax on integer data: " + std::string(to_string(best)));
  });

  run("translation_transfer", [] {
    PlantOptions po;
    po.contexts = {Context::city, Context::job};
    SynthOptions so;
    so.contexts = po.contexts;
    so.n_samples = 500;
    const Planted p = planted(po, so, 10.0);
    const auto& D = p.out.by_layer.at(15);
    std::map<std::string, ActivationDataset> sets;
    for (Context c : po.contexts) {
      std::vector<Index> rows;
      for (Index i = 0; i < D.size(); ++i) {
        if (D.meta[static_cast<std::size_t>(i)].context == c) rows.push_back(i);
      }
      sets[std::string(to_string(c))] = D.subset(rows);
    }
    std::map<std::string, ProbeModel> probes;
    for (const auto& [name, ds] : sets) probes[name] = fit_probe(ProbeMethod::pls, ds, 15);

    auto offdiag = [&](const std::string& mode) {
      const CrossFitMatrix cf = cross_fit(probes, sets, mode, standard_transform(mode, sets, 17));
      double worst = 1e9, best = -1e9;
      for (const auto& e : cf.entries) {
        if (e.source == e.target) continue;
        worst = std::min(worst, e.r2.value_or(-1e9));
        best = std::max(best, e.r2.value_or(-1e9));
      }
      return std::make_pair(worst, best);
    };
    const auto raw = offdiag("raw");
    const auto tr = offdiag("translated");
    bool pass = raw.second <= 0.3 && tr.first >= 0.9;
    std::string detail = "raw max " + fmt("%.3f", raw.second) + ", translated min " + fmt("%.4f", tr.first);
    for (const char* mode : {"random_vector", "random_direction", "random_norm", "learned_map"}) {
      const auto r = offdiag(mode);
      pass = pass && r.second <= tr.first - 0.1;
      detail += std::string(", ") + mode + " max " + fmt("%.3f", r.second);
    }
    return std::make_pair(pass, detail);
  });

  run("intervention_algebra", [] {
    SynthOptions so;
    so.n_samples = 200;
    const Planted p = planted(PlantOptions{}, so, 10.0);
    const ProbeModel m = fit_probe(ProbeMethod::pls, p.out.by_layer.at(15), 5);
    const MatrixXd WWt = m.W * m.W.transpose();
    Rng rng(23);
    double worst = 0;
    for (int t = 0; t < 1000; ++t) {
      VectorXd h(m.d()), s(m.k);
      for (Index i = 0; i < h.size(); ++i) h(i) = 5.0 * rng.normal();
      for (Index i = 0; i < s.size(); ++i) s(i) = 3.0 * rng.normal();
      const double alpha = rng.uniform(-2.0, 2.0);
      const VectorXd lhs = m.project(apply_lift(m, h, s, alpha)) - m.project(h);
      worst = std::max(worst, (lhs - alpha * WWt * s).cwiseAbs().maxCoeff());
    }
    return std::make_pair(worst <= 1e-8, "max deviation " + fmt("%.2e", worst) + " over 1000 draws (PLS k=5)");
  });

  run("closed_loop_grid", [] {
    const auto t0 = std::chrono::steady_clock::now();
    SynthOptions so;
    so.n_samples = 200;
    const Planted p = planted(PlantOptions{}, so, 10.0);
    const auto& D = p.out.by_layer.at(15);
    const ProbeModel m = fit_probe(ProbeMethod::pls, D, 2).orthonormalized();
    GridOptions go;
    go.alpha = 1.0;
    go.seed = 9;
    const PlanSet plans = plan_grid_sampling(m, D, PlanInputs{&p.out.corpus, &D, &p.out.manifest}, go);
    const LogitLandscape land = oracle_grid_landscape(plans, OracleWorld{&p.spec, &p.out, 15});
    const double secs = seconds_since(t0);

    // Planted centers in the plane: projected means of each cell's rows.
    const auto centers = cell_centroids(m, D, 2);
    int own_peak = 0;
    for (int c = 0; c < kCellCount; ++c) {
      const Eigen::Vector2d pk = land.points.row(land.peak(Cell::from_flat(c))).transpose();
      int nearest = -1;
      double dist = 1e300;
      for (const auto& [cell, v] : centers) {
        const double dd = (v.head<2>() - pk).norm();
        if (dd < dist) {
          dist = dd;
          nearest = cell.flat();
        }
      }
      if (nearest == c && land.argmax[static_cast<std::size_t>(land.peak(Cell::from_flat(c)))] == c) ++own_peak;
    }
    int unimodal = 0;
    for (const auto& s : land.sections) unimodal += s.unimodal ? 1 : 0;
    const bool pass = land.occupied_cells() == 12 && own_peak == 12 &&
                      unimodal == static_cast<int>(land.sections.size()) && !land.sections.empty() && secs < 30.0;
    return std::make_pair(pass, std::to_string(land.occupied_cells()) + " argmax cells, " + std::to_string(own_peak) +
                                    "/12 peaks at own center, " + std::to_string(unimodal) + "/" +
                                    std::to_string(land.sections.size()) + " unimodal sections, " +
                                    std::to_string(plans.plans.size()) + " plans x " +
                                    std::to_string(plans.points.rows()) + " points in " + fmt("%.2f", secs) + "s");
  });

  run("perturbation_separation", [] {
    SynthOptions so;
    so.n_samples = 200;
    const Planted p = planted(PlantOptions{}, so, 10.0);
    const auto& D = p.out.by_layer.at(15);
    const ProbeModel m = fit_probe(ProbeMethod::pls, D, 2).orthonormalized();
    const MatrixXd Wr = random_projection(m.d(), m.k, 31, m, true).W;
    PerturbOptions po;
    po.seed = 4;
    const PlanSet plans = plan_perturbation(m, Wr, PlanInputs{&p.out.corpus, &D, &p.out.manifest}, po);
    const auto curve = eval_perturbation(oracle_execute(plans, OracleWorld{&p.spec, &p.out, 15}), plans);
    std::vector<double> cbr, rnd;
    for (const auto& a : curve) (a.kind == PlanKind::perturb_cbr ? cbr : rnd).push_back(a.accuracy);
    bool monotone = cbr.size() == po.alphas.size();
    for (std::size_t i = 1; i < cbr.size(); ++i) monotone = monotone && cbr[i] <= cbr[i - 1];
    monotone = monotone && cbr.back() < cbr.front();
    double drift = 0;
    for (double r : rnd) drift = std::max(drift, std::abs(r - rnd.front()));
    const bool pass = monotone && cbr.back() <= 0.2 && drift <= 0.05;
    std::string detail = "cbr accuracy";
    for (double v : cbr) detail += " " + fmt("%.2f", v);
    detail += "; random max drift " + fmt("%.2f", drift);
    return std::make_pair(pass, detail);
  });

  run("steering_flip", [] {
    SynthOptions so;
    so.n_samples = 200;
    const Planted p = planted(PlantOptions{}, so, 10.0);
    const auto& D = p.out.by_layer.at(15);
    const ProbeModel m = fit_probe(ProbeMethod::pls, D, 5).orthonormalized();
    bool pass = true;
    std::string detail;
    for (int j = 1; j <= 3; ++j) {
      const SteeringVector sv = steering_vector(m, D, Axis::ri, j, j + 1);
      SteerOptions opt;
      opt.seed = 6;
      const PlanSet plans = plan_steering(m, sv, PlanInputs{&p.out.corpus, &D, &p.out.manifest}, opt);
      const auto rows = eval_steering(oracle_execute(plans, OracleWorld{&p.spec, &p.out, 15}), plans);
      const auto best = best_alpha(rows);
      const double rate = best.empty() ? 0.0 : best.front().flip_rate;
      pass = pass && rate >= 0.9;
      detail += "ri " + std::to_string(j) + "->" + std::to_string(j + 1) + " flip " + fmt("%.2f", rate) +
                " at alpha " + fmt("%.1f", best.empty() ? NAN : best.front().alpha) + "; ";
    }
    return std::make_pair(pass, detail);
  });

  run("determinism_formats", [] {
    std::string detail;
    bool pass = true;
    CorpusOptions co;
    co.n_samples = 50;
    co.seed = 7;
    const bool corpus_same = corpus_to_jsonl(generate_corpus(co)) == corpus_to_jsonl(generate_corpus(co));
    pass = pass && corpus_same;
    detail += std::string("corpus ") + (corpus_same ? "identical" : "DIFFERS");

    SynthOptions so;
    so.n_samples = 50;
    so.layers = {14, 15, 16};
    const Planted a = planted(PlantOptions{}, so, 10.0);
    const Planted b = planted(PlantOptions{}, so, 10.0);
    bool synth_same = a.out.files == b.out.files && a.out.manifest == b.out.manifest;
    for (const auto& [l, ds] : a.out.by_layer) synth_same = synth_same && ds.H == b.out.by_layer.at(l).H;
    pass = pass && synth_same;
    detail += std::string(", oracle ") + (synth_same ? "identical" : "DIFFERS");

    const auto& D = a.out.by_layer.at(15);
    const ProbeModel m = fit_probe(ProbeMethod::pls, D, 2).orthonormalized();
    GridOptions go;
    go.n_points = 200;
    go.n_samples = 5;
    go.alpha = 1.0;
    const PlanInputs in{&a.out.corpus, &D, &a.out.manifest};
    const fs::path d1 = scratch_dir("run1"), d2 = scratch_dir("run2");
    save_plan_set((d1 / "plan.json").string(), plan_grid_sampling(m, D, in, go));
    save_plan_set((d2 / "plan.json").string(), plan_grid_sampling(m, D, in, go));
    const bool plans_same = slurp(d1 / "plan.json") == slurp(d2 / "plan.json") &&
                            slurp(d1 / "plan.v.cbrt") == slurp(d2 / "plan.v.cbrt");
    pass = pass && plans_same;
    detail += std::string(", plans ") + (plans_same ? "identical" : "DIFFERS");

    bool roundtrip = true;
    for (const auto& [id, f] : a.out.files) roundtrip = roundtrip && decode_activations(encode_activations(f)) == f;
    pass = pass && roundtrip;
    detail += std::string(", tensorstore round-trip ") + (roundtrip ? "exact" : "LOSSY");

    write_synth(d1.string(), a.out);
    save_probe((d1 / "probe.json").string(), m);
    write_results((d1 / "results.jsonl").string(),
                  oracle_execute(load_plan_set((d1 / "plan.json").string()), OracleWorld{&a.spec, &a.out, 15}));
    std::vector<std::pair<ArtifactKind, fs::path>> artifacts{
        {ArtifactKind::corpus, d1 / "corpus.jsonl"},   {ArtifactKind::manifest, d1 / "manifest.json"},
        {ArtifactKind::probe, d1 / "probe.json"},      {ArtifactKind::plan, d1 / "plan.json"},
        {ArtifactKind::results, d1 / "results.jsonl"}, {ArtifactKind::activations, d1 / "plan.v.cbrt"}};
    for (const auto& [id, e] : a.out.manifest) artifacts.emplace_back(ArtifactKind::activations, d1 / e.file);
    std::size_t valid = 0;
    for (const auto& [kind, path] : artifacts) {
      const SchemaReport r = validate_artifact(kind, path.string());
      if (r.ok()) {
        ++valid;
      } else {
        detail += ", " + path.filename().string() + ": " + r.errors.front();
      }
    }
    pass = pass && valid == artifacts.size();
    detail += ", " + std::to_string(valid) + "/" + std::to_string(artifacts.size()) + " artifacts validate";
    fs::remove_all(d1.parent_path());
    return std::make_pair(pass, detail);
  });

  std::printf("%d failure(s), %d known failure(s) allowed by --allow-fail\n", failures, known_failures);
  return failures == 0 ? 0 : 1;
}
