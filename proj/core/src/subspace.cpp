#include "cbr/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "cbr/error.hpp"
#include "cbr/log.hpp"
#include "cbr/rng.hpp"

namespace cbr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view to_string(ProbeMethod m) { return m == ProbeMethod::pls ? "pls" : "pcr"; }

ProbeMethod parse_probe_method(std::string_view text) {
  if (text == "pls") return ProbeMethod::pls;
  if (text == "pcr" || text == "pca") return ProbeMethod::pcr;
  throw ValidationError(ErrorCode::usage, "unknown method '" + std::string(text) + "' (pls, pcr)");
}

R2 r2_score(const MatrixXd& Y, const MatrixXd& Yhat) {
  if (Y.rows() != Yhat.rows() || Y.cols() != 2 || Yhat.cols() != 2) {
    throw ValidationError(ErrorCode::dimension, "r2 needs two n x 2 matrices");
  }
  R2 out;
  bool all = Y.rows() > 0;
  for (int c = 0; c < 2; ++c) {
    if (Y.rows() == 0) break;
    const double mean = Y.col(c).mean();
    const double ss_tot = (Y.col(c).array() - mean).square().sum();
    const double ss_res = (Y.col(c) - Yhat.col(c)).squaredNorm();
    if (ss_tot <= 0.0) {
      all = false;
      continue;
    }
    out.per_target[c] = 1.0 - ss_res / ss_tot;
  }
  if (all) out.averaged = 0.5 * (*out.per_target[0] + *out.per_target[1]);
  return out;
}

// ---------------------------------------------------------------------------
// ProbeModel

MatrixXd ProbeModel::predict(const MatrixXd& H) const {
  if (H.cols() != d()) {
    throw ValidationError(ErrorCode::dimension, "activations have " + std::to_string(H.cols()) +
                                                    " columns, probe expects " + std::to_string(d()));
  }
  return (project_rows(H) * B).rowwise() + mu_Y.transpose();
}

VectorXd ProbeModel::project(const VectorXd& h) const {
  if (h.size() != d()) {
    throw ValidationError(ErrorCode::dimension, "vector has length " + std::to_string(h.size()) +
                                                    ", probe expects " + std::to_string(d()));
  }
  return W * (h - mu_H);
}

MatrixXd ProbeModel::project_rows(const MatrixXd& H) const {
  if (H.cols() != d()) throw ValidationError(ErrorCode::dimension, "activation width differs from probe");
  return (H.rowwise() - mu_H.transpose()) * W.transpose();
}

VectorXd ProbeModel::lift(const VectorXd& s) const {
  if (s.size() != W.rows()) {
    throw ValidationError(ErrorCode::dimension, "subspace vector has length " + std::to_string(s.size()) +
                                                    ", probe has k=" + std::to_string(W.rows()));
  }
  return W.transpose() * s;
}

ProbeModel ProbeModel::leading(int kk) const {
  if (kk < 1 || kk > k) throw ValidationError(ErrorCode::usage, "leading(k) needs 1 <= k <= " + std::to_string(k));
  ProbeModel m = *this;
  m.k = kk;
  m.W = W.topRows(kk);
  m.B = B.topRows(kk);
  m.fit_r2 = {};
  return m;
}

ProbeModel ProbeModel::orthonormalized() const {
  // Wᵀ = Q L  =>  scores' = X Q = scores L⁻¹, so B' = L B keeps predictions.
  Eigen::HouseholderQR<MatrixXd> qr(W.transpose());
  MatrixXd Q = qr.householderQ() * MatrixXd::Identity(W.cols(), W.rows());
  MatrixXd L = qr.matrixQR().topRows(W.rows()).triangularView<Eigen::Upper>();
  for (Index j = 0; j < L.rows(); ++j) {
    if (L(j, j) < 0) {
      Q.col(j) *= -1.0;
      L.row(j) *= -1.0;
    }
  }
  ProbeModel m = *this;
  m.W = Q.transpose();
  m.B = L * B;
  m.orthonormal = true;
  return m;
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

void check_inputs(const MatrixXd& H, const MatrixXd& Y, int k) {
  if (H.rows() != Y.rows()) throw ValidationError(ErrorCode::dimension, "H and Y row counts differ");
  if (Y.cols() != 2) throw ValidationError(ErrorCode::dimension, "Y must have 2 columns [ei, ri]");
  if (k < 1) throw ValidationError(ErrorCode::usage, "k must be at least 1");
  if (H.rows() <= k) {
    throw ValidationError(ErrorCode::usage, "need more rows than components (n=" + std::to_string(H.rows()) +
                                                ", k=" + std::to_string(k) + ")");
  }
  if (k > H.cols()) {
    throw ValidationError(ErrorCode::usage, "k=" + std::to_string(k) + " exceeds d=" + std::to_string(H.cols()));
  }
  if (!H.allFinite() || !Y.allFinite()) throw ValidationError("H and Y must be finite");
  for (int c = 0; c < 2; ++c) {
    if ((Y.col(c).array() == Y(0, c)).all()) {
      throw ValidationError(ErrorCode::degenerate_target,
                            std::string("target column ") + (c == 0 ? "ei" : "ri") + " has zero variance");
    }
  }
}

void finish(ProbeModel& m, const MatrixXd& H, const MatrixXd& Y) {
  m.n_train = static_cast<std::size_t>(H.rows());
  m.fit_r2 = r2_score(Y, m.predict(H));
}

}  // namespace

ProbeModel fit_pls(const MatrixXd& H, const MatrixXd& Y, int k, const FitOptions& opt) {
  check_inputs(H, Y, k);
  ProbeModel m;
  m.method = ProbeMethod::pls;
  m.mu_H = H.colwise().mean().transpose();
  m.mu_Y = Y.colwise().mean().transpose();
  MatrixXd X = H.rowwise() - m.mu_H.transpose();
  MatrixXd Yr = Y.rowwise() - m.mu_Y.transpose();
  const Index d = X.cols();

  const double x_scale = X.norm();
  const double y_scale = Yr.norm();
  MatrixXd Wt(d, k), P(d, k), Q(2, k);
  int got = 0;
  for (int a = 0; a < k; ++a) {
    if (Yr.norm() <= 1e-12 * y_scale || X.norm() <= 1e-12 * x_scale) break;
    Index best = 0;
    Yr.colwise().squaredNorm().maxCoeff(&best);
    VectorXd u = Yr.col(best);
    VectorXd w = X.transpose() * u;
    if (w.norm() <= 1e-12 * x_scale * u.norm()) break;
    w.normalize();
    VectorXd t, c;
    bool converged = false;
    for (int it = 0; it < opt.max_iter; ++it) {
      t = X * w;
      c = Yr.transpose() * t / t.squaredNorm();
      u = Yr * c / c.squaredNorm();
      VectorXd w_new = X.transpose() * u;
      const double norm = w_new.norm();
      if (norm == 0.0) break;
      w_new /= norm;
      const double change = (w_new - w).norm();
      w = std::move(w_new);
      if (change < opt.tol) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      warn("PLS component " + std::to_string(a + 1) + " did not converge in " +
           std::to_string(opt.max_iter) + " iterations; keeping the last iterate");
    }
    t = X * w;
    const double tt = t.squaredNorm();
    if (tt <= 0.0) break;
    VectorXd p = X.transpose() * t / tt;
    VectorXd q = Yr.transpose() * t / tt;
    X.noalias() -= t * p.transpose();
    Yr.noalias() -= t * q.transpose();
    Wt.col(a) = w;
    P.col(a) = p;
    Q.col(a) = q;
    ++got;
  }
  if (got == 0) throw ValidationError(ErrorCode::degenerate_target, "no PLS component could be extracted");
  if (got < k) {
    warn("PLS exhausted after " + std::to_string(got) + " of " + std::to_string(k) +
         " components; keeping " + std::to_string(got));
  }
  const MatrixXd Wk = Wt.leftCols(got);
  const MatrixXd PtW = P.leftCols(got).transpose() * Wk;
  const MatrixXd R = Wk * PtW.inverse();
  m.k = got;
  m.W = R.transpose();
  m.B = Q.leftCols(got).transpose();
  finish(m, H, Y);
  return m;
}

ProbeModel fit_pcr(const MatrixXd& H, const MatrixXd& Y, int k) {
  check_inputs(H, Y, k);
  ProbeModel m;
  m.method = ProbeMethod::pcr;
  m.mu_H = H.colwise().mean().transpose();
  m.mu_Y = Y.colwise().mean().transpose();
  const MatrixXd X = H.rowwise() - m.mu_H.transpose();
  const MatrixXd Yc = Y.rowwise() - m.mu_Y.transpose();

  Eigen::BDCSVD<MatrixXd> svd(X, Eigen::ComputeThinV);
  MatrixXd V = svd.matrixV().leftCols(k);
  for (int j = 0; j < k; ++j) {
    Index idx = 0;
    V.col(j).cwiseAbs().maxCoeff(&idx);
    if (V(idx, j) < 0) V.col(j) *= -1.0;
  }
  const MatrixXd T = X * V;
  m.k = k;
  m.W = V.transpose();
  m.B = T.completeOrthogonalDecomposition().solve(Yc);
  m.orthonormal = true;
  finish(m, H, Y);
  return m;
}

ProbeModel fit_probe(ProbeMethod method, const MatrixXd& H, const MatrixXd& Y, int k, const FitOptions& opt) {
  return method == ProbeMethod::pls ? fit_pls(H, Y, k, opt) : fit_pcr(H, Y, k);
}

ProbeModel fit_probe(ProbeMethod method, const ActivationDataset& data, int k, const FitOptions& opt) {
  ProbeModel m = fit_probe(method, data.H, data.Y, k, opt);
  if (!data.meta.empty()) m.layer = data.meta.front().layer;
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

Split split_by_sample(const ActivationDataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError(ErrorCode::usage, "train fraction must lie in (0, 1)");
  }
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> index;
  for (const auto& m : data.meta) {
    if (index.emplace(m.sample_id, ids.size()).second) ids.push_back(m.sample_id);
  }
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::stream(seed, hash_name("split"));
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
  std::vector<bool> is_train(ids.size(), false);
  for (std::size_t i = 0; i < n_train && i < order.size(); ++i) is_train[order[i]] = true;
  Split s;
  for (std::size_t r = 0; r < data.meta.size(); ++r) {
    (is_train[index.at(data.meta[r].sample_id)] ? s.train : s.eval).push_back(static_cast<Index>(r));
  }
  return s;
}

namespace {

Cell meta_cell(const ActivationDataset& data, Index i) {
  if (!data.meta.empty()) return {data.meta[i].ei, data.meta[i].ri};
  return {static_cast<int>(data.Y(i, 0)), static_cast<int>(data.Y(i, 1))};
}

std::map<Cell, VectorXd> centroids_by_meta(const ProbeModel& model, const ActivationDataset& data, int dims) {
  dims = std::min<int>(dims, static_cast<int>(model.W.rows()));
  const MatrixXd S = model.project_rows(data.H).leftCols(dims);
  std::map<Cell, VectorXd> sums;
  std::map<Cell, int> counts;
  for (Index i = 0; i < S.rows(); ++i) {
    const Cell c = meta_cell(data, i);
    auto [it, fresh] = sums.try_emplace(c, VectorXd::Zero(dims));
    it->second += S.row(i).transpose();
    ++counts[c];
  }
  for (auto& [c, v] : sums) v /= counts[c];
  return sums;
}

}  // namespace

std::map<Cell, VectorXd> cell_centroids(const ProbeModel& model, const ActivationDataset& data, int dims) {
  return centroids_by_meta(model, data, dims);
}

double nearest_centroid_accuracy(const ProbeModel& model, const ActivationDataset& train,
                                 const ActivationDataset& eval, int dims) {
  const auto centroids = centroids_by_meta(model, train, dims);
  if (centroids.empty() || eval.size() == 0) throw ValidationError("nearest-centroid accuracy needs data");
  dims = static_cast<int>(centroids.begin()->second.size());
  const MatrixXd S = model.project_rows(eval.H).leftCols(dims);
  std::size_t hits = 0;
  for (Index i = 0; i < S.rows(); ++i) {
    const VectorXd s = S.row(i).transpose();
    Cell best{};
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [c, v] : centroids) {
      const double dist = (s - v).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    if (best == meta_cell(eval, i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(S.rows());
}

namespace {

MatrixXd cosine_of(const std::vector<std::optional<VectorXd>>& vs) {
  const auto n = static_cast<Index>(vs.size());
  MatrixXd out = MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (!vs[i] || !vs[j]) continue;
      const double denom = vs[i]->norm() * vs[j]->norm();
      if (denom > 0) out(i, j) = vs[i]->dot(*vs[j]) / denom;
    }
  }
  return out;
}

}  // namespace

MatrixXd cell_cosine_matrix(const ProbeModel& model, const ActivationDataset& data) {
  const auto centroids = centroids_by_meta(model, data, static_cast<int>(model.W.rows()));
  std::vector<std::optional<VectorXd>> vs(kCellCount);
  for (const auto& [c, v] : centroids) {
    if (c.valid()) vs[c.flat()] = v;
  }
  return cosine_of(vs);
}

MatrixXd relation_cosine_matrix(const ProbeModel& model, const ActivationDataset& data) {
  const MatrixXd S = model.project_rows(data.H);
  std::vector<std::optional<VectorXd>> vs(kRelationCount);
  std::vector<int> counts(kRelationCount, 0);
  for (Index i = 0; i < S.rows(); ++i) {
    const int r = meta_cell(data, i).ri - 1;
    if (r < 0 || r >= kRelationCount) continue;
    if (!vs[r]) vs[r] = VectorXd::Zero(S.cols());
    *vs[r] += S.row(i).transpose();
    ++counts[r];
  }
  for (int r = 0; r < kRelationCount; ++r) {
    if (vs[r]) *vs[r] /= counts[r];
  }
  return cosine_of(vs);
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

std::string SweepReport::to_csv() const {
  std::string out = "layer,k,method,control,r2_ei,r2_ri,r2_avg,fit_r2_ei,fit_r2_ri,fit_r2_avg\n";
  for (const auto& r : rows) {
    out += std::to_string(r.layer) + "," + std::to_string(r.k) + "," + std::string(to_string(r.method)) + "," +
           r.control + "," + fmt(r.eval.per_target[0]) + "," + fmt(r.eval.per_target[1]) + "," +
           fmt(r.eval.averaged) + "," + fmt(r.fit.per_target[0]) + "," + fmt(r.fit.per_target[1]) + "," +
           fmt(r.fit.averaged) + "\n";
  }
  return out;
}

const SweepRow* SweepReport::find(int layer, int k, ProbeMethod method, const std::string& control) const {
  for (const auto& r : rows) {
    if (r.layer == layer && r.k == k && r.method == method && r.control == control) return &r;
  }
  return nullptr;
}

SweepReport sweep(const std::map<int, ActivationDataset>& by_layer, const SweepOptions& options) {
  if (options.ks.empty() || options.methods.empty()) throw ValidationError(ErrorCode::usage, "sweep needs ks and methods");
  SweepReport report;
  std::vector<int> layers = options.layers;
  if (layers.empty()) {
    for (const auto& [l, ds] : by_layer) layers.push_back(l);
  }
  const int k_max = *std::max_element(options.ks.begin(), options.ks.end());
  for (int layer : layers) {
    auto it = by_layer.find(layer);
    if (it == by_layer.end()) {
      report.skipped_layers.push_back(layer);
      continue;
    }
    const ActivationDataset& data = it->second;
    const Split split = split_by_sample(data, options.train_fraction, options.seed);
    const ActivationDataset train = data.subset(split.train);
    const ActivationDataset eval = data.subset(split.eval);

    std::vector<std::pair<std::string, MatrixXd>> controls{{"none", train.Y}};
    if (options.random_labels) {
      std::vector<Index> perm(static_cast<std::size_t>(train.size()));
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng = Rng::stream(options.seed, hash_name("random_labels") ^ static_cast<std::uint64_t>(layer));
      rng.shuffle(perm);
      MatrixXd Yp(train.Y.rows(), 2);
      for (std::size_t i = 0; i < perm.size(); ++i) Yp.row(static_cast<Index>(i)) = train.Y.row(perm[i]);
      controls.emplace_back("random_labels", std::move(Yp));
    }
    for (ProbeMethod method : options.methods) {
      for (const auto& [control, Ytrain] : controls) {
        const int k_fit = std::min<int>(k_max, static_cast<int>(std::min<Index>(train.dim(), train.size() - 1)));
        const ProbeModel full = fit_probe(method, train.H, Ytrain, k_fit, options.fit);
        for (int k : options.ks) {
          SweepRow row{layer, k, method, control, {}, {}};
          const ProbeModel m = full.leading(std::min(k, full.k));
          // Held-out R² is against the true labels, so the permuted control
          // measures what survives without a real label signal.
          if (eval.size() > 0) row.eval = r2_score(eval.Y, m.predict(eval.H));
          row.fit = r2_score(Ytrain, m.predict(train.H));
          report.rows.push_back(std::move(row));
        }
      }
    }
  }
  if (!report.skipped_layers.empty()) {
    std::string list;
    for (int l : report.skipped_layers) list += (list.empty() ? "" : ", ") + std::to_string(l);
    warn("sweep skipped layers without activations: " + list);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Random projections

MatrixXd random_orthonormal_rows(Index d, int k, std::uint64_t seed, const MatrixXd* exclude) {
  const Index excluded = exclude ? exclude->rows() : 0;
  if (k < 1 || k + excluded > d) {
    throw ValidationError(ErrorCode::usage, "cannot draw " + std::to_string(k) + " orthonormal rows in d=" +
                                                std::to_string(d) + " with " + std::to_string(excluded) +
                                                " excluded directions");
  }
  Rng rng(seed);
  MatrixXd G(d, k);
  for (Index j = 0; j < k; ++j) {
    for (Index i = 0; i < d; ++i) G(i, j) = rng.normal();
  }
  if (exclude && excluded > 0) {
    Eigen::HouseholderQR<MatrixXd> qr_ref(exclude->transpose());
    const MatrixXd Qr = qr_ref.householderQ() * MatrixXd::Identity(d, excluded);
    G -= Qr * (Qr.transpose() * G);
    G -= Qr * (Qr.transpose() * G);
  }
  Eigen::HouseholderQR<MatrixXd> qr(G);
  MatrixXd Q = qr.householderQ() * MatrixXd::Identity(d, k);
  return Q.transpose();
}

RandomProjection random_projection(Index d, int k, std::uint64_t seed, const ProbeModel& reference,
                                   bool orthogonal_to_reference) {
  RandomProjection rp;
  rp.seed = seed;
  rp.W = random_orthonormal_rows(d, k, seed, orthogonal_to_reference ? &reference.W : nullptr);
  if (reference.W.rows() > 0) {
    const double target = reference.W.rowwise().norm().mean();
    rp.W *= target;
  }
  return rp;
}

}  // namespace cbr
