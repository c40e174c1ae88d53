#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cbr/tensorstore.hpp"

namespace cbr {

enum class ProbeMethod { pls, pcr };

std::string_view to_string(ProbeMethod m);
ProbeMethod parse_probe_method(std::string_view text);

/// Coefficient of determination per target column plus their plain mean.
/// A target whose evaluation values are constant has no R²; `averaged` is
/// then empty as well.
struct R2 {
  std::array<std::optional<double>, 2> per_target;
  std::optional<double> averaged;
};

R2 r2_score(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& Yhat);

/// Linear probe H -> [ei, ri].
///
/// `W` is k x d and maps centered activations to subspace scores; `B` is
/// k x 2 and maps scores to centered labels:
///   Yhat = (H - mu_H) W^T B + mu_Y
struct ProbeModel {
  ProbeMethod method = ProbeMethod::pls;
  int k = 0;
  int layer = -1;
  Eigen::MatrixXd W;
  Eigen::MatrixXd B;
  Eigen::VectorXd mu_H;
  Eigen::VectorXd mu_Y;
  R2 fit_r2;
  std::size_t n_train = 0;
  bool orthonormal = false;  // W rows re-based by orthonormalized()

  Eigen::Index d() const { return W.cols(); }

  Eigen::MatrixXd predict(const Eigen::MatrixXd& H) const;
  Eigen::VectorXd project(const Eigen::VectorXd& h) const;
  /// Row-wise projection of an n x d matrix into n x k scores.
  Eigen::MatrixXd project_rows(const Eigen::MatrixXd& H) const;
  Eigen::VectorXd lift(const Eigen::VectorXd& s) const;

  /// The model restricted to its first `k` components. Exact for both
  /// methods: PLS components are extracted sequentially and PCR scores are
  /// uncorrelated, so neither W nor B rows change when components are added.
  /// fit_r2 is cleared.
  ProbeModel leading(int k) const;

  /// Same row space and predictions, rows re-based by Gram-Schmidt so that
  /// W Wᵀ = I. Row m stays parallel to the component of row m orthogonal
  /// to rows 1..m-1.
  ProbeModel orthonormalized() const;
};

struct FitOptions {
  double tol = 1e-9;
  int max_iter = 500;
};

/// NIPALS PLS2 with deflation. Throws ValidationError(degenerate_target) if
/// a Y column is constant. Fewer than `k` components are kept, with a
/// warning, when X or Y is exhausted first.
ProbeModel fit_pls(const Eigen::MatrixXd& H, const Eigen::MatrixXd& Y, int k, const FitOptions& opt = {});
ProbeModel fit_pcr(const Eigen::MatrixXd& H, const Eigen::MatrixXd& Y, int k);
ProbeModel fit_probe(ProbeMethod method, const Eigen::MatrixXd& H, const Eigen::MatrixXd& Y, int k,
                     const FitOptions& opt = {});
ProbeModel fit_probe(ProbeMethod method, const ActivationDataset& data, int k, const FitOptions& opt = {});

// ---------------------------------------------------------------------------
// Evaluation helpers

/// Row indices of a split by sample_id: `train_fraction` of the distinct
/// samples (shuffled with `seed`) go to train, the rest to eval.
struct Split {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> eval;
};
Split split_by_sample(const ActivationDataset& data, double train_fraction, std::uint64_t seed);

/// Mean projected score vector per (ei, ri) cell, using the first `dims`
/// components.
std::map<Cell, Eigen::VectorXd> cell_centroids(const ProbeModel& model, const ActivationDataset& data,
                                               int dims = 2);

/// Fraction of `eval` rows whose nearest train centroid is their own cell.
double nearest_centroid_accuracy(const ProbeModel& model, const ActivationDataset& train,
                                 const ActivationDataset& eval, int dims = 2);

/// Cosine similarity between cell centroids in the full k-dim projection,
/// rows/cols in row-major cell order (e1r1, e1r2, ...). Cells absent from
/// the data give NaN rows.
Eigen::MatrixXd cell_cosine_matrix(const ProbeModel& model, const ActivationDataset& data);

/// As above but grouping rows by relation index only (4 x 4).
Eigen::MatrixXd relation_cosine_matrix(const ProbeModel& model, const ActivationDataset& data);

// ---------------------------------------------------------------------------
// Sweeps

struct SweepOptions {
  std::vector<int> layers;
  std::vector<int> ks{1, 2, 3, 4, 5};
  std::vector<ProbeMethod> methods{ProbeMethod::pls};
  bool random_labels = true;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  FitOptions fit;
};

struct SweepRow {
  int layer = 0;
  int k = 0;
  ProbeMethod method = ProbeMethod::pls;
  std::string control;  // "none" or "random_labels"
  R2 eval;              // held-out
  R2 fit;               // training rows
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<int> skipped_layers;

  /// layer,k,method,control,r2_ei,r2_ri,r2_avg,fit_r2_ei,fit_r2_ri,fit_r2_avg
  std::string to_csv() const;
  const SweepRow* find(int layer, int k, ProbeMethod method, const std::string& control) const;
};

/// Evaluates the full (layer, k, method, control) grid. Layers absent from
/// `by_layer` are skipped with a warning and listed in the report.
SweepReport sweep(const std::map<int, ActivationDataset>& by_layer, const SweepOptions& options);

// ---------------------------------------------------------------------------
// Random projections

struct RandomProjection {
  Eigen::MatrixXd W;  // k x d
  std::uint64_t seed = 0;
};

/// Gaussian k x d matrix with orthonormalized rows, rescaled to the mean row
/// norm of `reference.W`. With `orthogonal_to_reference` the rows are also
/// orthogonal to the reference row space.
RandomProjection random_projection(Eigen::Index d, int k, std::uint64_t seed, const ProbeModel& reference,
                                   bool orthogonal_to_reference = false);

/// Unscaled orthonormal rows, exposed for tests.
Eigen::MatrixXd random_orthonormal_rows(Eigen::Index d, int k, std::uint64_t seed,
                                        const Eigen::MatrixXd* exclude = nullptr);

// ---------------------------------------------------------------------------
// Persistence: JSON header plus the W block in the activation-file encoding.

void save_probe(const std::string& path, const ProbeModel& model);
ProbeModel load_probe(const std::string& path);
nlohmann::json probe_header_json(const ProbeModel& model, const std::string& weights_file);

}  // namespace cbr
