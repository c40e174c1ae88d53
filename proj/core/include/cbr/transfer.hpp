#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cbr/subspace.hpp"
#include "cbr/tensorstore.hpp"

namespace cbr {

/// Per-cell mean differences Δ_{source->target} = mean(target) - mean(source).
struct TranslationMap {
  std::string source;
  std::string target;
  std::map<Cell, Eigen::VectorXd> delta;
  std::map<Cell, std::pair<std::size_t, std::size_t>> counts;  // (target rows, source rows)

  /// Average of the per-cell vectors.
  Eigen::VectorXd mean_delta() const;
  /// Same cells, every vector replaced by mean_delta().
  TranslationMap global() const;
  /// H of `data` with each row shifted by its cell's vector. Rows whose cell
  /// has no vector raise ValidationError(empty_cell).
  Eigen::MatrixXd apply(const ActivationDataset& data) const;
};

/// Δ from `source` rows to `target` rows. Context names come from row
/// metadata unless given.
TranslationMap translation_vector(const ActivationDataset& target, const ActivationDataset& source,
                                  std::string target_name = {}, std::string source_name = {});

enum class AblationMode { random_vector, random_direction, random_norm };

std::string_view to_string(AblationMode m);
AblationMode parse_ablation_mode(std::string_view text);

/// random_vector: iid Gaussian entries with variance |Δ|²/d, so the norm
/// matches in expectation. random_direction: exact norm, uniform direction.
/// random_norm: same direction, norm scaled by U(0.5, 2).
TranslationMap ablate_translation(const TranslationMap& map, AblationMode mode, std::uint64_t seed);

/// Linear map M minimizing |Z - M X|² + λ|M|² for paired columns, kept in
/// the dual form M = Z (XᵀX + λI)⁻¹ Xᵀ so d x d is never materialized.
struct LinearMap {
  Eigen::MatrixXd X;  // d x m source columns
  Eigen::MatrixXd Z;  // d x m target columns
  Eigen::MatrixXd A;  // (XᵀX + λI)⁻¹
  double lambda = 0.0;

  Eigen::VectorXd apply(const Eigen::VectorXd& h) const;
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& H) const;
  Eigen::MatrixXd matrix() const;
};

/// λ = ridge_scale * trace(XᵀX) / m. ridge_scale = 0 with a singular XᵀX
/// raises ValidationError(singular).
LinearMap fit_linear_map(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, double ridge_scale = 1e-3);

/// Pairs the 12 cell means of `source` and `target`.
LinearMap learned_map(const ActivationDataset& source, const ActivationDataset& target, double ridge_scale = 1e-3);

// ---------------------------------------------------------------------------
// Cross-context fit grids

/// Produces the activations fed to the target probe for one (source,
/// target) pair; return H unchanged for raw mode.
using TransferTransform =
    std::function<Eigen::MatrixXd(const std::string& source, const std::string& target, const ActivationDataset& data)>;

struct CrossFitEntry {
  std::string source;  // context whose activations are scored
  std::string target;  // context whose probe scores them
  std::string mode;
  std::optional<double> r2;  // empty when the probe is missing or R² undefined
};

struct CrossFitMatrix {
  std::string mode;
  std::vector<std::string> conditions;
  std::vector<CrossFitEntry> entries;

  std::optional<double> at(const std::string& source, const std::string& target) const;
  /// source,target,mode,r2
  std::string to_csv(bool header = true) const;
};

CrossFitMatrix cross_fit(const std::map<std::string, ProbeModel>& probes,
                         const std::map<std::string, ActivationDataset>& datasets, const std::string& mode,
                         const TransferTransform& transform = nullptr);

/// Transforms for the standard modes, computing Δ or M from `datasets`.
/// mode: raw | translated | translated_global | random_vector |
/// random_direction | random_norm | learned_map
TransferTransform standard_transform(const std::string& mode, const std::map<std::string, ActivationDataset>& datasets,
                                     std::uint64_t seed = 0, double ridge_scale = 1e-3);

const std::vector<std::string>& standard_transfer_modes();

}  // namespace cbr
