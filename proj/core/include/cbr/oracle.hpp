#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cbr/corpus.hpp"
#include "cbr/intervene.hpp"
#include "cbr/tensorstore.hpp"

namespace cbr {

// ---------------------------------------------------------------------------
// Planted activations
//
//   h = gain(layer) * (v_ei u_ei + v_ri u_ri) + offset(context)
//       + sum_j z_j n_j + semantic(ri) + noise,    z_j ~ N(0, var_j)
//
// v_ei, v_ri are the scheme's index values. u_ei, u_ri and the nuisance
// directions are mutually orthonormal; offsets and semantic vectors are free.

struct Nuisance {
  Eigen::VectorXd direction;
  double variance = 1.0;
};

struct PlantSpec {
  Eigen::Index d = 64;
  Eigen::VectorXd u_ei;
  Eigen::VectorXd u_ri;
  LabelScheme scheme = LabelScheme::original;
  std::map<Context, Eigen::VectorXd> context_offset;
  std::vector<Nuisance> nuisance;
  double noise_sigma = 0.0;
  /// Signal gain per layer id; layers absent from the map cannot be synthesized.
  std::map<int, double> layer_profile;
  /// Relation index -> group vector; relations sharing a group share the vector.
  std::map<int, Eigen::VectorXd> semantic;
  std::uint64_t seed = 0;

  void validate() const;
  double gain(int layer) const;
  /// Noise-free expected activation of a cell.
  Eigen::VectorXd center(Context context, Cell cell, int layer) const;
};

struct PlantOptions {
  Eigen::Index d = 64;
  LabelScheme scheme = LabelScheme::original;
  std::vector<Context> contexts{Context::city};
  double offset_norm = 20.0;
  int n_nuisance = 2;
  double nuisance_variance = 1.0;
  double noise_sigma = 0.0;
  /// Gaussian gain profile over layers [0, n_layers).
  int n_layers = 32;
  int peak_layer = 15;
  double profile_width = 4.0;
  /// Relation groups, e.g. {{1, 3}, {2, 4}}; empty for none.
  std::vector<std::vector<int>> semantic_groups;
  double semantic_norm = 1.0;
  std::uint64_t seed = 0;
};

PlantSpec make_plant(const PlantOptions& options);

/// sigma such that the planted signal power at the peak layer (summed over
/// all cells of the grid, averaged) is `snr` times the expected noise power
/// E|noise|^2 = d sigma^2.
double sigma_for_snr(const PlantSpec& spec, int layer, double snr);

struct SynthOptions {
  std::vector<Context> contexts{Context::city};
  std::size_t n_samples = 100;
  PatternId pattern = PatternId::base();
  VariantTag variant = VariantTag::none();
  std::vector<int> layers{15};
  std::uint64_t corpus_seed = 0;
};

/// Corpus, manifest, per-sample activation files, and the same activations
/// as in-memory datasets (double precision, before f32 storage).
struct SynthOutput {
  std::vector<CorpusSample> corpus;
  Manifest manifest;
  std::map<std::string, ActivationFile> files;
  std::map<int, ActivationDataset> by_layer;
};

/// Samples for each context are generated with that context's corpus. Each
/// annotated attribute occupies one token; a final token closes the sample.
/// Nuisance and noise are drawn once per token and shared by all layers.
SynthOutput synth_dataset(const PlantSpec& spec, const SynthOptions& options);

/// Writes corpus.jsonl, manifest.json and activations/<sample_id>.cbrt.
void write_synth(const std::string& dir, const SynthOutput& out);

/// plant.json: the options and noise level a plant was made from. Loading
/// rebuilds the identical spec through make_plant.
void save_plant(const std::string& path, const PlantOptions& options, double noise_sigma);
PlantSpec load_plant(const std::string& path);

/// Reads a directory written by write_synth; datasets come from the stored
/// f32 activations and `files` is left empty.
SynthOutput read_synth(const std::string& dir, const std::vector<int>& layers);

// ---------------------------------------------------------------------------
// Decoder
//
// logit_c(h) = -|U h - m_c|^2 / T with U = [u_ei; u_ri] and m_c the planted
// cell center read through U. Equivalent to the linear readout
// 2 m_c . U h - |m_c|^2 plus a term shared by every cell, which makes each
// cell's logit peak at its own center.

struct DecoderSpec {
  Eigen::Matrix<double, 2, Eigen::Dynamic> U;
  Eigen::Matrix<double, kCellCount, 2> centers;
  double temperature = 1.0;

  void validate() const;
};

DecoderSpec make_decoder(const PlantSpec& spec, Context context, int layer, double temperature = 1.0);

Eigen::Matrix<double, 1, kCellCount> synth_logits(const DecoderSpec& decoder, const Eigen::VectorXd& h);
/// Logits for a point already in decoder coordinates (U h).
Eigen::Matrix<double, 1, kCellCount> decoder_logits(const DecoderSpec& decoder, const Eigen::Vector2d& z);

// ---------------------------------------------------------------------------
// Closed loop
//
// A query for cell c reads the (patched) discourse activation of c through
// the decoder. Patches at the query's entity token move the ei coordinate,
// patches at the exemplar token move the ri coordinate. Every layer named by
// a target is treated as the one readout site.

struct OracleWorld {
  const PlantSpec* spec = nullptr;
  const SynthOutput* data = nullptr;
  int layer = 15;
  double temperature = 1.0;
};

/// Emits one result per plan, or per (plan, point) for grid plans.
/// Head plans are not modelled and raise an unsupported error.
void oracle_execute(const PlanSet& plans, const OracleWorld& world,
                    const std::function<void(InterventionResult&&)>& sink);
std::vector<InterventionResult> oracle_execute(const PlanSet& plans, const OracleWorld& world);

/// Grid plans only, accumulated directly without materializing results.
LogitLandscape oracle_grid_landscape(const PlanSet& plans, const OracleWorld& world, int bins = 25,
                                     double tolerance = 0.02);

}  // namespace cbr
