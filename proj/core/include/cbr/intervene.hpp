#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cbr/corpus.hpp"
#include "cbr/subspace.hpp"
#include "cbr/tensorstore.hpp"

namespace cbr {

// ---------------------------------------------------------------------------
// Plans

enum class PlanKind { grid_sample, perturb_cbr, perturb_random, steer, head_patch, head_mean_ablate };

std::string_view to_string(PlanKind k);
PlanKind parse_plan_kind(std::string_view text);

/// Where a patch vector is added.
///   attribute       discourse tokens of the annotation at `cell`
///   query_entity    target entity inside the query prompt
///   query_exemplar  exemplar attribute inside the query prompt
///   last_token      final prompt token
enum class Site { attribute, query_entity, query_exemplar, last_token };

std::string_view to_string(Site s);
Site parse_site(std::string_view text);

struct PatchTarget {
  std::string sample_id;
  Site site = Site::attribute;
  std::optional<Cell> cell;
  std::optional<Span> token_range;  // from the activation manifest, when known
  std::optional<Span> char_span;    // bytes of the discourse text or the prompt
  std::vector<int> layers;
  int vector_ref = -1;  // index into PlanSet::vectors; -1 when the plan has no vector
  bool operator==(const PatchTarget&) const = default;
};

struct HeadRef {
  int layer = 0;
  int head = 0;
  auto operator<=>(const HeadRef&) const = default;
};

/// Grid plans carry the two basis rows and the target's own coordinates;
/// the patch for point p is alpha * sum_m (p_m - origin_m) * basis_m.
struct GridSpec {
  std::array<int, 2> basis_refs{-1, -1};
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  bool operator==(const GridSpec&) const = default;
};

/// Donor input for head patching.
struct Donor {
  std::string text;
  QuerySpec query;
  bool operator==(const Donor&) const = default;
};

struct PatchPlan {
  std::string plan_id;
  PlanKind kind = PlanKind::grid_sample;
  double alpha = 0.0;
  std::vector<PatchTarget> targets;
  QuerySpec query;
  /// Grid plans list the sample's attributes in row-major cell order.
  std::vector<std::string> answer_candidates;
  std::optional<std::string> expected_answer;
  std::optional<GridSpec> grid;
  /// head_patch: each head is patched in its own forward pass.
  /// head_mean_ablate: all listed heads are ablated together.
  std::vector<HeadRef> heads;
  std::optional<Donor> donor;
  std::map<std::string, std::string> tags;
  bool operator==(const PatchPlan&) const = default;
};

struct PlanSet {
  Eigen::Index d = 0;
  std::vector<Eigen::VectorXd> vectors;
  Eigen::MatrixXd points;  // n x 2, grid plans only
  std::vector<PatchPlan> plans;

  /// Appends a vector, reusing an identical earlier one.
  int add_vector(const Eigen::VectorXd& v);
  void validate(int max_layer = 1024) const;
};

std::string plan_set_json(const PlanSet& set, const std::string& vectors_file);
void save_plan_set(const std::string& path, const PlanSet& set);
PlanSet load_plan_set(const std::string& path);

// ---------------------------------------------------------------------------
// Vector algebra shared by plan builders and tests

/// h* = h + alpha * lift(s)
Eigen::VectorXd apply_lift(const ProbeModel& probe, const Eigen::VectorXd& h, const Eigen::VectorXd& s, double alpha);

/// s = p - project(h) on the first two components, zero beyond.
Eigen::VectorXd grid_patch_vector(const ProbeModel& probe, const Eigen::VectorXd& h, const Eigen::Vector2d& p,
                                  double alpha);

/// alpha * lifting^T W (h - mu), lifting = W (CBR) or W_rand (control).
Eigen::VectorXd perturbation_vector(const ProbeModel& probe, const Eigen::MatrixXd& lifting, const Eigen::VectorXd& h,
                                    double alpha);

// ---------------------------------------------------------------------------
// Plan builders

/// Rows of `data` give the activations of each attribute; `corpus` supplies
/// tables, texts and queries. `manifest` is optional and fills token ranges.
struct PlanInputs {
  const std::vector<CorpusSample>* corpus = nullptr;
  const ActivationDataset* data = nullptr;
  const Manifest* manifest = nullptr;
};

struct GridOptions {
  int n_points = 10000;
  double alpha = -0.4;
  int n_samples = 50;
  int layer = 15;
  std::uint64_t seed = 0;
};

/// Uniform points over the bounding box of the first two projected
/// coordinates of `box_data`, and one plan per (sample, attribute) among
/// `n_samples` random samples whose attribute admits a one-shot query.
PlanSet plan_grid_sampling(const ProbeModel& probe, const ActivationDataset& box_data, const PlanInputs& in,
                           const GridOptions& opt);

struct PerturbOptions {
  std::vector<double> alphas{0.0, -0.2, -0.4, -0.6, -0.8, -1.0};
  int n_samples = 50;
  int layer = 15;
  std::uint64_t seed = 0;
};

/// For each alpha, a perturb_cbr and a perturb_random plan per sample. Every
/// attribute of the discourse is perturbed; the query asks for one of them.
PlanSet plan_perturbation(const ProbeModel& probe, const Eigen::MatrixXd& W_rand, const PlanInputs& in,
                          const PerturbOptions& opt);

enum class Axis { ei, ri };
std::string_view to_string(Axis a);
Axis parse_axis(std::string_view text);

struct SteeringVector {
  Axis axis = Axis::ri;
  int from_j = 1;
  int to_j = 2;
  Eigen::VectorXd s;
  std::array<int, 2> layer_range{10, 20};
  std::size_t n_pairs = 0;
};

/// Mean of project(h[to]) - project(h[from]) over rows paired by sample_id
/// with the other index equal. |to - from| must be 1.
SteeringVector steering_vector(const ProbeModel& probe, const ActivationDataset& data, Axis axis, int from_j,
                               int to_j);

struct SteerOptions {
  std::vector<double> alphas;  // empty: 0.4, 0.5, ..., 1.6
  std::optional<Site> site;    // default: exemplar for ri, entity for ei
  int first_layer = 10;
  int last_layer = 20;
  bool per_layer = false;
  int n_samples = 50;
  std::uint64_t seed = 0;
};

std::vector<double> default_steering_alphas();

PlanSet plan_steering(const ProbeModel& probe, const SteeringVector& s, const PlanInputs& in, const SteerOptions& opt);

struct HeadOptions {
  int n_instances = 300;
  int n_layers = 32;
  int n_heads = 32;
  std::uint64_t seed = 0;
};

/// Counterfactual head-patching plans, one per instance, each listing every
/// (layer, head) to patch separately.
PlanSet plan_head_patching(const std::vector<CorpusSample>& corpus, const HeadOptions& opt);

/// Mean-ablation plans for each m: the top-m heads of `ranking` and, as a
/// control, m random heads. m = 0 gives the unablated baseline.
PlanSet plan_head_ablation(const std::vector<CorpusSample>& corpus, const std::vector<HeadRef>& ranking,
                           const std::vector<int>& ms, const HeadOptions& opt);

// ---------------------------------------------------------------------------
// Results

struct InterventionResult {
  std::string plan_id;
  std::string query_id;
  std::optional<int> point;
  std::optional<HeadRef> head;
  double logit_original_before = 0.0;
  double logit_original_after = 0.0;
  std::optional<double> logit_expected_before;
  std::optional<double> logit_expected_after;
  std::string predicted_token;
  bool correct = false;
  /// Post-patch logits of the answer candidates (required for grid plans).
  std::map<std::string, double> candidate_logits;
  bool operator==(const InterventionResult&) const = default;
};

nlohmann::json to_json(const InterventionResult& r);
InterventionResult result_from_json(const nlohmann::json& j);
std::string results_to_jsonl(const std::vector<InterventionResult>& results);
std::vector<InterventionResult> results_from_jsonl(std::string_view text);
void write_results(const std::string& path, const std::vector<InterventionResult>& results);
std::vector<InterventionResult> read_results(const std::string& path);

/// Query ids whose "before" logits differ between results by more than tol.
std::vector<std::string> before_value_mismatches(const std::vector<InterventionResult>& results, double tol = 0.0);

// ---------------------------------------------------------------------------
// Evaluation

struct CrossSection {
  Cell cell;
  Axis axis = Axis::ri;
  std::vector<double> position;  // bin centers along the axis direction
  std::vector<double> logit;     // mean logit per bin
  bool unimodal = false;
};

struct LogitLandscape {
  Eigen::MatrixXd points;  // n x 2
  Eigen::MatrixXd logits;  // n x 12 mean logit per cell, NaN when unseen
  std::vector<int> argmax;  // flat cell per point
  Eigen::Vector2d ei_direction = Eigen::Vector2d::Zero();
  Eigen::Vector2d ri_direction = Eigen::Vector2d::Zero();
  std::vector<CrossSection> sections;

  int occupied_cells() const;
  /// Index of the point where `cell`'s mean logit peaks.
  Eigen::Index peak(Cell cell) const;
  std::string to_csv() const;
  std::string sections_csv() const;
};

/// Sums per-point cell logits over plans; feeds both eval_grid and the
/// in-process oracle executor.
class GridAccumulator {
 public:
  explicit GridAccumulator(const Eigen::MatrixXd& points);
  void add(Eigen::Index point, int flat_cell, double logit);
  void add_row(Eigen::Index point, const Eigen::Matrix<double, 1, kCellCount>& logits);
  LogitLandscape finish(int bins = 25, double tolerance = 0.02) const;

 private:
  Eigen::MatrixXd points_;
  Eigen::MatrixXd sum_;
  Eigen::MatrixXd count_;
};

/// Throws ValidationError listing (plan, point) pairs without results.
LogitLandscape eval_grid(const std::vector<InterventionResult>& results, const PlanSet& plans);

/// Relaxed unimodality: no rise after the curve has fallen by more than
/// `tolerance` times its range.
bool is_unimodal(const std::vector<double>& values, double tolerance);

struct AccuracyPoint {
  PlanKind kind = PlanKind::perturb_cbr;
  double alpha = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;
};

std::vector<AccuracyPoint> eval_perturbation(const std::vector<InterventionResult>& results, const PlanSet& plans);
std::string accuracy_csv(const std::vector<AccuracyPoint>& curve);

struct SteeringRow {
  std::string context;
  double alpha = 0.0;
  double original_before = 0.0;
  double original_after = 0.0;
  double expected_before = 0.0;
  double expected_after = 0.0;
  double flip_rate = 0.0;  // expected_after > original_after
  std::size_t n = 0;
};

std::vector<SteeringRow> eval_steering(const std::vector<InterventionResult>& results, const PlanSet& plans);
std::string steering_csv(const std::vector<SteeringRow>& rows);
/// Row with the highest flip rate per context.
std::vector<SteeringRow> best_alpha(const std::vector<SteeringRow>& rows);

/// (patch - org) / org; org == 0 raises ValidationError(undefined_score).
double head_patch_score(double logit_org, double logit_patch);

struct HeadScores {
  int n_layers = 0;
  int n_heads = 0;
  Eigen::MatrixXd mean;  // layers x heads
  Eigen::MatrixXi count;
  std::vector<HeadRef> ranking;  // by |mean| descending
  std::string to_csv() const;
};

HeadScores eval_heads(const std::vector<InterventionResult>& results, const PlanSet& plans);

struct AblationPoint {
  int m = 0;
  bool random = false;
  double accuracy = 0.0;
  std::size_t n = 0;
};
std::vector<AblationPoint> eval_head_ablation(const std::vector<InterventionResult>& results, const PlanSet& plans);
std::string ablation_csv(const std::vector<AblationPoint>& rows);

}  // namespace cbr
