#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "cbr/corpus.hpp"

namespace cbr {

// ---------------------------------------------------------------------------
// Activation container
//
//   offset 0   "CBRT"
//          4   u32 version (1)
//          8   u32 dtype (0 = f32)
//         12   u32 header length H in bytes
//         16   u64 n_tokens, u64 n_layers, u64 d, i32 layer_ids[n_layers]
//     16 + H   f32 payload, row-major [token][layer][d]
//
// All integers and floats are little-endian.

inline constexpr std::uint32_t kActivationVersion = 1;
inline constexpr std::size_t kPreambleSize = 16;

struct ActivationFile {
  std::uint64_t n_tokens = 0;
  std::uint64_t n_layers = 0;
  std::uint64_t d = 0;
  std::vector<std::int32_t> layer_ids;
  std::vector<float> data;

  ActivationFile() = default;
  ActivationFile(std::uint64_t tokens, std::vector<std::int32_t> layers, std::uint64_t dim);

  float& at(std::uint64_t token, std::uint64_t layer_index, std::uint64_t j) {
    return data[(token * n_layers + layer_index) * d + j];
  }
  float at(std::uint64_t token, std::uint64_t layer_index, std::uint64_t j) const {
    return data[(token * n_layers + layer_index) * d + j];
  }
  const float* row(std::uint64_t token, std::uint64_t layer_index) const {
    return data.data() + (token * n_layers + layer_index) * d;
  }
  /// Position of `layer_id` in layer_ids, or -1.
  int layer_index(int layer_id) const;
  /// Throws ValidationError on inconsistent dims or layer ordering.
  void validate() const;
  bool operator==(const ActivationFile&) const = default;
};

std::uint64_t activation_file_size(std::uint64_t n_tokens, std::uint64_t n_layers, std::uint64_t d);

std::string encode_activations(const ActivationFile& file);
/// Throws FormatError carrying the byte offset of the first bad field.
ActivationFile decode_activations(std::string_view bytes);

void write_activations(const std::string& path, const ActivationFile& file);
ActivationFile read_activations(const std::string& path);

// ---------------------------------------------------------------------------
// Pooling

/// `automatic` takes the last token of single-token spans and the mean of
/// longer ones.
enum class SpanPooling { last_token, mean, automatic };

std::string_view to_string(SpanPooling p);
SpanPooling parse_pooling(std::string_view text);

/// `rows` holds one token per row; `tokens` indexes into it.
Eigen::VectorXd pool_span(const Eigen::MatrixXd& rows, Span tokens, SpanPooling mode);

// ---------------------------------------------------------------------------
// Manifest

struct TokenSpan {
  int ei = 1;
  int ri = 1;
  Span token_range;
  bool operator==(const TokenSpan&) const = default;
};

struct ManifestEntry {
  std::vector<int> layer_ids;
  std::vector<TokenSpan> token_spans;
  std::string file;  // relative to the manifest's directory unless absolute
  bool operator==(const ManifestEntry&) const = default;
};

/// Keyed by sample_id.
using Manifest = std::map<std::string, ManifestEntry>;

nlohmann::json manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const std::string& path, const Manifest& manifest);
Manifest read_manifest(const std::string& path);

/// Layers recorded for every sample in the manifest.
std::vector<int> common_layers(const Manifest& manifest);

// ---------------------------------------------------------------------------
// Design matrices

struct RowMeta {
  std::string sample_id;
  Context context = Context::city;
  int ei = 1;
  int ri = 1;
  std::string attribute;
  int layer = 15;
};

/// One row per annotated attribute: H (n x d), Y (n x 2, [ei, ri]).
struct ActivationDataset {
  Eigen::MatrixXd H;
  Eigen::MatrixXd Y;
  std::vector<RowMeta> meta;

  Eigen::Index size() const { return H.rows(); }
  Eigen::Index dim() const { return H.cols(); }
  void validate() const;
  ActivationDataset subset(const std::vector<Eigen::Index>& rows) const;
  /// Rows of several datasets stacked in order; dims must agree.
  static ActivationDataset concat(const std::vector<const ActivationDataset*>& parts);
};

struct AssembleOptions {
  int layer = 15;
  SpanPooling pooling = SpanPooling::automatic;
  /// Directory that relative manifest file paths resolve against.
  std::string base_dir = ".";
};

ActivationDataset assemble_design(const std::vector<CorpusSample>& corpus, const Manifest& manifest,
                                  const AssembleOptions& options = {});

/// Assembles several layers with one read per activation file.
std::map<int, ActivationDataset> assemble_layers(const std::vector<CorpusSample>& corpus,
                                                 const Manifest& manifest,
                                                 const std::vector<int>& layers,
                                                 const AssembleOptions& options = {});

}  // namespace cbr
