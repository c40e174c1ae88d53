#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cbr {

enum class ArtifactKind { corpus, manifest, probe, plan, results, activations };

std::string_view to_string(ArtifactKind k);
ArtifactKind parse_artifact_kind(std::string_view text);
/// Guesses from the file name: *.jsonl with "result" in the name is results,
/// other *.jsonl corpus, *.cbrt activations, *manifest*.json manifest,
/// *probe*.json probe, *plan*.json plan; other *.json by their format tag.
ArtifactKind guess_artifact_kind(const std::string& path);

struct SchemaReport {
  ArtifactKind kind = ArtifactKind::corpus;
  std::string path;
  std::vector<std::string> errors;
  std::size_t records = 0;  // lines, samples, plans or tokens read

  bool ok() const { return errors.empty(); }
};

/// Reads the artifact with the matching reader and runs its semantic checks.
/// Never throws for content problems; they land in `errors`.
SchemaReport validate_artifact(ArtifactKind kind, const std::string& path);

}  // namespace cbr
