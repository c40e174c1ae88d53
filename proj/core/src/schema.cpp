#include "cbr/schema.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>


#include "cbr/corpus_io.hpp"
#include "cbr/error.hpp"
#include "cbr/intervene.hpp"
#include "cbr/subspace.hpp"
#include "cbr/tensorstore.hpp"

namespace cbr {

std::string_view to_string(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::corpus: return "corpus";
    case ArtifactKind::manifest: return "manifest";
    case ArtifactKind::probe: return "probe";
    case ArtifactKind::plan: return "plan";
    case ArtifactKind::results: return "results";
    case ArtifactKind::activations: return "activations";
  }
  return "?";
}

ArtifactKind parse_artifact_kind(std::string_view text) {
  for (auto k : {ArtifactKind::corpus, ArtifactKind::manifest, ArtifactKind::probe, ArtifactKind::plan,
                 ArtifactKind::results, ArtifactKind::activations}) {
    if (to_string(k) == text) return k;
  }
  throw ValidationError(ErrorCode::usage, "unknown artifact kind '" + std::string(text) +
                                              "' (corpus, manifest, probe, plan, results, activations)");
}

ArtifactKind guess_artifact_kind(const std::string& path) {
  const std::filesystem::path p(path);
  const std::string name = p.filename().string();
  const std::string ext = p.extension().string();
  if (ext == ".cbrt") return ArtifactKind::activations;
  if (ext == ".jsonl") return name.find("result") != std::string::npos ? ArtifactKind::results : ArtifactKind::corpus;
  if (name.find("manifest") != std::string::npos) return ArtifactKind::manifest;
  if (name.find("probe") != std::string::npos) return ArtifactKind::probe;
  if (name.find("plan") != std::string::npos) return ArtifactKind::plan;
  if (ext == ".json") {
    // Fall back to the format tag inside the file.
    std::ifstream in(p);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_object()) {
      const auto f = j.find("format");
      if (f == j.end()) return ArtifactKind::manifest;
      if (*f == "cbr-probe/1") return ArtifactKind::probe;
      if (*f == "cbr-plan/1") return ArtifactKind::plan;
    }
  }
  throw ValidationError(ErrorCode::usage, "cannot tell the artifact kind of '" + path + "'; pass it explicitly");
}

SchemaReport validate_artifact(ArtifactKind kind, const std::string& path) {
  SchemaReport rep;
  rep.kind = kind;
  rep.path = path;
  try {
    switch (kind) {
      case ArtifactKind::corpus: {
        const auto corpus = read_corpus(path);
        for (const auto& s : corpus) s.discourse.validate();
        rep.records = corpus.size();
        break;
      }
      case ArtifactKind::manifest:
        rep.records = read_manifest(path).size();
        break;
      case ArtifactKind::probe: {
        const ProbeModel m = load_probe(path);
        if (!m.W.allFinite() || !m.B.allFinite()) rep.errors.push_back("probe holds non-finite weights");
        rep.records = static_cast<std::size_t>(m.k);
        break;
      }
      case ArtifactKind::plan:
        rep.records = load_plan_set(path).plans.size();
        break;
      case ArtifactKind::results:
        rep.records = read_results(path).size();
        break;
      case ArtifactKind::activations: {
        const ActivationFile f = read_activations(path);
        f.validate();
        rep.records = f.n_tokens;
        break;
      }
    }
  } catch (const Error& e) {
    rep.errors.push_back(e.what());
  }
  return rep;
}

}  // namespace cbr
