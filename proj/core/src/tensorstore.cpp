#include "cbr/tensorstore.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <set>

#include "cbr/error.hpp"
#include "io.hpp"

namespace cbr {

using detail::member;
using nlohmann::json;
using VT = json::value_t;

// ---------------------------------------------------------------------------
// Binary encoding

namespace {

constexpr char kMagic[4] = {'C', 'B', 'R', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t pos() const { return pos_; }
  std::uint64_t remaining() const { return bytes_.size() - pos_; }

  std::uint64_t uint(int width, const char* field) {
    if (remaining() < static_cast<std::uint64_t>(width)) {
      throw FormatError(pos_, std::string("truncated file while reading ") + field);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += width;
    return v;
  }

 private:
  std::string_view bytes_;
  std::uint64_t pos_ = 0;
};

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, std::uint64_t offset) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    throw FormatError(offset, "tensor dimensions overflow");
  }
  return a * b;
}

}  // namespace

ActivationFile::ActivationFile(std::uint64_t tokens, std::vector<std::int32_t> layers, std::uint64_t dim)
    : n_tokens(tokens), n_layers(layers.size()), d(dim), layer_ids(std::move(layers)),
      data(tokens * n_layers * dim, 0.0f) {}

int ActivationFile::layer_index(int layer_id) const {
  for (std::size_t i = 0; i < layer_ids.size(); ++i) {
    if (layer_ids[i] == layer_id) return static_cast<int>(i);
  }
  return -1;
}

void ActivationFile::validate() const {
  if (layer_ids.size() != n_layers) throw ValidationError("layer_ids length differs from n_layers");
  for (std::size_t i = 1; i < layer_ids.size(); ++i) {
    if (layer_ids[i] <= layer_ids[i - 1]) throw ValidationError("layer_ids must be strictly increasing");
  }
  if (data.size() != n_tokens * n_layers * d) {
    throw ValidationError("payload holds " + std::to_string(data.size()) + " values, dims need " +
                          std::to_string(n_tokens * n_layers * d));
  }
}

std::uint64_t activation_file_size(std::uint64_t n_tokens, std::uint64_t n_layers, std::uint64_t d) {
  return kPreambleSize + 24 + 4 * n_layers + 4 * n_tokens * n_layers * d;
}

std::string encode_activations(const ActivationFile& f) {
  f.validate();
  std::string out;
  out.reserve(activation_file_size(f.n_tokens, f.n_layers, f.d));
  out.append(kMagic, 4);
  put_u32(out, kActivationVersion);
  put_u32(out, 0);
  put_u32(out, static_cast<std::uint32_t>(24 + 4 * f.n_layers));
  put_u64(out, f.n_tokens);
  put_u64(out, f.n_layers);
  put_u64(out, f.d);
  for (std::int32_t id : f.layer_ids) put_u32(out, static_cast<std::uint32_t>(id));
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(f.data.data()), f.data.size() * sizeof(float));
  } else {
    for (float v : f.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

ActivationFile decode_activations(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(0, "bad magic, not an activation file");
  }
  Reader r(bytes.substr(4));
  auto at = [&] { return 4 + r.pos(); };
  std::uint64_t off = at();
  const auto version = r.uint(4, "version");
  if (version != kActivationVersion) {
    throw FormatError(off, "unsupported version " + std::to_string(version));
  }
  off = at();
  const auto dtype = r.uint(4, "dtype");
  if (dtype != 0) throw FormatError(off, "unsupported dtype " + std::to_string(dtype) + " (only f32)");
  const std::uint64_t header_off = at();
  const auto header_len = r.uint(4, "header length");

  ActivationFile f;
  f.n_tokens = r.uint(8, "n_tokens");
  off = at();
  f.n_layers = r.uint(8, "n_layers");
  f.d = r.uint(8, "d");
  if (f.n_layers > (1u << 20)) throw FormatError(off, "implausible layer count");
  if (header_len != 24 + 4 * f.n_layers) {
    throw FormatError(header_off, "header length " + std::to_string(header_len) +
                                      " does not match " + std::to_string(f.n_layers) + " layers");
  }
  f.layer_ids.reserve(f.n_layers);
  for (std::uint64_t i = 0; i < f.n_layers; ++i) {
    off = at();
    const auto id = static_cast<std::int32_t>(r.uint(4, "layer id"));
    if (!f.layer_ids.empty() && id <= f.layer_ids.back()) {
      throw FormatError(off, "layer ids must be strictly increasing");
    }
    f.layer_ids.push_back(id);
  }
  const std::uint64_t payload_off = at();
  const std::uint64_t count = checked_mul(checked_mul(f.n_tokens, f.n_layers, payload_off), f.d, payload_off);
  const std::uint64_t need = checked_mul(count, 4, payload_off);
  if (r.remaining() < need) {
    throw FormatError(bytes.size(), "truncated payload: expected " + std::to_string(need) +
                                        " bytes after offset " + std::to_string(payload_off) +
                                        ", found " + std::to_string(r.remaining()));
  }
  if (r.remaining() > need) {
    throw FormatError(payload_off + need, "trailing bytes after payload");
  }
  f.data.resize(count);
  const char* src = bytes.data() + payload_off;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(f.data.data(), src, need);
  } else {
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint32_t v = 0;
      for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[4 * i + b])) << (8 * b);
      f.data[i] = std::bit_cast<float>(v);
    }
  }
  return f;
}

void write_activations(const std::string& path, const ActivationFile& file) {
  detail::write_file(path, encode_activations(file));
}

ActivationFile read_activations(const std::string& path) {
  try {
    return decode_activations(detail::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(e.offset(), path + ": " + e.detail());
  }
}

// ---------------------------------------------------------------------------
// Pooling

std::string_view to_string(SpanPooling p) {
  switch (p) {
    case SpanPooling::last_token: return "last_token";
    case SpanPooling::mean: return "mean";
    case SpanPooling::automatic: return "auto";
  }
  return "?";
}

SpanPooling parse_pooling(std::string_view text) {
  if (text == "last_token" || text == "last") return SpanPooling::last_token;
  if (text == "mean") return SpanPooling::mean;
  if (text == "auto") return SpanPooling::automatic;
  throw ValidationError(ErrorCode::usage, "unknown pooling '" + std::string(text) + "' (last_token, mean, auto)");
}

Eigen::VectorXd pool_span(const Eigen::MatrixXd& rows, Span tokens, SpanPooling mode) {
  if (tokens.empty()) throw ValidationError("cannot pool an empty token span");
  if (tokens.end > static_cast<std::size_t>(rows.rows())) {
    throw ValidationError("token span [" + std::to_string(tokens.begin) + ", " +
                          std::to_string(tokens.end) + ") exceeds " + std::to_string(rows.rows()) + " rows");
  }
  const auto n = static_cast<Eigen::Index>(tokens.size());
  const auto b = static_cast<Eigen::Index>(tokens.begin);
  if (mode == SpanPooling::last_token) return rows.row(b + n - 1).transpose();
  return rows.middleRows(b, n).colwise().mean().transpose();
}

// ---------------------------------------------------------------------------
// Manifest

json manifest_to_json(const Manifest& manifest) {
  json out = json::object();
  for (const auto& [id, e] : manifest) {
    json spans = json::array();
    for (const auto& s : e.token_spans) {
      spans.push_back(json{{"ei", s.ei}, {"ri", s.ri},
                           {"token_range", json::array({s.token_range.begin, s.token_range.end})}});
    }
    out[id] = json{{"layer_ids", e.layer_ids}, {"token_spans", spans}, {"file", e.file}};
  }
  return out;
}

Manifest manifest_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("manifest must be a JSON object keyed by sample_id");
  Manifest m;
  for (const auto& [id, v] : j.items()) {
    const std::string what = "manifest entry '" + id + "'";
    ManifestEntry e;
    for (const auto& l : member(v, "layer_ids", VT::array, what)) {
      if (!l.is_number_integer()) throw FormatError(what + ": layer ids must be integers");
      e.layer_ids.push_back(l.get<int>());
    }
    for (std::size_t i = 1; i < e.layer_ids.size(); ++i) {
      if (e.layer_ids[i] <= e.layer_ids[i - 1]) throw FormatError(what + ": layer_ids must be increasing");
    }
    for (const auto& s : member(v, "token_spans", VT::array, what)) {
      TokenSpan ts;
      ts.ei = member(s, "ei", VT::number_integer, what).get<int>();
      ts.ri = member(s, "ri", VT::number_integer, what).get<int>();
      const auto& range = member(s, "token_range", VT::array, what);
      if (range.size() != 2 || !range[0].is_number_unsigned() || !range[1].is_number_unsigned()) {
        throw FormatError(what + ": token_range must be [start, end)");
      }
      ts.token_range = {range[0].get<std::size_t>(), range[1].get<std::size_t>()};
      if (ts.token_range.empty()) throw FormatError(what + ": empty token_range");
      if (!Cell{ts.ei, ts.ri}.valid()) throw FormatError(what + ": cell out of range");
      e.token_spans.push_back(ts);
    }
    e.file = member(v, "file", VT::string, what).get<std::string>();
    m.emplace(id, std::move(e));
  }
  return m;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
  detail::write_file(path, manifest_to_json(manifest).dump(1) + "\n");
}

Manifest read_manifest(const std::string& path) {
  return manifest_from_json(detail::parse_json(detail::read_file(path), path));
}

std::vector<int> common_layers(const Manifest& manifest) {
  if (manifest.empty()) return {};
  std::set<int> common(manifest.begin()->second.layer_ids.begin(), manifest.begin()->second.layer_ids.end());
  for (const auto& [id, e] : manifest) {
    std::set<int> here(e.layer_ids.begin(), e.layer_ids.end());
    std::erase_if(common, [&](int l) { return !here.count(l); });
  }
  return {common.begin(), common.end()};
}

// ---------------------------------------------------------------------------
// Design matrices

void ActivationDataset::validate() const {
  if (Y.rows() != H.rows() || static_cast<std::size_t>(H.rows()) != meta.size()) {
    throw ValidationError(ErrorCode::dimension, "H, Y and meta row counts differ");
  }
  if (Y.cols() != 2) throw ValidationError(ErrorCode::dimension, "Y must have 2 columns");
  for (Eigen::Index i = 0; i < H.rows(); ++i) {
    if (!H.row(i).allFinite()) {
      throw ValidationError("non-finite activation in row " + std::to_string(i) + " (sample '" +
                            meta[i].sample_id + "')");
    }
  }
}

ActivationDataset ActivationDataset::subset(const std::vector<Eigen::Index>& rows) const {
  ActivationDataset out;
  out.H.resize(static_cast<Eigen::Index>(rows.size()), H.cols());
  out.Y.resize(static_cast<Eigen::Index>(rows.size()), Y.cols());
  out.meta.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.H.row(static_cast<Eigen::Index>(i)) = H.row(rows[i]);
    out.Y.row(static_cast<Eigen::Index>(i)) = Y.row(rows[i]);
    out.meta.push_back(meta[rows[i]]);
  }
  return out;
}

ActivationDataset ActivationDataset::concat(const std::vector<const ActivationDataset*>& parts) {
  ActivationDataset out;
  Eigen::Index n = 0;
  Eigen::Index d = -1;
  for (const auto* p : parts) {
    if (d >= 0 && p->dim() != d) throw ValidationError(ErrorCode::dimension, "cannot stack datasets of different d");
    d = p->dim();
    n += p->size();
  }
  out.H.resize(n, std::max<Eigen::Index>(d, 0));
  out.Y.resize(n, 2);
  Eigen::Index at = 0;
  for (const auto* p : parts) {
    out.H.middleRows(at, p->size()) = p->H;
    out.Y.middleRows(at, p->size()) = p->Y;
    out.meta.insert(out.meta.end(), p->meta.begin(), p->meta.end());
    at += p->size();
  }
  return out;
}

namespace {

std::string resolve(const std::string& base_dir, const std::string& file) {
  std::filesystem::path p(file);
  if (p.is_absolute()) return file;
  return (std::filesystem::path(base_dir) / p).string();
}

}  // namespace

std::map<int, ActivationDataset> assemble_layers(const std::vector<CorpusSample>& corpus,
                                                 const Manifest& manifest,
                                                 const std::vector<int>& layers,
                                                 const AssembleOptions& options) {
  std::vector<std::string> missing;
  std::size_t rows = 0;
  for (const auto& s : corpus) {
    auto it = manifest.find(s.sample_id);
    bool ok = it != manifest.end();
    if (ok) {
      for (int l : layers) {
        if (std::find(it->second.layer_ids.begin(), it->second.layer_ids.end(), l) == it->second.layer_ids.end()) ok = false;
      }
      for (const auto& a : s.discourse.annotations) {
        const auto& spans = it->second.token_spans;
        if (std::none_of(spans.begin(), spans.end(), [&](const TokenSpan& t) { return t.ei == a.ei && t.ri == a.ri; })) {
          ok = false;
        }
      }
    }
    if (!ok) missing.push_back(s.sample_id);
    rows += s.discourse.annotations.size();
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 10) list += ", ... (" + std::to_string(missing.size()) + " total)";
    throw AssemblyError(missing, "no activations for requested layers/annotations of: " + list);
  }

  std::map<int, ActivationDataset> out;
  std::map<std::string, ActivationFile> cache;
  Eigen::Index d = -1;
  Eigen::Index row = 0;
  for (const auto& s : corpus) {
    const ManifestEntry& entry = manifest.at(s.sample_id);
    const std::string path = resolve(options.base_dir, entry.file);
    auto cit = cache.find(path);
    if (cit == cache.end()) {
      // Keep a single file resident; manifests list samples file by file.
      cache.clear();
      cit = cache.emplace(path, read_activations(path)).first;
    }
    const ActivationFile& file = cit->second;
    if (d < 0) {
      d = static_cast<Eigen::Index>(file.d);
      for (int l : layers) {
        auto& ds = out[l];
        ds.H.resize(static_cast<Eigen::Index>(rows), d);
        ds.Y.resize(static_cast<Eigen::Index>(rows), 2);
        ds.meta.reserve(rows);
      }
    } else if (static_cast<Eigen::Index>(file.d) != d) {
      throw AssemblyError({s.sample_id}, "activation width " + std::to_string(file.d) +
                                             " differs from " + std::to_string(d) + " in " + path);
    }
    for (const auto& a : s.discourse.annotations) {
      const auto& spans = entry.token_spans;
      const TokenSpan& ts = *std::find_if(spans.begin(), spans.end(),
                                          [&](const TokenSpan& t) { return t.ei == a.ei && t.ri == a.ri; });
      if (ts.token_range.end > file.n_tokens) {
        throw AssemblyError({s.sample_id}, "token range of " + a.cell().label() + " in '" + s.sample_id +
                                               "' exceeds the " + std::to_string(file.n_tokens) +
                                               " tokens of " + path);
      }
      for (int l : layers) {
        const int li = file.layer_index(l);
        if (li < 0) throw AssemblyError({s.sample_id}, "layer " + std::to_string(l) + " absent from " + path);
        Eigen::VectorXd pooled = Eigen::VectorXd::Zero(d);
        const std::size_t n = ts.token_range.size();
        const bool last = options.pooling == SpanPooling::last_token ||
                          (options.pooling == SpanPooling::automatic && n == 1);
        const std::size_t first = last ? ts.token_range.end - 1 : ts.token_range.begin;
        for (std::size_t t = first; t < ts.token_range.end; ++t) {
          pooled += Eigen::Map<const Eigen::VectorXf>(file.row(t, li), d).cast<double>();
        }
        pooled /= static_cast<double>(ts.token_range.end - first);
        if (!pooled.allFinite()) {
          throw ValidationError("non-finite activation for " + a.cell().label() + " of sample '" +
                                s.sample_id + "' at layer " + std::to_string(l));
        }
        auto& ds = out[l];
        ds.H.row(row) = pooled.transpose();
        ds.Y(row, 0) = a.ei;
        ds.Y(row, 1) = a.ri;
        ds.meta.push_back(RowMeta{s.sample_id, s.discourse.table.context, a.ei, a.ri, a.attribute, l});
      }
      ++row;
    }
  }
  if (d < 0) {
    for (int l : layers) out[l] = ActivationDataset{};
  }
  return out;
}

ActivationDataset assemble_design(const std::vector<CorpusSample>& corpus, const Manifest& manifest,
                                  const AssembleOptions& options) {
  auto all = assemble_layers(corpus, manifest, {options.layer}, options);
  return std::move(all.at(options.layer));
}

}  // namespace cbr
