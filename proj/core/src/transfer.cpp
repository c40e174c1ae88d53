#include "cbr/transfer.hpp"

#include <cmath>
#include <cstdio>
#include <memory>

#include "cbr/error.hpp"
#include "cbr/rng.hpp"

namespace cbr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Cell row_cell(const ActivationDataset& data, Index i) {
  if (!data.meta.empty()) return {data.meta[i].ei, data.meta[i].ri};
  return {static_cast<int>(data.Y(i, 0)), static_cast<int>(data.Y(i, 1))};
}

std::map<Cell, std::pair<VectorXd, std::size_t>> cell_means(const ActivationDataset& data) {
  std::map<Cell, std::pair<VectorXd, std::size_t>> out;
  for (Index i = 0; i < data.size(); ++i) {
    auto [it, fresh] = out.try_emplace(row_cell(data, i), VectorXd::Zero(data.dim()), 0);
    it->second.first += data.H.row(i).transpose();
    ++it->second.second;
  }
  for (auto& [c, v] : out) v.first /= static_cast<double>(v.second);
  return out;
}

std::string name_of(const ActivationDataset& data) {
  return data.meta.empty() ? std::string() : std::string(to_string(data.meta.front().context));
}

}  // namespace

VectorXd TranslationMap::mean_delta() const {
  if (delta.empty()) throw ValidationError(ErrorCode::empty_cell, "translation map has no cells");
  VectorXd sum = VectorXd::Zero(delta.begin()->second.size());
  for (const auto& [c, v] : delta) sum += v;
  return sum / static_cast<double>(delta.size());
}

TranslationMap TranslationMap::global() const {
  TranslationMap out = *this;
  const VectorXd mean = mean_delta();
  for (auto& [c, v] : out.delta) v = mean;
  return out;
}

MatrixXd TranslationMap::apply(const ActivationDataset& data) const {
  MatrixXd H = data.H;
  for (Index i = 0; i < H.rows(); ++i) {
    const Cell c = row_cell(data, i);
    auto it = delta.find(c);
    if (it == delta.end()) {
      throw ValidationError(ErrorCode::empty_cell, "no translation vector for cell " + c.label());
    }
    if (it->second.size() != H.cols()) throw ValidationError(ErrorCode::dimension, "translation vector width differs");
    H.row(i) += it->second.transpose();
  }
  return H;
}

TranslationMap translation_vector(const ActivationDataset& target, const ActivationDataset& source,
                                  std::string target_name, std::string source_name) {
  if (target.dim() != source.dim()) throw ValidationError(ErrorCode::dimension, "datasets differ in d");
  TranslationMap map;
  map.target = target_name.empty() ? name_of(target) : std::move(target_name);
  map.source = source_name.empty() ? name_of(source) : std::move(source_name);
  const auto t = cell_means(target);
  const auto s = cell_means(source);
  std::vector<std::string> empty;
  for (const auto& [c, tv] : t) {
    if (!s.count(c)) empty.push_back(c.label());
  }
  for (const auto& [c, sv] : s) {
    if (!t.count(c)) empty.push_back(c.label());
  }
  if (!empty.empty()) {
    std::string list;
    for (const auto& e : empty) list += (list.empty() ? "" : ", ") + e;
    throw ValidationError(ErrorCode::empty_cell, "cells populated in only one context: " + list);
  }
  for (const auto& [c, tv] : t) {
    const auto& sv = s.at(c);
    map.delta[c] = tv.first - sv.first;
    map.counts[c] = {tv.second, sv.second};
  }
  return map;
}

std::string_view to_string(AblationMode m) {
  switch (m) {
    case AblationMode::random_vector: return "random_vector";
    case AblationMode::random_direction: return "random_direction";
    case AblationMode::random_norm: return "random_norm";
  }
  return "?";
}

AblationMode parse_ablation_mode(std::string_view text) {
  for (auto m : {AblationMode::random_vector, AblationMode::random_direction, AblationMode::random_norm}) {
    if (to_string(m) == text) return m;
  }
  throw ValidationError(ErrorCode::usage, "unknown ablation '" + std::string(text) + "'");
}

TranslationMap ablate_translation(const TranslationMap& map, AblationMode mode, std::uint64_t seed) {
  TranslationMap out = map;
  Rng rng = Rng::stream(seed, hash_name(to_string(mode)));
  for (auto& [c, v] : out.delta) {
    const double norm = v.norm();
    const Index d = v.size();
    switch (mode) {
      case AblationMode::random_vector: {
        const double sd = norm / std::sqrt(static_cast<double>(d));
        for (Index j = 0; j < d; ++j) v(j) = sd * rng.normal();
        break;
      }
      case AblationMode::random_direction: {
        VectorXd g(d);
        for (Index j = 0; j < d; ++j) g(j) = rng.normal();
        v = g.normalized() * norm;
        break;
      }
      case AblationMode::random_norm:
        v *= rng.uniform(0.5, 2.0);
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Learned linear map

VectorXd LinearMap::apply(const VectorXd& h) const { return Z * (A * (X.transpose() * h)); }

MatrixXd LinearMap::apply_rows(const MatrixXd& H) const {
  return ((H * X) * A.transpose()) * Z.transpose();
}

MatrixXd LinearMap::matrix() const { return Z * A * X.transpose(); }

LinearMap fit_linear_map(const MatrixXd& X, const MatrixXd& Z, double ridge_scale) {
  if (X.rows() != Z.rows() || X.cols() != Z.cols() || X.cols() == 0) {
    throw ValidationError(ErrorCode::dimension, "paired source/target matrices must share shape");
  }
  if (ridge_scale < 0) throw ValidationError(ErrorCode::usage, "ridge scale must be non-negative");
  LinearMap m;
  m.X = X;
  m.Z = Z;
  const MatrixXd G = X.transpose() * X;
  const auto mcols = static_cast<double>(X.cols());
  m.lambda = ridge_scale * G.trace() / mcols;
  const MatrixXd reg = G + m.lambda * MatrixXd::Identity(G.rows(), G.cols());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(reg);
  const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (eig.eigenvalues().minCoeff() <= 1e-12 * top) {
    throw ValidationError(ErrorCode::singular,
                          "paired system is singular; use a positive ridge scale (e.g. 1e-3)");
  }
  m.A = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  return m;
}

LinearMap learned_map(const ActivationDataset& source, const ActivationDataset& target, double ridge_scale) {
  const auto s = cell_means(source);
  const auto t = cell_means(target);
  std::vector<Cell> cells;
  for (const auto& [c, v] : s) {
    if (t.count(c)) cells.push_back(c);
  }
  if (cells.empty()) throw ValidationError(ErrorCode::empty_cell, "no cells shared between contexts");
  MatrixXd X(source.dim(), static_cast<Index>(cells.size()));
  MatrixXd Z(target.dim(), static_cast<Index>(cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    X.col(static_cast<Index>(i)) = s.at(cells[i]).first;
    Z.col(static_cast<Index>(i)) = t.at(cells[i]).first;
  }
  return fit_linear_map(X, Z, ridge_scale);
}

// ---------------------------------------------------------------------------
// Cross-fit

std::optional<double> CrossFitMatrix::at(const std::string& source, const std::string& target) const {
  for (const auto& e : entries) {
    if (e.source == source && e.target == target) return e.r2;
  }
  return std::nullopt;
}

std::string CrossFitMatrix::to_csv(bool header) const {
  std::string out = header ? "source,target,mode,r2\n" : "";
  for (const auto& e : entries) {
    char buf[32] = "NA";
    if (e.r2) std::snprintf(buf, sizeof buf, "%.6f", *e.r2);
    out += e.source + "," + e.target + "," + e.mode + "," + buf + "\n";
  }
  return out;
}

CrossFitMatrix cross_fit(const std::map<std::string, ProbeModel>& probes,
                         const std::map<std::string, ActivationDataset>& datasets, const std::string& mode,
                         const TransferTransform& transform) {
  CrossFitMatrix out;
  out.mode = mode;
  for (const auto& [name, ds] : datasets) out.conditions.push_back(name);
  for (const auto& [source, data] : datasets) {
    for (const auto& target : out.conditions) {
      CrossFitEntry e{source, target, mode, std::nullopt};
      auto pit = probes.find(target);
      if (pit != probes.end() && data.size() > 0) {
        const MatrixXd H = transform ? transform(source, target, data) : data.H;
        e.r2 = r2_score(data.Y, pit->second.predict(H)).averaged;
      }
      out.entries.push_back(std::move(e));
    }
  }
  return out;
}

const std::vector<std::string>& standard_transfer_modes() {
  static const std::vector<std::string> modes{"raw",           "translated",       "translated_global",
                                              "random_vector", "random_direction", "random_norm",
                                              "learned_map"};
  return modes;
}

TransferTransform standard_transform(const std::string& mode, const std::map<std::string, ActivationDataset>& datasets,
                                     std::uint64_t seed, double ridge_scale) {
  if (mode == "raw") return nullptr;
  auto data = std::make_shared<const std::map<std::string, ActivationDataset>>(datasets);
  if (mode == "learned_map") {
    return [data, ridge_scale](const std::string& source, const std::string& target, const ActivationDataset& d) {
      if (source == target) return d.H;
      return learned_map(data->at(source), data->at(target), ridge_scale).apply_rows(d.H);
    };
  }
  if (mode == "translated" || mode == "translated_global") {
    const bool global = mode == "translated_global";
    return [data, global](const std::string& source, const std::string& target, const ActivationDataset& d) {
      TranslationMap map = translation_vector(data->at(target), data->at(source), target, source);
      return (global ? map.global() : map).apply(d);
    };
  }
  const AblationMode ablation = parse_ablation_mode(mode);
  return [data, ablation, seed](const std::string& source, const std::string& target, const ActivationDataset& d) {
    TranslationMap map = translation_vector(data->at(target), data->at(source), target, source);
    const std::uint64_t pair_seed = seed ^ hash_name(source + "->" + target);
    return ablate_translation(map, ablation, pair_seed).apply(d);
  };
}

}  // namespace cbr
