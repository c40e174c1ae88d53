#include <filesystem>

#include "cbr/error.hpp"
#include "cbr/subspace.hpp"
#include "io.hpp"

namespace cbr {

using detail::member;
using nlohmann::json;
using VT = json::value_t;

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_number()) throw FormatError("probe: fit_r2 entries must be numbers or null");
  return j.get<double>();
}

Eigen::VectorXd vec_from(const json& j, const char* key, const std::string& what) {
  const auto& arr = member(j, key, VT::array, what);
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw FormatError(what + ": '" + key + "' must hold numbers");
    v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  }
  return v;
}

}  // namespace

json probe_header_json(const ProbeModel& m, const std::string& weights_file) {
  json B = json::array();
  for (Eigen::Index i = 0; i < m.B.rows(); ++i) B.push_back(json::array({m.B(i, 0), m.B(i, 1)}));
  return json{{"format", "cbr-probe/1"},
              {"method", to_string(m.method)},
              {"k", m.k},
              {"layer", m.layer},
              {"d", m.d()},
              {"n_train", m.n_train},
              {"basis", m.orthonormal ? "orthonormal" : "rotations"},
              {"mu_H", std::vector<double>(m.mu_H.data(), m.mu_H.data() + m.mu_H.size())},
              {"mu_Y", std::vector<double>(m.mu_Y.data(), m.mu_Y.data() + m.mu_Y.size())},
              {"B", B},
              {"fit_r2", json{{"ei", opt(m.fit_r2.per_target[0])},
                              {"ri", opt(m.fit_r2.per_target[1])},
                              {"avg", opt(m.fit_r2.averaged)}}},
              {"weights_file", weights_file}};
}

void save_probe(const std::string& path, const ProbeModel& m) {
  const std::filesystem::path p(path);
  const std::string weights = p.stem().string() + ".w.cbrt";
  ActivationFile w(static_cast<std::uint64_t>(m.W.rows()), {m.layer < 0 ? 0 : m.layer},
                   static_cast<std::uint64_t>(m.W.cols()));
  for (Eigen::Index i = 0; i < m.W.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.W.cols(); ++j) w.at(i, 0, j) = static_cast<float>(m.W(i, j));
  }
  write_activations((p.parent_path() / weights).string(), w);
  detail::write_file(path, probe_header_json(m, weights).dump(1) + "\n");
}

ProbeModel load_probe(const std::string& path) {
  const std::string what = "probe '" + path + "'";
  const json j = detail::parse_json(detail::read_file(path), what);
  if (member(j, "format", VT::string, what) != "cbr-probe/1") throw FormatError(what + ": unknown format");
  ProbeModel m;
  try {
    m.method = parse_probe_method(member(j, "method", VT::string, what).get<std::string>());
  } catch (const ValidationError& e) {
    throw FormatError(what + ": " + e.what());
  }
  m.k = member(j, "k", VT::number_integer, what).get<int>();
  m.layer = member(j, "layer", VT::number_integer, what).get<int>();
  const auto d = member(j, "d", VT::number_integer, what).get<Eigen::Index>();
  m.n_train = member(j, "n_train", VT::number_unsigned, what).get<std::size_t>();
  m.orthonormal = j.value("basis", std::string("rotations")) == "orthonormal";
  m.mu_H = vec_from(j, "mu_H", what);
  m.mu_Y = vec_from(j, "mu_Y", what);
  const auto& B = member(j, "B", VT::array, what);
  if (m.k < 1 || static_cast<int>(B.size()) != m.k || m.mu_H.size() != d || m.mu_Y.size() != 2) {
    throw FormatError(what + ": inconsistent k, d, mu or B sizes");
  }
  m.B.resize(m.k, 2);
  for (int i = 0; i < m.k; ++i) {
    if (!B[i].is_array() || B[i].size() != 2) throw FormatError(what + ": B rows must have 2 entries");
    m.B(i, 0) = B[i][0].get<double>();
    m.B(i, 1) = B[i][1].get<double>();
  }
  const auto& fit = member(j, "fit_r2", VT::object, what);
  m.fit_r2.per_target[0] = opt_from(member(fit, "ei", what));
  m.fit_r2.per_target[1] = opt_from(member(fit, "ri", what));
  m.fit_r2.averaged = opt_from(member(fit, "avg", what));

  std::filesystem::path wpath(member(j, "weights_file", VT::string, what).get<std::string>());
  if (wpath.is_relative()) wpath = std::filesystem::path(path).parent_path() / wpath;
  const ActivationFile w = read_activations(wpath.string());
  if (w.n_tokens != static_cast<std::uint64_t>(m.k) || w.n_layers != 1 || w.d != static_cast<std::uint64_t>(d)) {
    throw FormatError(what + ": weights block has shape [" + std::to_string(w.n_tokens) + ", " +
                      std::to_string(w.n_layers) + ", " + std::to_string(w.d) + "], expected [k, 1, d]");
  }
  m.W.resize(m.k, d);
  for (int i = 0; i < m.k; ++i) {
    for (Eigen::Index c = 0; c < d; ++c) m.W(i, c) = w.at(i, 0, c);
  }
  return m;
}

}  // namespace cbr
