#include <doctest.h>

#include <cmath>

#include "cbr/error.hpp"
#include "cbr/rng.hpp"
#include "cbr/transfer.hpp"
#include "support.hpp"

using namespace cbr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct TwoContexts {
  test::Planted p;
  ActivationDataset city, job;
};

TwoContexts two_contexts(double sigma, std::size_t n = 200) {
  PlantOptions po;
  po.contexts = {Context::city, Context::job};
  SynthOptions so;
  so.contexts = po.contexts;
  so.n_samples = n;
  TwoContexts t{test::planted(po, so, sigma), {}, {}};
  const auto& D = t.p.out.by_layer.at(15);
  std::vector<Eigen::Index> c, j;
  for (Eigen::Index i = 0; i < D.size(); ++i) (D.meta[static_cast<std::size_t>(i)].context == Context::city ? c : j).push_back(i);
  t.city = D.subset(c);
  t.job = D.subset(j);
  return t;
}

}  // namespace

TEST_SUITE("transfer") {
  TEST_CASE("identical sets give a zero map") {
    const auto t = two_contexts(0.1, 30);
    const TranslationMap m = translation_vector(t.city, t.city);
    REQUIRE(m.delta.size() == 12);
    for (const auto& [cell, v] : m.delta) CHECK(v.norm() == 0.0);
  }

  TEST_CASE("map recovers the offset difference and is antisymmetric") {
    const double sigma = 0.2;
    const std::size_t n = 200;
    const auto t = two_contexts(sigma, n);
    const VectorXd v = t.p.spec.context_offset.at(Context::job) - t.p.spec.context_offset.at(Context::city);
    const TranslationMap m = translation_vector(t.job, t.city);
    const TranslationMap back = translation_vector(t.city, t.job);
    // per-coordinate sd of a difference of two cell means: nuisance plus noise
    double var = sigma * sigma;
    for (const auto& nu : t.p.spec.nuisance) var += nu.variance * nu.direction.cwiseAbs2().maxCoeff();
    const double bound = 3.0 * std::sqrt(2.0 * var / static_cast<double>(n)) + 1e-9;
    for (const auto& [cell, d] : m.delta) {
      CHECK((d - v).cwiseAbs().maxCoeff() <= bound);
      CHECK((d + back.delta.at(cell)).norm() < 1e-9);
    }
    CHECK(m.source == "city");
    CHECK(m.target == "job");
  }

  TEST_CASE("empty cell is named") {
    auto t = two_contexts(0.1, 20);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < t.city.size(); ++i) {
      const auto& m = t.city.meta[static_cast<std::size_t>(i)];
      if (!(m.ei == 2 && m.ri == 3)) keep.push_back(i);
    }
    const ActivationDataset partial = t.city.subset(keep);
    try {
      translation_vector(t.job, partial).apply(t.city);
      FAIL("expected an empty-cell error");
    } catch (const ValidationError& e) {
      CHECK(e.code() == ErrorCode::empty_cell);
      CHECK(std::string(e.what()).find("e2r3") != std::string::npos);
    }
  }

  TEST_CASE("ablations") {
    const auto t = two_contexts(0.1, 40);
    const TranslationMap m = translation_vector(t.job, t.city);
    const TranslationMap dir = ablate_translation(m, AblationMode::random_direction, 3);
    const TranslationMap nrm = ablate_translation(m, AblationMode::random_norm, 3);
    for (const auto& [cell, d] : m.delta) {
      CHECK(std::abs(dir.delta.at(cell).norm() - d.norm()) < 1e-10 * d.norm());
      const double cos = nrm.delta.at(cell).dot(d) / (nrm.delta.at(cell).norm() * d.norm());
      CHECK(std::abs(cos - 1.0) < 1e-10);
      const double ratio = nrm.delta.at(cell).norm() / d.norm();
      CHECK(ratio >= 0.5);
      CHECK(ratio <= 2.0);
    }
    const TranslationMap vec = ablate_translation(m, AblationMode::random_vector, 3);
    CHECK(vec.delta.size() == m.delta.size());
    CHECK(ablate_translation(m, AblationMode::random_vector, 3).delta.begin()->second ==
          vec.delta.begin()->second);
  }

  TEST_CASE("cross-fit on offset contexts") {
    const auto t = two_contexts(0.2);
    std::map<std::string, ActivationDataset> sets{{"city", t.city}, {"job", t.job}};
    std::map<std::string, ProbeModel> probes;
    for (const auto& [name, d] : sets) probes[name] = fit_pls(d.H, d.Y, 2);

    const CrossFitMatrix raw = cross_fit(probes, sets, "raw", standard_transform("raw", sets));
    const CrossFitMatrix tr = cross_fit(probes, sets, "translated", standard_transform("translated", sets));
    CHECK(*raw.at("city", "city") >= 0.95);
    CHECK(*raw.at("job", "job") >= 0.95);
    CHECK(*raw.at("city", "job") <= 0.3);
    CHECK(*raw.at("job", "city") <= 0.3);
    CHECK(*tr.at("city", "job") >= 0.9);
    CHECK(*tr.at("job", "city") >= 0.9);
    CHECK(*tr.at("city", "city") == doctest::Approx(*raw.at("city", "city")).epsilon(1e-12));

    for (const char* mode : {"random_vector", "random_direction", "random_norm"}) {
      const CrossFitMatrix ab = cross_fit(probes, sets, mode, standard_transform(mode, sets, 1));
      CHECK(*ab.at("city", "job") < *tr.at("city", "job"));
    }
    const CrossFitMatrix lm = cross_fit(probes, sets, "learned_map", standard_transform("learned_map", sets));
    CHECK(*lm.at("city", "job") < *tr.at("city", "job"));

    const std::string csv = raw.to_csv();
    CHECK(csv.rfind("source,target,mode,r2\n", 0) == 0);
    CHECK(raw.to_csv(false).find("source,target") == std::string::npos);
  }

  TEST_CASE("missing probe is marked, not fatal") {
    const auto t = two_contexts(0.1, 30);
    std::map<std::string, ActivationDataset> sets{{"city", t.city}, {"job", t.job}};
    std::map<std::string, ProbeModel> probes{{"city", fit_pls(t.city.H, t.city.Y, 2)}};
    const CrossFitMatrix m = cross_fit(probes, sets, "raw");
    CHECK(m.at("city", "city").has_value());
    CHECK_FALSE(m.at("city", "job").has_value());
    CHECK(m.to_csv().find("NA") != std::string::npos);
  }

  TEST_CASE("linear map") {
    Rng rng(4);
    MatrixXd X(10, 6), Zm(10, 6);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < Zm.size(); ++i) Zm.data()[i] = rng.normal();

    const LinearMap self = fit_linear_map(X, X, 0.0);
    CHECK((self.apply_rows(X.transpose()).transpose() - X).norm() <= 1e-6 * X.norm());

    // unregularized: exact interpolation of the paired columns
    const LinearMap exact = fit_linear_map(X, Zm, 0.0);
    CHECK((exact.matrix() * X - Zm).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((exact.apply(X.col(2)) - Zm.col(2)).norm() < 1e-8);

    // ridge solution equals the brute-force primal normal equations
    const double scale = 0.01;
    const LinearMap m = fit_linear_map(X, Zm, scale);
    const double lambda = scale * (X.transpose() * X).trace() / static_cast<double>(X.cols());
    CHECK(m.lambda == doctest::Approx(lambda));
    const MatrixXd brute = Zm * X.transpose() * (X * X.transpose() + lambda * MatrixXd::Identity(10, 10)).inverse();
    CHECK((m.matrix() - brute).cwiseAbs().maxCoeff() < 1e-10);

    MatrixXd dup(10, 3);
    dup << X.col(0), X.col(0), X.col(1);
    CHECK(test::code_of([&] { fit_linear_map(dup, dup, 0.0); }) == ErrorCode::singular);
    CHECK_NOTHROW(fit_linear_map(dup, dup, 1e-3));
  }
}
