#include <doctest.h>

#include <set>

#include "cbr/error.hpp"
#include "cbr/rng.hpp"
#include "cbr/subspace.hpp"
#include "support.hpp"

using namespace cbr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd M(rows, cols);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = rng.normal();
  return M;
}

// Least squares with intercept, solved independently of the probe code.
MatrixXd ols_fit(const MatrixXd& H, const MatrixXd& Y) {
  MatrixXd X(H.rows(), H.cols() + 1);
  X << MatrixXd::Ones(H.rows(), 1), H;
  return X * X.colPivHouseholderQr().solve(Y);
}

test::Planted planted_city(double sigma, std::size_t n = 300, std::uint64_t seed = 1, int n_nuisance = 2) {
  PlantOptions po;
  po.seed = seed;
  po.n_nuisance = n_nuisance;
  SynthOptions so;
  so.n_samples = n;
  so.corpus_seed = seed;
  return test::planted(po, so, sigma);
}

}  // namespace

TEST_SUITE("subspace") {
  TEST_CASE("r2 score") {
    MatrixXd Y(4, 2);
    Y << 1, 1, 2, 3, 3, 2, 2, 4;
    const R2 perfect = r2_score(Y, Y);
    CHECK(*perfect.averaged == doctest::Approx(1.0));
    MatrixXd mean = Y.colwise().mean().replicate(4, 1);
    CHECK(*r2_score(Y, mean).averaged == doctest::Approx(0.0));
    MatrixXd constant = Y;
    constant.col(0).setConstant(2);
    const R2 r = r2_score(constant, Y);
    CHECK_FALSE(r.per_target[0].has_value());
    CHECK(r.per_target[1].has_value());
    CHECK_FALSE(r.averaged.has_value());
  }

  TEST_CASE("noise-free planted data is fitted exactly at k=2") {
    const auto p = planted_city(0.0, 300, 1, 0);
    const auto& D = p.out.by_layer.at(15);
    const ProbeModel m = fit_pls(D.H, D.Y, 2);
    CHECK(*r2_score(D.Y, m.predict(D.H)).averaged == doctest::Approx(1.0).epsilon(1e-8));
  }

  TEST_CASE("k=1 is below k=2 on two-factor data") {
    const auto p = planted_city(0.05);
    const auto& D = p.out.by_layer.at(15);
    const double r1 = *r2_score(D.Y, fit_pls(D.H, D.Y, 1).predict(D.H)).averaged;
    const double r2 = *r2_score(D.Y, fit_pls(D.H, D.Y, 2).predict(D.H)).averaged;
    CHECK(r1 < r2);
    CHECK(r2 >= 0.95);
  }

  TEST_CASE("pls at full rank matches least squares") {
    const MatrixXd H = gaussian(200, 8, 3);
    const MatrixXd Y = H * gaussian(8, 2, 4) + 0.1 * gaussian(200, 2, 5);
    const MatrixXd ols = ols_fit(H, Y);
    CHECK((fit_pls(H, Y, 8).predict(H) - ols).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((fit_pcr(H, Y, 8).predict(H) - ols).cwiseAbs().maxCoeff() < 1e-8);
  }

  TEST_CASE("pcr tracks pls on isotropic noise") {
    PlantOptions po;
    po.n_nuisance = 0;
    SynthOptions so;
    so.n_samples = 300;
    const auto p = test::planted(po, so, 0.05);
    const auto& D = p.out.by_layer.at(15);
    const double pls = *r2_score(D.Y, fit_pls(D.H, D.Y, 2).predict(D.H)).averaged;
    const double pcr = *r2_score(D.Y, fit_pcr(D.H, D.Y, 2).predict(D.H)).averaged;
    CHECK(std::abs(pls - pcr) <= 0.05);
  }

  TEST_CASE("dominant nuisance hurts pcr at k=1") {
    PlantOptions po;
    po.nuisance_variance = 400.0;
    SynthOptions so;
    so.n_samples = 300;
    const auto p = test::planted(po, so, 0.05);
    const auto& D = p.out.by_layer.at(15);
    const double pls = *r2_score(D.Y, fit_pls(D.H, D.Y, 1).predict(D.H)).averaged;
    const double pcr = *r2_score(D.Y, fit_pcr(D.H, D.Y, 1).predict(D.H)).averaged;
    CHECK(pcr < pls);
  }

  TEST_CASE("constant target is degenerate") {
    const MatrixXd H = gaussian(50, 4, 6);
    MatrixXd Y = gaussian(50, 2, 7);
    Y.col(1).setConstant(3);
    CHECK(test::code_of([&] { fit_pls(H, Y, 2); }) == ErrorCode::degenerate_target);
  }

  TEST_CASE("projection and lifting") {
    const auto p = planted_city(0.1);
    const auto& D = p.out.by_layer.at(15);
    const ProbeModel m = fit_pls(D.H, D.Y, 3);
    CHECK(m.project(m.mu_H).norm() < 1e-12);

    const ProbeModel o = m.orthonormalized();
    CHECK((o.W * o.W.transpose() - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((o.predict(D.H) - m.predict(D.H)).cwiseAbs().maxCoeff() < 1e-8);
    const VectorXd s = VectorXd::LinSpaced(3, -1.0, 2.0);
    const VectorXd h = o.mu_H + o.lift(s);
    CHECK((o.project(h) - s).norm() < 1e-10);

    const ProbeModel lead = m.leading(2);
    CHECK(lead.W == m.W.topRows(2));
  }

  TEST_CASE("projected cell centroids are pairwise distinct") {
    const auto p = planted_city(0.1);
    const auto& D = p.out.by_layer.at(15);
    const ProbeModel m = fit_pls(D.H, D.Y, 2);
    const auto c = cell_centroids(m, D, 2);
    REQUIRE(c.size() == 12);
    double min_gap = 1e9;
    for (auto a = c.begin(); a != c.end(); ++a) {
      for (auto b = std::next(a); b != c.end(); ++b) min_gap = std::min(min_gap, (a->second - b->second).norm());
    }
    CHECK(min_gap > 0.1);
    const Split sp = split_by_sample(D, 0.8, 1);
    CHECK(nearest_centroid_accuracy(m, D.subset(sp.train), D.subset(sp.eval)) > 0.95);
  }

  TEST_CASE("split by sample keeps samples together") {
    const auto p = planted_city(0.1, 50);
    const auto& D = p.out.by_layer.at(15);
    const Split sp = split_by_sample(D, 0.8, 2);
    CHECK(sp.train.size() + sp.eval.size() == static_cast<std::size_t>(D.size()));
    std::set<std::string> train;
    for (auto i : sp.train) train.insert(D.meta[static_cast<std::size_t>(i)].sample_id);
    for (auto i : sp.eval) CHECK(train.count(D.meta[static_cast<std::size_t>(i)].sample_id) == 0);
    CHECK(train.size() == 40);
  }

  TEST_CASE("sweep peaks at the planted layer and plateaus at k=2") {
    PlantOptions po;
    SynthOptions so;
    so.n_samples = 200;
    so.layers = {5, 10, 15, 20, 25};
    const auto p0 = test::planted(po, so, 0.0);
    auto p = test::planted(po, so, sigma_for_snr(p0.spec, 15, 0.5));
    SweepOptions sw;
    sw.layers = {5, 10, 15, 20, 25, 31};
    sw.ks = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const SweepReport rep = sweep(p.out.by_layer, sw);
    CHECK(rep.skipped_layers == std::vector<int>{31});
    int best = -1;
    double best_r2 = -1e9;
    for (int layer : {5, 10, 15, 20, 25}) {
      const double r = *rep.find(layer, 2, ProbeMethod::pls, "none")->eval.averaged;
      if (r > best_r2) best_r2 = r, best = layer;
    }
    CHECK(best == 15);
    const double k1 = *rep.find(15, 1, ProbeMethod::pls, "none")->eval.averaged;
    const double k2 = *rep.find(15, 2, ProbeMethod::pls, "none")->eval.averaged;
    CHECK(k1 < k2);
    for (int k = 3; k <= 10; ++k) {
      const double fit_prev = *rep.find(15, k - 1, ProbeMethod::pls, "none")->fit.averaged;
      CHECK(*rep.find(15, k, ProbeMethod::pls, "none")->fit.averaged >= fit_prev - 1e-12);
      CHECK(*rep.find(15, k, ProbeMethod::pls, "none")->eval.averaged <= k2 + 0.02);
    }
    for (const auto& row : rep.rows) {
      if (row.control == "random_labels") CHECK(row.eval.averaged.value_or(0) <= 0.05);
    }
  }

  TEST_CASE("random projections") {
    const MatrixXd R = random_orthonormal_rows(32, 4, 9);
    CHECK((R * R.transpose() - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(R == random_orthonormal_rows(32, 4, 9));

    const auto p = planted_city(0.1);
    const ProbeModel m = fit_pls(p.out.by_layer.at(15).H, p.out.by_layer.at(15).Y, 3);
    const RandomProjection a = random_projection(m.d(), 3, 5, m);
    CHECK(a.W == random_projection(m.d(), 3, 5, m).W);
    const double ref = m.W.rowwise().norm().mean();
    CHECK(std::abs(a.W.rowwise().norm().mean() - ref) < 1e-10);
    const RandomProjection o = random_projection(m.d(), 3, 5, m, true);
    CHECK((o.W * m.W.transpose()).cwiseAbs().maxCoeff() < 1e-10 * ref * ref);
  }

  TEST_CASE("probe persistence") {
    const auto p = planted_city(0.1, 60);
    const auto& D = p.out.by_layer.at(15);
    ProbeModel m = fit_pls(D.H, D.Y, 2);
    m.layer = 15;
    test::TempDir dir("probe");
    save_probe(dir.file("probe.json"), m);
    const ProbeModel back = load_probe(dir.file("probe.json"));
    CHECK(back.k == 2);
    CHECK(back.layer == 15);
    CHECK(back.method == ProbeMethod::pls);
    // weights are stored as f32
    CHECK((back.W - m.W).cwiseAbs().maxCoeff() <= 1e-6 * (1 + m.W.cwiseAbs().maxCoeff()));
    CHECK((back.predict(D.H) - m.predict(D.H)).cwiseAbs().maxCoeff() < 1e-3);
  }
}
