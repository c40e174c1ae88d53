#include <doctest.h>

#include <algorithm>
#include <set>

#include "cbr/oracle.hpp"
#include "cbr/rng.hpp"
#include "cbr/schema.hpp"
#include "support.hpp"

using namespace cbr;
using Eigen::VectorXd;

TEST_SUITE("oracle") {
  TEST_CASE("rng streams are reproducible") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng s1 = Rng::stream(1, 2), s2 = Rng::stream(1, 2), s3 = Rng::stream(1, 3);
    const auto x = s1.next_u64();
    CHECK(x == s2.next_u64());
    CHECK(x != s3.next_u64());
    Rng c(5);
    for (int i = 0; i < 1000; ++i) {
      const double u = c.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
      CHECK(c.below(7) < 7);
    }
    auto idx = Rng(3).sample_without_replacement(10, 10);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < 10; ++i) CHECK(idx[i] == i);
    CHECK(hash_name("exemplar") == hash_name("exemplar"));
    CHECK(hash_name("a") != hash_name("b"));
  }

  TEST_CASE("plant construction") {
    PlantOptions po;
    po.contexts = {Context::city, Context::job};
    po.semantic_groups = {{1, 3}, {2, 4}};
    const PlantSpec s = make_plant(po);
    CHECK_NOTHROW(s.validate());
    CHECK(s.u_ei.norm() == doctest::Approx(1.0));
    CHECK(s.u_ri.norm() == doctest::Approx(1.0));
    CHECK(std::abs(s.u_ei.dot(s.u_ri)) < 1e-12);
    for (const auto& n : s.nuisance) {
      CHECK(std::abs(n.direction.dot(s.u_ei)) < 1e-12);
      CHECK(std::abs(n.direction.dot(s.u_ri)) < 1e-12);
    }
    for (const auto& [c, v] : s.context_offset) CHECK(v.norm() == doctest::Approx(20.0));
    CHECK(s.semantic.at(1) == s.semantic.at(3));
    CHECK(s.semantic.at(2) == s.semantic.at(4));
    CHECK(s.semantic.at(1) != s.semantic.at(2));

    int peak = -1;
    double best = -1;
    for (const auto& [layer, g] : s.layer_profile) {
      if (g > best) best = g, peak = layer;
    }
    CHECK(peak == 15);

    const VectorXd c = s.center(Context::city, {2, 3}, 15);
    const VectorXd want = s.gain(15) * (2.0 * s.u_ei + 3.0 * s.u_ri) + s.context_offset.at(Context::city) + s.semantic.at(3);
    CHECK((c - want).norm() < 1e-12);
  }

  TEST_CASE("snr sets the noise level from the signal power") {
    const PlantSpec s = make_plant(PlantOptions{});
    // grid values 1..3 and 1..4: var 2/3 and 5/4
    const double power = s.gain(15) * s.gain(15) * (2.0 / 3.0 + 5.0 / 4.0);
    CHECK(sigma_for_snr(s, 15, 10.0) == doctest::Approx(std::sqrt(power / (10.0 * 64))));
  }

  TEST_CASE("synthetic datasets are reproducible bit for bit") {
    PlantOptions po;
    po.noise_sigma = 0.3;
    SynthOptions so;
    so.n_samples = 20;
    so.layers = {14, 15};
    const PlantSpec s = make_plant(po);
    const SynthOutput a = synth_dataset(s, so);
    const SynthOutput b = synth_dataset(make_plant(po), so);
    CHECK(a.files == b.files);
    CHECK(a.by_layer.at(15).H == b.by_layer.at(15).H);
    po.seed = 1;
    CHECK_FALSE(synth_dataset(make_plant(po), so).by_layer.at(15).H == a.by_layer.at(15).H);
  }

  TEST_CASE("plant persistence") {
    PlantOptions po;
    po.seed = 8;
    po.contexts = {Context::country};
    test::TempDir dir("plant");
    save_plant(dir.file("plant.json"), po, 0.25);
    const PlantSpec back = load_plant(dir.file("plant.json"));
    PlantSpec want = make_plant(po);
    CHECK(back.noise_sigma == 0.25);
    CHECK(back.u_ei == want.u_ei);
    CHECK(back.context_offset.at(Context::country) == want.context_offset.at(Context::country));
  }

  TEST_CASE("decoder") {
    const PlantSpec s = make_plant(PlantOptions{});
    const DecoderSpec dec = make_decoder(s, Context::city, 15);
    for (int c = 0; c < kCellCount; ++c) {
      const Cell cell = Cell::from_flat(c);
      Eigen::Index best = 0;
      synth_logits(dec, s.center(Context::city, cell, 15)).maxCoeff(&best);
      CHECK(best == c);
    }
    const VectorXd mid = 0.5 * (s.center(Context::city, {2, 2}, 15) + s.center(Context::city, {2, 3}, 15));
    const auto l = synth_logits(dec, mid);
    CHECK(std::abs(l(Cell{2, 2}.flat()) - l(Cell{2, 3}.flat())) < 1e-8);
    const VectorXd mid_e = 0.5 * (s.center(Context::city, {1, 4}, 15) + s.center(Context::city, {2, 4}, 15));
    const auto le = synth_logits(dec, mid_e);
    CHECK(std::abs(le(Cell{1, 4}.flat()) - le(Cell{2, 4}.flat())) < 1e-8);
  }

  TEST_CASE("brute-force decoder sweep gives a twelve-cell partition") {
    const PlantSpec s = make_plant(PlantOptions{});
    const DecoderSpec dec = make_decoder(s, Context::city, 15);
    const double lo_x = dec.centers.col(0).minCoeff() - 1, hi_x = dec.centers.col(0).maxCoeff() + 1;
    const double lo_y = dec.centers.col(1).minCoeff() - 1, hi_y = dec.centers.col(1).maxCoeff() + 1;
    std::set<int> seen;
    const int n = 120;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const Eigen::Vector2d z(lo_x + (hi_x - lo_x) * i / (n - 1), lo_y + (hi_y - lo_y) * j / (n - 1));
        Eigen::Index best = 0;
        decoder_logits(dec, z).maxCoeff(&best);
        seen.insert(static_cast<int>(best));
        // nearest center wins
        Eigen::Index nearest = 0;
        (dec.centers.rowwise() - z.transpose()).rowwise().squaredNorm().minCoeff(&nearest);
        CHECK(best == nearest);
      }
    }
    CHECK(seen.size() == 12);
  }

  TEST_CASE("head plans are not modelled") {
    PlantOptions po;
    SynthOptions so;
    so.n_samples = 10;
    const auto p = test::planted(po, so, 0.0);
    HeadOptions h;
    h.n_instances = 2;
    h.n_layers = 1;
    h.n_heads = 1;
    const PlanSet set = plan_head_patching(p.out.corpus, h);
    CHECK(test::code_of([&] { oracle_execute(set, OracleWorld{&p.spec, &p.out, 15}); }) == ErrorCode::unsupported);
  }

  TEST_CASE("schema validation") {
    PlantOptions po;
    SynthOptions so;
    so.n_samples = 4;
    const auto p = test::planted(po, so, 0.1);
    test::TempDir dir("schema");
    write_synth(dir.path.string(), p.out);
    CHECK(validate_artifact(ArtifactKind::corpus, dir.file("corpus.jsonl")).ok());
    CHECK(validate_artifact(ArtifactKind::manifest, dir.file("manifest.json")).ok());
    CHECK(guess_artifact_kind(dir.file("manifest.json")) == ArtifactKind::manifest);
    CHECK(guess_artifact_kind("x/activations/a.cbrt") == ArtifactKind::activations);
    CHECK(guess_artifact_kind("run.results.jsonl") == ArtifactKind::results);
    const SchemaReport bad = validate_artifact(ArtifactKind::corpus, dir.file("manifest.json"));
    CHECK_FALSE(bad.ok());
    const SchemaReport missing = validate_artifact(ArtifactKind::probe, dir.file("nope.json"));
    CHECK_FALSE(missing.ok());
  }
}
