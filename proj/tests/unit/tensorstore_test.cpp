#include <doctest.h>

#include <cstring>

#include "cbr/corpus.hpp"
#include "cbr/error.hpp"
#include "cbr/rng.hpp"
#include "cbr/tensorstore.hpp"
#include "support.hpp"

using namespace cbr;

namespace {

ActivationFile random_file(std::uint64_t n, std::vector<std::int32_t> layers, std::uint64_t d, std::uint64_t seed) {
  ActivationFile f(n, std::move(layers), d);
  Rng rng(seed);
  for (auto& x : f.data) x = static_cast<float>(rng.normal());
  return f;
}

}  // namespace

TEST_SUITE("tensorstore") {
  TEST_CASE("round trip") {
    const ActivationFile f = random_file(10, {15}, 8, 1);
    CHECK(decode_activations(encode_activations(f)) == f);

    test::TempDir dir("ts");
    write_activations(dir.file("a.cbrt"), f);
    CHECK(read_activations(dir.file("a.cbrt")) == f);
  }

  TEST_CASE("file size follows the layout") {
    // preamble 16, then three u64 and one i32 per layer, then the payload
    const std::uint64_t header = 3 * 8 + 2 * 4;
    CHECK(activation_file_size(3, 2, 4096) == 16 + header + 98304);
    const ActivationFile f = random_file(3, {10, 11}, 4096, 2);
    CHECK(encode_activations(f).size() == 16 + header + 98304);
  }

  TEST_CASE("header fields are little-endian at fixed offsets") {
    const std::string b = encode_activations(random_file(2, {3, 7}, 5, 3));
    CHECK(b.substr(0, 4) == "CBRT");
    std::uint32_t version = 0, dtype = 9, hlen = 0;
    std::memcpy(&version, b.data() + 4, 4);
    std::memcpy(&dtype, b.data() + 8, 4);
    std::memcpy(&hlen, b.data() + 12, 4);
    CHECK(version == 1);
    CHECK(dtype == 0);
    CHECK(hlen == 3 * 8 + 2 * 4);
    std::uint64_t n = 0, l = 0, d = 0;
    std::memcpy(&n, b.data() + 16, 8);
    std::memcpy(&l, b.data() + 24, 8);
    std::memcpy(&d, b.data() + 32, 8);
    CHECK(n == 2);
    CHECK(l == 2);
    CHECK(d == 5);
  }

  TEST_CASE("corruption is reported with an offset") {
    const std::string good = encode_activations(random_file(4, {15}, 6, 4));
    std::string bad = good;
    bad[0] = 'X';
    try {
      decode_activations(bad);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
    }
    bad = good;
    bad[4] = 2;
    try {
      decode_activations(bad);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 4);
    }
    CHECK_THROWS_AS(decode_activations(good.substr(0, good.size() - 1)), FormatError);
    CHECK_THROWS_AS(decode_activations(good.substr(0, 10)), FormatError);
  }

  TEST_CASE("missing file is an io error") {
    CHECK_THROWS_AS(read_activations("/nonexistent/x.cbrt"), IoError);
  }

  TEST_CASE("pooling") {
    Eigen::MatrixXd rows(3, 2);
    rows << 1, 0, 0, 1, 5, 5;
    CHECK(pool_span(rows, {2, 3}, SpanPooling::mean) == Eigen::Vector2d(5, 5));
    CHECK(pool_span(rows, {2, 3}, SpanPooling::last_token) == Eigen::Vector2d(5, 5));
    CHECK(pool_span(rows, {0, 2}, SpanPooling::mean).isApprox(Eigen::Vector2d(0.5, 0.5)));
    CHECK(pool_span(rows, {0, 2}, SpanPooling::last_token) == Eigen::Vector2d(0, 1));
    CHECK(pool_span(rows, {0, 2}, SpanPooling::automatic).isApprox(Eigen::Vector2d(0.5, 0.5)));
    Eigen::MatrixXd same(2, 2);
    same << 3, 4, 3, 4;
    CHECK(pool_span(same, {0, 2}, SpanPooling::mean) == Eigen::Vector2d(3, 4));
    CHECK_THROWS_AS(pool_span(rows, {1, 1}, SpanPooling::mean), ValidationError);
  }

  TEST_CASE("manifest round trip and common layers") {
    Manifest m;
    m["a"] = ManifestEntry{{10, 11, 12}, {{1, 1, {0, 1}}, {1, 2, {3, 5}}}, "a.cbrt"};
    m["b"] = ManifestEntry{{11, 12}, {{2, 4, {2, 3}}}, "sub/b.cbrt"};
    CHECK(manifest_from_json(manifest_to_json(m)) == m);
    CHECK(common_layers(m) == std::vector<int>{11, 12});
  }

  TEST_CASE("design assembly counts") {
    PlantOptions po;
    SynthOptions so;
    so.n_samples = 40;
    const auto base = test::planted(po, so, 0.1);
    const auto& D = base.out.by_layer.at(15);
    CHECK(D.size() == 40 * 12);
    CHECK(D.Y.col(0).minCoeff() >= 1);
    CHECK(D.Y.col(0).maxCoeff() <= 3);
    CHECK(D.Y.col(1).minCoeff() >= 1);
    CHECK(D.Y.col(1).maxCoeff() <= 4);

    so.pattern = PatternId{6};
    const auto p6 = test::planted(po, so, 0.1);
    CHECK(p6.out.by_layer.at(15).size() == 40 * 6);
  }

  TEST_CASE("assembly from disk matches the in-memory f32 values") {
    PlantOptions po;
    SynthOptions so;
    so.n_samples = 12;
    so.layers = {14, 15};
    const auto p = test::planted(po, so, 0.5);
    test::TempDir dir("assemble");
    write_synth(dir.path.string(), p.out);
    const SynthOutput back = read_synth(dir.path.string(), {14, 15});
    for (int layer : {14, 15}) {
      const auto& a = p.out.by_layer.at(layer);
      const auto& b = back.by_layer.at(layer);
      REQUIRE(a.size() == b.size());
      CHECK((a.H - b.H).cwiseAbs().maxCoeff() < 1e-4 * (1 + a.H.cwiseAbs().maxCoeff()));
      CHECK(a.Y == b.Y);
    }
  }

  TEST_CASE("missing activations list the samples") {
    PlantOptions po;
    SynthOptions so;
    so.n_samples = 5;
    auto p = test::planted(po, so, 0.0);
    Manifest m = p.out.manifest;
    const std::string gone = m.begin()->first;
    m.erase(m.begin());
    test::TempDir dir("missing");
    write_synth(dir.path.string(), p.out);
    AssembleOptions ao;
    ao.base_dir = dir.path.string();
    try {
      assemble_design(p.out.corpus, m, ao);
      FAIL("expected an assembly error");
    } catch (const AssemblyError& e) {
      CHECK(e.sample_ids() == std::vector<std::string>{gone});
    }
  }

  TEST_CASE("NaN activation row is rejected") {
    PlantOptions po;
    SynthOptions so;
    so.n_samples = 3;
    auto p = test::planted(po, so, 0.0);
    auto& f = p.out.files.begin()->second;
    f.data[0] = std::numeric_limits<float>::quiet_NaN();
    test::TempDir dir("nan");
    write_synth(dir.path.string(), p.out);
    CHECK_THROWS_AS(read_synth(dir.path.string(), {15}), ValidationError);
  }
}
