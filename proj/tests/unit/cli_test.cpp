#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <sys/wait.h>

#include "support.hpp"

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the cbr tool in `dir` with `env` prefixed to the command.
Run tool(const test::TempDir& dir, const std::string& args, const std::string& env = "") {
  const std::string out = dir.file("stdout.txt"), err = dir.file("stderr.txt");
  const std::string cmd = "cd '" + dir.path.string() + "' && " + env + " '" CBR_TOOL_PATH "' " + args + " >'" + out +
                          "' 2>'" + err + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::size_t lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

const char* kData = "--corpus s/corpus.jsonl --activations s/manifest.json";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gen-corpus writes the requested samples") {
    test::TempDir dir("cli-gen");
    const Run r = tool(dir, "gen-corpus --context city --n 1000 --seed 7 --out c.jsonl");
    CHECK(r.code == 0);
    CHECK(lines(slurp(dir.file("c.jsonl"))) == 1000);
    CHECK(tool(dir, "validate c.jsonl").code == 0);
    // same seed through the environment
    CHECK(tool(dir, "gen-corpus --n 5 --out e.jsonl", "CBR_SEED=7").code == 0);
    CHECK(tool(dir, "gen-corpus --n 5 --seed 7 --out f.jsonl").code == 0);
    CHECK(slurp(dir.file("e.jsonl")) == slurp(dir.file("f.jsonl")));
    CHECK(tool(dir, "gen-corpus --n 5 --out g.jsonl").code == 0);
    CHECK(slurp(dir.file("e.jsonl")) != slurp(dir.file("g.jsonl")));
  }

  TEST_CASE("exit codes") {
    test::TempDir dir("cli-exit");
    CHECK(tool(dir, "--help").code == 0);
    CHECK(tool(dir, "").code == 1);
    const Run unknown = tool(dir, "fit --frobnicate");
    CHECK(unknown.code == 1);
    CHECK(unknown.err.find("frobnicate") != std::string::npos);
    CHECK(tool(dir, "gen-corpus --context atlantis --out x.jsonl").code == 1);
    const Run missing = tool(dir, "fit --corpus none.jsonl --activations none.json --out p.json");
    CHECK(missing.code == 2);
    CHECK(missing.err.find("none.jsonl") != std::string::npos);
    std::ofstream(dir.file("bad.jsonl")) << "{\"sample_id\": 4}\n";
    CHECK(tool(dir, "validate --kind corpus bad.jsonl").code == 2);
    const Run usage = tool(dir, "plan --out p.json");
    CHECK(usage.code == 1);
    CHECK(usage.err.find("--kind") != std::string::npos);
  }

  TEST_CASE("config file sits between flags and defaults") {
    test::TempDir dir("cli-config");
    REQUIRE(tool(dir, "synth --context city --n 40 --seed 2 --out s").code == 0);
    std::ofstream(dir.file("run.cfg")) << "# probe settings\nk = 3\nbasis = orthonormal\nlayer = 15\n";
    const Run from_file = tool(dir, std::string("--config run.cfg fit ") + kData + " --out p.json");
    REQUIRE(from_file.code == 0);
    const auto j = nlohmann::json::parse(from_file.out);
    CHECK(j["k"] == 3);
    CHECK(j["basis"] == "orthonormal");
    const Run flag = tool(dir, std::string("--config run.cfg fit --k 2 ") + kData + " --out p.json");
    REQUIRE(flag.code == 0);
    CHECK(nlohmann::json::parse(flag.out)["k"] == 2);
    std::ofstream(dir.file("bad.cfg")) << "colour = blue\n";
    CHECK(tool(dir, std::string("--config bad.cfg fit ") + kData + " --out p.json").code == 1);
  }

  TEST_CASE("synth, fit, plan, eval and report") {
    test::TempDir dir("cli-loop");
    REQUIRE(tool(dir, "synth --context city --n 60 --layers 14-16 --snr 10 --seed 3 --out s").code == 0);
    CHECK(tool(dir, "validate s/corpus.jsonl s/manifest.json").code == 0);

    const Run fit = tool(dir, std::string("fit --layer 15 --k 2 --method pls ") + kData + " --out probe.json");
    REQUIRE(fit.code == 0);
    const auto rep = nlohmann::json::parse(fit.out);
    CHECK(rep["eval_r2"]["avg"].get<double>() >= 0.95);
    CHECK(tool(dir, "validate probe.json").code == 0);

    const Run sweep = tool(dir, std::string("sweep --k 1-2 ") + kData + " --out sweep.csv");
    REQUIRE(sweep.code == 0);
    const std::string sw = slurp(dir.file("sweep.csv"));
    CHECK(sw.rfind("layer,k,method,control,", 0) == 0);
    CHECK(lines(sw) == 1 + 3 * 2 * 2);
    const Run pivot = tool(dir, "report --kind sweep --input sweep.csv");
    CHECK(pivot.out.rfind("layer,k1,k2\n", 0) == 0);

    REQUIRE(tool(dir, std::string("fit --k 2 --basis orthonormal ") + kData + " --out ortho.json").code == 0);
    REQUIRE(tool(dir, std::string("plan --kind grid --alpha 1 --n-points 400 --n-samples 5 --probe ortho.json ") + kData +
                         " --out grid.plan.json")
                .code == 0);
    CHECK(tool(dir, "validate grid.plan.json").code == 0);
    const Run ev = tool(dir, "eval --plan grid.plan.json --oracle s --results grid.results.jsonl");
    REQUIRE(ev.code == 0);
    CHECK(nlohmann::json::parse(ev.out)["grid"]["occupied_cells"] == 12);
    CHECK(tool(dir, "validate grid.results.jsonl").code == 0);
    const Run grid = tool(dir, "report --kind grid --plan grid.plan.json --results grid.results.jsonl --out grid.csv");
    REQUIRE(grid.code == 0);
    const std::string csv = slurp(dir.file("grid.csv"));
    CHECK(csv.rfind("point,x,y,argmax_ei,argmax_ri,logit_e1r1", 0) == 0);
    CHECK(lines(csv) == 401);
    CHECK(tool(dir, "report --kind sections --plan grid.plan.json --oracle s").out.rfind("cell,axis,position,logit,unimodal\n", 0) == 0);

    REQUIRE(tool(dir, std::string("plan --kind perturb --alpha 0,-1 --n-samples 10 --probe ortho.json ") + kData +
                         " --out pt.plan.json")
                .code == 0);
    const Run acc = tool(dir, "report --kind perturbation --plan pt.plan.json --oracle s");
    CHECK(acc.out.rfind("kind,alpha,accuracy,n\n", 0) == 0);
    CHECK(lines(acc.out) == 5);

    REQUIRE(tool(dir, std::string("fit --k 5 --basis orthonormal ") + kData + " --out p5.json").code == 0);
    REQUIRE(tool(dir, std::string("plan --kind steer --axis ri --from 2 --to 3 --alpha 0.5:1:0.5 --n-samples 10 --probe p5.json ") +
                         kData + " --out st.plan.json")
                .code == 0);
    const Run st = tool(dir, "report --kind steering --plan st.plan.json --oracle s");
    CHECK(st.out.rfind("context,alpha,original_before,original_after,expected_before,expected_after,flip_rate,n\n", 0) == 0);
    CHECK(lines(st.out) == 3);

    for (const char* kind : {"projection", "centroids", "cosine", "relation-cosine"}) {
      const Run r = tool(dir, std::string("report --kind ") + kind + " --probe probe.json " + kData);
      CHECK(r.code == 0);
      CHECK(lines(r.out) > 1);
    }
    const Run ctrl = tool(dir, std::string("report --kind cosine --control random --probe probe.json ") + kData);
    CHECK(ctrl.code == 0);
    CHECK(tool(dir, "report --kind bogus").code == 1);
  }

  TEST_CASE("transfer and head plans") {
    test::TempDir dir("cli-transfer");
    REQUIRE(tool(dir, "synth --context city,job --n 60 --seed 4 --out s").code == 0);
    const Run tr = tool(dir, std::string("transfer --k 5 --mode raw,translated ") + kData + " --out t.csv");
    REQUIRE(tr.code == 0);
    const std::string csv = slurp(dir.file("t.csv"));
    CHECK(csv.rfind("source,target,mode,r2\n", 0) == 0);
    CHECK(lines(csv) == 1 + 2 * 4);
    CHECK(tool(dir, "report --kind crossfit --input t.csv").out.rfind("mode,source,city,job\n", 0) == 0);

    REQUIRE(tool(dir, "plan --kind head-patch --corpus s/corpus.jsonl --n-instances 4 --n-layers 2 --n-heads 2 --out h.plan.json").code == 0);
    std::ofstream(dir.file("rank.csv")) << "layer,head,score,n\n1,1,-0.4,4\n0,1,0.1,4\n";
    REQUIRE(tool(dir, "plan --kind head-ablate --ranking rank.csv --m 0,1 --corpus s/corpus.jsonl --n-instances 4 "
                     "--n-layers 2 --n-heads 2 --out a.plan.json")
                .code == 0);
    CHECK(tool(dir, "validate h.plan.json a.plan.json").code == 0);
    CHECK(tool(dir, "eval --plan h.plan.json --oracle s").code == 1);
  }
}
