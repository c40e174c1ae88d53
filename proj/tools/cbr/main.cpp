#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "args.hpp"
#include "cbr/error.hpp"
#include "commands.hpp"

namespace {

using cbr::cli::Options;
using Adder = std::function<void(CLI::App&, Options&)>;

// One entry per flag; subcommands pick the ones they read.
std::map<std::string, Adder> flag_table() {
  std::map<std::string, Adder> t;
  t["context"] = [](CLI::App& a, Options& o) {
    a.add_option("--context", o.contexts, "context or comma list (relation, object, city, job, country)")->capture_default_str();
  };
  t["pattern"] = [](CLI::App& a, Options& o) { a.add_option("--pattern", o.pattern, "entity order pattern")->capture_default_str(); };
  t["variant"] = [](CLI::App& a, Options& o) { a.add_option("--variant", o.variant, "wording variant")->capture_default_str(); };
  t["seed"] = [](CLI::App& a, Options& o) { a.add_option("--seed", o.seed, "random seed (env CBR_SEED)")->capture_default_str(); };
  t["layer"] = [](CLI::App& a, Options& o) { a.add_option("--layer", o.layer, "layer to read")->capture_default_str(); };
  t["layers"] = [](CLI::App& a, Options& o) { a.add_option("--layers", o.layers, "layer list, e.g. 10-20 or 1,4,8"); };
  t["k"] = [](CLI::App& a, Options& o) { a.add_option("--k", o.k, "number of components (list for sweep)"); };
  t["method"] = [](CLI::App& a, Options& o) { a.add_option("--method", o.method, "pls or pcr (list for sweep)")->capture_default_str(); };
  t["alpha"] = [](CLI::App& a, Options& o) { a.add_option("--alpha", o.alpha, "scale, list, or start:stop:step"); };
  t["n-points"] = [](CLI::App& a, Options& o) { a.add_option("--n-points", o.n_points, "grid points")->capture_default_str(); };
  t["n"] = [](CLI::App& a, Options& o) { a.add_option("--n", o.n, "samples per context"); };
  t["n-samples"] = [](CLI::App& a, Options& o) { a.add_option("--n-samples", o.n_samples, "discourses per plan family")->capture_default_str(); };
  t["out"] = [](CLI::App& a, Options& o) { a.add_option("--out", o.out, "output path (stdout when omitted, where allowed)"); };
  t["activations"] = [](CLI::App& a, Options& o) { a.add_option("--activations", o.activations, "activation manifest (repeatable)"); };
  t["corpus"] = [](CLI::App& a, Options& o) { a.add_option("--corpus", o.corpus, "corpus JSONL (repeatable)"); };
  t["probe"] = [](CLI::App& a, Options& o) { a.add_option("--probe", o.probe, "probe file"); };
  t["plan"] = [](CLI::App& a, Options& o) { a.add_option("--plan", o.plan, "plan file"); };
  t["results"] = [](CLI::App& a, Options& o) { a.add_option("--results", o.results, "results JSONL"); };
  t["kind"] = [](CLI::App& a, Options& o) { a.add_option("--kind", o.kind, "what to produce"); };
  t["mode"] = [](CLI::App& a, Options& o) { a.add_option("--mode", o.mode, "transfer modes or all")->capture_default_str(); };
  t["axis"] = [](CLI::App& a, Options& o) { a.add_option("--axis", o.axis, "ei or ri")->capture_default_str(); };
  t["from"] = [](CLI::App& a, Options& o) { a.add_option("--from", o.from, "source index")->capture_default_str(); };
  t["to"] = [](CLI::App& a, Options& o) { a.add_option("--to", o.to, "target index")->capture_default_str(); };
  t["site"] = [](CLI::App& a, Options& o) { a.add_option("--site", o.site, "patch site"); };
  t["per-layer"] = [](CLI::App& a, Options& o) { a.add_flag("--per-layer", o.per_layer, "one plan per layer"); };
  t["snr"] = [](CLI::App& a, Options& o) { a.add_option("--snr", o.snr, "signal-to-noise ratio at the peak layer")->capture_default_str(); };
  t["noise"] = [](CLI::App& a, Options& o) { a.add_option("--noise", o.noise, "noise sigma (overrides --snr)"); };
  t["scheme"] = [](CLI::App& a, Options& o) { a.add_option("--scheme", o.scheme, "label scheme")->capture_default_str(); };
  t["d"] = [](CLI::App& a, Options& o) { a.add_option("--d", o.d, "hidden size")->capture_default_str(); };
  t["semantic-groups"] = [](CLI::App& a, Options& o) { a.add_option("--semantic-groups", o.semantic_groups, "e.g. 1,3;2,4"); };
  t["basis"] = [](CLI::App& a, Options& o) { a.add_option("--basis", o.basis, "rotations or orthonormal")->capture_default_str(); };
  t["pooling"] = [](CLI::App& a, Options& o) { a.add_option("--pooling", o.pooling, "auto, last or mean")->capture_default_str(); };
  t["eval-fraction"] = [](CLI::App& a, Options& o) { a.add_option("--eval-fraction", o.eval_fraction, "held-out share of samples")->capture_default_str(); };
  t["no-control"] = [](CLI::App& a, Options& o) { a.add_flag("--no-control", o.no_control, "skip random-label controls"); };
  t["ridge"] = [](CLI::App& a, Options& o) { a.add_option("--ridge", o.ridge, "learned-map ridge scale")->capture_default_str(); };
  t["oracle"] = [](CLI::App& a, Options& o) { a.add_option("--oracle", o.oracle, "synth directory to run plans against"); };
  t["input"] = [](CLI::App& a, Options& o) { a.add_option("--input", o.input, "CSV to pivot"); };
  t["n-instances"] = [](CLI::App& a, Options& o) { a.add_option("--n-instances", o.n_instances, "head instances")->capture_default_str(); };
  t["n-layers"] = [](CLI::App& a, Options& o) { a.add_option("--n-layers", o.n_layers, "model layers")->capture_default_str(); };
  t["n-heads"] = [](CLI::App& a, Options& o) { a.add_option("--n-heads", o.n_heads, "heads per layer")->capture_default_str(); };
  t["ranking"] = [](CLI::App& a, Options& o) { a.add_option("--ranking", o.ranking, "head score CSV"); };
  t["m"] = [](CLI::App& a, Options& o) { a.add_option("--m", o.m, "ablation sizes")->capture_default_str(); };
  t["control"] = [](CLI::App& a, Options& o) { a.add_option("--control", o.control, "control family")->capture_default_str(); };
  t["inventories"] = [](CLI::App& a, Options& o) { a.add_option("--inventories", o.inventories, "inventory JSON"); };
  t["token-check"] = [](CLI::App& a, Options& o) { a.add_option("--token-check", o.token_check, "single-token word list"); };
  return t;
}

struct Command {
  const char* name;
  const char* help;
  std::vector<std::string> flags;
  int (*run)(const Options&);
};

const std::vector<Command>& commands() {
  static const std::vector<Command> list = {
      {"gen-corpus", "generate a discourse corpus",
       {"context", "pattern", "variant", "seed", "n", "out", "inventories", "token-check"}, cbr::cli::cmd_gen_corpus},
      {"synth", "write a planted synthetic activation dump",
       {"context", "pattern", "variant", "seed", "n", "layers", "snr", "noise", "scheme", "d", "semantic-groups", "out"},
       cbr::cli::cmd_synth},
      {"fit", "fit a probe",
       {"corpus", "activations", "layer", "k", "method", "basis", "pooling", "eval-fraction", "seed", "out"},
       cbr::cli::cmd_fit},
      {"sweep", "layer x k sweep with controls",
       {"corpus", "activations", "layers", "k", "method", "pooling", "eval-fraction", "no-control", "seed", "out"},
       cbr::cli::cmd_sweep},
      {"transfer", "cross-condition transfer matrix",
       {"corpus", "activations", "layer", "k", "method", "pooling", "mode", "ridge", "seed", "out"},
       cbr::cli::cmd_transfer},
      {"plan", "build intervention plans",
       {"kind", "corpus", "activations", "probe", "layer", "layers", "pooling", "alpha", "n-points", "n-samples", "axis",
        "from", "to", "site", "per-layer", "control", "n-instances", "n-layers", "n-heads", "ranking", "m", "seed", "out"},
       cbr::cli::cmd_plan},
      {"eval", "score results of a plan", {"plan", "results", "oracle", "layer", "out"}, cbr::cli::cmd_eval},
      {"report", "emit plot data",
       {"kind", "plan", "results", "oracle", "probe", "corpus", "activations", "layer", "pooling", "control", "input",
        "method", "seed", "out"},
       cbr::cli::cmd_report},
      {"validate", "check artifact files against their schema", {"kind"}, cbr::cli::cmd_validate},
  };
  return list;
}

void apply_config(CLI::App& sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cbr::IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto table = flag_table();
  for (const auto& e : cbr::cli::parse_config(ss.str())) {
    if (e.key == "config" || table.count(e.key) == 0) {
      throw cbr::ValidationError(cbr::ErrorCode::usage,
                                 "'" + path + "' line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    }
    CLI::Option* opt = sub.get_option_no_throw("--" + e.key);
    if (opt == nullptr || opt->count() > 0) continue;  // other command's key, or overridden on the command line
    opt->add_result(e.value);
    opt->run_callback();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cbr: probing and intervention toolkit"};
  app.require_subcommand(1);
  Options o;
  std::string config;
  app.add_option("--config", config, "flat key = value file; flags on the command line win");

  const auto table = flag_table();
  std::map<CLI::App*, const Command*> subs;
  for (const auto& c : commands()) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    for (const auto& f : c.flags) table.at(f)(*sub, o);
    if (std::string(c.name) == "validate") sub->add_option("files", o.files, "artifact files")->required();
    subs[sub] = &c;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    if (!config.empty()) apply_config(*sub, config);
    if (CLI::Option* seed = sub->get_option_no_throw("--seed"); seed != nullptr && seed->count() == 0) {
      if (const char* env = std::getenv("CBR_SEED"); env != nullptr && *env != '\0') {
        seed->add_result(env);
        seed->run_callback();
      }
    }
    return subs.at(sub)->run(o);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const cbr::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const cbr::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cbr::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cbr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
