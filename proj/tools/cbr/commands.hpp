#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cbr::cli {

/// Every flag of every command. Unset optionals fall back to the command's
/// own default.
struct Options {
  std::string contexts = "city";
  std::string pattern = "base";
  std::string variant = "none";
  std::uint64_t seed = 0;
  int layer = 15;
  std::optional<std::string> layers;
  std::optional<std::string> k;
  std::string method = "pls";
  std::optional<std::string> alpha;
  int n_points = 10000;
  std::optional<std::size_t> n;
  int n_samples = 50;
  std::string out;
  std::vector<std::string> activations;
  std::vector<std::string> corpus;
  std::string probe;
  std::string plan;
  std::string results;
  std::string kind;
  std::string mode = "all";
  std::string axis = "ri";
  int from = 1;
  int to = 2;
  std::string site;
  bool per_layer = false;
  double snr = 10.0;
  std::optional<double> noise;
  std::string scheme = "original";
  int d = 64;
  std::string semantic_groups;
  std::string basis = "rotations";
  std::string pooling = "auto";
  double eval_fraction = 0.2;
  bool no_control = false;
  double ridge = 1e-3;
  std::string oracle;
  std::string input;
  int n_instances = 300;
  int n_layers = 32;
  int n_heads = 32;
  std::string ranking;
  std::string m = "0,1,2,5,10,20,50,100";
  std::string control = "orthogonal";
  std::string inventories;
  std::string token_check;
  std::vector<std::string> files;
};

int cmd_gen_corpus(const Options& o);
int cmd_synth(const Options& o);
int cmd_fit(const Options& o);
int cmd_sweep(const Options& o);
int cmd_transfer(const Options& o);
int cmd_plan(const Options& o);
int cmd_eval(const Options& o);
int cmd_report(const Options& o);
int cmd_validate(const Options& o);

}  // namespace cbr::cli
