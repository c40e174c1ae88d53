#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "cbr/error.hpp"
#include "cbr/oracle.hpp"

namespace test {

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("cbr-test-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct Planted {
  cbr::PlantSpec spec;
  cbr::SynthOutput out;
};

inline Planted planted(cbr::PlantOptions po, cbr::SynthOptions so, double noise_sigma) {
  Planted p;
  po.noise_sigma = noise_sigma;
  p.spec = cbr::make_plant(po);
  p.out = cbr::synth_dataset(p.spec, so);
  return p;
}

template <typename F>
cbr::ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const cbr::ValidationError& e) {
    return e.code();
  }
  throw std::runtime_error("no ValidationError thrown");
}

}  // namespace test
