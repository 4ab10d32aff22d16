#ifndef MSMA_TESTS_SUPPORT_HPP
#define MSMA_TESTS_SUPPORT_HPP

#include "msma/common.hpp"
#include "msma/synthetic.hpp"

#include <filesystem>
#include <unistd.h>
#include <string>

namespace testing {

namespace fs = std::filesystem;

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("msma_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline fs::path fixture_dir(const std::string& name) { return fs::path(MSMA_FIXTURE_DIR) / name; }

inline msma::SyntheticSpec small_spec(std::uint64_t seed, std::size_t n = 256) {
  msma::SyntheticSpec s;
  s.seed = seed;
  s.n_samples = n;
  return s;
}

inline msma::Matrix gaussian(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  msma::Rng rng(seed);
  return rng.normal_matrix(n, d);
}

// Correlated pair with corr(x_j, y_j) = rho per coordinate.
inline std::pair<msma::Matrix, msma::Matrix> correlated(Eigen::Index n, Eigen::Index d, double rho, std::uint64_t seed) {
  msma::Rng rng(seed);
  const msma::Matrix X = rng.normal_matrix(n, d);
  const msma::Matrix E = rng.normal_matrix(n, d);
  return {X, rho * X + std::sqrt(1.0 - rho * rho) * E};
}

}  // namespace testing

#endif
