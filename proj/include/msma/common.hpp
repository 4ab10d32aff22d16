#ifndef MSMA_COMMON_HPP
#define MSMA_COMMON_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace msma {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Storage type for dumped hidden states: f32, row-major, samples x dim.
using HiddenMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorKind {
  validation,   // bad input or violated invariant
  io,           // filesystem / format
  runtime,      // numerical failure, divergence
  ambiguous,    // boundary detection could not decide
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }
[[noreturn]] inline void invalid(const std::string& what) { throw Error(ErrorKind::validation, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) invalid(what);
}

// splitmix64 step; used to derive independent child seeds from (master, id).
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t id);

// Deterministic xoshiro256** RNG with local distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  double normal();                        // N(0, 1)
  std::size_t below(std::size_t n);       // uniform in [0, n)
  void shuffle(std::vector<std::size_t>& v);
  std::vector<std::size_t> permutation(std::size_t n);
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

 private:
  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Random matrix with orthonormal columns (rows >= cols), via QR of a Gaussian draw.
Matrix random_orthonormal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Worker count from MSMA_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Each index must write only to its own output slot.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// 64-bit FNV-1a over raw bytes.
std::uint64_t hash_bytes(const void* data, std::size_t len, std::uint64_t seed = 0);
std::uint64_t hash_string(const std::string& s, std::uint64_t seed = 0);

double digamma(double x);

// Mean and population standard deviation.
double mean_of(const std::vector<double>& v);
double stddev_of(const std::vector<double>& v);

}  // namespace msma

#endif
