#ifndef MSMA_ESTIMATORS_HPP
#define MSMA_ESTIMATORS_HPP

#include "msma/common.hpp"

#include <cstdint>
#include <vector>

namespace msma {

struct GaussianStats {
  Vector mean;
  Matrix cov;
  double shrinkage = 0.0;

  Eigen::Index dim() const { return mean.size(); }
};

inline constexpr double kDefaultShrinkage = 0.05;

// Unbiased mean and covariance, shrunk as (1-s) C + s (tr C / d) I.
GaussianStats fit_gaussian(const Matrix& X, double shrinkage = kDefaultShrinkage);

// KL(p || q) in nats. Throws if q is singular; returns +inf if only p is.
double gaussian_kl(const GaussianStats& p, const GaussianStats& q);

// Fisher information of simple parametric families, used to check the
// quadratic approximation KL(theta || theta + d) ~ 0.5 d^T F d.
enum class FisherFamily {
  gaussian_mean,     // theta = mean vector, fixed isotropic sigma
  gaussian_meanvar,  // theta = (mu_1..mu_k, sigma_1..sigma_k), diagonal
};

struct FisherModel {
  FisherFamily family = FisherFamily::gaussian_mean;
  Vector theta;
  double sigma = 1.0;  // gaussian_mean only

  Matrix fisher() const;
  // Closed-form KL(p_theta || p_{theta + dtheta}).
  double exact_kl(const Vector& dtheta) const;
};

double local_kl_quadratic(const FisherModel& model, const Vector& dtheta);

struct PcaResult {
  Matrix scores;    // n x k
  Matrix basis;     // d x k, orthonormal columns
  Vector mean;      // d
  Vector explained; // variance per component, descending

  Matrix project(const Matrix& X) const;
};

PcaResult pca_reduce(const Matrix& X, std::size_t k);
// k clamped to min(target, n - 1, d).
std::size_t pca_dim(std::size_t target, std::size_t n, std::size_t d);

struct KsgResult {
  double mi = 0.0;   // clamped at 0
  double raw = 0.0;
  bool near_deterministic = false;
};

// Kraskov-Stoegbauer-Grassberger estimator (variant 1, max-norm). Exact ties are
// broken with a coordinate hash jitter of 1e-10 x column scale, so the result
// does not depend on sample order.
KsgResult ksg_mi(const Matrix& X, const Matrix& Y, std::size_t k = 5, std::uint64_t seed = 0);

// Mixed continuous/discrete KSG variant (Ross 2014) for I(X; labels).
double ksg_mi_discrete(const Matrix& X, const std::vector<int>& labels, std::size_t k = 5, std::uint64_t seed = 0);

// Both sides reduced to PCA-`pca_target` (clamped) before ksg_mi.
KsgResult ksg_mi_pca(const Matrix& X, const Matrix& Y, std::size_t k = 5, std::size_t pca_target = 50,
                     std::uint64_t seed = 0);

// Bias-corrected distance correlation (U-centred distance matrices), reported
// as sqrt(max(R*, 0)) so it lies in [0, 1]. Rows are subsampled without
// replacement to max_n when n exceeds it.
double distance_correlation(const Matrix& X, const Matrix& Y, std::size_t max_n = 2000, std::uint64_t seed = 0);

// Max-norm pairwise distances, n x n.
Matrix chebyshev_distances(const Matrix& X);

}  // namespace msma

#endif
