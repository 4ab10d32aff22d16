#include "msma/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>

namespace msma {

namespace {

void check_finite(const Matrix& X, const char* what) {
  if (!X.allFinite()) invalid(std::string(what) + ": non-finite entries");
}

}  // namespace

GaussianStats fit_gaussian(const Matrix& X, double shrinkage) {
  if (X.rows() < 2) invalid("fit_gaussian: need at least 2 samples");
  if (X.cols() < 1) invalid("fit_gaussian: zero-dimensional data");
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) invalid("fit_gaussian: shrinkage must be in [0, 1]");
  check_finite(X, "fit_gaussian");
  GaussianStats g;
  g.shrinkage = shrinkage;
  g.mean = X.colwise().mean().transpose();
  const Matrix centered = X.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(X.rows() - 1);
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  if (shrinkage > 0.0) {
    const double avg = g.cov.trace() / static_cast<double>(g.cov.rows());
    g.cov *= (1.0 - shrinkage);
    g.cov.diagonal().array() += shrinkage * avg;
  }
  return g;
}

double gaussian_kl(const GaussianStats& p, const GaussianStats& q) {
  if (p.dim() != q.dim() || p.cov.rows() != p.dim() || q.cov.rows() != q.dim())
    invalid("gaussian_kl: dimension mismatch (" + std::to_string(p.dim()) + " vs " + std::to_string(q.dim()) + ")");
  const auto d = static_cast<double>(p.dim());
  Eigen::LLT<Matrix> lq(q.cov);
  const double q_scale = std::max(q.cov.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  if (lq.info() != Eigen::Success || lq.matrixL().toDenseMatrix().diagonal().minCoeff() <= 1e-12 * std::sqrt(q_scale))
    fail(ErrorKind::runtime, "gaussian_kl: q covariance is singular");
  Eigen::LLT<Matrix> lp(p.cov);
  if (lp.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const Vector lp_diag = lp.matrixL().toDenseMatrix().diagonal();
  if (lp_diag.minCoeff() <= 0.0) return std::numeric_limits<double>::infinity();

  const Vector lq_diag = lq.matrixL().toDenseMatrix().diagonal();
  const double logdet_q = 2.0 * lq_diag.array().log().sum();
  const double logdet_p = 2.0 * lp_diag.array().log().sum();
  const double trace = lq.solve(p.cov).trace();
  const Vector diff = q.mean - p.mean;
  const double maha = diff.dot(lq.solve(diff));
  const double kl = 0.5 * (trace + maha - d + logdet_q - logdet_p);
  // Rounding can leave tiny negative values for p == q.
  if (p.mean == q.mean && p.cov == q.cov) return 0.0;
  return std::max(kl, 0.0);
}

Matrix FisherModel::fisher() const {
  const auto k = theta.size();
  switch (family) {
    case FisherFamily::gaussian_mean:
      require(sigma > 0.0, "FisherModel: sigma must be > 0");
      return Matrix::Identity(k, k) / (sigma * sigma);
    case FisherFamily::gaussian_meanvar: {
      require(k % 2 == 0 && k > 0, "FisherModel: gaussian_meanvar needs (mu, sigma) pairs");
      const auto m = k / 2;
      Matrix f = Matrix::Zero(k, k);
      for (Eigen::Index i = 0; i < m; ++i) {
        const double s = theta(m + i);
        require(s > 0.0, "FisherModel: sigma entries must be > 0");
        f(i, i) = 1.0 / (s * s);
        f(m + i, m + i) = 2.0 / (s * s);
      }
      return f;
    }
  }
  invalid("FisherModel: unknown family");
}

double FisherModel::exact_kl(const Vector& dtheta) const {
  if (dtheta.size() != theta.size()) invalid("FisherModel: dimension mismatch");
  if (family == FisherFamily::gaussian_mean) return 0.5 * dtheta.squaredNorm() / (sigma * sigma);
  const auto m = theta.size() / 2;
  double kl = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double s0 = theta(m + i);
    const double s1 = s0 + dtheta(m + i);
    if (s1 <= 0.0) invalid("FisherModel: step leaves the parameter space");
    const double dmu = dtheta(i);
    kl += std::log(s1 / s0) + (s0 * s0 + dmu * dmu) / (2.0 * s1 * s1) - 0.5;
  }
  return kl;
}

double local_kl_quadratic(const FisherModel& model, const Vector& dtheta) {
  if (dtheta.size() != model.theta.size())
    invalid("local_kl_quadratic: dimension mismatch (" + std::to_string(dtheta.size()) + " vs " +
            std::to_string(model.theta.size()) + ")");
  return 0.5 * dtheta.dot(model.fisher() * dtheta);
}

Matrix PcaResult::project(const Matrix& X) const {
  if (X.cols() != mean.size()) invalid("pca: projection dimension mismatch");
  return (X.rowwise() - mean.transpose()) * basis;
}

std::size_t pca_dim(std::size_t target, std::size_t n, std::size_t d) {
  return std::max<std::size_t>(1, std::min({target, n > 1 ? n - 1 : 1, d}));
}

PcaResult pca_reduce(const Matrix& X, std::size_t k) {
  const auto n = static_cast<std::size_t>(X.rows());
  const auto d = static_cast<std::size_t>(X.cols());
  if (k < 1 || k > std::min(n, d))
    invalid("pca_reduce: k=" + std::to_string(k) + " outside [1, min(n, d)=" + std::to_string(std::min(n, d)) + "]");
  check_finite(X, "pca_reduce");
  PcaResult r;
  r.mean = X.colwise().mean().transpose();
  const Matrix centered = X.rowwise() - r.mean.transpose();
  const auto kk = static_cast<Eigen::Index>(k);
  Vector values;
  Matrix vectors;
  if (d <= n) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(centered.transpose() * centered);
    // ascending order; reverse
    values = eig.eigenvalues().reverse();
    vectors = eig.eigenvectors().rowwise().reverse();
  } else {
    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
    values = svd.singularValues().array().square();
    vectors = svd.matrixV();
  }
  r.basis = vectors.leftCols(kk);
  for (Eigen::Index j = 0; j < kk; ++j) {
    Eigen::Index arg = 0;
    r.basis.col(j).cwiseAbs().maxCoeff(&arg);
    if (r.basis(arg, j) < 0) r.basis.col(j) *= -1.0;
  }
  r.explained = values.head(kk).cwiseMax(0.0) / static_cast<double>(std::max<std::size_t>(n - 1, 1));
  r.scores = centered * r.basis;
  return r;
}

Matrix chebyshev_distances(const Matrix& X) {
  const auto n = X.rows();
  Matrix D = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) D(i, j) = D(j, i) = (X.row(i) - X.row(j)).cwiseAbs().maxCoeff();
  return D;
}

namespace {

// Jitter keyed on the point's own coordinates, so it travels with the point
// under any reordering of samples.
Matrix jittered(const Matrix& X, std::uint64_t seed, std::uint64_t salt) {
  Matrix out = X;
  Vector scale(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) scale(j) = std::max(X.col(j).cwiseAbs().maxCoeff(), 1e-300);
  std::vector<double> row(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) row[static_cast<std::size_t>(j)] = X(i, j);
    const std::uint64_t h = hash_bytes(row.data(), row.size() * sizeof(double), mix_seed(seed, salt));
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double u = static_cast<double>(mix_seed(h, static_cast<std::uint64_t>(j)) >> 11) * 0x1.0p-53 - 0.5;
      out(i, j) += 1e-10 * scale(j) * u;
    }
  }
  return out;
}

// Max-norm distances from row i to every row.
void row_distances(const Matrix& X, Eigen::Index i, std::vector<double>& out) {
  const auto n = X.rows();
  out.resize(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    double m = 0.0;
    for (Eigen::Index c = 0; c < X.cols(); ++c) m = std::max(m, std::abs(X(i, c) - X(j, c)));
    out[static_cast<std::size_t>(j)] = m;
  }
}

}  // namespace

KsgResult ksg_mi(const Matrix& X, const Matrix& Y, std::size_t k, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (static_cast<std::size_t>(Y.rows()) != n) invalid("ksg_mi: X and Y have different sample counts");
  if (k < 1) invalid("ksg_mi: k must be >= 1");
  if (n <= k) invalid("ksg_mi: need n > k (n=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");
  check_finite(X, "ksg_mi");
  check_finite(Y, "ksg_mi");

  // Column-major copies are slow to scan row-wise; keep row-major buffers.
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMat xs = jittered(X, seed, 1);
  const RowMat ys = jittered(Y, seed, 2);
  const auto dx = xs.cols(), dy = ys.cols();

  std::vector<double> psi_sum(n, 0.0);
  const std::size_t workers = std::min<std::size_t>(worker_count(), std::max<std::size_t>(1, n / 256));
  const std::size_t chunk = (n + workers - 1) / workers;
  parallel_for(workers, [&](std::size_t w) {
    std::vector<double> ex(n), ey(n), joint(n);
    for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) {
      const double* xi = xs.row(static_cast<Eigen::Index>(i)).data();
      const double* yi = ys.row(static_cast<Eigen::Index>(i)).data();
      for (std::size_t j = 0; j < n; ++j) {
        const double* xj = xs.row(static_cast<Eigen::Index>(j)).data();
        const double* yj = ys.row(static_cast<Eigen::Index>(j)).data();
        double a = 0.0, b = 0.0;
        for (Eigen::Index c = 0; c < dx; ++c) a = std::max(a, std::abs(xi[c] - xj[c]));
        for (Eigen::Index c = 0; c < dy; ++c) b = std::max(b, std::abs(yi[c] - yj[c]));
        ex[j] = a;
        ey[j] = b;
        joint[j] = std::max(a, b);
      }
      joint[i] = std::numeric_limits<double>::infinity();
      std::vector<double> tmp = joint;
      std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(k - 1), tmp.end());
      const double eps = tmp[k - 1];
      std::size_t nx = 0, ny = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        nx += ex[j] < eps;
        ny += ey[j] < eps;
      }
      psi_sum[i] = digamma(static_cast<double>(nx) + 1.0) + digamma(static_cast<double>(ny) + 1.0);
    }
  });
  double mean_psi = 0.0;
  for (double v : psi_sum) mean_psi += v;
  mean_psi /= static_cast<double>(n);

  const double psi_n = digamma(static_cast<double>(n));
  const double psi_k = digamma(static_cast<double>(k));
  KsgResult r;
  r.raw = psi_k + psi_n - mean_psi;
  r.mi = std::max(r.raw, 0.0);
  r.near_deterministic = r.raw >= psi_n - psi_k - 0.5;
  return r;
}

double ksg_mi_discrete(const Matrix& X, const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (labels.size() != n) invalid("ksg_mi_discrete: label count differs from sample count");
  if (k < 1) invalid("ksg_mi_discrete: k must be >= 1");
  check_finite(X, "ksg_mi_discrete");
  std::map<int, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < n; ++i) classes[labels[i]].push_back(i);

  const Matrix xs = jittered(X, seed, 3);
  std::vector<double> dist;
  double acc = 0.0;
  std::size_t used = 0;
  for (const auto& [label, members] : classes) {
    if (members.size() <= k) continue;  // singleton-ish classes carry no neighbour information
    for (std::size_t i : members) {
      row_distances(xs, static_cast<Eigen::Index>(i), dist);
      std::vector<double> within;
      within.reserve(members.size() - 1);
      for (std::size_t j : members)
        if (j != i) within.push_back(dist[j]);
      std::nth_element(within.begin(), within.begin() + static_cast<std::ptrdiff_t>(k - 1), within.end());
      const double eps = within[k - 1];
      std::size_t m = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && dist[j] <= eps) ++m;
      acc += digamma(static_cast<double>(n)) - digamma(static_cast<double>(members.size())) +
             digamma(static_cast<double>(k)) - digamma(static_cast<double>(m));
      ++used;
    }
  }
  if (used == 0) invalid("ksg_mi_discrete: every class has <= k members");
  return std::max(acc / static_cast<double>(used), 0.0);
}

KsgResult ksg_mi_pca(const Matrix& X, const Matrix& Y, std::size_t k, std::size_t pca_target, std::uint64_t seed) {
  auto reduce = [&](const Matrix& M) -> Matrix {
    const auto n = static_cast<std::size_t>(M.rows());
    const auto d = static_cast<std::size_t>(M.cols());
    if (d <= pca_target) return M;
    return pca_reduce(M, pca_dim(pca_target, n, d)).scores;
  };
  return ksg_mi(reduce(X), reduce(Y), k, seed);
}

namespace {

// U-centred distance matrix (zero diagonal).
Matrix u_centered_distances(const Matrix& X) {
  const auto n = X.rows();
  const double nn = static_cast<double>(n);
  Matrix D(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) D(i, j) = (X.row(i) - X.row(j)).norm();
  const Vector row_sum = D.rowwise().sum();
  const Vector col_sum = D.colwise().sum().transpose();
  const double total = D.sum();
  D.colwise() -= row_sum / (nn - 2.0);
  D.rowwise() -= col_sum.transpose() / (nn - 2.0);
  D.array() += total / ((nn - 1.0) * (nn - 2.0));
  D.diagonal().setZero();
  return D;
}

}  // namespace

double distance_correlation(const Matrix& X, const Matrix& Y, std::size_t max_n, std::uint64_t seed) {
  if (X.rows() != Y.rows()) invalid("distance_correlation: X and Y have different sample counts");
  if (X.rows() < 4) invalid("distance_correlation: need at least 4 samples");
  check_finite(X, "distance_correlation");
  check_finite(Y, "distance_correlation");
  const auto n = static_cast<std::size_t>(X.rows());
  Matrix xs = X, ys = Y;
  if (max_n >= 4 && n > max_n) {
    Rng rng(seed);
    auto perm = rng.permutation(n);
    perm.resize(max_n);
    std::sort(perm.begin(), perm.end());
    xs.resize(static_cast<Eigen::Index>(max_n), X.cols());
    ys.resize(static_cast<Eigen::Index>(max_n), Y.cols());
    for (std::size_t r = 0; r < max_n; ++r) {
      xs.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(perm[r]));
      ys.row(static_cast<Eigen::Index>(r)) = Y.row(static_cast<Eigen::Index>(perm[r]));
    }
  }
  const Matrix A = u_centered_distances(xs);
  const Matrix B = u_centered_distances(ys);
  const double dcov = (A.array() * B.array()).sum();
  const double vx = A.array().square().sum();
  const double vy = B.array().square().sum();
  if (vx <= 0.0 || vy <= 0.0) return 0.0;
  const double r2 = dcov / std::sqrt(vx * vy);
  return std::sqrt(std::clamp(r2, 0.0, 1.0));
}

}  // namespace msma
