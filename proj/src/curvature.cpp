#include "msma/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace msma {

namespace {

double ball_volume(std::size_t d, double r) {
  const double dd = static_cast<double>(d);
  return std::pow(std::numbers::pi, dd / 2.0) / std::tgamma(dd / 2.0 + 1.0) * std::pow(r, dd);
}

// Indices of the k nearest neighbours of every point (Euclidean, self excluded,
// ties by index).
std::vector<std::vector<Eigen::Index>> knn(const Matrix& X, std::size_t k) {
  const auto n = X.rows();
  const Vector sq = X.rowwise().squaredNorm();
  const Matrix gram = X * X.transpose();
  std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(n));
  std::vector<std::pair<double, Eigen::Index>> cand(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) cand[c++] = {std::max(sq(i) + sq(j) - 2.0 * gram(i, j), 0.0), j};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t t = 0; t < k; ++t) out[static_cast<std::size_t>(i)].push_back(cand[t].second);
  }
  return out;
}

}  // namespace

CurvatureLinearization::CurvatureLinearization(const Matrix& points, std::size_t k_nn, std::size_t d_local)
    : rows_(points.rows()), cols_(points.cols()) {
  const auto n = static_cast<std::size_t>(points.rows());
  const auto D = static_cast<std::size_t>(points.cols());
  if (d_local < 1) invalid("curvature_penalty: d_local must be >= 1");
  if (k_nn < d_local + 2) invalid("curvature_penalty: k_nn must be >= d_local + 2");
  if (n <= k_nn) invalid("curvature_penalty: need more than k_nn points");
  if (!points.allFinite()) invalid("curvature_penalty: non-finite points");

  const auto nbrs = knn(points, k_nn);
  const auto dl = static_cast<Eigen::Index>(std::min(d_local, D));
  const Eigen::Index q = dl * (dl + 1) / 2;
  const auto k = static_cast<Eigen::Index>(k_nn);
  locals_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Local& loc = locals_[i];
    loc.nbrs = nbrs[i];
    Matrix R(k, points.cols());
    for (Eigen::Index t = 0; t < k; ++t) R.row(t) = points.row(loc.nbrs[static_cast<std::size_t>(t)]) - points.row(static_cast<Eigen::Index>(i));
    const double radius = R.rowwise().norm().maxCoeff();
    if (!(radius > 0.0)) invalid("curvature_penalty: degenerate neighbourhood (zero spread) at point " + std::to_string(i));
    loc.dv = ball_volume(d_local, radius) / static_cast<double>(k_nn);

    Eigen::SelfAdjointEigenSolver<Matrix> eig(R.transpose() * R);
    const Matrix frame = eig.eigenvectors().rowwise().reverse();  // descending variance
    const Matrix tangent = frame.leftCols(dl);
    loc.normal = frame.rightCols(points.cols() - dl);
    if (loc.normal.cols() == 0) continue;

    // Tangent coordinates scaled by the radius keep the design well conditioned.
    const Matrix T = R * tangent / radius;
    Matrix A(k, dl + q);
    A.leftCols(dl) = T;
    Eigen::Index col = dl;
    for (Eigen::Index a = 0; a < dl; ++a)
      for (Eigen::Index b = a; b < dl; ++b) A.col(col++) = T.col(a).cwiseProduct(T.col(b));
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
    cod.setThreshold(1e-10);
    const Matrix pinv = cod.pseudoInverse();  // (dl + q) x k
    // Undo the radius scaling: second-order coefficients carry 1 / radius^2.
    loc.quad = pinv.bottomRows(q) / (radius * radius);
  }
}

Matrix CurvatureLinearization::coefficients(std::size_t i, const Matrix& points) const {
  const Local& loc = locals_[i];
  const auto k = static_cast<Eigen::Index>(loc.nbrs.size());
  Matrix R(k, cols_);
  for (Eigen::Index t = 0; t < k; ++t) R.row(t) = points.row(loc.nbrs[static_cast<std::size_t>(t)]) - points.row(static_cast<Eigen::Index>(i));
  return loc.quad * (R * loc.normal);
}

double CurvatureLinearization::evaluate(const Matrix& points, Matrix* grad) const {
  if (points.rows() != rows_ || points.cols() != cols_) invalid("curvature: point matrix shape changed");
  if (grad) *grad = Matrix::Zero(rows_, cols_);
  double total = 0.0;
  for (std::size_t i = 0; i < locals_.size(); ++i) {
    const Local& loc = locals_[i];
    if (loc.normal.cols() == 0) continue;
    const Matrix C = coefficients(i, points);
    total += loc.dv * C.squaredNorm();
    if (grad) {
      const Matrix dR = (2.0 * loc.dv) * loc.quad.transpose() * C * loc.normal.transpose();
      for (Eigen::Index t = 0; t < dR.rows(); ++t) {
        grad->row(loc.nbrs[static_cast<std::size_t>(t)]) += dR.row(t);
        grad->row(static_cast<Eigen::Index>(i)) -= dR.row(t);
      }
    }
  }
  return total;
}

void CurvatureLinearization::terms(const Matrix& points, std::vector<double>& k2, std::vector<double>& dv) const {
  if (points.rows() != rows_ || points.cols() != cols_) invalid("curvature: point matrix shape changed");
  k2.assign(locals_.size(), 0.0);
  dv.assign(locals_.size(), 0.0);
  for (std::size_t i = 0; i < locals_.size(); ++i) {
    dv[i] = locals_[i].dv;
    if (locals_[i].normal.cols() > 0) k2[i] = coefficients(i, points).squaredNorm();
  }
}

std::vector<LocalFrame> local_frames(const Matrix& points, std::size_t k_nn, std::size_t d_local) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (d_local < 1) invalid("local_frames: d_local must be >= 1");
  if (k_nn < d_local + 2) invalid("local_frames: k_nn must be >= d_local + 2");
  if (n <= k_nn) invalid("local_frames: need more than k_nn points");
  if (!points.allFinite()) invalid("local_frames: non-finite points");
  const auto nbrs = knn(points, k_nn);
  const auto dl = static_cast<Eigen::Index>(std::min<std::size_t>(d_local, static_cast<std::size_t>(points.cols())));
  std::vector<LocalFrame> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix R(static_cast<Eigen::Index>(k_nn), points.cols());
    for (std::size_t t = 0; t < k_nn; ++t) R.row(static_cast<Eigen::Index>(t)) = points.row(nbrs[i][t]) - points.row(static_cast<Eigen::Index>(i));
    out[i].radius = R.rowwise().norm().maxCoeff();
    if (!(out[i].radius > 0.0)) invalid("local_frames: degenerate neighbourhood (zero spread) at point " + std::to_string(i));
    out[i].dv = ball_volume(d_local, out[i].radius) / static_cast<double>(k_nn);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(R.transpose() * R);
    out[i].tangent = eig.eigenvectors().rowwise().reverse().leftCols(dl);
  }
  return out;
}

CurvatureResult curvature_penalty(const Matrix& points, std::size_t k_nn, std::size_t d_local) {
  const CurvatureLinearization lin(points, k_nn, d_local);
  CurvatureResult r;
  std::vector<double> k2;
  lin.terms(points, k2, r.dV);
  r.K.resize(k2.size());
  for (std::size_t i = 0; i < k2.size(); ++i) {
    r.K[i] = std::sqrt(k2[i]);
    r.value += k2[i] * r.dV[i];
  }
  return r;
}

}  // namespace msma
