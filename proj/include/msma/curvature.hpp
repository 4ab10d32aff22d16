#ifndef MSMA_CURVATURE_HPP
#define MSMA_CURVATURE_HPP

// Discrete curvature energy sum_i K_i^2 dV_i of a point cloud.
//
// Around each point a local PCA frame splits the k-nearest-neighbour offsets into
// tangent (d_local) and normal coordinates; the normal coordinates are regressed
// on tangent monomials {t_a, t_a t_b}. K_i is the Frobenius norm of the
// second-order coefficients, dV_i the neighbourhood ball volume shared among
// its k points.

#include "msma/common.hpp"

#include <vector>

namespace msma {

struct CurvatureResult {
  double value = 0.0;
  std::vector<double> K;
  std::vector<double> dV;
};

CurvatureResult curvature_penalty(const Matrix& points, std::size_t k_nn = 10, std::size_t d_local = 2);

// Local PCA frame of each point's k_nn neighbourhood: the top d_local directions
// (columns of `tangent`), the neighbourhood radius and its ball volume / k_nn.
struct LocalFrame {
  Matrix tangent;
  double radius = 0.0;
  double dv = 0.0;
};
std::vector<LocalFrame> local_frames(const Matrix& points, std::size_t k_nn, std::size_t d_local);

// Neighbourhoods, frames and regression operators frozen at one configuration.
// With these held fixed the energy is a quadratic function of the points, which
// gives a cheap gradient for training.
class CurvatureLinearization {
 public:
  CurvatureLinearization(const Matrix& points, std::size_t k_nn, std::size_t d_local);

  // Energy at `points` (same shape as the linearization point) and its gradient.
  double evaluate(const Matrix& points, Matrix* grad) const;
  // Per-point K_i^2 and dV_i at `points`.
  void terms(const Matrix& points, std::vector<double>& k2, std::vector<double>& dv) const;

 private:
  Matrix coefficients(std::size_t i, const Matrix& points) const;

  struct Local {
    std::vector<Eigen::Index> nbrs;
    Matrix normal;  // D x m
    Matrix quad;    // q x k, rows of the regression operator for second-order terms
    double dv = 0.0;
  };
  std::vector<Local> locals_;
  Eigen::Index rows_ = 0, cols_ = 0;
};

}  // namespace msma

#endif
