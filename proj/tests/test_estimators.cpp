#include "msma/estimators.hpp"
#include "msma/mine.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace msma;
using doctest::Approx;

namespace {

GaussianStats gauss1(double mu, double var) {
  GaussianStats g;
  g.mean = Vector::Constant(1, mu);
  g.cov = Matrix::Constant(1, 1, var);
  return g;
}

// Monte Carlo E_p[log p(x) - log q(x)] for 1-D Gaussians.
double mc_kl(double mp, double vp, double mq, double vq, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = mp + std::sqrt(vp) * rng.normal();
    const double lp = -0.5 * std::log(2 * M_PI * vp) - 0.5 * (x - mp) * (x - mp) / vp;
    const double lq = -0.5 * std::log(2 * M_PI * vq) - 0.5 * (x - mq) * (x - mq) / vq;
    acc += lp - lq;
  }
  return acc / static_cast<double>(n);
}

}  // namespace

TEST_CASE("fit_gaussian") {
  const Matrix X = testing::gaussian(10000, 2, 1);
  const auto g = fit_gaussian(X, 0.0);
  CHECK((g.cov - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.05);
  CHECK((g.cov - g.cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  Matrix C = testing::gaussian(50, 3, 2);
  C.col(1).setConstant(4.0);
  CHECK(fit_gaussian(C, 0.0).cov(1, 1) == 0.0);
  CHECK(fit_gaussian(C, 0.1).cov(1, 1) > 0.0);
  CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(fit_gaussian(C, 0.1).cov).eigenvalues().minCoeff() >= 0.0);

  CHECK_THROWS_AS(fit_gaussian(Matrix::Zero(1, 2)), Error);
  Matrix bad = testing::gaussian(5, 2, 3);
  bad(2, 1) = NAN;
  CHECK_THROWS_AS(fit_gaussian(bad), Error);
}

TEST_CASE("gaussian_kl closed forms") {
  CHECK(gaussian_kl(gauss1(0, 1), gauss1(0, 1)) == 0.0);
  CHECK(gaussian_kl(gauss1(0, 1), gauss1(1, 1)) == Approx(0.5).epsilon(1e-12));
  const double expect = 0.5 * (std::log(4.0) + 0.25 - 1.0);
  CHECK(std::abs(gaussian_kl(gauss1(0, 1), gauss1(0, 4)) - expect) < 1e-12);
  CHECK(expect == Approx(0.3181).epsilon(1e-4));
  // Monte Carlo cross-check of the closed forms
  CHECK(mc_kl(0, 1, 1, 1, 200000, 5) == Approx(0.5).epsilon(0.02));
  CHECK(mc_kl(0, 1, 0, 4, 200000, 6) == Approx(expect).epsilon(0.03));

  const auto p = fit_gaussian(testing::gaussian(200, 3, 7));
  const auto q = fit_gaussian(testing::gaussian(200, 3, 8) * 1.5);
  CHECK(gaussian_kl(p, p) == 0.0);
  CHECK(gaussian_kl(p, q) > 0.0);
  CHECK_THROWS_AS(gaussian_kl(p, gauss1(0, 1)), Error);
  GaussianStats sing;
  sing.mean = Vector::Zero(3);
  sing.cov = Matrix::Zero(3, 3);
  CHECK_THROWS_AS(gaussian_kl(p, sing), Error);
}

TEST_CASE("local KL quadratic form") {
  FisherModel m;
  m.theta = Vector::Zero(1);
  m.sigma = 1.0;
  CHECK(local_kl_quadratic(m, Vector::Zero(1)) == 0.0);
  CHECK(local_kl_quadratic(m, Vector::Constant(1, 0.1)) == Approx(0.005).epsilon(1e-12));
  CHECK(m.exact_kl(Vector::Constant(1, 0.1)) == Approx(0.005).epsilon(1e-12));
  m.sigma = 2.0;
  CHECK(std::abs(local_kl_quadratic(m, Vector::Constant(1, 0.2)) - 0.005) < 1e-12);
  CHECK(std::abs(m.exact_kl(Vector::Constant(1, 0.2)) - 0.005) < 1e-6);
  CHECK_THROWS_AS(local_kl_quadratic(m, Vector::Zero(2)), Error);

  FisherModel mv;
  mv.family = FisherFamily::gaussian_meanvar;
  mv.theta.resize(4);
  mv.theta << 0.3, -1.0, 1.2, 0.7;
  const Matrix F = mv.fisher();
  CHECK((F - F.transpose()).norm() == 0.0);
  CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(F).eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("pca_reduce") {
  Rng rng(3);
  const Matrix basis = random_orthonormal(10, 2, rng);
  const Matrix X = rng.normal_matrix(100, 2) * basis.transpose();
  const auto p = pca_reduce(X, 2);
  const Matrix recon = (p.scores * p.basis.transpose()).rowwise() + p.mean.transpose();
  CHECK((recon - X).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(p.explained(0) >= p.explained(1));

  const auto big = pca_reduce(testing::gaussian(1000, 100, 4), 50);
  CHECK((big.basis.transpose() * big.basis - Matrix::Identity(50, 50)).cwiseAbs().maxCoeff() <= 1e-8);
  for (Eigen::Index i = 1; i < 50; ++i) CHECK(big.explained(i - 1) >= big.explained(i));
  CHECK_THROWS_AS(pca_reduce(X, 0), Error);
  CHECK_THROWS_AS(pca_reduce(X, 11), Error);
  CHECK(pca_dim(50, 30, 768) == 29);
  CHECK(pca_dim(50, 5000, 16) == 16);
}

TEST_CASE("ksg_mi") {
  SUBCASE("copy is near-deterministic") {
    const Matrix X = testing::gaussian(1000, 2, 9);
    const auto r = ksg_mi(X, X, 5, 1);
    CHECK(r.mi >= 2.0);
    CHECK(r.near_deterministic);
  }
  SUBCASE("sample order does not matter") {
    auto [X, Y] = testing::correlated(600, 1, 0.6, 10);
    Rng rng(2);
    const auto perm = rng.permutation(600);
    Matrix Xp(600, 1), Yp(600, 1);
    for (std::size_t i = 0; i < 600; ++i) {
      Xp.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(perm[i]));
      Yp.row(static_cast<Eigen::Index>(i)) = Y.row(static_cast<Eigen::Index>(perm[i]));
    }
    CHECK(ksg_mi(X, Y, 5, 3).raw == Approx(ksg_mi(Xp, Yp, 5, 3).raw).epsilon(1e-12));
  }
  SUBCASE("ties are broken") {
    Matrix X(200, 1), Y(200, 1);
    for (int i = 0; i < 200; ++i) {
      X(i, 0) = i % 4;
      Y(i, 0) = (i / 4) % 5;
    }
    const auto r = ksg_mi(X, Y, 5, 0);
    CHECK(std::isfinite(r.raw));
  }
  SUBCASE("independent noise dimension") {
    auto [X, Y] = testing::correlated(5000, 1, 0.8, 11);
    Matrix X2(5000, 2);
    X2 << X, testing::gaussian(5000, 1, 12);
    CHECK(std::abs(ksg_mi(X, Y, 5, 1).mi - ksg_mi(X2, Y, 5, 1).mi) <= 0.1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(ksg_mi(testing::gaussian(5, 1, 1), testing::gaussian(5, 1, 2), 5), Error);
    CHECK_THROWS_AS(ksg_mi(testing::gaussian(10, 1, 1), testing::gaussian(9, 1, 2), 5), Error);
  }
}

TEST_CASE("ksg_mi_discrete recovers label entropy") {
  Matrix X(900, 1);
  std::vector<int> y(900);
  Rng rng(5);
  for (int i = 0; i < 900; ++i) {
    y[static_cast<std::size_t>(i)] = i % 3;
    X(i, 0) = 10.0 * (i % 3) + 0.1 * rng.normal();
  }
  CHECK(ksg_mi_discrete(X, y, 5, 0) == Approx(std::log(3.0)).epsilon(0.05));
}

TEST_CASE("MINE") {
  MineConfig cfg;
  SUBCASE("independent pairs") {
    const auto r = mine_estimate(testing::gaussian(2000, 1, 1), testing::gaussian(2000, 1, 2), cfg);
    CHECK(r.bound <= 0.05);
    CHECK(r.trace.size() == cfg.steps);
  }
  SUBCASE("rho 0.9 and the KSG ceiling") {
    auto [X, Y] = testing::correlated(4000, 1, 0.9, 3);
    const auto r = mine_estimate(X, Y, cfg);
    CHECK(r.bound >= 0.7);
    CHECK(r.bound <= ksg_mi(X, Y, 5, 0).mi + 0.2);
  }
  SUBCASE("X = Y uniform over 8 one-hot symbols") {
    Matrix X = Matrix::Zero(2048, 8);
    for (int i = 0; i < 2048; ++i) X(i, i % 8) = 1.0;
    const auto r = mine_estimate(X, X, cfg);
    CHECK(r.bound >= 1.8);
  }
  SUBCASE("too few samples") { CHECK_THROWS_AS(mine_estimate(testing::gaussian(100, 1, 1), testing::gaussian(100, 1, 2)), Error); }
}

TEST_CASE("distance_correlation") {
  const Matrix X = testing::gaussian(500, 3, 1);
  CHECK(std::abs(distance_correlation(X, X) - 1.0) <= 1e-9);
  Rng rng(4);
  const Matrix R = random_orthonormal(3, 3, rng);
  Matrix Y = 2.0 * X * R;
  Y.rowwise() += RowVector::Constant(3, 0.7);
  CHECK(std::abs(distance_correlation(X, Y) - 1.0) <= 1e-6);
  CHECK(distance_correlation(testing::gaussian(2000, 2, 5), testing::gaussian(2000, 2, 6)) <= 0.05);
  Vector c(3);
  c << 1.0, 3.0, 0.2;
  const double v = distance_correlation(X, X * c.asDiagonal());
  CHECK(v > 0.0);
  CHECK(v <= 1.0);
  CHECK_THROWS_AS(distance_correlation(testing::gaussian(3, 1, 1), testing::gaussian(3, 1, 2)), Error);
  // subsampling is seeded
  const Matrix big = testing::gaussian(300, 2, 9);
  const Matrix bigy = big + 0.5 * testing::gaussian(300, 2, 10);
  CHECK(distance_correlation(big, bigy, 100, 3) == distance_correlation(big, bigy, 100, 3));
}
