#include "msma/attention_profile.hpp"
#include "msma/boundary.hpp"
#include "msma/probing.hpp"
#include "msma/synthetic.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace msma;
using doctest::Approx;

namespace {

Matrix shift_attention(Eigen::Index n) {
  Matrix A = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) A(i, i + 1 < n ? i + 1 : i - 1) = 1.0;
  return A;
}

double brute_span(const Matrix& A) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) acc += A(i, j) * std::abs(static_cast<double>(i - j));
  return acc / static_cast<double>(A.rows());
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST_CASE("mean_span and attention_entropy") {
  CHECK(mean_span({Matrix::Identity(6, 6)}) == 0.0);
  CHECK(mean_span({Matrix::Constant(5, 5, 0.2)}) == Approx(1.6).epsilon(1e-12));
  CHECK(mean_span({shift_attention(7)}) == Approx(1.0).epsilon(1e-12));
  CHECK(attention_entropy({Matrix::Constant(8, 8, 0.125)}) == Approx(std::log(8.0)).epsilon(1e-12));
  CHECK(attention_entropy({Matrix::Identity(4, 4)}) == 0.0);
  Matrix half = Matrix::Zero(4, 4);
  half.leftCols(2).setConstant(0.5);
  CHECK(attention_entropy({half}) == Approx(std::log(2.0)).epsilon(1e-12));

  Matrix bad = Matrix::Constant(4, 4, 0.25);
  bad(1, 1) = 0.05;  // row sums to 0.8
  CHECK_THROWS_AS(mean_span({bad}), Error);
  CHECK_THROWS_AS(attention_entropy({bad}), Error);
}

TEST_CASE("span properties") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(20));
    std::vector<Matrix> heads;
    for (int h = 0; h < 3; ++h) {
      Matrix A = (rng.normal_matrix(n, n).array() * 2.0).exp().matrix();
      A = A.array().colwise() / A.rowwise().sum().array();
      heads.push_back(A);
    }
    const double s = mean_span(heads), e = attention_entropy(heads);
    CHECK(s >= 0.0);
    CHECK(s <= static_cast<double>(n - 1));
    CHECK(e >= 0.0);
    CHECK(e <= std::log(static_cast<double>(n)) + 1e-12);
    std::vector<Matrix> perm = {heads[2], heads[0], heads[1]};
    CHECK(mean_span(perm) == Approx(s).epsilon(1e-12));
  }
  for (double bw : {0.0, 1.0, 2.5, 7.0, 30.0}) {
    const Matrix A = banded_attention(40, bw);
    CHECK(std::abs(mean_span({A}) - brute_span(A)) <= 1e-9);
  }
}

TEST_CASE("profile_stack") {
  SUBCASE("planted monotone spans") {
    const LayerStack s = generate_synthetic(testing::small_spec(3, 32));
    const auto p = profile_stack(s);
    CHECK(p.span.size() == 12);
    CHECK(p.delta_span.size() == 11);
    CHECK(p.spearman_depth >= 0.85);
    CHECK(argmax(p.delta_span) + 1 == 2);
  }
  SUBCASE("constant bandwidth") {
    SyntheticSpec spec = testing::small_spec(4, 32);
    spec.span_profile.assign(12, 20.0);
    spec.head_jitter = 0.0;
    const auto p = profile_stack(generate_synthetic(spec));
    for (double d : p.delta_span) CHECK(std::abs(d) < 1e-6);
  }
  SUBCASE("missing attention") {
    SyntheticSpec spec = testing::small_spec(5, 32);
    spec.attention = false;
    CHECK_THROWS_AS(profile_stack(generate_synthetic(spec)), Error);
  }
}

TEST_CASE("spearman") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == Approx(-1.0));
  CHECK(spearman({1, 2, 2, 3}, {1, 2, 2, 3}) == Approx(1.0));
}

TEST_CASE("train_probe") {
  SUBCASE("separable blobs") {
    Rng rng(1);
    Matrix X = rng.normal_matrix(400, 3) * 0.3;
    std::vector<int> y(400);
    for (int i = 0; i < 400; ++i) {
      y[static_cast<std::size_t>(i)] = i % 2;
      X(i, 0) += i % 2 ? 3.0 : -3.0;
    }
    const auto fit = train_probe(X, y);
    CHECK(fit.test.accuracy >= 0.99);
    for (std::size_t e = 1; e < fit.loss_trace.size(); ++e) CHECK(fit.loss_trace[e] <= fit.loss_trace[e - 1] + 1e-12);
    const auto again = train_probe(X, y);
    CHECK(again.test.accuracy == fit.test.accuracy);
    CHECK(again.loss_trace == fit.loss_trace);
  }
  SUBCASE("shuffled labels sit at chance") {
    Rng rng(2);
    const Matrix X = rng.normal_matrix(4000, 4);
    std::vector<int> y(4000);
    for (auto& v : y) v = static_cast<int>(rng.below(3));
    const auto fit = train_probe(X, y);
    CHECK(std::abs(fit.test.accuracy - 1.0 / 3.0) <= 0.05);
  }
  SUBCASE("constant features give the majority rate") {
    const Matrix X = Matrix::Constant(100, 2, 1.5);
    std::vector<int> ytr(80), yte(20);
    for (int i = 0; i < 80; ++i) ytr[static_cast<std::size_t>(i)] = i < 56 ? 1 : 0;
    for (int i = 0; i < 20; ++i) yte[static_cast<std::size_t>(i)] = i < 13 ? 1 : 0;
    const auto fit = train_probe(X.topRows(80), ytr, X.bottomRows(20), yte, 2);
    CHECK(fit.test.accuracy == Approx(13.0 / 20.0));
  }
  SUBCASE("errors") {
    const Matrix X = testing::gaussian(20, 2, 1);
    CHECK_THROWS_AS(train_probe(X, std::vector<int>(20, 1)), Error);
    Matrix bad = X;
    bad(3, 1) = NAN;
    std::vector<int> y(20);
    for (int i = 0; i < 20; ++i) y[static_cast<std::size_t>(i)] = i % 2;
    CHECK_THROWS_AS(train_probe(bad, y), Error);
  }
}

TEST_CASE("score_predictions") {
  const auto m = score_predictions({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
  CHECK(m.accuracy == Approx(0.75));
  // F1 class 0: p=1, r=0.5 -> 2/3; class 1: p=2/3, r=1 -> 0.8
  CHECK(m.macro_f1 == Approx((2.0 / 3.0 + 0.8) / 2.0));
}

TEST_CASE("probe_stack on a planted stack") {
  const LayerStack s = generate_synthetic(testing::small_spec(11, 256));
  const auto r = probe_stack(s);
  REQUIRE(r.tasks.size() == 3);
  const auto local = std::find(r.tasks.begin(), r.tasks.end(), "local") - r.tasks.begin();
  const auto global = std::find(r.tasks.begin(), r.tasks.end(), "global") - r.tasks.begin();
  const std::size_t pl = r.peak_layer(static_cast<std::size_t>(local)), pg = r.peak_layer(static_cast<std::size_t>(global));
  CHECK(pl >= 1);
  CHECK(pl <= 2);
  CHECK(pg > 8);
  CHECK(pg <= 12);
  double wsum = 0.0;
  for (double w : r.weights) wsum += w;
  CHECK(wsum == Approx(1.0));
  for (const auto& t : r.accuracy)
    for (double a : t) {
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
    }
  for (const auto& t : r.grad)
    for (double g : t) CHECK(std::abs(g) <= 1.0);
  const auto again = probe_stack(s);
  CHECK(again.accuracy == r.accuracy);
  CHECK(again.grad == r.grad);

  LayerStack degenerate = s;
  std::fill(degenerate.labels[0].begin(), degenerate.labels[0].end(), 1);
  CHECK_THROWS_WITH_AS(probe_stack(degenerate), doctest::Contains("degenerate task"), Error);
  CHECK_THROWS_AS(probe_stack(s, {"nope"}), Error);
}

TEST_CASE("fold assignment ignores storage order") {
  const LayerStack s = generate_synthetic(testing::small_spec(2, 64));
  std::vector<std::size_t> rows(64);
  std::iota(rows.begin(), rows.end(), 0);
  std::reverse(rows.begin(), rows.end());
  const LayerStack r = s.subset(rows);
  const auto a = fold_assignment(s, 5, 3), b = fold_assignment(r, 5, 3);
  for (std::size_t i = 0; i < 64; ++i) CHECK(a[i] == b[63 - i]);
}

TEST_CASE("zscore and smooth") {
  const auto z = zscore({1, 2, 3});
  CHECK(z[0] == Approx(-std::sqrt(1.5)));
  CHECK(zscore({4, 4, 4}) == std::vector<double>{0, 0, 0});
  const auto s = smooth({0, 0, 4, 0, 0}, 3);
  CHECK(s[2] == Approx(2.0));
  CHECK(s[1] == Approx(1.0));
  CHECK(s[0] == Approx(0.0));
  CHECK(smooth({1, 5, 2}, 1) == std::vector<double>{1, 5, 2});
  CHECK_THROWS_AS(smooth({1, 2}, 2), Error);
}

TEST_CASE("boundary_scores and pick_boundaries") {
  BoundaryConfig cfg;
  SUBCASE("flat evidence is ambiguous") {
    const auto s = boundary_scores({1, 1, 1, 1, 1}, {2, 2, 2, 2, 2}, {0, 0, 0, 0, 0}, cfg);
    try {
      pick_boundaries(s.score, 2);
      FAIL("expected ambiguity");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ambiguous);
      CHECK(std::string(e.what()).find("ambiguous") != std::string::npos);
    }
  }
  SUBCASE("spike at layer 2") {
    const auto s = boundary_scores({0, 5, 0, 0, 0, 0, 0}, {1, 1, 1, 1, 1, 1, 1}, {0, 0, 0, 0, 0, 0, 0}, cfg);
    CHECK(argmax(s.score) + 1 == 2);
  }
  SUBCASE("alpha only reduces to smoothed z(delta span)") {
    cfg.alpha = 1.0;
    cfg.beta = cfg.gamma = 0.0;
    const std::vector<double> ds{0.3, 2.0, -1.0, 0.5, 4.0, 0.1};
    const auto s = boundary_scores(ds, {3, 1, 4, 1, 5, 9}, {0.1, 0.2, 0.3, 0.1, 0.0, 0.5}, cfg);
    const auto expect = smooth(zscore(ds), 3);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(s.score[i] == Approx(expect[i]).epsilon(1e-12));
  }
  SUBCASE("channel scaling does not move boundaries") {
    const std::vector<double> ds{0.5, 6, 1, 1.2, 0.8, 1.1, 0.7, 3, 0.9, 1.0, 0.6};
    const std::vector<double> mi{3.1, 3.0, 1.0, 2.9, 2.8, 3.0, 2.9, 2.7, 0.9, 2.8, 2.9};
    const std::vector<double> pg{0.0, 0.3, 0.0, 0.05, 0.0, 0.1, 0.0, 0.4, 0.0, 0.0, 0.0};
    const auto base = pick_boundaries(boundary_scores(ds, mi, pg, cfg).score, 2);
    for (double c : {0.01, 7.0, 1e4}) {
      auto s2 = ds, m2 = mi, p2 = pg;
      for (auto& v : s2) v *= c;
      CHECK(pick_boundaries(boundary_scores(s2, mi, pg, cfg).score, 2) == base);
      for (auto& v : m2) v *= c;
      CHECK(pick_boundaries(boundary_scores(ds, m2, pg, cfg).score, 2) == base);
      for (auto& v : p2) v *= c;
      CHECK(pick_boundaries(boundary_scores(ds, mi, p2, cfg).score, 2) == base);
    }
  }
  SUBCASE("ties go to the lower layer and separation is honoured") {
    CHECK(pick_boundaries({1, 5, 5, 1, 1, 5}, 2) == std::pair<std::size_t, std::size_t>{2, 6});
    CHECK(pick_boundaries({0, 9, 8, 0, 0}, 2).second - pick_boundaries({0, 9, 8, 0, 0}, 2).first >= 2);
  }
  SUBCASE("length mismatch") { CHECK_THROWS_AS(boundary_scores({1, 2, 3}, {1, 2}, {}, cfg), Error); }
  SUBCASE("config validation") {
    cfg.alpha = 0.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.alpha = 0.4;
    cfg.window = 2;
    CHECK_THROWS_AS(cfg.validate(), Error);
  }
}

TEST_CASE("adjacent MI profile") {
  LayerStack s;
  const Matrix a = testing::gaussian(600, 3, 1);
  const Matrix b = a + 1e-3 * testing::gaussian(600, 3, 2);
  const Matrix c = testing::gaussian(600, 3, 3);
  for (const Matrix* m : {&a, &b, &c}) s.hidden.push_back(m->cast<float>());
  s.manifest.n_layers = 3;
  s.manifest.n_samples = 600;
  s.manifest.hidden_dim = 3;
  const auto p = adjacent_mi_profile(s, 5, 50, 0, true);
  CHECK(p.adjacent[0] >= 2.0);
  CHECK(p.adjacent[1] <= 0.1);
  CHECK((p.full - p.full.transpose()).cwiseAbs().maxCoeff() <= 0.05);
  CHECK(mi_drop({3.0, 1.0, 2.0}) == std::vector<double>{0.0, 2.0, -1.0});
}

TEST_CASE("detect_boundaries") {
  const LayerStack s = generate_synthetic(testing::small_spec(7, 256));
  const auto r = detect_boundaries(s);
  CHECK(r.l1 == 2);
  CHECK(r.l2 == 8);
  CHECK(r.cv_std == 0.0);
  CHECK(r.stable);
  CHECK(r.scores.score.size() == 11);

  SUBCASE("sample order") {
    std::vector<std::size_t> rows(256);
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng(1);
    rng.shuffle(rows);
    const auto p = detect_boundaries(s.subset(rows));
    CHECK(p.l1 == r.l1);
    CHECK(p.l2 == r.l2);
  }
  SUBCASE("too few layers") {
    SyntheticSpec spec = testing::small_spec(1, 64);
    spec.n_layers = 3;
    spec.l1 = 1;
    spec.l2 = 2;
    spec.attention = false;
    CHECK_THROWS_AS(detect_boundaries(generate_synthetic(spec)), Error);
  }
}
