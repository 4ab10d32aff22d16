#include "msma/mine.hpp"

#include <algorithm>
#include <cmath>

namespace msma {

namespace {

Matrix hconcat(const Matrix& A, const Matrix& B) {
  Matrix out(A.rows(), A.cols() + B.cols());
  out << A, B;
  return out;
}

double log_mean_exp(const Vector& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().mean());
}

Matrix standardize(const Matrix& X) {
  const RowVector mean = X.colwise().mean();
  Matrix c = X.rowwise() - mean;
  for (Eigen::Index j = 0; j < c.cols(); ++j) {
    const double sd = std::sqrt(c.col(j).squaredNorm() / static_cast<double>(std::max<Eigen::Index>(c.rows() - 1, 1)));
    if (sd > 0.0) c.col(j) /= sd;
  }
  return c;
}

Matrix rows_of(const Matrix& X, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

}  // namespace

MineCritic::MineCritic(std::size_t dx, std::size_t dy, const MineConfig& cfg) : ema_rate_(cfg.ema_rate), dx_(dx) {
  require(cfg.hidden_layers >= 1 && cfg.hidden >= 1, "MineCritic: need at least one hidden layer");
  require(cfg.ema_rate > 0.0 && cfg.ema_rate <= 1.0, "MineCritic: ema_rate must be in (0, 1]");
  std::vector<std::size_t> sizes{dx + dy};
  for (std::size_t i = 0; i < cfg.hidden_layers; ++i) sizes.push_back(cfg.hidden);
  sizes.push_back(1);
  Rng rng(mix_seed(cfg.seed, 0x3a1e));
  net_ = Mlp(sizes, Activation::relu, rng, std::sqrt(2.0));
  opt_ = Adam(net_.n_params(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  ema_ = 0.0;
}

Matrix MineCritic::scores(const Matrix& X, const Matrix& Y, Mlp::Cache* cache) const {
  const Matrix in = hconcat(X, Y);
  return cache ? net_.forward(in, *cache) : net_.forward(in);
}

double MineCritic::bound(const Matrix& X, const Matrix& Y, const Matrix& Ym) const {
  const Vector tj = scores(X, Y, nullptr).col(0);
  const Vector tm = scores(X, Ym, nullptr).col(0);
  return tj.mean() - log_mean_exp(tm);
}

double MineCritic::train_step(const Matrix& X, const Matrix& Y, const Matrix& Ym) {
  Mlp::Cache cj, cm;
  const Vector tj = scores(X, Y, &cj).col(0);
  const Vector tm = scores(X, Ym, &cm).col(0);
  const double b = tj.mean() - log_mean_exp(tm);
  if (!std::isfinite(b)) fail(ErrorKind::runtime, "MINE: non-finite bound during training");

  const Vector etm = tm.array().exp();
  ++updates_;
  ema_ = (1.0 - ema_rate_) * ema_ + ema_rate_ * etm.mean();
  const double ema_hat = ema_ / (1.0 - std::pow(1.0 - ema_rate_, static_cast<double>(updates_)));

  // Minimise -bound; the partition term's gradient uses the smoothed denominator.
  const auto B = static_cast<double>(tj.size());
  Vector grad = Vector::Zero(static_cast<Eigen::Index>(net_.n_params()));
  net_.backward(cj, Matrix::Constant(tj.size(), 1, -1.0 / B), grad);
  net_.backward(cm, (etm / (static_cast<double>(tm.size()) * ema_hat)).eval(), grad);
  Vector p = net_.params();
  opt_.step(p, grad);
  net_.set_params(p);
  return b;
}

Matrix MineCritic::bound_grad_x(const Matrix& X, const Matrix& Y, const Matrix& Ym) const {
  Mlp::Cache cj, cm;
  const Vector tj = scores(X, Y, &cj).col(0);
  const Vector tm = scores(X, Ym, &cm).col(0);
  const Vector etm = tm.array().exp();
  const double denom = ema_ > 0.0 ? ema_ / (1.0 - std::pow(1.0 - ema_rate_, static_cast<double>(std::max<std::size_t>(updates_, 1))))
                                  : etm.mean();
  Vector scratch;
  const Matrix gj = net_.backward(cj, Matrix::Constant(tj.size(), 1, 1.0 / static_cast<double>(tj.size())), scratch);
  scratch.resize(0);
  const Matrix gm = net_.backward(cm, (-etm / (static_cast<double>(tm.size()) * denom)).eval(), scratch);
  const auto dx = static_cast<Eigen::Index>(dx_);
  return gj.leftCols(dx) + gm.leftCols(dx);
}

MineResult mine_estimate(const Matrix& X, const Matrix& Y, const MineConfig& cfg) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (static_cast<std::size_t>(Y.rows()) != n) invalid("mine_estimate: X and Y have different sample counts");
  if (n < 256) invalid("mine_estimate: need at least 256 samples");
  if (cfg.batch < 2 || cfg.steps < 1) invalid("mine_estimate: batch must be >= 2 and steps >= 1");
  if (!X.allFinite() || !Y.allFinite()) invalid("mine_estimate: non-finite entries");

  const Matrix xs = standardize(X);
  const Matrix ys = standardize(Y);
  MineCritic critic(static_cast<std::size_t>(X.cols()), static_cast<std::size_t>(Y.cols()), cfg);
  Rng rng(mix_seed(cfg.seed, 0x4d49));
  const std::size_t batch = std::min(cfg.batch, n);

  MineResult r;
  r.trace.reserve(cfg.steps);
  double smooth = 0.0;
  std::vector<std::size_t> order = rng.permutation(n), marg = rng.permutation(n);
  std::size_t cursor = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor + batch > n) {
      rng.shuffle(order);
      rng.shuffle(marg);
      cursor = 0;
    }
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 order.begin() + static_cast<std::ptrdiff_t>(cursor + batch));
    std::vector<std::size_t> midx(marg.begin() + static_cast<std::ptrdiff_t>(cursor),
                                  marg.begin() + static_cast<std::ptrdiff_t>(cursor + batch));
    cursor += batch;
    const Matrix bx = rows_of(xs, idx);
    const double b = critic.train_step(bx, rows_of(ys, idx), rows_of(ys, midx));
    r.trace.push_back(b);
    smooth = (1.0 - cfg.ema_rate) * smooth + cfg.ema_rate * b;
  }
  r.bound = smooth / (1.0 - std::pow(1.0 - cfg.ema_rate, static_cast<double>(cfg.steps)));

  // Full-sample bound with a handful of shuffled marginals.
  const Vector tj = critic.net().forward(hconcat(xs, ys)).col(0);
  Vector tm(static_cast<Eigen::Index>(5 * n));
  for (int rep = 0; rep < 5; ++rep) {
    const auto perm = rng.permutation(n);
    tm.segment(static_cast<Eigen::Index>(rep * n), static_cast<Eigen::Index>(n)) =
        critic.net().forward(hconcat(xs, rows_of(ys, perm))).col(0);
  }
  r.full_bound = tj.mean() - log_mean_exp(tm);
  if (!std::isfinite(r.bound) || !std::isfinite(r.full_bound)) fail(ErrorKind::runtime, "MINE: non-finite bound");
  return r;
}

}  // namespace msma
