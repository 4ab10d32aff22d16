#include "msma/probing.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

namespace msma {

namespace {

Matrix rows_of(const Matrix& X, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

std::vector<int> take(const std::vector<int>& v, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace

Matrix LinearProbe::logits(const Matrix& X) const {
  Matrix Z = ((X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix() * W;
  Z.rowwise() += b;
  return Z;
}

std::vector<int> LinearProbe::predict(const Matrix& X) const {
  const Matrix Z = logits(X);
  std::vector<int> out(static_cast<std::size_t>(Z.rows()));
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    Eigen::Index arg = 0;
    Z.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

ProbeMetrics score_predictions(const std::vector<int>& truth, const std::vector<int>& pred, int n_classes) {
  require(truth.size() == pred.size() && !truth.empty(), "score_predictions: size mismatch or empty input");
  ProbeMetrics m;
  std::size_t correct = 0;
  std::vector<double> tp(static_cast<std::size_t>(n_classes)), fp(tp), fn(tp);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(pred[i]);
    if (t == p) {
      ++correct;
      tp[t] += 1;
    } else {
      fp[p] += 1;
      fn[t] += 1;
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  // Macro-F1 over classes present in truth or prediction.
  double f1 = 0.0;
  int counted = 0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    if (tp[c] + fp[c] + fn[c] == 0) continue;
    f1 += 2 * tp[c] / (2 * tp[c] + fp[c] + fn[c]);
    ++counted;
  }
  m.macro_f1 = counted ? f1 / counted : 0.0;
  return m;
}

ProbeFit train_probe(const Matrix& Xtr, const std::vector<int>& ytr, const Matrix& Xte, const std::vector<int>& yte,
                     int n_classes, const ProbeConfig& cfg) {
  if (Xtr.rows() != static_cast<Eigen::Index>(ytr.size()) || Xte.rows() != static_cast<Eigen::Index>(yte.size()))
    invalid("train_probe: feature/label count mismatch");
  if (Xtr.cols() != Xte.cols()) invalid("train_probe: train/test dimension mismatch");
  if (ytr.empty() || yte.empty()) invalid("train_probe: empty split");
  if (!Xtr.allFinite() || !Xte.allFinite()) invalid("train_probe: NaN or infinite features");
  if (n_classes < 2) invalid("train_probe: need at least 2 classes");
  for (int v : ytr)
    if (v < 0 || v >= n_classes) invalid("train_probe: label outside [0, n_classes)");
  for (int v : yte)
    if (v < 0 || v >= n_classes) invalid("train_probe: label outside [0, n_classes)");
  if (std::set<int>(ytr.begin(), ytr.end()).size() < 2) invalid("train_probe: single-class labels in training split");

  const auto n = Xtr.rows();
  const auto d = Xtr.cols();
  ProbeFit fit;
  LinearProbe& pr = fit.probe;
  pr.n_classes = n_classes;
  pr.mean = Xtr.colwise().mean().transpose();
  const Matrix centered = Xtr.rowwise() - pr.mean.transpose();
  pr.scale = (centered.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
  // constant columns stay zero after centering
  for (Eigen::Index j = 0; j < d; ++j)
    if (!(pr.scale(j) > 1e-12 * std::max(1.0, std::abs(pr.mean(j))))) pr.scale(j) = 1.0;
  const Matrix Xs = (centered.array().rowwise() / pr.scale.transpose().array()).matrix();

  // f32 inner loop
  using MatF = Eigen::MatrixXf;
  const MatF Xf = Xs.cast<float>();
  const MatF XfT = Xf.transpose();
  MatF Y = MatF::Zero(n, n_classes);
  for (Eigen::Index i = 0; i < n; ++i) Y(i, ytr[static_cast<std::size_t>(i)]) = 1.0f;
  MatF W = MatF::Zero(d, n_classes);
  Eigen::RowVectorXf b = Eigen::RowVectorXf::Zero(n_classes);

  const float inv_n = 1.0f / static_cast<float>(n);
  const auto l2 = static_cast<float>(cfg.l2);
  MatF Z(n, n_classes), G(n, n_classes), gW(d, n_classes);
  Eigen::VectorXf zmax(n), rsum(n);
  fit.loss_trace.reserve(cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Z.noalias() = Xf.lazyProduct(W);
    Z.rowwise() += b;
    zmax = Z.rowwise().maxCoeff();
    G = (Z.colwise() - zmax).array().exp().matrix();
    rsum = G.rowwise().sum();
    const double lse_mean = (zmax.array() + rsum.array().log()).cast<double>().mean();
    fit.loss_trace.push_back(lse_mean - static_cast<double>(Z.cwiseProduct(Y).sum()) * static_cast<double>(inv_n) +
                             0.5 * cfg.l2 * static_cast<double>(W.squaredNorm()));
    G.array().colwise() /= rsum.array();
    G = (G - Y) * inv_n;
    const auto lr = static_cast<float>(
        cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(cfg.epochs))));
    gW.noalias() = XfT.lazyProduct(G);
    W -= lr * (gW + l2 * W);
    b -= lr * G.colwise().sum();
  }
  pr.W = W.cast<double>();
  pr.b = b.cast<double>();
  fit.test = score_predictions(yte, pr.predict(Xte), n_classes);
  return fit;
}

ProbeFit train_probe(const Matrix& X, const std::vector<int>& y, const ProbeConfig& cfg) {
  if (X.rows() != static_cast<Eigen::Index>(y.size())) invalid("train_probe: feature/label count mismatch");
  if (y.size() < 5) invalid("train_probe: need at least 5 samples");
  Rng rng(mix_seed(cfg.seed, 0x9e0b));
  auto perm = rng.permutation(y.size());
  const std::size_t n_test = std::max<std::size_t>(1, y.size() / 5);
  std::vector<std::size_t> te(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> tr(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(te.begin(), te.end());
  std::sort(tr.begin(), tr.end());
  const int k = *std::max_element(y.begin(), y.end()) + 1;
  return train_probe(rows_of(X, tr), take(y, tr), rows_of(X, te), take(y, te), std::max(k, 2), cfg);
}

std::vector<std::size_t> fold_assignment(const LayerStack& stack, std::size_t folds, std::uint64_t seed) {
  require(folds >= 2, "fold_assignment: need at least 2 folds");
  const std::size_t n = stack.n_samples();
  std::vector<std::pair<std::uint64_t, std::string>> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = stack.sample_id(i);
    keys[i] = {hash_string(id, mix_seed(seed, 0xf01d)), id};
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  std::vector<std::size_t> fold(n);
  for (std::size_t r = 0; r < n; ++r) fold[order[r]] = r % folds;
  return fold;
}

std::vector<double> ProbeResult::weighted_grad(int fold) const {
  if (tasks.empty()) return {};
  const std::size_t positions = grad[0].size();
  std::vector<double> out(positions, 0.0);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (std::size_t l = 0; l < positions; ++l) {
      double g = grad[t][l];
      if (fold >= 0) g = fold_accuracy[t][l + 1][static_cast<std::size_t>(fold)] - fold_accuracy[t][l][static_cast<std::size_t>(fold)];
      out[l] += weights[t] * std::abs(g);
    }
  }
  return out;
}

std::size_t ProbeResult::peak_layer(std::size_t task) const {
  const auto& acc = accuracy.at(task);
  return static_cast<std::size_t>(std::max_element(acc.begin(), acc.end()) - acc.begin()) + 1;
}

std::vector<double> default_task_weights(const LayerStack& stack, const std::vector<std::string>& tasks) {
  std::map<Scale, std::size_t> group_size;
  std::vector<Scale> scale_of;
  for (const auto& name : tasks) {
    const auto idx = stack.task_index(name);
    const Scale s = idx ? stack.manifest.tasks[*idx].scale : Scale::unspecified;
    scale_of.push_back(s);
    ++group_size[s];
  }
  std::vector<double> w;
  for (Scale s : scale_of) w.push_back(1.0 / (static_cast<double>(group_size.size()) * static_cast<double>(group_size[s])));
  return w;
}

ProbeResult probe_stack(const LayerStack& stack, const std::vector<std::string>& tasks, const ProbeConfig& cfg) {
  if (!stack.has_labels()) invalid("probe_stack: stack has no labels");
  if (cfg.folds < 2) invalid("probe_stack: need at least 2 folds");
  ProbeResult r;
  if (tasks.empty()) {
    for (const auto& t : stack.manifest.tasks) r.tasks.push_back(t.name);
  } else {
    r.tasks = tasks;
  }
  std::vector<std::size_t> cols;
  for (const auto& name : r.tasks) {
    const auto idx = stack.task_index(name);
    if (!idx) invalid("probe_stack: missing task column '" + name + "'");
    const auto& col = stack.labels[*idx];
    if (std::set<int>(col.begin(), col.end()).size() < 2) invalid("probe_stack: degenerate task '" + name + "'");
    cols.push_back(*idx);
  }
  r.weights = default_task_weights(stack, r.tasks);
  r.folds = cfg.folds;

  const auto fold = fold_assignment(stack, cfg.folds, cfg.seed);
  const std::size_t L = stack.n_layers(), T = r.tasks.size();
  r.accuracy.assign(T, std::vector<double>(L));
  r.macro_f1.assign(T, std::vector<double>(L));
  r.fold_accuracy.assign(T, std::vector<std::vector<double>>(L, std::vector<double>(cfg.folds)));
  std::vector<std::vector<double>> fold_f1(T * L, std::vector<double>(cfg.folds));

  std::vector<std::vector<std::size_t>> train_idx(cfg.folds), test_idx(cfg.folds);
  for (std::size_t i = 0; i < fold.size(); ++i)
    for (std::size_t f = 0; f < cfg.folds; ++f) (fold[i] == f ? test_idx : train_idx)[f].push_back(i);

  parallel_for(L, [&](std::size_t l) {
    const Matrix X = stack.layer(l + 1);
    for (std::size_t f = 0; f < cfg.folds; ++f) {
      const Matrix Xtr = rows_of(X, train_idx[f]);
      const Matrix Xte = rows_of(X, test_idx[f]);
      for (std::size_t t = 0; t < T; ++t) {
        const auto& col = stack.labels[cols[t]];
        const int k = std::max(stack.manifest.tasks[cols[t]].n_classes, *std::max_element(col.begin(), col.end()) + 1);
        ProbeConfig c = cfg;
        c.seed = mix_seed(cfg.seed, f);
        const auto fit = train_probe(Xtr, take(col, train_idx[f]), Xte, take(col, test_idx[f]), k, c);
        r.fold_accuracy[t][l][f] = fit.test.accuracy;
        fold_f1[t * L + l][f] = fit.test.macro_f1;
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      r.accuracy[t][l] = mean_of(r.fold_accuracy[t][l]);
      r.macro_f1[t][l] = mean_of(fold_f1[t * L + l]);
    }
  });
  r.grad.assign(T, std::vector<double>(L - 1));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t l = 0; l + 1 < L; ++l) r.grad[t][l] = r.accuracy[t][l + 1] - r.accuracy[t][l];
  return r;
}

}  // namespace msma
