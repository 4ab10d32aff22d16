#include "msma/boundary.hpp"

#include "msma/attention_profile.hpp"
#include "msma/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace msma {

void BoundaryConfig::validate() const {
  require(alpha >= 0 && beta >= 0 && gamma >= 0, "BoundaryConfig: weights must be >= 0");
  require(std::abs(alpha + beta + gamma - 1.0) <= 1e-9, "BoundaryConfig: alpha + beta + gamma must equal 1");
  require(window >= 1 && window % 2 == 1, "BoundaryConfig: window must be odd and >= 1");
  require(min_separation >= 1, "BoundaryConfig: min_separation must be >= 1");
  require(cv_folds >= 2, "BoundaryConfig: cv_folds must be >= 2");
  require(ksg_k >= 1, "BoundaryConfig: ksg_k must be >= 1");
}

nlohmann::json BoundaryConfig::to_json() const {
  return {{"alpha", alpha},          {"beta", beta},       {"gamma", gamma},
          {"task_weights", task_weights}, {"window", window}, {"min_separation", min_separation},
          {"cv_folds", cv_folds},    {"ksg_k", ksg_k},     {"pca_target", pca_target},
          {"probe", {{"l2", probe.l2}, {"epochs", probe.epochs}, {"lr", probe.lr}, {"folds", probe.folds}}},
          {"seed", seed}};
}

namespace {

Matrix reduced(const Matrix& X, std::size_t pca_target) {
  const auto n = static_cast<std::size_t>(X.rows()), d = static_cast<std::size_t>(X.cols());
  if (d <= pca_target && d < n) return X;
  return pca_reduce(X, pca_dim(pca_target, n, d)).scores;
}

std::vector<Matrix> reduced_layers(const LayerStack& stack, const std::vector<std::size_t>* rows, std::size_t pca_target) {
  std::vector<Matrix> out(stack.n_layers());
  parallel_for(out.size(), [&](std::size_t l) {
    Matrix X = stack.layer(l + 1);
    if (rows) {
      Matrix sub(static_cast<Eigen::Index>(rows->size()), X.cols());
      for (std::size_t r = 0; r < rows->size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>((*rows)[r]));
      X = std::move(sub);
    }
    out[l] = reduced(X, pca_target);
  });
  return out;
}

std::vector<double> adjacent_from(const std::vector<Matrix>& layers, std::size_t k, std::uint64_t seed) {
  std::vector<double> adj(layers.size() - 1);
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) adj[l] = ksg_mi(layers[l], layers[l + 1], k, mix_seed(seed, l)).mi;
  return adj;
}

}  // namespace

MiProfile adjacent_mi_profile(const LayerStack& stack, std::size_t k, std::size_t pca_target, std::uint64_t seed,
                              bool full_matrix) {
  if (stack.n_layers() < 2) invalid("adjacent_mi_profile: need at least 2 layers");
  const auto layers = reduced_layers(stack, nullptr, pca_target);
  MiProfile p;
  p.adjacent = adjacent_from(layers, k, seed);
  if (full_matrix) {
    const auto L = static_cast<Eigen::Index>(layers.size());
    p.full = Matrix::Zero(L, L);
    for (Eigen::Index i = 0; i < L; ++i) {
      p.full(i, i) = ksg_mi(layers[static_cast<std::size_t>(i)], layers[static_cast<std::size_t>(i)], k, seed).mi;
      for (Eigen::Index j = i + 1; j < L; ++j) {
        const double v = j == i + 1 ? p.adjacent[static_cast<std::size_t>(i)]
                                    : ksg_mi(layers[static_cast<std::size_t>(i)], layers[static_cast<std::size_t>(j)],
                                             k, mix_seed(seed, static_cast<std::uint64_t>(i * L + j)))
                                          .mi;
        p.full(i, j) = p.full(j, i) = v;
      }
    }
  }
  return p;
}

std::vector<double> mi_drop(const std::vector<double>& adjacent) {
  std::vector<double> out(adjacent.size(), 0.0);
  for (std::size_t l = 1; l < adjacent.size(); ++l) out[l] = adjacent[l - 1] - adjacent[l];
  return out;
}

std::vector<double> zscore(const std::vector<double>& x) {
  std::vector<double> out(x.size(), 0.0);
  if (x.size() < 2) return out;
  const double m = mean_of(x);
  const double s = stddev_of(x);
  const double mag = std::max(1.0, std::abs(m));
  if (!(s > 1e-12 * mag)) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - m) / s;
  return out;
}

std::vector<double> smooth(const std::vector<double>& x, std::size_t window) {
  require(window >= 1 && window % 2 == 1, "smooth: window must be odd and >= 1");
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> out(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0, wsum = 0.0;
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
      if (i + k < 0 || i + k >= n) continue;
      const double w = static_cast<double>(half + 1 - std::abs(k));
      acc += w * x[static_cast<std::size_t>(i + k)];
      wsum += w;
    }
    out[static_cast<std::size_t>(i)] = acc / wsum;
  }
  return out;
}

BoundaryScores boundary_scores(const std::vector<double>& delta_span, const std::vector<double>& mi_adjacent,
                               const std::vector<double>& probe_grad, const BoundaryConfig& cfg) {
  cfg.validate();
  std::size_t len = 0;
  for (const auto* v : {&delta_span, &mi_adjacent, &probe_grad}) {
    if (v->empty()) continue;
    if (len && v->size() != len)
      invalid("boundary_scores: channel length mismatch (" + std::to_string(len) + " vs " + std::to_string(v->size()) + ")");
    len = v->size();
  }
  if (len == 0) invalid("boundary_scores: no evidence channels");
  auto channel = [&](const std::vector<double>& v) { return v.empty() ? std::vector<double>(len, 0.0) : zscore(v); };
  BoundaryScores s;
  s.z_span = channel(delta_span);
  s.z_mi = channel(mi_adjacent.empty() ? mi_adjacent : mi_drop(mi_adjacent));
  s.z_probe = channel(probe_grad);
  s.raw.resize(len);
  for (std::size_t i = 0; i < len; ++i) s.raw[i] = cfg.alpha * s.z_span[i] + cfg.beta * s.z_mi[i] + cfg.gamma * s.z_probe[i];
  s.score = smooth(s.raw, cfg.window);
  return s;
}

std::pair<std::size_t, std::size_t> pick_boundaries(const std::vector<double>& score, std::size_t min_separation) {
  const std::size_t n = score.size();
  if (n < 2) invalid("pick_boundaries: need at least 2 candidate positions");
  const auto [lo, hi] = std::minmax_element(score.begin(), score.end());
  if (*hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi))) {
    std::ostringstream os;
    os << "ambiguous boundaries: flat score trace [";
    for (std::size_t i = 0; i < n; ++i) os << (i ? ", " : "") << score[i];
    os << "]";
    fail(ErrorKind::ambiguous, os.str());
  }
  auto by_score = [&](std::size_t a, std::size_t b) { return score[a] > score[b] || (score[a] == score[b] && a < b); };
  std::vector<std::size_t> peaks, all(n);
  for (std::size_t i = 0; i < n; ++i) {
    all[i] = i;
    const bool left = i == 0 || score[i] > score[i - 1];
    const bool right = i + 1 == n || score[i] >= score[i + 1];
    if (left && right) peaks.push_back(i);
  }
  std::stable_sort(peaks.begin(), peaks.end(), by_score);
  std::stable_sort(all.begin(), all.end(), by_score);

  std::vector<std::size_t> chosen;
  auto admit = [&](const std::vector<std::size_t>& cands) {
    for (auto c : cands) {
      if (chosen.size() == 2) return;
      bool ok = true;
      for (auto p : chosen) ok &= (c > p ? c - p : p - c) >= min_separation;
      if (ok) chosen.push_back(c);
    }
  };
  admit(peaks);
  admit(all);
  if (chosen.size() < 2) invalid("pick_boundaries: no pair of positions satisfies the minimum separation");
  std::sort(chosen.begin(), chosen.end());
  return {chosen[0] + 1, chosen[1] + 1};
}

nlohmann::json BoundaryResult::to_json() const {
  nlohmann::json cv = nlohmann::json::array();
  for (const auto& [a, b] : cv_boundaries) cv.push_back({a, b});
  return {{"l1", l1},
          {"l2", l2},
          {"cv_std", cv_std},
          {"stable", stable},
          {"cv_boundaries", cv},
          {"traces",
           {{"score", scores.score},
            {"raw", scores.raw},
            {"z_delta_span", scores.z_span},
            {"z_delta_mi", scores.z_mi},
            {"z_probe_grad", scores.z_probe},
            {"delta_span", delta_span},
            {"mi_adjacent", mi_adjacent},
            {"delta_mi", mi_delta},
            {"probe_grad", probe_grad}}}};
}

BoundaryResult detect_boundaries(const LayerStack& stack, const BoundaryConfig& cfg) {
  cfg.validate();
  const std::size_t L = stack.n_layers();
  if (L < 4) invalid("detect_boundaries: need at least 4 layers, got " + std::to_string(L));

  BoundaryResult r;
  if (stack.has_attention()) r.delta_span = profile_stack(stack).delta_span;

  const auto layers = reduced_layers(stack, nullptr, cfg.pca_target);
  r.mi_adjacent = adjacent_from(layers, cfg.ksg_k, cfg.seed);
  r.mi_delta = mi_drop(r.mi_adjacent);

  ProbeResult probes;
  const bool use_probe = stack.has_labels() && !stack.manifest.tasks.empty();
  if (use_probe) {
    ProbeConfig pc = cfg.probe;
    pc.folds = cfg.cv_folds;
    pc.seed = mix_seed(cfg.seed, 0x9b);
    probes = probe_stack(stack, {}, pc);
    if (!cfg.task_weights.empty()) {
      if (cfg.task_weights.size() != probes.tasks.size()) invalid("detect_boundaries: task_weights length mismatch");
      probes.weights = cfg.task_weights;
    }
    r.probe_grad = probes.weighted_grad();
  }

  r.scores = boundary_scores(r.delta_span, r.mi_adjacent, r.probe_grad, cfg);
  std::tie(r.l1, r.l2) = pick_boundaries(r.scores.score, cfg.min_separation);

  // Fold k: MI from the other folds, probe gradient from fold k's held-out accuracy.
  const auto fold = fold_assignment(stack, cfg.cv_folds, mix_seed(cfg.seed, 0x9b));
  std::vector<double> l1s, l2s;
  for (std::size_t f = 0; f < cfg.cv_folds; ++f) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < fold.size(); ++i)
      if (fold[i] != f) rows.push_back(i);
    const auto sub = reduced_layers(stack, &rows, cfg.pca_target);
    const auto mi = adjacent_from(sub, cfg.ksg_k, mix_seed(cfg.seed, 100 + f));
    const auto pg = use_probe ? probes.weighted_grad(static_cast<int>(f)) : std::vector<double>{};
    const auto s = boundary_scores(r.delta_span, mi, pg, cfg);
    std::pair<std::size_t, std::size_t> b;
    try {
      b = pick_boundaries(s.score, cfg.min_separation);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ambiguous) throw;
      b = {r.l1, r.l2};
    }
    r.cv_boundaries.push_back(b);
    l1s.push_back(static_cast<double>(b.first));
    l2s.push_back(static_cast<double>(b.second));
  }
  r.cv_std = std::max(stddev_of(l1s), stddev_of(l2s));
  r.stable = r.cv_std < 0.5;
  return r;
}

}  // namespace msma
