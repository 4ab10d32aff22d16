#include "msma/attention_profile.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace msma {

namespace {

void check_heads(const std::vector<Matrix>& heads, const char* who) {
  if (heads.empty()) invalid(std::string(who) + ": no attention heads");
  const auto n = heads[0].rows();
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto& a = heads[h];
    if (a.rows() != n || a.cols() != n) invalid(std::string(who) + ": heads must share one square shape");
    if (!a.allFinite() || a.minCoeff() < 0.0) invalid(std::string(who) + ": negative or non-finite attention weight");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(a.row(i).sum() - 1.0) > 1e-4)
        invalid(std::string(who) + ": attention not row-stochastic (head " + std::to_string(h) + ", row " +
                std::to_string(i) + ")");
    }
  }
}

double span_of(const Matrix& a) {
  const auto n = a.rows();
  double s = 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) s += a(i, j) * static_cast<double>(std::abs(i - j));
  return s / static_cast<double>(n);
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double mean_span(const std::vector<Matrix>& heads) {
  check_heads(heads, "mean_span");
  double s = 0.0;
  for (const auto& a : heads) s += span_of(a);
  return s / static_cast<double>(heads.size());
}

double attention_entropy(const std::vector<Matrix>& heads) {
  check_heads(heads, "attention_entropy");
  double total = 0.0;
  for (const auto& a : heads) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      double h = 0.0;
      for (Eigen::Index j = 0; j < a.cols(); ++j) {
        const double p = a(i, j);
        if (p > 0.0) h -= p * std::log(p);
      }
      total += h;
    }
  }
  return total / static_cast<double>(heads.size() * static_cast<std::size_t>(heads[0].rows()));
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman: need two equal-length series of size >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = mean_of(rx), my = mean_of(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

AttentionProfile profile_stack(const LayerStack& stack) {
  if (!stack.has_attention()) invalid("profile_stack: stack has no attention tensors");
  const std::size_t L = stack.attention.size();
  AttentionProfile p;
  p.span.resize(L);
  p.entropy.resize(L);
  p.head_span.resize(L);
  parallel_for(L, [&](std::size_t l) {
    const auto heads = stack.attention[l].head_matrices();
    p.span[l] = mean_span(heads);
    p.entropy[l] = attention_entropy(heads);
    for (const auto& a : heads) p.head_span[l].push_back(span_of(a));
  });
  for (std::size_t l = 0; l + 1 < L; ++l) p.delta_span.push_back(p.span[l + 1] - p.span[l]);
  if (L >= 2) {
    std::vector<double> depth(L);
    std::iota(depth.begin(), depth.end(), 1.0);
    p.spearman_depth = spearman(p.span, depth);
  }
  return p;
}

}  // namespace msma
