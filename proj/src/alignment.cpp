#include "msma/alignment.hpp"

#include "msma/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <tuple>

namespace msma {

// ---------------------------------------------------------------- pooling

void ScaleRepresentation::validate() const {
  const auto n = h_G.rows();
  require(n > 0, "ScaleRepresentation: no samples");
  require(h_I.rows() == n && h_L.rows() == n, "ScaleRepresentation: scales have different sample counts");
  require(h_G.allFinite() && h_I.allFinite() && h_L.allFinite(), "ScaleRepresentation: non-finite entries");
  for (const auto* y : {&y_G, &y_I, &y_L})
    require(y->empty() || y->size() == static_cast<std::size_t>(n), "ScaleRepresentation: label length mismatch");
}

namespace {

Matrix pool_range(const LayerStack& stack, std::size_t lo, std::size_t hi) {
  Matrix acc = stack.layer(lo);
  for (std::size_t l = lo + 1; l <= hi; ++l) acc += stack.layer(l);
  return acc / static_cast<double>(hi - lo + 1);
}

std::vector<int> scale_labels(const LayerStack& stack, Scale scale) {
  if (!stack.has_labels()) return {};
  for (std::size_t t = 0; t < stack.manifest.tasks.size(); ++t)
    if (stack.manifest.tasks[t].scale == scale) return stack.labels[t];
  return {};
}

}  // namespace

ScaleRepresentation pool_scales(const LayerStack& stack, std::size_t l1, std::size_t l2) {
  const std::size_t L = stack.n_layers();
  if (L == 0) invalid("pool_scales: empty stack");
  if (!(l1 >= 1 && l1 < l2 && l2 <= L))
    invalid("pool_scales: need 1 <= l1 < l2 <= L, got (" + std::to_string(l1) + ", " + std::to_string(l2) +
            ") with L = " + std::to_string(L));
  ScaleRepresentation s;
  s.l1 = l1;
  s.l2 = l2;
  s.h_L = pool_range(stack, 1, l1);
  s.h_I = pool_range(stack, l1 + 1, l2);
  s.h_G = l2 < L ? pool_range(stack, l2 + 1, L) : pool_range(stack, L, L);
  s.y_L = scale_labels(stack, Scale::local);
  s.y_I = scale_labels(stack, Scale::intermediate);
  s.y_G = scale_labels(stack, Scale::global);
  s.validate();
  return s;
}

// ---------------------------------------------------------------- maps

std::string to_string(MapKind k) {
  switch (k) {
    case MapKind::linear: return "linear";
    case MapKind::procrustes: return "procrustes";
    case MapKind::mlp: return "mlp";
  }
  return "?";
}

MapKind map_kind_from_string(const std::string& s) {
  if (s == "linear") return MapKind::linear;
  if (s == "procrustes") return MapKind::procrustes;
  if (s == "mlp") return MapKind::mlp;
  invalid("unknown map kind '" + s + "' (expected linear, procrustes or mlp)");
}

namespace {

Matrix map_input(const AlignmentMap& m, const Matrix& X) {
  if (static_cast<std::size_t>(X.cols()) != m.in_dim())
    invalid("AlignmentMap: input has " + std::to_string(X.cols()) + " columns, map expects " + std::to_string(m.in_dim()));
  if (m.in_white.size() == 0) return X;
  return (X.rowwise() - m.in_mean) * m.in_white;
}

Matrix map_output(const AlignmentMap& m, Matrix& Y) {
  if (m.out_color.size() == 0) return std::move(Y);
  Matrix out = Y * m.out_color;
  out.rowwise() += m.out_mean;
  return out;
}

}  // namespace

Matrix AlignmentMap::apply(const Matrix& X) const {
  const Matrix Z = map_input(*this, X);
  Matrix Y = Z * W;
  Y.rowwise() += b;
  if (kind == MapKind::mlp) Y += net.forward(Z);
  return map_output(*this, Y);
}

std::pair<Matrix, RowVector> AlignmentMap::effective_affine() const {
  Matrix We = W;
  RowVector be = b;
  if (out_color.size()) {
    We = W * out_color;
    be = b * out_color + out_mean;
  }
  if (in_white.size() == 0) return {We, be};
  We = in_white * We;
  return {We, be - in_mean * We};
}

namespace {

// P with (X - mean) P white, and P^-1. Eigenvalues are floored at 1e-12 of the largest.
std::pair<Matrix, Matrix> whitening(const Matrix& X, const RowVector& mean) {
  const Matrix Xc = X.rowwise() - mean;
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(Xc.transpose() * Xc / static_cast<double>(X.rows() - 1));
  const double floor = std::max(eig.eigenvalues().maxCoeff(), 1e-300) * 1e-12;
  const Vector root = eig.eigenvalues().cwiseMax(floor).cwiseSqrt();
  return {eig.eigenvectors() * root.cwiseInverse().asDiagonal(), root.asDiagonal() * eig.eigenvectors().transpose()};
}

}  // namespace

void AlignmentMap::whiten(const Matrix& src, const Matrix* dst) {
  if (static_cast<std::size_t>(src.cols()) != in_dim() || (dst && static_cast<std::size_t>(dst->cols()) != out_dim()))
    invalid("AlignmentMap::whiten: dimension mismatch");
  if (src.rows() < 2 || (dst && dst->rows() < 2)) invalid("AlignmentMap::whiten: need at least 2 samples");
  if (kind == MapKind::procrustes) invalid("AlignmentMap::whiten: procrustes maps are closed-form");
  if (kind == MapKind::mlp && (net.layers().back().W.squaredNorm() > 0.0 || net.layers().back().b.squaredNorm() > 0.0))
    invalid("AlignmentMap::whiten: mlp branch already trained");
  const auto [We, be] = effective_affine();
  in_mean = src.colwise().mean();
  Matrix P_in_inv, P_out = Matrix::Identity(We.cols(), We.cols());
  std::tie(in_white, P_in_inv) = whitening(src, in_mean);
  out_mean = RowVector::Zero(We.cols());
  out_color.resize(0, 0);
  if (dst) {
    const RowVector mu = dst->colwise().mean();
    double rms = std::sqrt((dst->rowwise() - mu).squaredNorm() / static_cast<double>(dst->size()));
    if (!(rms > 0.0)) rms = 1.0;
    out_color = rms * Matrix::Identity(We.cols(), We.cols());
    P_out /= rms;
  }
  // (z W' + b') C + m = x We + be with z = (x - mu) P  =>  W' = P^-1 We C^-1, b' = (be + mu We - m) C^-1
  W = P_in_inv * We * P_out;
  b = (be + in_mean * We - out_mean) * P_out;
}

std::size_t AlignmentMap::n_params() const {
  if (kind == MapKind::procrustes) return 0;
  return static_cast<std::size_t>(W.size() + b.size()) + (kind == MapKind::mlp ? net.n_params() : 0);
}

Vector AlignmentMap::params() const {
  Vector p(static_cast<Eigen::Index>(n_params()));
  if (kind == MapKind::procrustes) return p;
  p.head(W.size()) = W.reshaped();
  p.segment(W.size(), b.size()) = b.transpose();
  if (kind == MapKind::mlp) p.tail(static_cast<Eigen::Index>(net.n_params())) = net.params();
  return p;
}

void AlignmentMap::set_params(const Vector& p) {
  if (static_cast<std::size_t>(p.size()) != n_params()) invalid("AlignmentMap::set_params: size mismatch");
  if (kind == MapKind::procrustes) return;
  W.reshaped() = p.head(W.size());
  b = p.segment(W.size(), b.size()).transpose();
  if (kind == MapKind::mlp) net.set_params(p.tail(static_cast<Eigen::Index>(net.n_params())));
}

Matrix AlignmentMap::forward(const Matrix& X, Cache& cache) const {
  cache.Z = map_input(*this, X);
  Matrix Y = cache.Z * W;
  Y.rowwise() += b;
  if (kind == MapKind::mlp) Y += net.forward(cache.Z, cache.net);
  return map_output(*this, Y);
}

Matrix AlignmentMap::backward(const Cache& cache, const Matrix& grad_y, Vector& grad) const {
  if (grad.size() == 0) grad = Vector::Zero(static_cast<Eigen::Index>(n_params()));
  const Matrix grad_out = out_color.size() ? Matrix(grad_y * out_color.transpose()) : grad_y;
  Matrix dZ = grad_out * W.transpose();
  if (kind != MapKind::procrustes) {
    grad.head(W.size()) += (cache.Z.transpose() * grad_out).reshaped();
    grad.segment(W.size(), b.size()) += grad_out.colwise().sum().transpose();
  }
  if (kind == MapKind::mlp) {
    Vector gnet = Vector::Zero(static_cast<Eigen::Index>(net.n_params()));
    dZ += net.backward(cache.net, grad_out, gnet);
    grad.tail(gnet.size()) += gnet;
  }
  return in_white.size() ? Matrix(dZ * in_white.transpose()) : dZ;
}

namespace {

nlohmann::json matrix_json(const Matrix& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    std::vector<double> r(M.row(i).begin(), M.row(i).end());
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

nlohmann::json AlignmentMap::to_json() const {
  const auto [We, be] = effective_affine();
  nlohmann::json j{{"kind", to_string(kind)},
                   {"in_dim", in_dim()},
                   {"out_dim", out_dim()},
                   {"W", matrix_json(We)},
                   {"b", std::vector<double>(be.begin(), be.end())},
                   {"residual", residual},
                   {"warnings", warnings}};
  if (std::isfinite(info_bound)) j["info_bound"] = info_bound;
  if (kind == MapKind::procrustes) {
    j["Q"] = matrix_json(Q);
    j["scale"] = s;
  }
  if (kind == MapKind::mlp) j["hidden"] = net.layers().front().W.rows();
  return j;
}

AlignmentMap AlignmentMap::identity(MapKind kind, std::size_t d_in, std::size_t d_out, std::size_t hidden,
                                    std::uint64_t seed) {
  if (d_in == 0 || d_out == 0) invalid("AlignmentMap::identity: zero dimension");
  AlignmentMap m;
  m.kind = kind;
  m.W = Matrix::Identity(static_cast<Eigen::Index>(d_in), static_cast<Eigen::Index>(d_out));
  m.b = RowVector::Zero(static_cast<Eigen::Index>(d_out));
  if (kind == MapKind::procrustes) {
    const auto k = static_cast<Eigen::Index>(std::min(d_in, d_out));
    m.Q = Matrix::Identity(k, k);
  }
  if (kind == MapKind::mlp) {
    if (hidden == 0) hidden = std::min<std::size_t>(4 * d_in, 512);
    Rng rng(mix_seed(seed, 0x6d6c70));
    m.net = Mlp({d_in, hidden, d_out}, Activation::tanh, rng);
    m.net.layers().back().W.setZero();
    m.net.layers().back().b.setZero();
  }
  return m;
}

namespace {

void check_pair(const Matrix& src, const Matrix& dst, const char* who) {
  if (src.rows() != dst.rows()) invalid(std::string(who) + ": src and dst have different sample counts");
  if (src.rows() < 2) invalid(std::string(who) + ": need at least 2 samples");
  if (!src.allFinite() || !dst.allFinite()) invalid(std::string(who) + ": non-finite entries");
}

double mean_sq_residual(const AlignmentMap& m, const Matrix& src, const Matrix& dst) {
  return (m.apply(src) - dst).squaredNorm() / static_cast<double>(src.rows());
}

}  // namespace

AlignmentMap fit_linear_map(const Matrix& src, const Matrix& dst, double ridge) {
  check_pair(src, dst, "fit_linear_map");
  if (!(ridge >= 0.0)) invalid("fit_linear_map: ridge must be >= 0");
  const RowVector ms = src.colwise().mean(), md = dst.colwise().mean();
  const Matrix Xc = src.rowwise() - ms, Yc = dst.rowwise() - md;
  Matrix G = Xc.transpose() * Xc;
  G.diagonal().array() += ridge;
  if (ridge == 0.0) {
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(G, Eigen::EigenvaluesOnly);
    const double top = eig.eigenvalues().maxCoeff();
    if (!(eig.eigenvalues().minCoeff() > 1e-12 * std::max(top, 1e-300)))
      invalid("fit_linear_map: singular normal equations (n = " + std::to_string(src.rows()) +
              ", d_src = " + std::to_string(src.cols()) + "); use a ridge > 0");
  }
  AlignmentMap m;
  m.kind = MapKind::linear;
  m.W = G.ldlt().solve(Xc.transpose() * Yc);
  m.b = md - ms * m.W;
  m.residual = mean_sq_residual(m, src, dst);
  return m;
}

AlignmentMap fit_procrustes(const Matrix& src, const Matrix& dst) {
  check_pair(src, dst, "fit_procrustes");
  AlignmentMap m;
  m.kind = MapKind::procrustes;
  const RowVector ms = src.colwise().mean(), md = dst.colwise().mean();
  Matrix Xc = src.rowwise() - ms, Yc = dst.rowwise() - md;
  const auto ds = static_cast<std::size_t>(src.cols()), dd = static_cast<std::size_t>(dst.cols());
  if (ds != dd) {
    const std::size_t k = std::min(ds, dd);
    if (k > static_cast<std::size_t>(src.rows()) - 1)
      invalid("fit_procrustes: too few samples to project to a common dimension");
    m.proj_in = pca_reduce(src, k).basis;
    m.proj_out = pca_reduce(dst, k).basis;
    Xc = Xc * m.proj_in;
    Yc = Yc * m.proj_out;
    m.warnings.push_back("dimension mismatch: both sides projected to their top " + std::to_string(k) +
                         " principal components");
  }
  const double xx = Xc.squaredNorm();
  if (!(xx > 0.0)) invalid("fit_procrustes: source has zero variance");
  Eigen::JacobiSVD<Matrix> svd(Xc.transpose() * Yc, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  if (sv.size() > 0 && sv.minCoeff() <= 1e-10 * std::max(sv.maxCoeff(), 1e-300))
    m.warnings.push_back("rank-deficient cross-covariance; rotation not unique");
  m.Q = svd.matrixU() * svd.matrixV().transpose();
  m.s = sv.sum() / xx;
  Matrix core = m.s * m.Q;
  if (m.proj_in.size()) core = m.proj_in * core;
  if (m.proj_out.size()) core = core * m.proj_out.transpose();
  m.W = core;
  m.b = md - ms * m.W;
  m.residual = mean_sq_residual(m, src, dst);
  return m;
}

// ---------------------------------------------------------------- map curvature

CurvatureResult map_curvature(const AlignmentMap& f, const Matrix& src, std::size_t k_nn, std::size_t d_local,
                              Vector* grad) {
  if (static_cast<std::size_t>(src.cols()) != f.in_dim()) invalid("map_curvature: source dimension mismatch");
  const auto frames = local_frames(src, k_nn, d_local);
  const auto n = static_cast<Eigen::Index>(frames.size());
  CurvatureResult r;
  r.K.assign(frames.size(), 0.0);
  r.dV.resize(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) r.dV[i] = frames[i].dv;
  if (grad && grad->size() == 0) *grad = Vector::Zero(static_cast<Eigen::Index>(f.n_params()));
  if (f.kind != MapKind::mlp) return r;  // affine: second derivative vanishes

  // Directions per point: t_a, then t_a + t_b and t_a - t_b for a < b.
  const auto dl = frames.front().tangent.cols();
  const Eigen::Index m = dl + dl * (dl - 1);
  const Matrix Z = map_input(f, src);
  const auto dz = Z.cols();
  Matrix E((1 + 2 * m) * n, dz);
  E.topRows(n) = Z;
  std::vector<double> step(frames.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const LocalFrame& fr = frames[static_cast<std::size_t>(i)];
    step[static_cast<std::size_t>(i)] = 0.5 * fr.radius;
    Matrix T = fr.tangent;  // d_in x dl
    if (f.in_white.size()) T = f.in_white.transpose() * T;
    T *= step[static_cast<std::size_t>(i)];
    Eigen::Index e = 0;
    auto put = [&](const Vector& d) {
      E.row(n * (1 + 2 * e) + i) = Z.row(i) + d.transpose();
      E.row(n * (2 + 2 * e) + i) = Z.row(i) - d.transpose();
      ++e;
    };
    for (Eigen::Index a = 0; a < dl; ++a) put(T.col(a));
    for (Eigen::Index a = 0; a < dl; ++a)
      for (Eigen::Index b = a + 1; b < dl; ++b) {
        put(T.col(a) + T.col(b));
        put(T.col(a) - T.col(b));
      }
  }
  Mlp::Cache cache;
  Matrix G = f.net.forward(E, cache);
  if (f.out_color.size()) G = G * f.out_color;
  const auto dout = G.cols();

  Matrix dG = grad ? Matrix::Zero(G.rows(), dout) : Matrix();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h2 = step[static_cast<std::size_t>(i)] * step[static_cast<std::size_t>(i)];
    const double dv = frames[static_cast<std::size_t>(i)].dv;
    std::vector<RowVector> sd(static_cast<std::size_t>(m));
    for (Eigen::Index e = 0; e < m; ++e)
      sd[static_cast<std::size_t>(e)] = (G.row(n * (1 + 2 * e) + i) + G.row(n * (2 + 2 * e) + i) - 2.0 * G.row(i)) / h2;
    // dL/d(second difference) per direction
    std::vector<RowVector> ds(static_cast<std::size_t>(m));
    double k2 = 0.0;
    for (Eigen::Index a = 0; a < dl; ++a) {
      k2 += sd[static_cast<std::size_t>(a)].squaredNorm();
      ds[static_cast<std::size_t>(a)] = 2.0 * dv * sd[static_cast<std::size_t>(a)];
    }
    for (Eigen::Index e = dl; e < m; e += 2) {
      // mixed derivative (s_plus - s_minus) / 4, counted twice in the Frobenius norm
      const RowVector mixed = (sd[static_cast<std::size_t>(e)] - sd[static_cast<std::size_t>(e + 1)]) / 4.0;
      k2 += 2.0 * mixed.squaredNorm();
      ds[static_cast<std::size_t>(e)] = dv * mixed;
      ds[static_cast<std::size_t>(e + 1)] = -dv * mixed;
    }
    r.K[static_cast<std::size_t>(i)] = std::sqrt(k2);
    r.value += dv * k2;
    if (grad)
      for (Eigen::Index e = 0; e < m; ++e) {
        const RowVector g = ds[static_cast<std::size_t>(e)] / h2;
        dG.row(n * (1 + 2 * e) + i) += g;
        dG.row(n * (2 + 2 * e) + i) += g;
        dG.row(i) -= 2.0 * g;
      }
  }
  if (grad) {
    if (f.out_color.size()) dG = dG * f.out_color.transpose();
    Vector gnet = Vector::Zero(static_cast<Eigen::Index>(f.net.n_params()));
    f.net.backward(cache, dG, gnet);
    grad->tail(gnet.size()) += gnet;
  }
  return r;
}

// ---------------------------------------------------------------- config

void LossConfig::validate() const {
  require(lambda_geo >= 0 && lambda_info >= 0 && lambda_curv >= 0, "LossConfig: lambdas must be >= 0");
  require(ib_beta >= 0, "LossConfig: ib_beta must be >= 0");
  require(adam.lr > 0 && adam.eps > 0, "LossConfig: Adam lr and eps must be > 0");
  require(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1, "LossConfig: Adam betas must be in [0, 1)");
  require(batch >= 2, "LossConfig: batch must be >= 2");
}

nlohmann::json LossConfig::to_json() const {
  return {{"lambda_geo", lambda_geo},
          {"lambda_info", lambda_info},
          {"lambda_curv", lambda_curv},
          {"ib_beta", ib_beta},
          {"adam", {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
          {"batch", batch},
          {"epochs", epochs},
          {"schedule", cosine ? "cosine" : "constant"}};
}

void AlignConfig::validate() const {
  loss.validate();
  require(critic_steps >= 1, "AlignConfig: critic_steps must be >= 1");
  require(mine.hidden >= 1 && mine.hidden_layers >= 1 && mine.lr > 0, "AlignConfig: invalid MINE critic settings");
  require(curv_dim >= 1 && curv_k >= curv_dim + 2, "AlignConfig: curv_k must be >= curv_dim + 2");
  require(ksg_k >= 1, "AlignConfig: ksg_k must be >= 1");
  require(heads.temperature > 0, "AlignConfig: head temperature must be > 0");
  require(heads.label_smoothing >= 0 && heads.label_smoothing < 1, "AlignConfig: label smoothing must be in [0, 1)");
  require(heads.global_classes >= 1 && heads.mid_classes >= 1 && heads.local_classes >= 1,
          "AlignConfig: head dimensions must be >= 1");
}

nlohmann::json AlignConfig::to_json() const {
  return {{"loss", loss.to_json()},
          {"heads",
           {{"enabled", heads.enabled},
            {"in_total", heads.in_total},
            {"dims", {heads.global_classes, heads.mid_classes, heads.local_classes}},
            {"temperature", heads.temperature},
            {"label_smoothing", heads.label_smoothing}}},
          {"map", to_string(kind)},
          {"whiten", whiten},
          {"mlp_hidden", mlp_hidden},
          {"critic", {{"hidden", mine.hidden}, {"layers", mine.hidden_layers}, {"lr", mine.lr}, {"ema_rate", mine.ema_rate},
                      {"steps_per_map_step", critic_steps}}},
          {"curvature", {{"k_nn", curv_k}, {"d_local", curv_dim}}},
          {"full_batch", full_batch},
          {"epoch_metrics", epoch_metrics},
          {"ksg_k", ksg_k},
          {"pca_target", pca_target},
          {"seed", seed}};
}

// ---------------------------------------------------------------- heads

ClassifierHeads::ClassifierHeads(std::size_t d, const HeadConfig& c) : cfg(c) {
  Rng rng(0);
  auto make = [&](std::size_t k) {
    Mlp m({d, k}, Activation::identity, rng);
    m.set_params(Vector::Zero(static_cast<Eigen::Index>(m.n_params())));
    return m;
  };
  global = make(cfg.global_classes);
  mid = make(cfg.mid_classes);
  local = make(cfg.local_classes);
}

namespace {

// Mean cross-entropy of softmax(logits / tau) against (1 - eps) onehot + eps / k;
// writes dL/dlogits.
double soft_ce(const Matrix& logits, const std::vector<int>& y, double tau, double eps, Matrix* dlogits) {
  const auto n = logits.rows(), k = logits.cols();
  Matrix z = logits / tau;
  Vector mx = z.rowwise().maxCoeff();
  z.colwise() -= mx;
  Matrix p = z.array().exp();
  const Vector norm = p.rowwise().sum();
  double loss = 0.0;
  if (dlogits) dlogits->resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int yi = y[static_cast<std::size_t>(i)];
    if (yi < 0 || yi >= k) invalid("classifier head: label " + std::to_string(yi) + " outside [0, " + std::to_string(k) + ")");
    const double lse = std::log(norm(i));
    for (Eigen::Index c = 0; c < k; ++c) {
      const double target = (c == yi ? 1.0 - eps : 0.0) + eps / static_cast<double>(k);
      loss -= target * (z(i, c) - lse);
      if (dlogits) (*dlogits)(i, c) = (p(i, c) / norm(i) - target) / (tau * static_cast<double>(n));
    }
  }
  return loss / static_cast<double>(n);
}

}  // namespace

double ClassifierHeads::loss(const Matrix& hG, const Matrix& hI, const Matrix& hL, const std::vector<int>& yG,
                             const std::vector<int>& yI, const std::vector<int>& yL, Grad* grad) const {
  struct Term {
    const Mlp* net;
    const Matrix* X;
    const std::vector<int>* y;
    double tau, eps;
    Vector* g;
  };
  const Term terms[3] = {{&global, &hG, &yG, 1.0, 0.0, grad ? &grad->global : nullptr},
                         {&mid, &hI, &yI, cfg.temperature, 0.0, grad ? &grad->mid : nullptr},
                         {&local, &hL, &yL, 1.0, cfg.label_smoothing, grad ? &grad->local : nullptr}};
  double total = 0.0;
  int used = 0;
  for (const auto& t : terms) {
    if (t.g) *t.g = Vector::Zero(static_cast<Eigen::Index>(t.net->n_params()));
    if (t.y->empty()) continue;
    if (t.y->size() != static_cast<std::size_t>(t.X->rows())) invalid("classifier head: label count mismatch");
    Mlp::Cache cache;
    const Matrix logits = t.net->forward(*t.X, cache);
    Matrix d;
    total += soft_ce(logits, *t.y, t.tau, t.eps, t.g ? &d : nullptr);
    if (t.g) t.net->backward(cache, d, *t.g);
    ++used;
  }
  if (used == 0) return 0.0;
  // 1/3 regardless of how many heads have labels, so the scale of L_cls is fixed.
  if (grad)
    for (auto* g : {&grad->global, &grad->mid, &grad->local}) *g /= 3.0;
  return total / 3.0;
}

// ---------------------------------------------------------------- metrics / reports

nlohmann::json AlignmentMetrics::to_json() const {
  return {{"KL_gm", kl_gm}, {"KL_ml", kl_ml}, {"MI_gm", mi_gm}, {"MI_ml", mi_ml}, {"DC_gm", dc_gm}, {"DC_ml", dc_ml}};
}

AlignmentMetrics alignment_metrics(const AlignmentMap& f_GI, const AlignmentMap& f_IL, const ScaleRepresentation& s,
                                   std::size_t ksg_k, std::size_t pca_target, std::uint64_t seed) {
  s.validate();
  const Matrix gm = f_GI.apply(s.h_G), ml = f_IL.apply(s.h_I);
  AlignmentMetrics m;
  m.kl_gm = gaussian_kl(fit_gaussian(s.h_I), fit_gaussian(gm));
  m.kl_ml = gaussian_kl(fit_gaussian(s.h_L), fit_gaussian(ml));
  m.mi_gm = ksg_mi_pca(gm, s.h_I, ksg_k, pca_target, mix_seed(seed, 1)).mi;
  m.mi_ml = ksg_mi_pca(ml, s.h_L, ksg_k, pca_target, mix_seed(seed, 2)).mi;
  m.dc_gm = distance_correlation(gm, s.h_I, 2000, mix_seed(seed, 3));
  m.dc_ml = distance_correlation(ml, s.h_L, 2000, mix_seed(seed, 4));
  return m;
}

namespace {

nlohmann::json step_json(const StepLoss& l) {
  return {{"L_geo", l.geo}, {"L_info", l.info}, {"L_curv", l.curv}, {"L_cls", l.cls}, {"L_total", l.total}};
}

}  // namespace

nlohmann::json LossReport::to_json() const {
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json j = step_json(e.mean);
    j["epoch"] = e.epoch;
    if (e.metrics) j["metrics"] = e.metrics->to_json();
    ep.push_back(j);
  }
  nlohmann::json steps_j = nlohmann::json::object();
  for (const char* key : {"L_geo", "L_info", "L_curv", "L_cls", "L_total"}) steps_j[key] = nlohmann::json::array();
  for (const auto& s : steps) {
    steps_j["L_geo"].push_back(s.geo);
    steps_j["L_info"].push_back(s.info);
    steps_j["L_curv"].push_back(s.curv);
    steps_j["L_cls"].push_back(s.cls);
    steps_j["L_total"].push_back(s.total);
  }
  return {{"epochs", ep},
          {"steps", steps_j},
          {"baseline", baseline.to_json()},
          {"final", final.to_json()},
          {"eps_geo", eps_geo},
          {"eps_info", eps_info}};
}

nlohmann::json AlignmentResult::to_json() const {
  return {{"config", config.to_json()},
          {"seed", config.seed},
          {"report", report.to_json()},
          {"maps", {{"f_GI", state.f_GI.to_json()}, {"f_IL", state.f_IL.to_json()}}}};
}

// ---------------------------------------------------------------- training

namespace {

Matrix rows_of(const Matrix& X, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

std::vector<int> rows_of(const std::vector<int>& y, const std::vector<std::size_t>& idx) {
  if (y.empty()) return {};
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = y[idx[i]];
  return out;
}

struct Standardizer {
  RowVector mean, inv_sd;
  explicit Standardizer(const Matrix& X) {
    mean = X.colwise().mean();
    const RowVector var = (X.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(std::max<Eigen::Index>(X.rows() - 1, 1));
    inv_sd = var.unaryExpr([](double v) { return v > 1e-24 ? 1.0 / std::sqrt(v) : 1.0; });
  }
  Matrix operator()(const Matrix& X) const { return (X.rowwise() - mean).array().rowwise() * inv_sd.array(); }
};

// -bound of the critic on X = f(src), Y = src, marginal Ym = Y permuted. The
// source side uses fixed training statistics; f(src) is standardised with its own
// batch statistics, differentiated through, so rescaling the map output leaves the
// term unchanged.
double info_loss(const MineCritic& critic, const Standardizer& in_std, const Matrix& Y, const Matrix& Xs,
                 const std::vector<std::size_t>& perm, Matrix* dY) {
  const Standardizer out_std(Y);
  const Matrix zy = out_std(Y), zs = in_std(Xs);
  const Matrix zm = rows_of(zs, perm);
  const double bound = critic.bound(zy, zs, zm);
  if (dY) {
    const Matrix g = critic.bound_grad_x(zy, zs, zm);
    const double dof = static_cast<double>(std::max<Eigen::Index>(Y.rows() - 1, 1));
    const RowVector gz = g.cwiseProduct(zy).colwise().sum() / dof;
    Matrix d = (g.rowwise() - g.colwise().mean()) - (zy.array().rowwise() * gz.array()).matrix();
    *dY = -(d.array().rowwise() * out_std.inv_sd.array()).matrix();
  }
  return -bound;
}

// One map with its optimiser and information critic.
struct PairTrainer {
  AlignmentMap* map;
  std::optional<MineCritic>* critic;
  Adam opt;
  Standardizer in_std;

  PairTrainer(AlignmentMap& m, std::optional<MineCritic>& c, const Matrix& src, const Matrix& dst, const AlignConfig& cfg,
              std::uint64_t critic_seed)
      : map(&m), critic(&c), opt(m.n_params(), cfg.loss.adam), in_std(src) {
    if (cfg.loss.lambda_info > 0.0 && !c) {
      MineConfig mc = cfg.mine;
      mc.seed = critic_seed;
      c.emplace(static_cast<std::size_t>(dst.cols()), static_cast<std::size_t>(src.cols()), mc);
    }
  }

  double info_term(const Matrix& Y, const Matrix& Xs, const std::vector<std::size_t>& perm, Matrix* dY) const {
    return info_loss(**critic, in_std, Y, Xs, perm, dY);
  }

  void train_critic(const Matrix& Y, const Matrix& Xs, Rng& rng, std::size_t steps) {
    const Matrix zy = Standardizer(Y)(Y), zs = in_std(Xs);
    for (std::size_t t = 0; t < steps; ++t) {
      const auto perm = rng.permutation(static_cast<std::size_t>(Xs.rows()));
      (*critic)->train_step(zy, zs, rows_of(zs, perm));
    }
  }

  // Forward, loss terms and map update on one batch.
  StepLoss step(const Matrix& Xs, const Matrix& Yd, const AlignConfig& cfg, Rng& rng, double lr_scale) {
    const LossConfig& lc = cfg.loss;
    AlignmentMap::Cache cache;
    const Matrix Y = map->forward(Xs, cache);
    const double inv_n = 1.0 / static_cast<double>(Xs.rows());
    StepLoss l;
    l.geo = (Y - Yd).squaredNorm() * inv_n;
    Matrix g = (2.0 * lc.lambda_geo * inv_n) * (Y - Yd);
    if (lc.lambda_info > 0.0) {
      train_critic(Y, Xs, rng, cfg.critic_steps);
      Matrix dY;
      l.info = info_term(Y, Xs, rng.permutation(static_cast<std::size_t>(Xs.rows())), &dY);
      map->info_bound = -l.info;
      g += lc.lambda_info * dY;
    }
    Vector grad = Vector::Zero(static_cast<Eigen::Index>(map->n_params()));
    if (lc.lambda_curv > 0.0) {
      Vector gc;
      l.curv = map_curvature(*map, Xs, cfg.curv_k, cfg.curv_dim, &gc).value;
      grad += lc.lambda_curv * gc;
    }
    if (map->n_params() > 0 && (lc.lambda_geo > 0.0 || lc.lambda_info > 0.0 || lc.lambda_curv > 0.0)) {
      map->backward(cache, g, grad);
      Vector p = map->params();
      opt.step(p, grad, lr_scale);
      map->set_params(p);
    }
    return l;
  }
};

void finish(StepLoss& l, const LossConfig& lc, const HeadConfig& hc) {
  l.total = lc.lambda_geo * l.geo + lc.lambda_info * l.info + lc.lambda_curv * l.curv;
  if (hc.enabled && hc.in_total) l.total += l.cls;
}

void check_finite(const StepLoss& l, std::size_t epoch, std::size_t step, const std::vector<StepLoss>& trace) {
  if (std::isfinite(l.total) && std::isfinite(l.geo) && std::isfinite(l.info) && std::isfinite(l.curv)) return;
  std::ostringstream os;
  os << "non-finite loss at epoch " << epoch + 1 << ", step " << step << " (L_geo=" << l.geo << ", L_info=" << l.info
     << ", L_curv=" << l.curv << "); last L_total:";
  const std::size_t from = trace.size() > 8 ? trace.size() - 8 : 0;
  for (std::size_t i = from; i < trace.size(); ++i) os << ' ' << trace[i].total;
  fail(ErrorKind::runtime, os.str());
}

AlignmentMap initial_map(const Matrix& src, const Matrix& dst, const AlignConfig& cfg, std::uint64_t seed) {
  if (cfg.kind == MapKind::procrustes) return fit_procrustes(src, dst);
  AlignmentMap m = AlignmentMap::identity(cfg.kind, static_cast<std::size_t>(src.cols()),
                                          static_cast<std::size_t>(dst.cols()), cfg.mlp_hidden, seed);
  if (cfg.whiten) m.whiten(src, &dst);
  return m;
}

double lr_scale_at(const LossConfig& lc, std::size_t step, std::size_t total) {
  if (!lc.cosine || total == 0) return 1.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

StepLoss mean_of_steps(const std::vector<StepLoss>& v, std::size_t from) {
  StepLoss m;
  const double k = static_cast<double>(v.size() - from);
  for (std::size_t i = from; i < v.size(); ++i) {
    m.geo += v[i].geo / k;
    m.info += v[i].info / k;
    m.curv += v[i].curv / k;
    m.cls += v[i].cls / k;
    m.total += v[i].total / k;
  }
  return m;
}

}  // namespace

StepLoss loss_eval(const AlignmentState& state, const ScaleRepresentation& s, const AlignConfig& cfg) {
  s.validate();
  if (state.f_GI.in_dim() != static_cast<std::size_t>(s.h_G.cols()) || state.f_GI.out_dim() != static_cast<std::size_t>(s.h_I.cols()) ||
      state.f_IL.in_dim() != static_cast<std::size_t>(s.h_I.cols()) || state.f_IL.out_dim() != static_cast<std::size_t>(s.h_L.cols()))
    invalid("loss_eval: map shapes do not match the scale representation");
  const LossConfig& lc = cfg.loss;
  StepLoss l;
  const Matrix gm = state.f_GI.apply(s.h_G), ml = state.f_IL.apply(s.h_I);
  const double inv_n = 1.0 / static_cast<double>(s.n());
  l.geo = (gm - s.h_I).squaredNorm() * inv_n + (ml - s.h_L).squaredNorm() * inv_n;
  Rng rng(mix_seed(cfg.seed, 0x1e));
  auto info = [&](const std::optional<MineCritic>& c, const Matrix& src, const Matrix& mapped) {
    if (!c) return 0.0;
    return info_loss(*c, Standardizer(src), mapped, src, rng.permutation(s.n()), nullptr);
  };
  l.info = info(state.critic_GI, s.h_G, gm) + info(state.critic_IL, s.h_I, ml);
  if (lc.lambda_curv > 0.0 && s.n() > cfg.curv_k)
    l.curv = map_curvature(state.f_GI, s.h_G, cfg.curv_k, cfg.curv_dim).value +
             map_curvature(state.f_IL, s.h_I, cfg.curv_k, cfg.curv_dim).value;
  if (cfg.heads.enabled && state.heads.global.n_params() > 0)
    l.cls = state.heads.loss(s.h_G, s.h_I, s.h_L, s.y_G, s.y_I, s.y_L, nullptr);
  finish(l, lc, cfg.heads);
  return l;
}

AlignmentResult train_alignment(const ScaleRepresentation& s, const AlignConfig& cfg) {
  cfg.validate();
  s.validate();
  const std::size_t n = s.n();
  const std::size_t batch = cfg.full_batch ? n : std::min(cfg.loss.batch, n);
  if (cfg.loss.lambda_curv > 0.0 && batch <= cfg.curv_k) invalid("train_alignment: batch must exceed curv_k");
  if (cfg.loss.lambda_info > 0.0 && batch < 2) invalid("train_alignment: batch too small for the information term");

  AlignmentResult r;
  r.config = cfg;
  AlignmentState& st = r.state;
  st.f_GI = initial_map(s.h_G, s.h_I, cfg, mix_seed(cfg.seed, 11));
  st.f_IL = initial_map(s.h_I, s.h_L, cfg, mix_seed(cfg.seed, 12));
  const bool heads_on = cfg.heads.enabled && !(s.y_G.empty() && s.y_I.empty() && s.y_L.empty());
  if (heads_on) {
    if (s.h_G.cols() != s.h_I.cols() || s.h_I.cols() != s.h_L.cols()) invalid("train_alignment: heads need a common dimension");
    st.heads = ClassifierHeads(static_cast<std::size_t>(s.h_G.cols()), cfg.heads);
  }

  PairTrainer gi(st.f_GI, st.critic_GI, s.h_G, s.h_I, cfg, mix_seed(cfg.seed, 21));
  PairTrainer il(st.f_IL, st.critic_IL, s.h_I, s.h_L, cfg, mix_seed(cfg.seed, 22));
  Adam head_opt;
  Vector head_params;
  if (heads_on) {
    head_params.resize(static_cast<Eigen::Index>(st.heads.global.n_params() + st.heads.mid.n_params() + st.heads.local.n_params()));
    head_params << st.heads.global.params(), st.heads.mid.params(), st.heads.local.params();
    head_opt = Adam(static_cast<std::size_t>(head_params.size()), cfg.loss.adam);
  }

  r.report.baseline = alignment_metrics(AlignmentMap::identity(MapKind::linear, s.h_G.cols(), s.h_I.cols()),
                                        AlignmentMap::identity(MapKind::linear, s.h_I.cols(), s.h_L.cols()), s, cfg.ksg_k,
                                        cfg.pca_target, cfg.seed);

  Rng order_rng(mix_seed(cfg.seed, 1)), critic_rng(mix_seed(cfg.seed, 2));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const std::size_t total_steps = cfg.loss.epochs * (n / batch);
  for (std::size_t epoch = 0; epoch < cfg.loss.epochs; ++epoch) {
    if (!cfg.full_batch) order_rng.shuffle(order);
    const std::size_t first = r.report.steps.size();
    for (std::size_t start = 0; start + batch <= n; start += batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(start + batch));
      const Matrix G = rows_of(s.h_G, idx), I = rows_of(s.h_I, idx), Lb = rows_of(s.h_L, idx);
      const double lr = lr_scale_at(cfg.loss, r.report.steps.size(), total_steps);
      const StepLoss a = gi.step(G, I, cfg, critic_rng, lr);
      const StepLoss c = il.step(I, Lb, cfg, critic_rng, lr);
      StepLoss l{a.geo + c.geo, a.info + c.info, a.curv + c.curv, 0.0, 0.0};
      if (heads_on) {
        ClassifierHeads::Grad hg;
        l.cls = st.heads.loss(G, I, Lb, rows_of(s.y_G, idx), rows_of(s.y_I, idx), rows_of(s.y_L, idx), &hg);
        Vector grad(head_params.size());
        grad << hg.global, hg.mid, hg.local;
        head_opt.step(head_params, grad, lr);
        const auto ng = static_cast<Eigen::Index>(st.heads.global.n_params());
        const auto nm = static_cast<Eigen::Index>(st.heads.mid.n_params());
        st.heads.global.set_params(head_params.head(ng));
        st.heads.mid.set_params(head_params.segment(ng, nm));
        st.heads.local.set_params(head_params.tail(head_params.size() - ng - nm));
      }
      finish(l, cfg.loss, cfg.heads);
      check_finite(l, epoch, r.report.steps.size(), r.report.steps);
      r.report.steps.push_back(l);
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.mean = mean_of_steps(r.report.steps, first);
    if (cfg.epoch_metrics) rec.metrics = alignment_metrics(st.f_GI, st.f_IL, s, cfg.ksg_k, cfg.pca_target, cfg.seed);
    r.report.epochs.push_back(rec);
  }

  r.report.final = !r.report.epochs.empty() && r.report.epochs.back().metrics
                       ? *r.report.epochs.back().metrics
                       : alignment_metrics(st.f_GI, st.f_IL, s, cfg.ksg_k, cfg.pca_target, cfg.seed);
  const StepLoss fin = loss_eval(st, s, cfg);
  r.report.eps_geo = fin.geo;
  r.report.eps_info = fin.info;
  return r;
}

AlignmentResult train_alignment(const LayerStack& stack, std::size_t l1, std::size_t l2, const AlignConfig& cfg) {
  return train_alignment(pool_scales(stack, l1, l2), cfg);
}

AlignmentMap train_mlp_map(const Matrix& src, const Matrix& dst, const AlignConfig& cfg_in) {
  check_pair(src, dst, "train_mlp_map");
  AlignConfig cfg = cfg_in;
  cfg.kind = MapKind::mlp;
  cfg.validate();
  const std::size_t n = static_cast<std::size_t>(src.rows());
  const std::size_t batch = cfg.full_batch ? n : std::min(cfg.loss.batch, n);
  AlignmentMap m = initial_map(src, dst, cfg, mix_seed(cfg.seed, 11));
  std::optional<MineCritic> critic;
  PairTrainer pt(m, critic, src, dst, cfg, mix_seed(cfg.seed, 21));
  Rng order_rng(mix_seed(cfg.seed, 1)), critic_rng(mix_seed(cfg.seed, 2));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<StepLoss> trace;
  const std::size_t total_steps = cfg.loss.epochs * (n / batch);
  for (std::size_t epoch = 0; epoch < cfg.loss.epochs; ++epoch) {
    if (!cfg.full_batch) order_rng.shuffle(order);
    for (std::size_t start = 0; start + batch <= n; start += batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(start + batch));
      StepLoss l = pt.step(rows_of(src, idx), rows_of(dst, idx), cfg, critic_rng, lr_scale_at(cfg.loss, trace.size(), total_steps));
      finish(l, cfg.loss, HeadConfig{false});
      check_finite(l, epoch, trace.size(), trace);
      trace.push_back(l);
    }
  }
  m.residual = mean_sq_residual(m, src, dst);
  return m;
}

// ---------------------------------------------------------------- diagnostics

double ib_objective_estimate(const Matrix& h1, const Matrix& h2, const std::vector<int>& y, double beta, std::size_t k,
                             std::uint64_t seed) {
  if (!(beta >= 0.0)) invalid("ib_objective_estimate: beta must be >= 0");
  if (static_cast<std::size_t>(h2.rows()) != y.size() || h1.rows() != h2.rows())
    invalid("ib_objective_estimate: sample count mismatch");
  const double relevant = ksg_mi_discrete(h2, y, k, mix_seed(seed, 1));
  const double redundant = beta > 0.0 ? ksg_mi(h1, h2, k, mix_seed(seed, 2)).mi : 0.0;
  return relevant - beta * redundant;
}

nlohmann::json ErrorAdditivityReport::to_json() const {
  return {{"stage_kl", stage_kl}, {"stage_sum", stage_sum}, {"total_kl", total_kl}, {"ratio", ratio}};
}

ErrorAdditivityReport error_additivity_check(const ErrorAdditivityConfig& cfg) {
  if (cfg.dim < 1) invalid("error_additivity_check: dim must be >= 1");
  if (cfg.stage_errors.empty()) invalid("error_additivity_check: need at least one stage");
  for (double e : cfg.stage_errors)
    if (!(e >= 0.0)) invalid("error_additivity_check: stage errors must be >= 0");
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const std::size_t stages = cfg.stage_errors.size();
  if (cfg.samples < 10 * (stages + 1) * cfg.dim) invalid("error_additivity_check: too few samples");
  Rng rng(mix_seed(cfg.seed, 0xadd));

  // h_{t+1} = A_t h_t + sigma e, with the aligned chain's conditional mean
  // shifted by delta_t, |delta_t| = sigma sqrt(2 eps_t).
  const double sigma = 0.5;
  std::vector<Matrix> A(stages);
  std::vector<RowVector> delta(stages);
  ErrorAdditivityReport rep;
  for (std::size_t t = 0; t < stages; ++t) {
    A[t] = 0.9 * random_orthonormal(d, d, rng);
    Vector u = rng.normal_matrix(d, 1).col(0);
    u.normalize();
    delta[t] = (sigma * std::sqrt(2.0 * cfg.stage_errors[t]) * u).transpose();
    rep.stage_kl.push_back(0.5 * delta[t].squaredNorm() / (sigma * sigma));
  }
  const auto n = static_cast<Eigen::Index>(cfg.samples);
  const auto D = d * static_cast<Eigen::Index>(stages + 1);
  Matrix P(n, D), Qm(n, D);
  P.leftCols(d) = rng.normal_matrix(n, d);
  Qm.leftCols(d) = P.leftCols(d);
  for (std::size_t t = 0; t < stages; ++t) {
    const auto c0 = d * static_cast<Eigen::Index>(t), c1 = c0 + d;
    const Matrix noise = sigma * rng.normal_matrix(n, d);
    P.middleCols(c1, d) = P.middleCols(c0, d) * A[t].transpose() + noise;
    Qm.middleCols(c1, d) = (Qm.middleCols(c0, d) * A[t].transpose() + noise).rowwise() + delta[t];
  }
  for (double v : rep.stage_kl) rep.stage_sum += v;
  rep.total_kl = gaussian_kl(fit_gaussian(P, 0.0), fit_gaussian(Qm, 0.0));
  rep.ratio = rep.stage_sum > 0.0 ? rep.total_kl / rep.stage_sum : (rep.total_kl == 0.0 ? 1.0 : std::numeric_limits<double>::infinity());
  return rep;
}

}  // namespace msma
