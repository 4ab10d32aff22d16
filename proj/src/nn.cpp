#include "msma/nn.hpp"

#include <cmath>

namespace msma {

Matrix activate(const Matrix& Z, Activation act) {
  switch (act) {
    case Activation::relu: return Z.cwiseMax(0.0);
    case Activation::tanh: return Z.array().tanh().matrix();
    default: return Z;
  }
}

Matrix activation_grad(const Matrix& Z, Activation act) {
  switch (act) {
    case Activation::relu: return (Z.array() > 0.0).cast<double>().matrix();
    case Activation::tanh: return (1.0 - Z.array().tanh().square()).matrix();
    default: return Matrix::Ones(Z.rows(), Z.cols());
  }
}

Mlp::Mlp(const std::vector<std::size_t>& sizes, Activation hidden, Rng& rng, double gain) {
  require(sizes.size() >= 2, "Mlp: need at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    require(sizes[i] > 0 && sizes[i + 1] > 0, "Mlp: layer sizes must be > 0");
    DenseLayer layer;
    const auto out = static_cast<Eigen::Index>(sizes[i + 1]);
    const auto in = static_cast<Eigen::Index>(sizes[i]);
    layer.W = rng.normal_matrix(out, in) * (gain / std::sqrt(static_cast<double>(in)));
    layer.b = Vector::Zero(out);
    layer.act = i + 2 == sizes.size() ? Activation::identity : hidden;
    layers_.push_back(std::move(layer));
  }
}

std::size_t Mlp::in_dim() const { return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().W.cols()); }
std::size_t Mlp::out_dim() const { return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().W.rows()); }

Matrix Mlp::forward(const Matrix& X) const {
  Matrix a = X;
  for (const auto& layer : layers_) {
    Matrix z = a * layer.W.transpose();
    z.rowwise() += layer.b.transpose();
    a = activate(z, layer.act);
  }
  return a;
}

Matrix Mlp::forward(const Matrix& X, Cache& cache) const {
  cache.inputs.clear();
  cache.pre.clear();
  Matrix a = X;
  for (const auto& layer : layers_) {
    cache.inputs.push_back(a);
    Matrix z = a * layer.W.transpose();
    z.rowwise() += layer.b.transpose();
    a = activate(z, layer.act);
    cache.pre.push_back(std::move(z));
  }
  return a;
}

Matrix Mlp::backward(const Cache& cache, const Matrix& grad_out, Vector& grad) const {
  if (grad.size() != static_cast<Eigen::Index>(n_params())) grad = Vector::Zero(static_cast<Eigen::Index>(n_params()));
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& layer : layers_) {
    offsets.push_back(off);
    off += layer.W.size() + layer.b.size();
  }
  Matrix g = grad_out;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& layer = layers_[li];
    const Matrix dz = g.cwiseProduct(activation_grad(cache.pre[li], layer.act));
    const Matrix dW = dz.transpose() * cache.inputs[li];
    Eigen::Map<Matrix>(grad.data() + offsets[li], layer.W.rows(), layer.W.cols()) += dW;
    grad.segment(offsets[li] + layer.W.size(), layer.b.size()) += dz.colwise().sum().transpose();
    g = dz * layer.W;
  }
  return g;
}

std::size_t Mlp::n_params() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.W.size() + layer.b.size());
  return n;
}

Vector Mlp::params() const {
  Vector p(static_cast<Eigen::Index>(n_params()));
  Eigen::Index off = 0;
  for (const auto& layer : layers_) {
    p.segment(off, layer.W.size()) = Eigen::Map<const Vector>(layer.W.data(), layer.W.size());
    off += layer.W.size();
    p.segment(off, layer.b.size()) = layer.b;
    off += layer.b.size();
  }
  return p;
}

void Mlp::set_params(const Vector& p) {
  require(p.size() == static_cast<Eigen::Index>(n_params()), "Mlp: parameter vector size mismatch");
  Eigen::Index off = 0;
  for (auto& layer : layers_) {
    layer.W = Eigen::Map<const Matrix>(p.data() + off, layer.W.rows(), layer.W.cols());
    off += layer.W.size();
    layer.b = p.segment(off, layer.b.size());
    off += layer.b.size();
  }
}

Adam::Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg) {
  m_ = Vector::Zero(static_cast<Eigen::Index>(n));
  v_ = Vector::Zero(static_cast<Eigen::Index>(n));
}

void Adam::step(Vector& params, const Vector& grad, double lr_scale) {
  require(params.size() == m_.size() && grad.size() == m_.size(), "Adam: size mismatch");
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double lr = cfg_.lr * lr_scale;
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
}

}  // namespace msma
