#ifndef MSMA_NN_HPP
#define MSMA_NN_HPP

// Small dense networks with manual backprop, and Adam.
// Batches are rows: X is [batch x in], outputs are [batch x out].

#include "msma/common.hpp"

#include <vector>

namespace msma {

enum class Activation { identity, relu, tanh };

struct DenseLayer {
  Matrix W;  // out x in
  Vector b;  // out
  Activation act = Activation::identity;
};

class Mlp {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
  };

  Mlp() = default;
  // sizes = {in, hidden..., out}; hidden layers use `hidden`, the last layer is linear.
  // Weights ~ N(0, gain^2 / fan_in), biases zero.
  Mlp(const std::vector<std::size_t>& sizes, Activation hidden, Rng& rng, double gain = 1.0);

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Matrix forward(const Matrix& X) const;
  Matrix forward(const Matrix& X, Cache& cache) const;
  // Accumulates parameter gradients (flattened, same order as params()) into
  // `grad` and returns dL/dX.
  Matrix backward(const Cache& cache, const Matrix& grad_out, Vector& grad) const;

  std::size_t n_params() const;
  Vector params() const;
  void set_params(const Vector& p);

 private:
  std::vector<DenseLayer> layers_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg);
  void step(Vector& params, const Vector& grad, double lr_scale = 1.0);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  Vector m_, v_;
  std::size_t t_ = 0;
};

Matrix activate(const Matrix& Z, Activation act);
// Elementwise derivative given pre-activations.
Matrix activation_grad(const Matrix& Z, Activation act);

}  // namespace msma

#endif
