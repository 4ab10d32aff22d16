#ifndef MSMA_MINE_HPP
#define MSMA_MINE_HPP

// Donsker-Varadhan neural MI lower bound with a moving-average correction of the
// log-partition gradient.

#include "msma/nn.hpp"

#include <cstdint>
#include <vector>

namespace msma {

struct MineConfig {
  std::size_t hidden = 128;
  std::size_t hidden_layers = 2;
  double lr = 1e-4;
  std::size_t batch = 128;
  double ema_rate = 0.01;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
};

struct MineResult {
  double bound = 0.0;         // EMA-smoothed minibatch bound at the last step
  double full_bound = 0.0;    // bound evaluated on all samples with shuffled marginals
  std::vector<double> trace;  // minibatch bound per step
};

class MineCritic {
 public:
  MineCritic() = default;
  MineCritic(std::size_t dx, std::size_t dy, const MineConfig& cfg);

  // One ascent step on the bound for a joint batch (X, Y) and marginal batch (X, Ym).
  // Returns the minibatch bound before the update.
  double train_step(const Matrix& X, const Matrix& Y, const Matrix& Ym);
  // DV bound of the current critic.
  double bound(const Matrix& X, const Matrix& Y, const Matrix& Ym) const;
  // Gradient of the (EMA-corrected) bound with respect to X; used to push a map
  // toward higher information.
  Matrix bound_grad_x(const Matrix& X, const Matrix& Y, const Matrix& Ym) const;

  const Mlp& net() const { return net_; }
  double ema() const { return ema_; }

 private:
  Matrix scores(const Matrix& X, const Matrix& Y, Mlp::Cache* cache) const;

  Mlp net_;
  Adam opt_;
  double ema_rate_ = 0.01;
  double ema_ = 1.0;
  std::size_t updates_ = 0;
  std::size_t dx_ = 0;
};

MineResult mine_estimate(const Matrix& X, const Matrix& Y, const MineConfig& cfg = {});

}  // namespace msma

#endif
