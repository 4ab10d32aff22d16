#ifndef MSMA_SYNTHETIC_HPP
#define MSMA_SYNTHETIC_HPP

#include "msma/repr_store.hpp"

#include <cstdint>
#include <vector>

namespace msma {

// Layer stacks with three planted regimes.
//
// Each sample draws a topic t (4 classes), a relational class c_I and a lexical
// class c_L (3 classes each). With z = 2 e_t + spread, the regimes see
//   global        [z2, z3, v z1, v z0]
//   intermediate  [z1, v z0, a_I u_I]
//   local         [z0, a_I u_I, a_L u_L]
// where u_I, u_L place the class on a unit circle and v = nest_amplitude. Every
// regime is embedded through its own random orthonormal frame and scale; each
// layer adds a small drift of that frame plus iid noise.
struct SyntheticSpec {
  std::size_t n_layers = 12;
  std::size_t hidden_dim = 16;
  std::size_t n_samples = 256;
  std::size_t seq_len = 128;
  std::size_t n_heads = 4;
  std::size_t l1 = 2;
  std::size_t l2 = 8;
  std::vector<double> span_profile;  // empty: default_span_profile
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  bool attention = true;
  double topic_spread = 0.45;
  double class_spread = 0.3;
  double amp_intermediate = 0.05;
  double amp_local = 0.05;
  double nest_amplitude = 0.03;
  double magnitude = 10.0;  // multiplies every regime's scale and offset
  double layer_drift = 0.05;
  double head_jitter = 0.1;

  void validate() const;
  std::vector<double> resolved_span_profile() const;
  nlohmann::json to_json() const;
};

// Piecewise-linear span targets: local 12.5 -> 14, intermediate 19 -> 26,
// global 30.5 -> 36.2.
std::vector<double> default_span_profile(std::size_t n_layers, std::size_t l1, std::size_t l2);

// Row-stochastic banded matrix with weights w(0)=1, w(k)=clamp(bw-k+1, 0, 1).
Matrix banded_attention(std::size_t seq, double bandwidth);

// Largest achievable mean span for a sequence of length seq (uniform rows).
double max_mean_span(std::size_t seq);

// Bandwidth whose heads (bandwidth * multiplier[h]) have the requested mean span.
double solve_bandwidth(std::size_t seq, double target_span, const std::vector<double>& multipliers);

LayerStack generate_synthetic(const SyntheticSpec& spec);

}  // namespace msma

#endif
