#ifndef MSMA_ATTENTION_PROFILE_HPP
#define MSMA_ATTENTION_PROFILE_HPP

#include "msma/repr_store.hpp"

#include <vector>

namespace msma {

// Mean attention distance (1/(H n)) sum_h sum_ij A_ij |i-j|.
double mean_span(const std::vector<Matrix>& heads);
// Mean row entropy in nats over heads and query positions.
double attention_entropy(const std::vector<Matrix>& heads);

struct AttentionProfile {
  std::vector<double> span;        // per layer
  std::vector<double> entropy;     // per layer
  std::vector<double> delta_span;  // span[l+1] - span[l], L-1 entries
  std::vector<std::vector<double>> head_span;  // [layer][head]
  double spearman_depth = 0.0;
};

AttentionProfile profile_stack(const LayerStack& stack);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace msma

#endif
