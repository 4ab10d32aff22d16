#ifndef MSMA_BOUNDARY_HPP
#define MSMA_BOUNDARY_HPP

#include "msma/probing.hpp"
#include "msma/repr_store.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace msma {

struct BoundaryConfig {
  double alpha = 0.4;  // attention span change
  double beta = 0.4;   // adjacent MI drop
  double gamma = 0.2;  // probe gradient
  std::vector<double> task_weights;  // empty: default_task_weights
  std::size_t window = 3;
  std::size_t min_separation = 2;
  std::size_t cv_folds = 5;
  std::size_t ksg_k = 5;
  std::size_t pca_target = 50;
  ProbeConfig probe;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct MiProfile {
  std::vector<double> adjacent;  // I(l, l+1), L-1 entries
  Matrix full;                   // L x L, empty unless requested
};

// Adjacent-layer KSG MI on PCA-reduced layers, optionally for every pair.
MiProfile adjacent_mi_profile(const LayerStack& stack, std::size_t k = 5, std::size_t pca_target = 50,
                              std::uint64_t seed = 0, bool full_matrix = false);

// dI_l = I(l-1, l) - I(l, l+1) with dI_1 = 0.
std::vector<double> mi_drop(const std::vector<double>& adjacent);

// (x - mean) / std; a constant channel maps to zeros.
std::vector<double> zscore(const std::vector<double>& x);
// Centred triangular moving average of odd width, renormalised at the edges.
std::vector<double> smooth(const std::vector<double>& x, std::size_t window);

struct BoundaryScores {
  std::vector<double> z_span, z_mi, z_probe;  // normalised channels
  std::vector<double> raw;                    // weighted sum before smoothing
  std::vector<double> score;                  // smoothed B, index l-1 for boundary l
};

// Empty channels are treated as constant. mi_adjacent is I(l, l+1).
BoundaryScores boundary_scores(const std::vector<double>& delta_span, const std::vector<double>& mi_adjacent,
                               const std::vector<double>& probe_grad, const BoundaryConfig& cfg);

// Two boundaries from a score trace: local maxima first, then global order,
// honouring the minimum separation; ties go to the lower layer. Throws
// Error(ambiguous) on a flat trace.
std::pair<std::size_t, std::size_t> pick_boundaries(const std::vector<double>& score, std::size_t min_separation);

struct BoundaryResult {
  std::size_t l1 = 0, l2 = 0;
  BoundaryScores scores;
  std::vector<double> delta_span;        // raw channel values
  std::vector<double> mi_adjacent;
  std::vector<double> mi_delta;
  std::vector<double> probe_grad;        // sum_t w_t |grad P_t|
  std::vector<std::pair<std::size_t, std::size_t>> cv_boundaries;
  double cv_std = 0.0;
  bool stable = false;

  nlohmann::json to_json() const;
};

BoundaryResult detect_boundaries(const LayerStack& stack, const BoundaryConfig& cfg = {});

}  // namespace msma

#endif
