#ifndef MSMA_PROBING_HPP
#define MSMA_PROBING_HPP

#include "msma/repr_store.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace msma {

struct ProbeConfig {
  double l2 = 1e-3;
  std::size_t epochs = 200;
  double lr = 0.1;  // cosine-decayed to 0
  std::size_t folds = 5;
  std::uint64_t seed = 0;
};

// Multinomial logistic regression on standardized features.
struct LinearProbe {
  Vector mean, scale;  // standardization from the training split
  Matrix W;            // d x classes
  RowVector b;
  int n_classes = 0;

  Matrix logits(const Matrix& X) const;
  std::vector<int> predict(const Matrix& X) const;
};

struct ProbeMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

struct ProbeFit {
  LinearProbe probe;
  ProbeMetrics test;
  std::vector<double> loss_trace;  // training loss per epoch, full batch
};

ProbeMetrics score_predictions(const std::vector<int>& truth, const std::vector<int>& pred, int n_classes);

// Trains on (Xtr, ytr) and scores on (Xte, yte). Labels are in [0, n_classes).
ProbeFit train_probe(const Matrix& Xtr, const std::vector<int>& ytr, const Matrix& Xte, const std::vector<int>& yte,
                     int n_classes, const ProbeConfig& cfg = {});

// Convenience form: seeded 80/20 split of (X, y).
ProbeFit train_probe(const Matrix& X, const std::vector<int>& y, const ProbeConfig& cfg = {});

// Fold of each sample: samples are ordered by a seeded hash of their id and dealt
// round-robin, so assignment does not depend on storage order.
std::vector<std::size_t> fold_assignment(const LayerStack& stack, std::size_t folds, std::uint64_t seed);

struct ProbeResult {
  std::vector<std::string> tasks;
  std::vector<double> weights;                          // w_t, sums to 1
  std::vector<std::vector<double>> accuracy;            // [task][layer]
  std::vector<std::vector<double>> macro_f1;            // [task][layer]
  std::vector<std::vector<double>> grad;                // [task][layer], L-1 entries
  std::vector<std::vector<std::vector<double>>> fold_accuracy;  // [task][layer][fold]
  std::size_t folds = 0;

  // sum_t w_t |grad_t| per boundary position, optionally from a single fold.
  std::vector<double> weighted_grad(int fold = -1) const;
  std::size_t peak_layer(std::size_t task) const;  // 1-based
};

// Default weights: uniform over scale groups, split evenly inside a group.
std::vector<double> default_task_weights(const LayerStack& stack, const std::vector<std::string>& tasks);

// Probes every (layer, task); tasks empty means all manifest tasks.
ProbeResult probe_stack(const LayerStack& stack, const std::vector<std::string>& tasks = {},
                        const ProbeConfig& cfg = {});

}  // namespace msma

#endif
