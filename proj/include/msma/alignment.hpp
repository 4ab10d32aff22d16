#ifndef MSMA_ALIGNMENT_HPP
#define MSMA_ALIGNMENT_HPP

// Cross-scale alignment maps f_GI : h_G -> h_I and f_IL : h_I -> h_L.
//
// Training minimises
//   L_total = l_geo * L_geo + l_info * L_info + l_curv * L_curv (+ L_cls)
// with L_geo the squared residual to the target scale, L_info the negative MINE
// bound between a map's input and its output, L_curv the curvature energy of the
// maps over the source batch, and L_cls the mean cross-entropy of three classifier heads.

#include "msma/curvature.hpp"
#include "msma/mine.hpp"
#include "msma/nn.hpp"
#include "msma/repr_store.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace msma {

struct ScaleRepresentation {
  Matrix h_G, h_I, h_L;
  // Labels of the first task tagged with each scale; empty when absent.
  std::vector<int> y_G, y_I, y_L;
  std::size_t l1 = 0, l2 = 0;

  std::size_t n() const { return static_cast<std::size_t>(h_G.rows()); }
  void validate() const;
};

// Layer ranges [1, l1], (l1, l2], (l2, L]; when l2 == L the global range is {L}.
ScaleRepresentation pool_scales(const LayerStack& stack, std::size_t l1, std::size_t l2);

enum class MapKind { linear, procrustes, mlp };
std::string to_string(MapKind k);
MapKind map_kind_from_string(const std::string& s);

struct AlignmentMap {
  MapKind kind = MapKind::linear;
  // Affine part u = z W + b (for mlp: the skip path) with z = (x - in_mean) in_white
  // and y = u out_color + out_mean; either side may be unset (empty), meaning the
  // identity.
  Matrix W;
  RowVector b;
  RowVector in_mean, out_mean;
  Matrix in_white, out_color;
  // Procrustes factors: W = P_in (s Q) P_out^T, P_* empty when no projection.
  Matrix Q;
  double s = 1.0;
  Matrix proj_in, proj_out;
  // Residual branch of the mlp: tanh hidden layer, zero output weights at init.
  Mlp net;
  // Mean squared residual of a closed-form fit on its training data.
  double residual = 0.0;
  // Last MINE bound of the information component, NaN if never trained.
  double info_bound = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;

  std::size_t in_dim() const { return static_cast<std::size_t>(W.rows()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(W.cols()); }

  Matrix apply(const Matrix& X) const;
  // The affine part in input coordinates: apply(X) = X W_eff + b_eff (+ mlp branch).
  std::pair<Matrix, RowVector> effective_affine() const;

  // Re-expresses the map in the PCA-whitened coordinates of src, with outputs in
  // units of the RMS scale of dst when given, without changing the function it
  // computes (the mlp branch must still be zero).
  void whiten(const Matrix& src, const Matrix* dst = nullptr);

  // Trainable parameter vector: W (column-major), b, then the mlp branch.
  std::size_t n_params() const;
  Vector params() const;
  void set_params(const Vector& p);

  struct Cache {
    Matrix Z;
    Mlp::Cache net;
  };
  Matrix forward(const Matrix& X, Cache& cache) const;
  // Accumulates dL/dparams into `grad`, returns dL/dX.
  Matrix backward(const Cache& cache, const Matrix& grad_out, Vector& grad) const;

  nlohmann::json to_json() const;

  // Identity (zero-padded when dimensions differ). mlp hidden width 0 means min(4 d, 512).
  static AlignmentMap identity(MapKind kind, std::size_t d_in, std::size_t d_out, std::size_t hidden = 0,
                               std::uint64_t seed = 0);
};

AlignmentMap fit_linear_map(const Matrix& src, const Matrix& dst, double ridge = 0.0);
AlignmentMap fit_procrustes(const Matrix& src, const Matrix& dst);

// Curvature energy sum_i K_i^2 dV_i of a map over its source samples. K_i is the
// Frobenius norm of the map's second derivative restricted to the local tangent
// plane of src at x_i (central differences with step radius_i / 2); dV_i as in
// curvature_penalty. Affine maps give exactly 0. With `grad`, dL/dparams is added.
CurvatureResult map_curvature(const AlignmentMap& f, const Matrix& src, std::size_t k_nn = 10, std::size_t d_local = 2,
                              Vector* grad = nullptr);

struct LossConfig {
  double lambda_geo = 0.1;
  double lambda_info = 0.1;
  double lambda_curv = 0.01;
  double ib_beta = 0.1;
  AdamConfig adam{0.25, 0.9, 0.999, 1e-8};
  std::size_t batch = 128;
  std::size_t epochs = 15;
  bool cosine = true;  // lr decays to 0 over the run

  void validate() const;
  nlohmann::json to_json() const;
};

struct HeadConfig {
  bool enabled = true;
  bool in_total = true;  // add L_cls to L_total
  std::size_t global_classes = 62, mid_classes = 3, local_classes = 3;
  double temperature = 2.0;      // f_mid
  double label_smoothing = 0.1;  // f_local
};

struct ClassifierHeads {
  HeadConfig cfg;
  Mlp global, mid, local;  // single linear layers, zero-initialised

  ClassifierHeads() = default;
  ClassifierHeads(std::size_t d, const HeadConfig& cfg);

  struct Grad {
    Vector global, mid, local;
  };
  // L_cls = (CE_global + CE_mid + CE_local) / 3 over the heads whose labels are
  // present (empty label vectors are skipped).
  double loss(const Matrix& hG, const Matrix& hI, const Matrix& hL, const std::vector<int>& yG,
              const std::vector<int>& yI, const std::vector<int>& yL, Grad* grad) const;
};

struct AlignConfig {
  LossConfig loss;
  HeadConfig heads;
  MapKind kind = MapKind::linear;
  bool whiten = true;  // train in whitened source coordinates
  std::size_t mlp_hidden = 0;
  MineConfig mine{128, 2, 1e-4, 128, 0.01, 0, 0};
  std::size_t critic_steps = 5;
  std::size_t curv_k = 10;
  std::size_t curv_dim = 2;
  bool full_batch = false;
  bool epoch_metrics = true;
  std::size_t ksg_k = 5;
  std::size_t pca_target = 50;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct StepLoss {
  double geo = 0, info = 0, curv = 0, cls = 0, total = 0;
};

// KL, KSG MI and distance correlation for g->m and m->l.
struct AlignmentMetrics {
  double kl_gm = 0, kl_ml = 0, mi_gm = 0, mi_ml = 0, dc_gm = 0, dc_ml = 0;
  nlohmann::json to_json() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  StepLoss mean;  // mean over the epoch's steps
  std::optional<AlignmentMetrics> metrics;
};

struct LossReport {
  std::vector<StepLoss> steps;
  std::vector<EpochRecord> epochs;
  AlignmentMetrics baseline, final;
  double eps_geo = 0.0;   // final L_geo on all samples
  double eps_info = 0.0;  // final L_info on all samples (0 without an info term)
  nlohmann::json to_json() const;
};

struct AlignmentState {
  AlignmentMap f_GI, f_IL;
  std::optional<MineCritic> critic_GI, critic_IL;
  ClassifierHeads heads;
};

struct AlignmentResult {
  AlignmentState state;
  LossReport report;
  AlignConfig config;
  nlohmann::json to_json() const;
};

AlignmentMetrics alignment_metrics(const AlignmentMap& f_GI, const AlignmentMap& f_IL, const ScaleRepresentation& s,
                                   std::size_t ksg_k = 5, std::size_t pca_target = 50, std::uint64_t seed = 0);

// Loss terms on all samples. L_info uses the attached critics (0 if absent).
StepLoss loss_eval(const AlignmentState& state, const ScaleRepresentation& s, const AlignConfig& cfg);

AlignmentResult train_alignment(const ScaleRepresentation& s, const AlignConfig& cfg = {});
AlignmentResult train_alignment(const LayerStack& stack, std::size_t l1, std::size_t l2, const AlignConfig& cfg = {});

// Single mlp map src -> dst under the same loss (heads off).
AlignmentMap train_mlp_map(const Matrix& src, const Matrix& dst, const AlignConfig& cfg = {});

// I(h2; y) - beta I(h1; h2).
double ib_objective_estimate(const Matrix& h1, const Matrix& h2, const std::vector<int>& y, double beta,
                             std::size_t k = 5, std::uint64_t seed = 0);

struct ErrorAdditivityConfig {
  std::size_t dim = 4;
  std::vector<double> stage_errors{0.1, 0.2};  // planted KL per conditional stage, nats
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
};

struct ErrorAdditivityReport {
  std::vector<double> stage_kl;  // closed form per stage
  double stage_sum = 0.0;
  double total_kl = 0.0;         // Monte Carlo: Gaussian fits of the joint chains
  double ratio = 0.0;            // total / sum (1 when both are 0)
  nlohmann::json to_json() const;
};

// Gaussian Markov chain h_0 -> h_1 -> ... with exact and perturbed conditionals.
ErrorAdditivityReport error_additivity_check(const ErrorAdditivityConfig& cfg = {});

}  // namespace msma

#endif
