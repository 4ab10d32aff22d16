#include "msma/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace msma {

void SyntheticSpec::validate() const {
  require(n_layers >= 2, "SyntheticSpec: n_layers must be >= 2");
  require(l1 >= 1 && l1 < l2 && l2 <= n_layers, "SyntheticSpec: need 1 <= l1 < l2 <= L");
  require(hidden_dim >= 5, "SyntheticSpec: hidden_dim must be >= 5");
  require(n_samples >= 8, "SyntheticSpec: n_samples must be >= 8");
  require(nest_amplitude > 0.0 && nest_amplitude <= 1.0, "SyntheticSpec: nest_amplitude must be in (0, 1]");
  require(magnitude > 0.0 && std::isfinite(magnitude), "SyntheticSpec: magnitude must be finite and > 0");
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "SyntheticSpec: noise_sigma must be >= 0");
  if (attention) {
    require(seq_len >= 2, "SyntheticSpec: seq_len must be >= 2");
    require(n_heads >= 1, "SyntheticSpec: n_heads must be >= 1");
    require(head_jitter >= 0.0 && head_jitter < 1.0, "SyntheticSpec: head_jitter must be in [0, 1)");
  }
  if (!span_profile.empty()) {
    require(span_profile.size() == n_layers, "SyntheticSpec: span_profile needs one entry per layer");
    for (std::size_t i = 1; i < span_profile.size(); ++i)
      require(span_profile[i] >= span_profile[i - 1], "SyntheticSpec: span_profile must be nondecreasing");
  }
}

std::vector<double> SyntheticSpec::resolved_span_profile() const {
  return span_profile.empty() ? default_span_profile(n_layers, l1, l2) : span_profile;
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"n_layers", n_layers},
          {"hidden_dim", hidden_dim},
          {"n_samples", n_samples},
          {"seq_len", seq_len},
          {"n_heads", n_heads},
          {"planted_boundaries", {l1, l2}},
          {"span_profile", resolved_span_profile()},
          {"noise_sigma", noise_sigma},
          {"seed", seed},
          {"attention", attention},
          {"topic_spread", topic_spread},
          {"class_spread", class_spread},
          {"amp_intermediate", amp_intermediate},
          {"amp_local", amp_local},
          {"nest_amplitude", nest_amplitude},
          {"magnitude", magnitude},
          {"layer_drift", layer_drift},
          {"head_jitter", head_jitter}};
}

std::vector<double> default_span_profile(std::size_t n_layers, std::size_t l1, std::size_t l2) {
  std::vector<double> out(n_layers);
  auto ramp = [&](std::size_t first, std::size_t last, double lo, double hi) {
    for (std::size_t l = first; l <= last; ++l) {
      const double t = last == first ? 0.0 : static_cast<double>(l - first) / static_cast<double>(last - first);
      out[l - 1] = lo + t * (hi - lo);
    }
  };
  ramp(1, l1, 12.5, 14.0);
  if (l2 > l1) ramp(l1 + 1, l2, 19.0, 26.0);
  if (n_layers > l2) ramp(l2 + 1, n_layers, 30.5, 36.2);
  return out;
}

namespace {

double band_weight(std::size_t k, double bw) {
  if (k == 0) return 1.0;
  return std::clamp(bw - static_cast<double>(k) + 1.0, 0.0, 1.0);
}

// Mean over rows of sum_j A_ij |i-j| for the banded matrix, without forming it.
double banded_span(std::size_t seq, double bw) {
  const auto reach = static_cast<std::size_t>(std::min<double>(std::ceil(std::max(bw, 0.0)), static_cast<double>(seq)));
  double total = 0.0;
  for (std::size_t i = 0; i < seq; ++i) {
    double mass = 1.0, moment = 0.0;
    for (std::size_t k = 1; k <= reach; ++k) {
      const double w = band_weight(k, bw);
      if (w == 0.0) break;
      const double sides = static_cast<double>((i >= k) + (i + k < seq));
      mass += sides * w;
      moment += sides * w * static_cast<double>(k);
    }
    total += moment / mass;
  }
  return total / static_cast<double>(seq);
}

std::vector<double> head_multipliers(std::size_t heads, double jitter) {
  std::vector<double> m(heads, 1.0);
  if (heads > 1)
    for (std::size_t h = 0; h < heads; ++h)
      m[h] = 1.0 + jitter * (2.0 * static_cast<double>(h) / static_cast<double>(heads - 1) - 1.0);
  return m;
}

}  // namespace

Matrix banded_attention(std::size_t seq, double bandwidth) {
  Matrix a(static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(seq));
  for (std::size_t i = 0; i < seq; ++i) {
    for (std::size_t j = 0; j < seq; ++j) {
      const std::size_t k = i > j ? i - j : j - i;
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = band_weight(k, bandwidth);
    }
    a.row(static_cast<Eigen::Index>(i)) /= a.row(static_cast<Eigen::Index>(i)).sum();
  }
  return a;
}

double max_mean_span(std::size_t seq) {
  const double n = static_cast<double>(seq);
  return (n * n - 1.0) / (3.0 * n);
}

double solve_bandwidth(std::size_t seq, double target, const std::vector<double>& multipliers) {
  const double cap = max_mean_span(seq);
  if (!(target >= 0.0) || target > cap + 1e-12) {
    std::ostringstream os;
    os << "infeasible span target " << target << " for seq " << seq << " (max |i-j| = " << (seq - 1)
       << ", largest mean span " << cap << ")";
    fail(ErrorKind::validation, os.str());
  }
  auto span_at = [&](double bw) {
    double s = 0.0;
    for (double m : multipliers) s += banded_span(seq, bw * m);
    return s / static_cast<double>(multipliers.size());
  };
  const double min_m = *std::min_element(multipliers.begin(), multipliers.end());
  double lo = 0.0, hi = static_cast<double>(seq) / min_m + 1.0;
  if (target >= span_at(hi)) return hi;
  for (int it = 0; it < 100 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (span_at(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

LayerStack generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto L = spec.n_layers;
  const auto d = static_cast<Eigen::Index>(spec.hidden_dim);
  const auto n = static_cast<Eigen::Index>(spec.n_samples);

  Rng label_rng(mix_seed(spec.seed, 1));
  std::vector<int> topic(spec.n_samples), rel(spec.n_samples), lex(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    topic[i] = static_cast<int>(label_rng.below(4));
    rel[i] = static_cast<int>(label_rng.below(3));
    lex[i] = static_cast<int>(label_rng.below(3));
  }

  Rng latent_rng(mix_seed(spec.seed, 2));
  auto circle = [&](int c, Eigen::Index i, Matrix& m, Eigen::Index col) {
    const double angle = 2.0 * std::numbers::pi * c / 3.0;
    m(i, col) = std::cos(angle) + spec.class_spread * latent_rng.normal();
    m(i, col + 1) = std::sin(angle) + spec.class_spread * latent_rng.normal();
  };
  Matrix zg(n, 4), ui(n, 2), ul(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < 4; ++k)
      zg(i, k) = (k == topic[static_cast<std::size_t>(i)] ? 2.0 : 0.0) + spec.topic_spread * latent_rng.normal();
    circle(rel[static_cast<std::size_t>(i)], i, ui, 0);
    circle(lex[static_cast<std::size_t>(i)], i, ul, 0);
  }

  // Each regime keeps one topic coordinate of its own at full amplitude and the
  // finer regime's coordinates at amplitude `nest`.
  const double nu = spec.nest_amplitude;
  Matrix z_local(n, 5), z_mid(n, 4), z_global(n, 4);
  z_local << zg.col(0), spec.amp_intermediate * ui, spec.amp_local * ul;
  z_mid << zg.col(1), nu * zg.col(0), spec.amp_intermediate * ui;
  z_global << zg.col(2), zg.col(3), nu * zg.col(1), nu * zg.col(0);
  const Matrix* latents[3] = {&z_local, &z_mid, &z_global};
  const double scales[3] = {1.0, 1.6, 2.5};

  Rng frame_rng(mix_seed(spec.seed, 3));
  Matrix frames[3];
  Vector offsets[3];
  for (int r = 0; r < 3; ++r) {
    frames[r] = random_orthonormal(d, latents[r]->cols(), frame_rng);
    offsets[r] = frame_rng.normal_matrix(d, 1).col(0);
  }

  LayerStack stack;
  Rng layer_rng(mix_seed(spec.seed, 4));
  for (std::size_t l = 1; l <= L; ++l) {
    const int r = l <= spec.l1 ? 0 : (l <= spec.l2 ? 1 : 2);
    const Matrix& z = *latents[r];
    const Eigen::Index k = z.cols();
    const Matrix drift = Matrix::Identity(k, k) + spec.layer_drift * layer_rng.normal_matrix(k, k);
    const Matrix map = (spec.magnitude * scales[r]) * frames[r] * drift;  // d x k
    const Vector offset = spec.magnitude * (offsets[r] + spec.layer_drift * layer_rng.normal_matrix(d, 1).col(0));
    Matrix h = z * map.transpose();
    h.rowwise() += offset.transpose();
    h += spec.noise_sigma * layer_rng.normal_matrix(n, d);
    stack.hidden.push_back(h.cast<float>());
  }

  auto& m = stack.manifest;
  m.model = "synthetic";
  m.n_layers = L;
  m.hidden_dim = spec.hidden_dim;
  m.n_samples = spec.n_samples;
  m.tasks = {{"local", 3, Scale::local}, {"intermediate", 3, Scale::intermediate}, {"global", 4, Scale::global}};
  m.provenance = spec.to_json();

  if (spec.attention) {
    m.attention_mode = "mean";
    m.n_heads = spec.n_heads;
    m.seq_len = spec.seq_len;
    const auto profile = spec.resolved_span_profile();
    const auto mult = head_multipliers(spec.n_heads, spec.head_jitter);
    for (std::size_t l = 0; l < L; ++l) {
      const double bw = solve_bandwidth(spec.seq_len, profile[l], mult);
      std::vector<Matrix> heads;
      for (double mh : mult) heads.push_back(banded_attention(spec.seq_len, bw * mh));
      stack.attention.push_back(attention_from_heads(heads));
    }
  }

  char buf[32];
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    std::snprintf(buf, sizeof buf, "s%05zu", i);
    stack.sample_ids.emplace_back(buf);
  }
  stack.labels = {lex, rel, topic};
  stack.validate();
  return stack;
}

}  // namespace msma
