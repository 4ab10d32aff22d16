#include "msma/intervention.hpp"

#include "msma/estimators.hpp"

#include <cmath>
#include <limits>

namespace msma {

std::string to_string(InterventionKind k) {
  switch (k) {
    case InterventionKind::translate: return "translate";
    case InterventionKind::scale: return "scale";
    case InterventionKind::noise: return "noise";
    case InterventionKind::attention: return "attention";
  }
  return "?";
}

InterventionKind intervention_kind_from_string(const std::string& s) {
  if (s == "translate") return InterventionKind::translate;
  if (s == "scale") return InterventionKind::scale;
  if (s == "noise") return InterventionKind::noise;
  if (s == "attention") return InterventionKind::attention;
  invalid("unknown intervention kind '" + s + "' (expected translate, scale, noise or attention)");
}

void InterventionSpec::validate() const {
  require(scale != Scale::unspecified, "InterventionSpec: scale must be local, intermediate or global");
  require(std::isfinite(alpha) && alpha > 0.0, "InterventionSpec: alpha must be > 0");
  require(std::isfinite(sigma) && sigma >= 0.0, "InterventionSpec: sigma must be >= 0");
  require(std::isfinite(tau) && tau > 0.0, "InterventionSpec: tau must be > 0");
  require(std::isfinite(magnitude), "InterventionSpec: magnitude must be finite");
  require(!delta || delta->allFinite(), "InterventionSpec: delta must be finite");
}

nlohmann::json InterventionSpec::to_json() const {
  nlohmann::json j{{"scale", msma::to_string(scale)}, {"kind", msma::to_string(kind)}, {"seed", seed}};
  switch (kind) {
    case InterventionKind::translate:
      if (delta)
        j["delta"] = std::vector<double>(delta->begin(), delta->end());
      else
        j["magnitude"] = magnitude;
      break;
    case InterventionKind::scale: j["alpha"] = alpha; break;
    case InterventionKind::noise: j["sigma"] = sigma; break;
    case InterventionKind::attention: j["tau"] = tau; break;
  }
  return j;
}

InterventionSpec InterventionSpec::from_json(const nlohmann::json& j) {
  InterventionSpec s;
  try {
    if (j.contains("scale")) s.scale = scale_from_string(j.at("scale").get<std::string>());
    if (j.contains("kind")) s.kind = intervention_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("delta")) {
      const auto v = j.at("delta").get<std::vector<double>>();
      s.delta = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    s.magnitude = j.value("magnitude", s.magnitude);
    s.alpha = j.value("alpha", s.alpha);
    s.sigma = j.value("sigma", s.sigma);
    s.tau = j.value("tau", s.tau);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("InterventionSpec: ") + e.what());
  }
  s.validate();
  return s;
}

std::pair<std::size_t, std::size_t> scale_layers(Scale s, std::size_t l1, std::size_t l2, std::size_t L) {
  if (!(l1 >= 1 && l1 < l2 && l2 <= L)) invalid("scale_layers: need 1 <= l1 < l2 <= L");
  switch (s) {
    case Scale::local: return {1, l1};
    case Scale::intermediate: return {l1 + 1, l2};
    case Scale::global: return l2 < L ? std::pair{l2 + 1, L} : std::pair{L, L};
    default: invalid("scale_layers: unspecified scale");
  }
}

Matrix apply_intervention(const Matrix& h, const InterventionSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case InterventionKind::translate: {
      if (!spec.delta) invalid("apply_intervention: translate needs a resolved delta");
      if (spec.delta->size() != h.cols())
        invalid("apply_intervention: delta has dimension " + std::to_string(spec.delta->size()) + ", representation has " +
                std::to_string(h.cols()));
      Matrix out = h;
      out.rowwise() += spec.delta->transpose();
      return out;
    }
    case InterventionKind::scale:
      if (spec.alpha == 1.0) return h;
      return spec.alpha * h;
    case InterventionKind::noise: {
      if (spec.sigma == 0.0) return h;
      Rng rng(spec.seed);
      return h + spec.sigma * rng.normal_matrix(h.rows(), h.cols());
    }
    case InterventionKind::attention: invalid("apply_intervention: attention interventions act on attention tensors");
  }
  return h;
}

Matrix apply_attention_temperature(const Matrix& A, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) invalid("attention temperature must be > 0");
  if (tau == 1.0) return A;
  Matrix out = A;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    // log-domain with the row max factored out to avoid underflow for small tau
    const double top = A.row(i).maxCoeff();
    if (!(top > 0.0)) continue;
    double sum = 0.0;
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      const double a = A(i, j);
      out(i, j) = a > 0.0 ? std::exp((std::log(a) - std::log(top)) / tau) : 0.0;
      sum += out(i, j);
    }
    out.row(i) /= sum;
  }
  return out;
}

Vector default_direction(const LayerStack& stack, std::size_t l1, std::size_t l2, Scale scale) {
  const auto [lo, hi] = scale_layers(scale, l1, l2, stack.n_layers());
  Matrix acc = stack.layer(lo);
  for (std::size_t l = lo + 1; l <= hi; ++l) acc += stack.layer(l);
  acc /= static_cast<double>(hi - lo + 1);
  if (acc.rows() < 2) invalid("default_direction: need at least 2 samples");
  Vector v = pca_reduce(acc, 1).basis.col(0);
  // sign convention: largest-magnitude coordinate positive
  Eigen::Index k = 0;
  v.cwiseAbs().maxCoeff(&k);
  if (v(k) < 0) v = -v;
  return v;
}

LayerStack intervene_stack(const LayerStack& stack, std::size_t l1, std::size_t l2, const InterventionSpec& spec) {
  spec.validate();
  stack.validate();
  const auto [lo, hi] = scale_layers(spec.scale, l1, l2, stack.n_layers());
  LayerStack out = stack;
  InterventionSpec s = spec;
  if (s.kind == InterventionKind::translate && !s.delta) s.delta = s.magnitude * default_direction(stack, l1, l2, s.scale);
  if (s.kind == InterventionKind::attention) {
    if (!stack.has_attention()) invalid("intervene_stack: attention intervention on a stack without attention");
    for (std::size_t l = lo; l <= hi; ++l) {
      AttentionTensor& t = out.attention[l - 1];
      const std::size_t n = t.seq;
      for (std::size_t m = 0; m < t.samples * t.heads; ++m) {
        Matrix A(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.data[(m * n + i) * n + j];
        const Matrix B = apply_attention_temperature(A, s.tau);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) t.data[(m * n + i) * n + j] = static_cast<float>(B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      }
    }
  } else {
    for (std::size_t l = lo; l <= hi; ++l) {
      InterventionSpec per = s;
      per.seed = mix_seed(s.seed, l);
      out.hidden[l - 1] = apply_intervention(stack.layer(l), per).cast<float>();
    }
  }
  out.manifest.provenance["intervention"] = s.to_json();
  out.manifest.provenance["intervention"]["layers"] = {lo, hi};
  return out;
}

}  // namespace msma
