#ifndef MSMA_INTERVENTION_HPP
#define MSMA_INTERVENTION_HPP

#include "msma/repr_store.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>

namespace msma {

enum class InterventionKind { translate, scale, noise, attention };
std::string to_string(InterventionKind k);
InterventionKind intervention_kind_from_string(const std::string& s);

struct InterventionSpec {
  Scale scale = Scale::global;
  InterventionKind kind = InterventionKind::scale;
  // translate: delta if given, otherwise magnitude * top principal direction of
  // the scale's pooled representation
  std::optional<Vector> delta;
  double magnitude = 1.0;
  double alpha = 1.0;  // scale
  double sigma = 0.0;  // noise
  double tau = 1.0;    // attention temperature
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static InterventionSpec from_json(const nlohmann::json& j);
};

// 1-based inclusive layer range of a scale for boundaries (l1, l2).
std::pair<std::size_t, std::size_t> scale_layers(Scale s, std::size_t l1, std::size_t l2, std::size_t L);

// h + delta, alpha h or h + N(0, sigma^2) (seeded); attention specs are rejected.
Matrix apply_intervention(const Matrix& h, const InterventionSpec& spec);
// Row-wise temperature on log-attention: A'_ij proportional to A_ij^(1/tau).
Matrix apply_attention_temperature(const Matrix& A, double tau);

// Applies the spec to every layer of the scale's range (hidden states, or the
// attention tensors for the attention kind). Each layer's noise uses its own
// child seed.
LayerStack intervene_stack(const LayerStack& stack, std::size_t l1, std::size_t l2, const InterventionSpec& spec);

// Unit top principal direction of the layers of `scale`, mean-pooled.
Vector default_direction(const LayerStack& stack, std::size_t l1, std::size_t l2, Scale scale);

}  // namespace msma

#endif
