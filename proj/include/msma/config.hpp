#ifndef MSMA_CONFIG_HPP
#define MSMA_CONFIG_HPP

// JSON overrides for the configuration structs. Keys mirror each struct's
// to_json(); keys that are absent keep their current value, unknown keys are a
// validation error.

#include "msma/ablation.hpp"
#include "msma/boundary.hpp"
#include "msma/statistics.hpp"
#include "msma/synthetic.hpp"

#include <json.hpp>

namespace msma {

void apply_json(SyntheticSpec& s, const nlohmann::json& j);
void apply_json(ProbeConfig& c, const nlohmann::json& j);
void apply_json(BoundaryConfig& c, const nlohmann::json& j);
void apply_json(AlignConfig& c, const nlohmann::json& j);
void apply_json(AblationConfig& c, const nlohmann::json& j);
void apply_json(EffectConfig& c, const nlohmann::json& j);

// Parses text as JSON; empty or null text gives an empty object.
nlohmann::json parse_json_arg(const char* text, const char* what);

}  // namespace msma

#endif
