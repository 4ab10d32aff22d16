#ifndef MSMA_ABLATION_HPP
#define MSMA_ABLATION_HPP

#include "msma/alignment.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace msma {

struct AblationGroup {
  std::string name;
  double lambda_geo = 0.0, lambda_info = 0.0, lambda_curv = 0.0;
};

// baseline, full_msma, no_geo, no_info, no_curv, only_geo, only_info, only_curv,
// then geo-0.1 ... geo-1 (lambda_geo swept with the full_msma info/curv weights).
std::vector<AblationGroup> default_ablation_grid();
std::vector<AblationGroup> ablation_groups(const std::vector<std::string>& names);

struct AblationConfig {
  AlignConfig base;  // lambdas are overridden per group
  std::vector<AblationGroup> groups = default_ablation_grid();
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

struct AblationRow {
  AblationGroup group;
  std::uint64_t seed = 0;  // mix_seed(master, hash of the group name)
  std::optional<AlignmentMetrics> metrics;
  double eps_geo = 0.0, eps_info = 0.0;
  std::string error;  // set when the cell failed
};

struct AblationReport {
  AlignmentMetrics baseline;  // identity maps
  std::vector<AblationRow> rows;
  // KL_gm + KL_ml ~ C (eps_geo + eps_info), least squares over finished cells; NaN
  // when undetermined.
  double budget_c = 0.0;

  const AblationRow* find(const std::string& group) const;
  nlohmann::json to_json() const;
  // group,KL_gm,KL_ml,MI_gm,MI_ml,DC_gm,DC_ml; failed cells are NA.
  std::string to_csv() const;
};

AblationReport run_ablation(const ScaleRepresentation& s, const AblationConfig& cfg = {});

// Fixed-precision number formatting shared by the CSV writers.
std::string format_number(double v);

}  // namespace msma

#endif
