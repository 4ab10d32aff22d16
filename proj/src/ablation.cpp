#include "msma/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace msma {

std::vector<AblationGroup> default_ablation_grid() {
  std::vector<AblationGroup> g = {
      {"baseline", 0.0, 0.0, 0.0},   {"full_msma", 0.1, 0.1, 0.01}, {"no_geo", 0.0, 0.1, 0.01},
      {"no_info", 0.1, 0.0, 0.01},   {"no_curv", 0.1, 0.1, 0.0},    {"only_geo", 0.1, 0.0, 0.0},
      {"only_info", 0.0, 0.1, 0.0},  {"only_curv", 0.0, 0.0, 0.01},
  };
  for (int k = 1; k <= 10; ++k) {
    char name[16];
    if (k < 10)
      std::snprintf(name, sizeof name, "geo-0.%d", k);
    else
      std::snprintf(name, sizeof name, "geo-1");
    g.push_back({name, 0.1 * k, 0.1, 0.01});
  }
  return g;
}

std::vector<AblationGroup> ablation_groups(const std::vector<std::string>& names) {
  const auto all = default_ablation_grid();
  std::vector<AblationGroup> out;
  for (const auto& n : names) {
    bool found = false;
    for (const auto& g : all)
      if (g.name == n) {
        out.push_back(g);
        found = true;
      }
    if (!found) invalid("unknown ablation group '" + n + "'");
  }
  return out;
}

nlohmann::json AblationConfig::to_json() const {
  nlohmann::json groups_j = nlohmann::json::array();
  for (const auto& g : groups)
    groups_j.push_back({{"name", g.name}, {"lambda_geo", g.lambda_geo}, {"lambda_info", g.lambda_info}, {"lambda_curv", g.lambda_curv}});
  return {{"base", base.to_json()}, {"groups", groups_j}, {"seed", seed}};
}

const AblationRow* AblationReport::find(const std::string& group) const {
  for (const auto& r : rows)
    if (r.group.name == group) return &r;
  return nullptr;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

nlohmann::json AblationReport::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"group", r.group.name},
                     {"lambda_geo", r.group.lambda_geo},
                     {"lambda_info", r.group.lambda_info},
                     {"lambda_curv", r.group.lambda_curv},
                     {"seed", r.seed}};
    if (r.metrics) {
      j["metrics"] = r.metrics->to_json();
      j["eps_geo"] = r.eps_geo;
      j["eps_info"] = r.eps_info;
    } else {
      j["error"] = r.error;
    }
    rows_j.push_back(j);
  }
  nlohmann::json j{{"baseline", baseline.to_json()}, {"rows", rows_j}};
  j["budget_C"] = std::isfinite(budget_c) ? nlohmann::json(budget_c) : nlohmann::json(nullptr);
  return j;
}

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  os << "group,KL_gm,KL_ml,MI_gm,MI_ml,DC_gm,DC_ml\n";
  for (const auto& r : rows) {
    os << r.group.name;
    if (r.metrics) {
      const auto& m = *r.metrics;
      for (double v : {m.kl_gm, m.kl_ml, m.mi_gm, m.mi_ml, m.dc_gm, m.dc_ml}) os << ',' << format_number(v);
    } else {
      os << ",NA,NA,NA,NA,NA,NA";
    }
    os << '\n';
  }
  return os.str();
}

AblationReport run_ablation(const ScaleRepresentation& s, const AblationConfig& cfg) {
  if (cfg.groups.empty()) invalid("run_ablation: empty grid");
  cfg.base.validate();
  s.validate();
  AblationReport rep;
  rep.rows.resize(cfg.groups.size());
  parallel_for(cfg.groups.size(), [&](std::size_t i) {
    AblationRow& row = rep.rows[i];
    row.group = cfg.groups[i];
    row.seed = mix_seed(cfg.seed, hash_string(row.group.name));
    AlignConfig c = cfg.base;
    c.loss.lambda_geo = row.group.lambda_geo;
    c.loss.lambda_info = row.group.lambda_info;
    c.loss.lambda_curv = row.group.lambda_curv;
    c.seed = row.seed;
    c.epoch_metrics = false;
    try {
      const AlignmentResult r = train_alignment(s, c);
      row.metrics = r.report.final;
      row.eps_geo = r.report.eps_geo;
      row.eps_info = r.report.eps_info;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });
  rep.baseline = alignment_metrics(AlignmentMap::identity(MapKind::linear, s.h_G.cols(), s.h_I.cols()),
                                   AlignmentMap::identity(MapKind::linear, s.h_I.cols(), s.h_L.cols()), s, cfg.base.ksg_k,
                                   cfg.base.pca_target, cfg.seed);
  double num = 0.0, den = 0.0;
  for (const auto& r : rep.rows) {
    if (!r.metrics) continue;
    const double e = r.eps_geo + r.eps_info;
    num += (r.metrics->kl_gm + r.metrics->kl_ml) * e;
    den += e * e;
  }
  rep.budget_c = den > 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

}  // namespace msma
