#include "msma/msma.h"

#include "msma/ablation.hpp"
#include "msma/attention_profile.hpp"
#include "msma/boundary.hpp"
#include "msma/config.hpp"
#include "msma/estimators.hpp"
#include "msma/intervention.hpp"
#include "msma/probing.hpp"
#include "msma/reports.hpp"
#include "msma/statistics.hpp"
#include "msma/synthetic.hpp"
#include "msma/text_metrics.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

struct msma_stack {
  msma::LayerStack stack;
};

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

msma_status status_of(msma::ErrorKind k) {
  switch (k) {
    case msma::ErrorKind::validation: return MSMA_ERR_VALIDATION;
    case msma::ErrorKind::io: return MSMA_ERR_IO;
    case msma::ErrorKind::runtime: return MSMA_ERR_RUNTIME;
    case msma::ErrorKind::ambiguous: return MSMA_ERR_AMBIGUOUS;
  }
  return MSMA_ERR_INTERNAL;
}

template <class F>
msma_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return MSMA_OK;
  } catch (const msma::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const json::exception& e) {
    g_last_error = std::string("json: ") + e.what();
    return MSMA_ERR_VALIDATION;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return MSMA_ERR_RUNTIME;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MSMA_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return MSMA_ERR_INTERNAL;
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.data(), s.size() + 1);
  return p;
}

void need(const void* p, const char* what) {
  if (!p) msma::invalid(std::string(what) + " must not be NULL");
}

// NaN/inf are not JSON; reports carry them as null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json profile_json(const msma::AttentionProfile& p) {
  json delta = json::array();
  for (double d : p.delta_span) delta.push_back(num(d));
  return {{"span", p.span},
          {"entropy", p.entropy},
          {"delta_span", delta},
          {"head_span", p.head_span},
          {"spearman_depth", num(p.spearman_depth)}};
}

json probe_json(const msma::ProbeResult& r, const msma::ProbeConfig& cfg) {
  json tasks = json::array();
  for (std::size_t t = 0; t < r.tasks.size(); ++t)
    tasks.push_back({{"name", r.tasks[t]},
                     {"weight", r.weights[t]},
                     {"accuracy", r.accuracy[t]},
                     {"macro_f1", r.macro_f1[t]},
                     {"grad", r.grad[t]},
                     {"fold_accuracy", r.fold_accuracy[t]},
                     {"peak_layer", r.peak_layer(t)}});
  return {{"config", {{"l2", cfg.l2}, {"epochs", cfg.epochs}, {"lr", cfg.lr}, {"folds", cfg.folds}, {"seed", cfg.seed}}},
          {"seed", cfg.seed},
          {"folds", r.folds},
          {"tasks", tasks},
          {"weighted_grad", r.weighted_grad()}};
}

json layer_metrics_json(const msma::LayerStack& st, const json& cfg_j) {
  std::size_t k = 5, pca_target = 50, max_dc = 2000;
  std::uint64_t seed = 0;
  bool full = false;
  for (const auto& [key, v] : cfg_j.items())
    if (key != "k" && key != "pca_target" && key != "seed" && key != "full_matrix" && key != "max_dc_samples")
      msma::invalid("layer_metrics: unknown key '" + key + "'");
  k = cfg_j.value("k", k);
  pca_target = cfg_j.value("pca_target", pca_target);
  seed = cfg_j.value("seed", seed);
  full = cfg_j.value("full_matrix", full);
  max_dc = cfg_j.value("max_dc_samples", max_dc);
  if (k < 1) msma::invalid("layer_metrics: k must be >= 1");
  const std::size_t L = st.n_layers();
  if (L < 2) msma::invalid("layer_metrics: need at least 2 layers");

  const auto mi = msma::adjacent_mi_profile(st, k, pca_target, seed, full);
  std::vector<double> kl(L - 1), dc(L - 1);
  msma::parallel_for(L - 1, [&](std::size_t l) {
    const msma::Matrix a = st.layer(l + 1), b = st.layer(l + 2);
    kl[l] = msma::gaussian_kl(msma::fit_gaussian(b), msma::fit_gaussian(a));
    dc[l] = msma::distance_correlation(a, b, max_dc, msma::mix_seed(seed, 1000 + l));
  });
  json klj = json::array();
  for (double v : kl) klj.push_back(num(v));
  json j{{"config", {{"k", k}, {"pca_target", pca_target}, {"seed", seed}, {"full_matrix", full}, {"max_dc_samples", max_dc}}},
         {"seed", seed},
         {"n_layers", L},
         {"mi_adjacent", mi.adjacent},
         {"mi_delta", msma::mi_drop(mi.adjacent)},
         {"kl_adjacent", klj},
         {"dc_adjacent", dc}};
  if (full) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < mi.full.rows(); ++i) {
      json r = json::array();
      for (Eigen::Index c = 0; c < mi.full.cols(); ++c) r.push_back(num(mi.full(i, c)));
      rows.push_back(r);
    }
    j["mi_matrix"] = rows;
  }
  return j;
}

}  // namespace

extern "C" {

const char* msma_version(void) { return "0.1.0"; }

const char* msma_last_error(void) { return g_last_error.c_str(); }

const char* msma_status_name(msma_status s) {
  switch (s) {
    case MSMA_OK: return "ok";
    case MSMA_ERR_VALIDATION: return "validation";
    case MSMA_ERR_IO: return "io";
    case MSMA_ERR_RUNTIME: return "runtime";
    case MSMA_ERR_AMBIGUOUS: return "ambiguous";
    case MSMA_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void msma_string_free(char* s) { std::free(s); }

msma_status msma_stack_generate(const char* spec_json, msma_stack** out) {
  return guarded([&] {
    need(out, "out");
    msma::SyntheticSpec spec;
    msma::apply_json(spec, msma::parse_json_arg(spec_json, "synthetic spec"));
    auto* h = new msma_stack{msma::generate_synthetic(spec)};
    *out = h;
  });
}

msma_status msma_stack_read(const char* dir, msma_stack** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    auto* h = new msma_stack{msma::read_stack(dir)};
    *out = h;
  });
}

msma_status msma_stack_write(const msma_stack* stack, const char* dir) {
  return guarded([&] {
    need(stack, "stack");
    need(dir, "dir");
    msma::write_stack(stack->stack, dir);
  });
}

void msma_stack_free(msma_stack* stack) { delete stack; }

msma_status msma_stack_info(const msma_stack* stack, char** json_out) {
  return guarded([&] {
    need(stack, "stack");
    need(json_out, "json_out");
    *json_out = dup(dump(stack->stack.manifest.to_json()));
  });
}

msma_status msma_stack_layer(const msma_stack* stack, size_t layer, double* out, size_t capacity) {
  return guarded([&] {
    need(stack, "stack");
    need(out, "out");
    const auto& st = stack->stack;
    if (layer < 1 || layer > st.n_layers()) msma::invalid("layer out of range");
    const msma::Matrix X = st.layer(layer);
    if (capacity < static_cast<std::size_t>(X.size())) msma::invalid("output buffer too small");
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out, X.rows(), X.cols()) = X;
  });
}

msma_status msma_profile_attention(const msma_stack* stack, char** json_out) {
  return guarded([&] {
    need(stack, "stack");
    need(json_out, "json_out");
    *json_out = dup(dump(profile_json(msma::profile_stack(stack->stack))));
  });
}

msma_status msma_layer_metrics(const msma_stack* stack, const char* config_json, char** json_out) {
  return guarded([&] {
    need(stack, "stack");
    need(json_out, "json_out");
    const json cfg = msma::parse_json_arg(config_json, "layer metrics config");
    if (!cfg.is_object()) msma::invalid("layer metrics config: expected a JSON object");
    *json_out = dup(dump(layer_metrics_json(stack->stack, cfg)));
  });
}

msma_status msma_probe(const msma_stack* stack, const char* config_json, char** json_out) {
  return guarded([&] {
    need(stack, "stack");
    need(json_out, "json_out");
    const json cfg = msma::parse_json_arg(config_json, "probe config");
    if (!cfg.is_object()) msma::invalid("probe config: expected a JSON object");
    std::vector<std::string> tasks;
    msma::ProbeConfig pc;
    for (const auto& [k, v] : cfg.items()) {
      if (k == "tasks")
        tasks = v.get<std::vector<std::string>>();
      else if (k == "probe")
        msma::apply_json(pc, v);
      else
        msma::invalid("probe config: unknown key '" + k + "'");
    }
    *json_out = dup(dump(probe_json(msma::probe_stack(stack->stack, tasks, pc), pc)));
  });
}

msma_status msma_detect_boundaries(const msma_stack* stack, const char* config_json, char** json_out) {
  return guarded([&] {
    need(stack, "stack");
    need(json_out, "json_out");
    msma::BoundaryConfig cfg;
    msma::apply_json(cfg, msma::parse_json_arg(config_json, "boundary config"));
    json j = msma::detect_boundaries(stack->stack, cfg).to_json();
    j["config"] = cfg.to_json();
    j["seed"] = cfg.seed;
    *json_out = dup(dump(j));
  });
}

msma_status msma_train_alignment(const msma_stack* stack, size_t l1, size_t l2, const char* config_json, char** json_out) {
  return guarded([&] {
    need(stack, "stack");
    need(json_out, "json_out");
    msma::AlignConfig cfg;
    msma::apply_json(cfg, msma::parse_json_arg(config_json, "alignment config"));
    json j = msma::train_alignment(stack->stack, l1, l2, cfg).to_json();
    j["boundaries"] = {l1, l2};
    *json_out = dup(dump(j));
  });
}

msma_status msma_ablate(const msma_stack* stack, size_t l1, size_t l2, const char* config_json, char** json_out,
                        char** csv_out) {
  return guarded([&] {
    need(stack, "stack");
    need(json_out, "json_out");
    need(csv_out, "csv_out");
    msma::AblationConfig cfg;
    msma::apply_json(cfg, msma::parse_json_arg(config_json, "ablation config"));
    const auto rep = msma::run_ablation(msma::pool_scales(stack->stack, l1, l2), cfg);
    json j = rep.to_json();
    j["config"] = cfg.to_json();
    j["seed"] = cfg.seed;
    j["boundaries"] = {l1, l2};
    char* js = dup(dump(j));
    try {
      *csv_out = dup(rep.to_csv());
    } catch (...) {
      std::free(js);
      throw;
    }
    *json_out = js;
  });
}

msma_status msma_error_additivity(const char* config_json, char** json_out) {
  return guarded([&] {
    need(json_out, "json_out");
    const json cfg_j = msma::parse_json_arg(config_json, "error additivity config");
    msma::ErrorAdditivityConfig cfg;
    for (const auto& [k, v] : cfg_j.items()) {
      if (k == "dim")
        cfg.dim = v.get<std::size_t>();
      else if (k == "stage_errors")
        cfg.stage_errors = v.get<std::vector<double>>();
      else if (k == "samples")
        cfg.samples = v.get<std::size_t>();
      else if (k == "seed")
        cfg.seed = v.get<std::uint64_t>();
      else
        msma::invalid("error additivity config: unknown key '" + k + "'");
    }
    json j = msma::error_additivity_check(cfg).to_json();
    j["config"] = {{"dim", cfg.dim}, {"stage_errors", cfg.stage_errors}, {"samples", cfg.samples}, {"seed", cfg.seed}};
    j["seed"] = cfg.seed;
    *json_out = dup(dump(j));
  });
}

msma_status msma_intervene(const msma_stack* stack, size_t l1, size_t l2, const char* spec_json, msma_stack** out) {
  return guarded([&] {
    need(stack, "stack");
    need(out, "out");
    const auto spec = msma::InterventionSpec::from_json(msma::parse_json_arg(spec_json, "intervention spec"));
    auto* h = new msma_stack{msma::intervene_stack(stack->stack, l1, l2, spec)};
    *out = h;
  });
}

msma_status msma_text_metrics(const char* text, const char* lexicon_csv, char** json_out) {
  return guarded([&] {
    need(text, "text");
    need(json_out, "json_out");
    msma::Lexicon lex;
    msma::TextMetricOptions opt;
    if (lexicon_csv) {
      lex = msma::parse_lexicon(lexicon_csv);
      opt.lexicon = &lex;
    }
    *json_out = dup(dump(msma::text_metrics(text, opt).to_json()));
  });
}

msma_status msma_effect_study(const char* paired_csv, const char* config_json, char** json_out, char** csv_out) {
  return guarded([&] {
    need(paired_csv, "paired_csv");
    need(json_out, "json_out");
    need(csv_out, "csv_out");
    msma::EffectConfig cfg;
    msma::apply_json(cfg, msma::parse_json_arg(config_json, "stats config"));
    const auto rep = msma::run_effect_study(msma::read_paired_csv(paired_csv), cfg);
    char* js = dup(dump(rep.to_json()));
    try {
      *csv_out = dup(rep.to_csv());
    } catch (...) {
      std::free(js);
      throw;
    }
    *json_out = js;
  });
}

msma_status msma_cliffs_delta(const double* x, size_t nx, const double* y, size_t ny, double* out) {
  return guarded([&] {
    need(out, "out");
    if (nx) need(x, "x");
    if (ny) need(y, "y");
    *out = msma::cliffs_delta(std::vector<double>(x, x + nx), std::vector<double>(y, y + ny));
  });
}

msma_status msma_wilcoxon(const double* diffs, size_t n, double* w_plus, double* p) {
  return guarded([&] {
    if (n) need(diffs, "diffs");
    const auto r = msma::wilcoxon_signed_rank(std::vector<double>(diffs, diffs + n));
    if (w_plus) *w_plus = r.w_plus;
    if (p) *p = r.p;
  });
}

msma_status msma_bh_fdr(const double* p, size_t n, double* adjusted) {
  return guarded([&] {
    if (n) {
      need(p, "p");
      need(adjusted, "adjusted");
    }
    const auto a = msma::bh_fdr(std::vector<double>(p, p + n));
    std::copy(a.begin(), a.end(), adjusted);
  });
}

msma_status msma_combine_runs(const char* const* dirs, size_t n, char** markdown_out, char** csv_out, char** warnings_json) {
  return guarded([&] {
    need(markdown_out, "markdown_out");
    need(csv_out, "csv_out");
    if (n) need(dirs, "dirs");
    std::vector<std::filesystem::path> paths;
    for (size_t i = 0; i < n; ++i) {
      need(dirs[i], "dirs[i]");
      paths.emplace_back(dirs[i]);
    }
    const auto t = msma::combine_runs(paths);
    char* md = dup(t.to_markdown());
    char* csv = nullptr;
    try {
      csv = dup(t.to_csv());
      if (warnings_json) *warnings_json = dup(json(t.warnings).dump());
    } catch (...) {
      std::free(md);
      std::free(csv);
      throw;
    }
    *markdown_out = md;
    *csv_out = csv;
  });
}

msma_status msma_svg_lines(const char* plot_json, char** svg_out) {
  return guarded([&] {
    need(svg_out, "svg_out");
    const json j = msma::parse_json_arg(plot_json, "plot");
    std::vector<msma::PlotSeries> series;
    for (const auto& s : j.value("series", json::array())) {
      msma::PlotSeries p{s.value("name", std::string()), {}};
      for (const auto& v : s.at("y")) p.y.push_back(v.is_null() ? std::nan("") : v.get<double>());
      series.push_back(std::move(p));
    }
    *svg_out = dup(msma::line_plot_svg(j.value("title", std::string()), j.value("xlabel", std::string()),
                                       j.value("ylabel", std::string()), series));
  });
}

msma_status msma_svg_heatmap(const char* plot_json, char** svg_out) {
  return guarded([&] {
    need(svg_out, "svg_out");
    const json j = msma::parse_json_arg(plot_json, "plot");
    const auto& rows = j.at("values");
    const auto r = rows.size(), c = r ? rows.at(0).size() : 0;
    msma::Matrix M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < r; ++i) {
      if (rows[i].size() != c) msma::invalid("heatmap: ragged rows");
      for (std::size_t k = 0; k < c; ++k)
        M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k].is_null() ? std::nan("") : rows[i][k].get<double>();
    }
    *svg_out = dup(msma::heatmap_svg(j.value("title", std::string()), M, j.value("rows", std::vector<std::string>()),
                                     j.value("cols", std::vector<std::string>())));
  });
}

}  // extern "C"
