// msma command-line tool. Talks to the library only through msma.h.

#include "msma/msma.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// exit codes
constexpr int kOk = 0, kUsage = 1, kRuntime = 2;

struct Failure {
  int code;
  std::string msg;
};

[[noreturn]] void usage_error(const std::string& m) { throw Failure{kUsage, m}; }

void check(msma_status s) {
  if (s == MSMA_OK) return;
  throw Failure{s == MSMA_ERR_VALIDATION ? kUsage : kRuntime, std::string(msma_status_name(s)) + ": " + msma_last_error()};
}

// owned C string
struct CStr {
  char* p = nullptr;
  ~CStr() { msma_string_free(p); }
  char** out() { return &p; }
  std::string str() const { return p ? p : ""; }
};

struct Stack {
  msma_stack* p = nullptr;
  ~Stack() { msma_stack_free(p); }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Failure{kUsage, "cannot read " + p.string()};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json_file(const std::string& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    usage_error(p + ": " + e.what());
  }
}

void read_stack(const std::string& dir, Stack& s) { check(msma_stack_read(dir.c_str(), &s.p)); }

json parse_report(const CStr& s) { return json::parse(s.str()); }

// Output directory, written under a temporary sibling and renamed at the end.
class OutDir {
 public:
  OutDir(const std::string& dir, bool force) : final_(dir) {
    if (dir.empty()) usage_error("--out is required");
    if (fs::exists(final_) && !force && !fs::is_empty(final_))
      usage_error(final_.string() + " exists and is not empty (use --force)");
    tmp_ = final_;
    tmp_ += ".tmp." + std::to_string(::getpid());
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  ~OutDir() {
    std::error_code ec;
    if (!done_) fs::remove_all(tmp_, ec);
  }

  const fs::path& staging() const { return tmp_; }

  void write(const std::string& name, const std::string& content) const {
    std::ofstream out(tmp_ / name, std::ios::binary);
    out << content;
    if (!out) throw Failure{kRuntime, "cannot write " + (tmp_ / name).string()};
  }
  void write_json(const std::string& name, const json& j) const { write(name, j.dump(2) + "\n"); }

  void commit() {
    if (fs::exists(final_)) fs::remove_all(final_);
    if (final_.has_parent_path()) fs::create_directories(final_.parent_path());
    fs::rename(tmp_, final_);
    done_ = true;
  }

 private:
  fs::path final_, tmp_;
  bool done_ = false;
};

std::string fmt(const json& v) {
  if (v.is_null()) return "NA";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v.get<double>());
  return buf;
}

std::string svg_lines(const json& plot) {
  CStr s;
  check(msma_svg_lines(plot.dump().c_str(), s.out()));
  return s.str();
}

std::string svg_heatmap(const json& plot) {
  CStr s;
  check(msma_svg_heatmap(plot.dump().c_str(), s.out()));
  return s.str();
}

std::pair<std::size_t, std::size_t> boundary_pair(const std::vector<std::size_t>& v) {
  if (v.size() != 2) usage_error("--boundaries expects two layers, e.g. 2,8");
  return {v[0], v[1]};
}

// Flags first, then the --config file on top.
json resolved(json flags, const std::string& config_path) {
  if (!config_path.empty()) {
    const json over = read_json_file(config_path);
    if (!over.is_object()) usage_error(config_path + ": expected a JSON object");
    flags.merge_patch(over);
  }
  return flags;
}

// Pulls a CLI-level key out of the resolved config.
template <class T>
void take(json& cfg, const char* key, T& out) {
  if (auto it = cfg.find(key); it != cfg.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      usage_error(std::string("config key '") + key + "' has the wrong type");
    }
    cfg.erase(it);
  }
}

struct Common {
  std::string config, out, in;
  bool force = false, svg = false;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c, bool input, bool output = true) {
  sub->add_option("--config", c.config, "JSON file; its keys override the flags")->check(CLI::ExistingFile);
  if (input) sub->add_option("--in", c.in, "input dump directory")->required();
  if (output) {
    sub->add_option("--out", c.out, "output directory")->required();
    sub->add_flag("--force", c.force, "replace an existing output directory");
  }
}

// ------------------------------------------------------------------ commands

struct GenSynth {
  Common c;
  std::size_t layers = 12, dim = 16, samples = 256, seq = 128, heads = 4;
  std::vector<std::size_t> boundaries{2, 8};
  double noise = -1.0;
  bool no_attention = false;
  std::uint64_t seed = 0;

  int run() {
    json spec{{"n_layers", layers}, {"hidden_dim", dim}, {"n_samples", samples}, {"seq_len", seq},
              {"n_heads", heads},   {"seed", seed},      {"attention", !no_attention}};
    spec["planted_boundaries"] = {boundary_pair(boundaries).first, boundaries[1]};
    if (noise >= 0) spec["noise_sigma"] = noise;
    spec = resolved(spec, c.config);
    Stack s;
    check(msma_stack_generate(spec.dump().c_str(), &s.p));
    OutDir out(c.out, c.force);
    check(msma_stack_write(s.p, out.staging().c_str()));
    out.commit();
    return kOk;
  }
};

struct ProfileAttention {
  Common c;

  int run() {
    const json cfg = resolved(json::object(), c.config);
    if (!cfg.empty()) usage_error("profile-attention takes no configuration keys");
    Stack s;
    read_stack(c.in, s);
    CStr r;
    check(msma_profile_attention(s.p, r.out()));
    json j = parse_report(r);
    j["config"] = {{"input", c.in}};
    j["seed"] = nullptr;
    OutDir out(c.out, c.force);
    out.write_json("profile.json", j);
    std::string csv = "layer,span,entropy,delta_span\n";
    const auto& span = j["span"];
    for (std::size_t l = 0; l < span.size(); ++l)
      csv += std::to_string(l + 1) + "," + fmt(span[l]) + "," + fmt(j["entropy"][l]) + "," +
             (l < j["delta_span"].size() ? fmt(j["delta_span"][l]) : "NA") + "\n";
    out.write("profile.csv", csv);
    std::string hs = "layer";
    const auto& head_span = j["head_span"];
    for (std::size_t h = 0; h < (head_span.empty() ? 0 : head_span[0].size()); ++h) hs += ",head_" + std::to_string(h + 1);
    hs += "\n";
    for (std::size_t l = 0; l < head_span.size(); ++l) {
      hs += std::to_string(l + 1);
      for (const auto& v : head_span[l]) hs += "," + fmt(v);
      hs += "\n";
    }
    out.write("head_span.csv", hs);
    if (c.svg) {
      out.write("span.svg", svg_lines({{"title", "Mean attention span"}, {"xlabel", "layer"}, {"ylabel", "tokens"},
                                       {"series", {{{"name", "span"}, {"y", span}}}}}));
      out.write("entropy.svg", svg_lines({{"title", "Attention entropy"}, {"xlabel", "layer"}, {"ylabel", "nats"},
                                          {"series", {{{"name", "entropy"}, {"y", j["entropy"]}}}}}));
      json rows = json::array();
      for (std::size_t l = 0; l < head_span.size(); ++l) rows.push_back("L" + std::to_string(l + 1));
      out.write("head_span.svg", svg_heatmap({{"title", "Span per head"}, {"values", head_span}, {"rows", rows}}));
    }
    out.commit();
    return kOk;
  }
};

struct LayerMetrics {
  Common c;
  std::size_t k = 5, pca = 50;
  bool full = false;
  std::uint64_t seed = 0;

  int run() {
    const json cfg = resolved({{"k", k}, {"pca_target", pca}, {"full_matrix", full}, {"seed", seed}}, c.config);
    Stack s;
    read_stack(c.in, s);
    CStr r;
    check(msma_layer_metrics(s.p, cfg.dump().c_str(), r.out()));
    json j = parse_report(r);
    j["config"]["input"] = c.in;
    OutDir out(c.out, c.force);
    out.write_json("layer_metrics.json", j);
    std::string csv = "layer,next,mi,mi_delta,kl,dc\n";
    for (std::size_t l = 0; l < j["mi_adjacent"].size(); ++l)
      csv += std::to_string(l + 1) + "," + std::to_string(l + 2) + "," + fmt(j["mi_adjacent"][l]) + "," + fmt(j["mi_delta"][l]) +
             "," + fmt(j["kl_adjacent"][l]) + "," + fmt(j["dc_adjacent"][l]) + "\n";
    out.write("layer_metrics.csv", csv);
    if (j.contains("mi_matrix")) {
      std::string m;
      for (const auto& row : j["mi_matrix"]) {
        for (std::size_t i = 0; i < row.size(); ++i) m += (i ? "," : "") + fmt(row[i]);
        m += "\n";
      }
      out.write("mi_matrix.csv", m);
      if (c.svg) out.write("mi_matrix.svg", svg_heatmap({{"title", "KSG mutual information"}, {"values", j["mi_matrix"]}}));
    }
    if (c.svg)
      out.write("adjacent.svg", svg_lines({{"title", "Adjacent layers"}, {"xlabel", "layer"}, {"ylabel", "value"},
                                           {"series",
                                            {{{"name", "MI (nats)"}, {"y", j["mi_adjacent"]}},
                                             {{"name", "KL (nats)"}, {"y", j["kl_adjacent"]}},
                                             {{"name", "dCor"}, {"y", j["dc_adjacent"]}}}}}));
    out.commit();
    return kOk;
  }
};

struct Probe {
  Common c;
  std::vector<std::string> tasks;
  std::size_t folds = 5, epochs = 200;
  std::uint64_t seed = 0;

  int run() {
    json cfg = resolved({{"probe", {{"folds", folds}, {"epochs", epochs}, {"seed", seed}}}}, c.config);
    if (!tasks.empty() && !cfg.contains("tasks")) cfg["tasks"] = tasks;
    Stack s;
    read_stack(c.in, s);
    CStr r;
    check(msma_probe(s.p, cfg.dump().c_str(), r.out()));
    json j = parse_report(r);
    j["config"]["input"] = c.in;
    OutDir out(c.out, c.force);
    out.write_json("probe.json", j);
    std::string csv = "layer,task,acc,f1,grad\n", mat = "task";
    json heat = json::array(), rows = json::array();
    const auto& t0 = j["tasks"];
    const std::size_t L = t0.empty() ? 0 : t0[0]["accuracy"].size();
    for (std::size_t l = 0; l < L; ++l) mat += ",L" + std::to_string(l + 1);
    mat += "\n";
    for (std::size_t l = 0; l < L; ++l)
      for (const auto& t : t0)
        csv += std::to_string(l + 1) + "," + t["name"].get<std::string>() + "," + fmt(t["accuracy"][l]) + "," +
               fmt(t["macro_f1"][l]) + "," + (l < t["grad"].size() ? fmt(t["grad"][l]) : "NA") + "\n";
    for (const auto& t : t0) {
      mat += t["name"].get<std::string>();
      for (const auto& v : t["accuracy"]) mat += "," + fmt(v);
      mat += "\n";
      heat.push_back(t["accuracy"]);
      rows.push_back(t["name"]);
    }
    out.write("probe.csv", csv);
    out.write("probe_matrix.csv", mat);
    if (c.svg) out.write("probe.svg", svg_heatmap({{"title", "Probe accuracy"}, {"values", heat}, {"rows", rows}}));
    out.commit();
    return kOk;
  }
};

struct DetectBoundaries {
  Common c;
  std::uint64_t seed = 0;
  std::size_t folds = 5;
  std::optional<std::vector<double>> weights;

  int run() {
    json flags{{"seed", seed}, {"cv_folds", folds}};
    if (weights) flags["task_weights"] = *weights;
    const json cfg = resolved(flags, c.config);
    Stack s;
    read_stack(c.in, s);
    CStr r;
    check(msma_detect_boundaries(s.p, cfg.dump().c_str(), r.out()));
    json j = parse_report(r);
    j["config"]["input"] = c.in;
    OutDir out(c.out, c.force);
    out.write_json("boundaries.json", j);
    const auto& t = j["traces"];
    static const char* cols[] = {"delta_span", "mi_adjacent", "delta_mi", "probe_grad", "z_delta_span",
                                 "z_delta_mi", "z_probe_grad", "raw",        "score"};
    std::string csv = "layer";
    std::size_t n = 0;
    for (const char* k : cols) {
      csv += std::string(",") + k;
      n = std::max(n, t[k].size());
    }
    csv += "\n";
    for (std::size_t l = 0; l < n; ++l) {
      csv += std::to_string(l + 1);
      for (const char* k : cols) csv += "," + (l < t[k].size() ? fmt(t[k][l]) : std::string("NA"));
      csv += "\n";
    }
    out.write("traces.csv", csv);
    if (c.svg)
      out.write("boundary_score.svg", svg_lines({{"title", "Boundary score"}, {"xlabel", "layer"}, {"ylabel", "z"},
                                                  {"series",
                                                   {{{"name", "span change"}, {"y", t["z_delta_span"]}},
                                                    {{"name", "MI drop"}, {"y", t["z_delta_mi"]}},
                                                    {{"name", "probe gradient"}, {"y", t["z_probe_grad"]}},
                                                    {{"name", "score"}, {"y", t["score"]}}}}}));
    out.commit();
    std::cout << "l1=" << j["l1"] << " l2=" << j["l2"] << " cv_std=" << fmt(j["cv_std"]) << (j["stable"].get<bool>() ? "" : " (unstable)")
              << "\n";
    return kOk;
  }
};

void loss_flags(json& j, std::optional<std::size_t> epochs, std::optional<double> lr, std::optional<double> lg,
                std::optional<double> li, std::optional<double> lc, std::optional<std::string> map, bool full_batch) {
  if (epochs) j["loss"]["epochs"] = *epochs;
  if (lr) j["loss"]["adam"]["lr"] = *lr;
  if (lg) j["loss"]["lambda_geo"] = *lg;
  if (li) j["loss"]["lambda_info"] = *li;
  if (lc) j["loss"]["lambda_curv"] = *lc;
  if (map) j["map"] = *map;
  if (full_batch) j["full_batch"] = true;
}

struct TrainAlign {
  Common c;
  std::vector<std::size_t> boundaries;
  std::optional<std::size_t> epochs;
  std::optional<double> lr, lambda_geo, lambda_info, lambda_curv;
  std::optional<std::string> map;
  bool full_batch = false;
  std::string group = "run";
  std::uint64_t seed = 0;

  int run() {
    json flags{{"seed", seed}};
    if (!boundaries.empty()) flags["boundaries"] = boundaries;
    loss_flags(flags, epochs, lr, lambda_geo, lambda_info, lambda_curv, map, full_batch);
    json cfg = resolved(flags, c.config);
    std::vector<std::size_t> b;
    take(cfg, "boundaries", b);
    take(cfg, "group", group);
    const auto [l1, l2] = boundary_pair(b);
    Stack s;
    read_stack(c.in, s);
    CStr r;
    check(msma_train_alignment(s.p, l1, l2, cfg.dump().c_str(), r.out()));
    json j = parse_report(r);
    j["config"]["input"] = c.in;
    OutDir out(c.out, c.force);
    out.write_json("report.json", j);
    const auto& rep = j["report"];
    std::string losses = "epoch,L_geo,L_info,L_curv,L_cls,L_total,KL_gm,KL_ml,MI_gm,MI_ml,DC_gm,DC_ml\n";
    for (const auto& e : rep["epochs"]) {
      losses += fmt(e["epoch"]);
      for (const char* k : {"L_geo", "L_info", "L_curv", "L_cls", "L_total"}) losses += "," + fmt(e[k]);
      for (const char* k : {"KL_gm", "KL_ml", "MI_gm", "MI_ml", "DC_gm", "DC_ml"})
        losses += "," + (e.contains("metrics") ? fmt(e["metrics"][k]) : std::string("NA"));
      losses += "\n";
    }
    out.write("losses.csv", losses);
    std::string table = "group,KL_gm,KL_ml,MI_gm,MI_ml,DC_gm,DC_ml\n" + group;
    for (const char* k : {"KL_gm", "KL_ml", "MI_gm", "MI_ml", "DC_gm", "DC_ml"}) table += "," + fmt(rep["final"][k]);
    out.write("table.csv", table + "\n");
    if (c.svg) {
      json series = json::array();
      for (const char* k : {"L_geo", "L_info", "L_curv", "L_cls", "L_total"}) series.push_back({{"name", k}, {"y", rep["steps"][k]}});
      out.write("losses.svg", svg_lines({{"title", "Training losses"}, {"xlabel", "step"}, {"ylabel", "loss"}, {"series", series}}));
    }
    out.commit();
    const auto& f = rep["final"];
    std::cout << "KL_gm=" << fmt(f["KL_gm"]) << " KL_ml=" << fmt(f["KL_ml"]) << " MI_gm=" << fmt(f["MI_gm"]) << " MI_ml=" << fmt(f["MI_ml"])
              << " DC_gm=" << fmt(f["DC_gm"]) << " DC_ml=" << fmt(f["DC_ml"]) << "\n";
    return kOk;
  }
};

struct Ablate {
  Common c;
  std::vector<std::size_t> boundaries;
  std::vector<std::string> groups;
  std::optional<std::size_t> epochs;
  std::optional<std::string> map;
  std::uint64_t seed = 0;

  int run() {
    json flags{{"seed", seed}, {"base", {{"seed", seed}}}};
    if (!boundaries.empty()) flags["boundaries"] = boundaries;
    if (!groups.empty()) flags["groups"] = groups;
    if (epochs) flags["base"]["loss"]["epochs"] = *epochs;
    if (map) flags["base"]["map"] = *map;
    json cfg = resolved(flags, c.config);
    std::vector<std::size_t> b;
    take(cfg, "boundaries", b);
    const auto [l1, l2] = boundary_pair(b);
    Stack s;
    read_stack(c.in, s);
    CStr r, csv;
    check(msma_ablate(s.p, l1, l2, cfg.dump().c_str(), r.out(), csv.out()));
    json j = parse_report(r);
    j["config"]["input"] = c.in;
    OutDir out(c.out, c.force);
    out.write_json("report.json", j);
    out.write("table.csv", csv.str());
    out.commit();
    std::cout << csv.str();
    return kOk;
  }
};

struct Intervene {
  Common c;
  std::vector<std::size_t> boundaries;
  std::string scale = "global", kind = "scale";
  std::optional<double> alpha, sigma, tau, magnitude;
  std::uint64_t seed = 0;

  int run() {
    json flags{{"scale", scale}, {"kind", kind}, {"seed", seed}};
    if (!boundaries.empty()) flags["boundaries"] = boundaries;
    if (alpha) flags["alpha"] = *alpha;
    if (sigma) flags["sigma"] = *sigma;
    if (tau) flags["tau"] = *tau;
    if (magnitude) flags["magnitude"] = *magnitude;
    json cfg = resolved(flags, c.config);
    std::vector<std::size_t> b;
    take(cfg, "boundaries", b);
    const auto [l1, l2] = boundary_pair(b);
    Stack s, t;
    read_stack(c.in, s);
    check(msma_intervene(s.p, l1, l2, cfg.dump().c_str(), &t.p));
    OutDir out(c.out, c.force);
    check(msma_stack_write(t.p, out.staging().c_str()));
    out.commit();
    return kOk;
  }
};

// Text pairs: CSV run_id,baseline,intervened with paths to plain-text files.
std::string paired_from_texts(const std::string& listing, const std::string& lexicon) {
  std::optional<std::string> lex;
  if (!lexicon.empty()) lex = read_file(lexicon);
  const fs::path base = fs::path(listing).parent_path();
  std::istringstream in(read_file(listing));
  std::string line, out = "run_id,metric,baseline,intervened\n";
  bool header = true;
  auto metrics = [&](const std::string& path) {
    const fs::path p = fs::path(path).is_absolute() ? fs::path(path) : base / path;
    CStr r;
    check(msma_text_metrics(read_file(p).c_str(), lex ? lex->c_str() : nullptr, r.out()));
    return parse_report(r);
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      if (line != "run_id,baseline,intervened") usage_error(listing + ": header must be run_id,baseline,intervened");
      header = false;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    if (f.size() != 3) usage_error(listing + ": expected three fields in '" + line + "'");
    const json a = metrics(f[1]), b = metrics(f[2]);
    for (const auto& [k, v] : a.items())
      if (b.contains(k)) out += f[0] + "," + k + "," + fmt(v) + "," + fmt(b[k]) + "\n";
  }
  if (header) usage_error(listing + ": empty");
  return out;
}

struct Stats {
  Common c;
  std::string pairs, texts, lexicon;
  std::size_t reps = 1000;
  std::uint64_t seed = 0;

  int run() {
    if (pairs.empty() == texts.empty()) usage_error("stats needs exactly one of --pairs or --texts");
    const json cfg = resolved({{"bootstrap_reps", reps}, {"seed", seed}}, c.config);
    const std::string paired = pairs.empty() ? paired_from_texts(texts, lexicon) : read_file(pairs);
    CStr r, csv;
    check(msma_effect_study(paired.c_str(), cfg.dump().c_str(), r.out(), csv.out()));
    json j = parse_report(r);
    j["seed"] = j["config"]["seed"];
    j["config"]["input"] = pairs.empty() ? texts : pairs;
    if (!lexicon.empty()) j["config"]["lexicon"] = lexicon;
    OutDir out(c.out, c.force);
    out.write_json("effects.json", j);
    out.write("effects.csv", csv.str());
    if (!texts.empty()) out.write("paired.csv", paired);
    out.commit();
    std::cout << csv.str();
    return kOk;
  }
};

struct Report {
  Common c;
  std::vector<std::string> runs;

  int run() {
    if (!c.config.empty()) {
      json cfg = resolved(json::object(), c.config);
      take(cfg, "runs", runs);
      if (!cfg.empty()) usage_error("report: unknown configuration keys");
    }
    if (runs.empty()) usage_error("report: no run directories given");
    std::vector<const char*> dirs;
    for (const auto& r : runs) dirs.push_back(r.c_str());
    CStr md, csv, warn;
    check(msma_combine_runs(dirs.data(), dirs.size(), md.out(), csv.out(), warn.out()));
    for (const auto& w : json::parse(warn.str())) std::cerr << "warning: " << w.get<std::string>() << "\n";
    OutDir out(c.out, c.force);
    out.write("report.md", md.str());
    out.write("report.csv", csv.str());
    out.commit();
    std::cout << md.str();
    return kOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale representation analysis and cross-scale alignment"};
  app.require_subcommand(1);
  app.set_version_flag("--version", msma_version());

  GenSynth gen;
  auto* g = app.add_subcommand("gen-synth", "write a synthetic layer stack with planted boundaries");
  add_common(g, gen.c, false);
  g->add_option("--layers", gen.layers, "number of layers");
  g->add_option("--dim", gen.dim, "hidden dimension");
  g->add_option("--samples", gen.samples, "number of samples");
  g->add_option("--seq", gen.seq, "sequence length");
  g->add_option("--heads", gen.heads, "attention heads");
  g->add_option("--boundaries", gen.boundaries, "planted boundaries l1,l2")->delimiter(',')->expected(2);
  g->add_option("--noise", gen.noise, "per-layer noise sigma");
  g->add_flag("--no-attention", gen.no_attention, "omit attention tensors");
  g->add_option("--seed", gen.seed, "random seed");

  ProfileAttention prof;
  auto* p = app.add_subcommand("profile-attention", "attention span and entropy per layer");
  add_common(p, prof.c, true);
  p->add_flag("--svg", prof.c.svg, "also write SVG plots");

  LayerMetrics lm;
  auto* m = app.add_subcommand("layer-metrics", "adjacent-layer MI, KL and distance correlation");
  add_common(m, lm.c, true);
  m->add_option("--k", lm.k, "KSG neighbours");
  m->add_option("--pca", lm.pca, "PCA dimension before KSG");
  m->add_flag("--full", lm.full, "MI for every layer pair");
  m->add_option("--seed", lm.seed, "random seed");
  m->add_flag("--svg", lm.c.svg, "also write SVG plots");

  Probe pr;
  auto* q = app.add_subcommand("probe", "layerwise linear probes");
  add_common(q, pr.c, true);
  q->add_option("--tasks", pr.tasks, "tasks to probe (default: all)")->delimiter(',');
  q->add_option("--folds", pr.folds, "cross-validation folds");
  q->add_option("--epochs", pr.epochs, "training epochs per probe");
  q->add_option("--seed", pr.seed, "random seed");
  q->add_flag("--svg", pr.c.svg, "also write an SVG heatmap");

  DetectBoundaries db;
  auto* d = app.add_subcommand("detect-boundaries", "locate the two scale boundaries");
  add_common(d, db.c, true);
  d->add_option("--seed", db.seed, "random seed");
  d->add_option("--folds", db.folds, "stability folds");
  d->add_option("--task-weights", db.weights, "probe task weights")->delimiter(',');
  d->add_flag("--svg", db.c.svg, "also write an SVG plot");

  TrainAlign ta;
  auto* t = app.add_subcommand("train-align", "train the cross-scale alignment maps");
  add_common(t, ta.c, true);
  t->add_option("--boundaries", ta.boundaries, "scale boundaries l1,l2")->delimiter(',')->expected(2);
  t->add_option("--epochs", ta.epochs, "training epochs");
  t->add_option("--lr", ta.lr, "Adam learning rate");
  t->add_option("--lambda-geo", ta.lambda_geo, "weight of L_geo");
  t->add_option("--lambda-info", ta.lambda_info, "weight of L_info");
  t->add_option("--lambda-curv", ta.lambda_curv, "weight of L_curv");
  t->add_option("--map", ta.map, "linear, procrustes or mlp");
  t->add_flag("--full-batch", ta.full_batch, "one full-batch step per epoch");
  t->add_option("--group", ta.group, "row name in table.csv");
  t->add_option("--seed", ta.seed, "random seed");
  t->add_flag("--svg", ta.c.svg, "also write an SVG loss plot");

  Ablate ab;
  auto* a = app.add_subcommand("ablate", "run the ablation grid");
  add_common(a, ab.c, true);
  a->add_option("--boundaries", ab.boundaries, "scale boundaries l1,l2")->delimiter(',')->expected(2);
  a->add_option("--groups", ab.groups, "subset of groups (default: all 18)")->delimiter(',');
  a->add_option("--epochs", ab.epochs, "training epochs per cell");
  a->add_option("--map", ab.map, "linear, procrustes or mlp");
  a->add_option("--seed", ab.seed, "master seed");

  Intervene iv;
  auto* v = app.add_subcommand("intervene", "write a perturbed copy of a dump");
  add_common(v, iv.c, true);
  v->add_option("--boundaries", iv.boundaries, "scale boundaries l1,l2")->delimiter(',')->expected(2);
  v->add_option("--scale", iv.scale, "local, intermediate or global");
  v->add_option("--kind", iv.kind, "translate, scale, noise or attention");
  v->add_option("--alpha", iv.alpha, "scale factor");
  v->add_option("--sigma", iv.sigma, "noise sigma");
  v->add_option("--tau", iv.tau, "attention temperature");
  v->add_option("--magnitude", iv.magnitude, "translation length");
  v->add_option("--seed", iv.seed, "random seed");

  Stats st;
  auto* s = app.add_subcommand("stats", "paired effect statistics");
  add_common(s, st.c, false);
  s->add_option("--pairs", st.pairs, "CSV run_id,metric,baseline,intervened")->check(CLI::ExistingFile);
  s->add_option("--texts", st.texts, "CSV run_id,baseline,intervened of text file paths")->check(CLI::ExistingFile);
  s->add_option("--lexicon", st.lexicon, "word,score CSV for sentiment")->check(CLI::ExistingFile);
  s->add_option("--bootstrap", st.reps, "bootstrap resamples");
  s->add_option("--seed", st.seed, "random seed");

  Report rp;
  auto* r = app.add_subcommand("report", "combine run directories into one table");
  add_common(r, rp.c, false);
  r->add_option("runs", rp.runs, "run directories");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return kUsage;
  }

  try {
    if (g->parsed()) return gen.run();
    if (p->parsed()) return prof.run();
    if (m->parsed()) return lm.run();
    if (q->parsed()) return pr.run();
    if (d->parsed()) return db.run();
    if (t->parsed()) return ta.run();
    if (a->parsed()) return ab.run();
    if (v->parsed()) return iv.run();
    if (s->parsed()) return st.run();
    if (r->parsed()) return rp.run();
  } catch (const Failure& f) {
    std::cerr << "error: " << f.msg << "\n";
    return f.code;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed report: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
