#include "msma/config.hpp"

#include <initializer_list>
#include <string>

namespace msma {

namespace {

using nlohmann::json;

// Looks up keys of one object and complains about the ones nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) invalid(where_ + ": expected a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) const {
    if (auto it = j_.find(key); it != j_.end()) {
      try {
        out = it->template get<T>();
      } catch (const json::exception&) {
        invalid(where_ + "." + key + ": wrong type");
      }
    }
  }
  const json* sub(const char* key) const {
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  void only(std::initializer_list<const char*> keys) const {
    for (const auto& [k, v] : j_.items()) {
      bool ok = false;
      for (const char* a : keys) ok = ok || k == a;
      if (!ok) invalid(where_ + ": unknown key '" + k + "'");
    }
  }
  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
};

void apply_adam(AdamConfig& a, const json& j) {
  Fields f(j, "loss.adam");
  f.only({"lr", "beta1", "beta2", "eps"});
  f.get("lr", a.lr);
  f.get("beta1", a.beta1);
  f.get("beta2", a.beta2);
  f.get("eps", a.eps);
}

void apply_loss(LossConfig& c, const json& j) {
  Fields f(j, "loss");
  f.only({"lambda_geo", "lambda_info", "lambda_curv", "ib_beta", "adam", "batch", "epochs", "schedule"});
  f.get("lambda_geo", c.lambda_geo);
  f.get("lambda_info", c.lambda_info);
  f.get("lambda_curv", c.lambda_curv);
  f.get("ib_beta", c.ib_beta);
  if (const auto* a = f.sub("adam")) apply_adam(c.adam, *a);
  f.get("batch", c.batch);
  f.get("epochs", c.epochs);
  std::string schedule = c.cosine ? "cosine" : "constant";
  f.get("schedule", schedule);
  if (schedule != "cosine" && schedule != "constant") invalid("loss.schedule: expected 'cosine' or 'constant'");
  c.cosine = schedule == "cosine";
}

void apply_heads(HeadConfig& h, const json& j) {
  Fields f(j, "heads");
  f.only({"enabled", "in_total", "dims", "temperature", "label_smoothing"});
  f.get("enabled", h.enabled);
  f.get("in_total", h.in_total);
  if (f.sub("dims")) {
    std::vector<std::size_t> dims;
    f.get("dims", dims);
    if (dims.size() != 3) invalid("heads.dims: expected [global, mid, local]");
    h.global_classes = dims[0];
    h.mid_classes = dims[1];
    h.local_classes = dims[2];
  }
  f.get("temperature", h.temperature);
  f.get("label_smoothing", h.label_smoothing);
}

}  // namespace

json parse_json_arg(const char* text, const char* what) {
  if (!text || !*text) return json::object();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    invalid(std::string(what) + ": invalid JSON (" + e.what() + ")");
  }
  if (j.is_null()) return json::object();
  return j;
}

void apply_json(SyntheticSpec& s, const json& j) {
  Fields f(j, "synthetic");
  f.only({"n_layers", "hidden_dim", "n_samples", "seq_len", "n_heads", "planted_boundaries", "span_profile", "noise_sigma",
          "seed", "attention", "topic_spread", "class_spread", "amp_intermediate", "amp_local", "nest_amplitude",
          "magnitude", "layer_drift", "head_jitter"});
  f.get("n_layers", s.n_layers);
  f.get("hidden_dim", s.hidden_dim);
  f.get("n_samples", s.n_samples);
  f.get("seq_len", s.seq_len);
  f.get("n_heads", s.n_heads);
  if (f.sub("planted_boundaries")) {
    std::vector<std::size_t> b;
    f.get("planted_boundaries", b);
    if (b.size() != 2) invalid("synthetic.planted_boundaries: expected [l1, l2]");
    s.l1 = b[0];
    s.l2 = b[1];
  }
  f.get("span_profile", s.span_profile);
  f.get("noise_sigma", s.noise_sigma);
  f.get("seed", s.seed);
  f.get("attention", s.attention);
  f.get("topic_spread", s.topic_spread);
  f.get("class_spread", s.class_spread);
  f.get("amp_intermediate", s.amp_intermediate);
  f.get("amp_local", s.amp_local);
  f.get("nest_amplitude", s.nest_amplitude);
  f.get("magnitude", s.magnitude);
  f.get("layer_drift", s.layer_drift);
  f.get("head_jitter", s.head_jitter);
}

void apply_json(ProbeConfig& c, const json& j) {
  Fields f(j, "probe");
  f.only({"l2", "epochs", "lr", "folds", "seed"});
  f.get("l2", c.l2);
  f.get("epochs", c.epochs);
  f.get("lr", c.lr);
  f.get("folds", c.folds);
  f.get("seed", c.seed);
}

void apply_json(BoundaryConfig& c, const json& j) {
  Fields f(j, "boundary");
  f.only({"alpha", "beta", "gamma", "task_weights", "window", "min_separation", "cv_folds", "ksg_k", "pca_target", "probe",
          "seed"});
  f.get("alpha", c.alpha);
  f.get("beta", c.beta);
  f.get("gamma", c.gamma);
  f.get("task_weights", c.task_weights);
  f.get("window", c.window);
  f.get("min_separation", c.min_separation);
  f.get("cv_folds", c.cv_folds);
  f.get("ksg_k", c.ksg_k);
  f.get("pca_target", c.pca_target);
  if (const auto* p = f.sub("probe")) apply_json(c.probe, *p);
  f.get("seed", c.seed);
}

void apply_json(AlignConfig& c, const json& j) {
  Fields f(j, "align");
  f.only({"loss", "heads", "map", "whiten", "mlp_hidden", "critic", "curvature", "full_batch", "epoch_metrics", "ksg_k",
          "pca_target", "seed"});
  if (const auto* l = f.sub("loss")) apply_loss(c.loss, *l);
  if (const auto* h = f.sub("heads")) apply_heads(c.heads, *h);
  if (f.sub("map")) {
    std::string kind;
    f.get("map", kind);
    c.kind = map_kind_from_string(kind);
  }
  f.get("whiten", c.whiten);
  f.get("mlp_hidden", c.mlp_hidden);
  if (const auto* cr = f.sub("critic")) {
    Fields g(*cr, "critic");
    g.only({"hidden", "layers", "lr", "ema_rate", "steps_per_map_step"});
    g.get("hidden", c.mine.hidden);
    g.get("layers", c.mine.hidden_layers);
    g.get("lr", c.mine.lr);
    g.get("ema_rate", c.mine.ema_rate);
    g.get("steps_per_map_step", c.critic_steps);
  }
  if (const auto* cv = f.sub("curvature")) {
    Fields g(*cv, "curvature");
    g.only({"k_nn", "d_local"});
    g.get("k_nn", c.curv_k);
    g.get("d_local", c.curv_dim);
  }
  f.get("full_batch", c.full_batch);
  f.get("epoch_metrics", c.epoch_metrics);
  f.get("ksg_k", c.ksg_k);
  f.get("pca_target", c.pca_target);
  f.get("seed", c.seed);
}

void apply_json(AblationConfig& c, const json& j) {
  Fields f(j, "ablation");
  f.only({"base", "groups", "seed"});
  if (const auto* b = f.sub("base")) apply_json(c.base, *b);
  if (const auto* g = f.sub("groups")) {
    if (!g->is_array()) invalid("ablation.groups: expected an array");
    std::vector<AblationGroup> groups;
    for (const auto& e : *g) {
      if (e.is_string()) {
        groups.push_back(ablation_groups({e.get<std::string>()}).front());
        continue;
      }
      Fields h(e, "ablation.groups[]");
      h.only({"name", "lambda_geo", "lambda_info", "lambda_curv"});
      AblationGroup grp;
      h.get("name", grp.name);
      if (grp.name.empty()) invalid("ablation.groups[]: name required");
      h.get("lambda_geo", grp.lambda_geo);
      h.get("lambda_info", grp.lambda_info);
      h.get("lambda_curv", grp.lambda_curv);
      groups.push_back(grp);
    }
    if (groups.empty()) invalid("ablation.groups: empty");
    c.groups = std::move(groups);
  }
  f.get("seed", c.seed);
}

void apply_json(EffectConfig& c, const json& j) {
  Fields f(j, "stats");
  f.only({"bootstrap_reps", "level", "seed"});
  f.get("bootstrap_reps", c.bootstrap_reps);
  f.get("level", c.level);
  f.get("seed", c.seed);
}

}  // namespace msma
