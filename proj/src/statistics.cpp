#include "msma/statistics.hpp"

#include "msma/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace msma {

double cliffs_delta(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.empty() || y.empty()) invalid("cliffs_delta: empty input");
  for (const auto* v : {&x, &y})
    for (double e : *v)
      if (std::isnan(e)) invalid("cliffs_delta: NaN input");
  // sort y once; count y < xi and y > xi by binary search
  std::vector<double> ys = y;
  std::sort(ys.begin(), ys.end());
  double gt = 0.0, lt = 0.0;
  for (double xi : x) {
    gt += static_cast<double>(std::lower_bound(ys.begin(), ys.end(), xi) - ys.begin());
    lt += static_cast<double>(ys.end() - std::upper_bound(ys.begin(), ys.end(), xi));
  }
  return (gt - lt) / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs) {
  std::vector<double> d;
  for (double v : diffs) {
    if (!std::isfinite(v)) invalid("wilcoxon_signed_rank: non-finite difference");
    if (v != 0.0) d.push_back(v);
  }
  if (d.empty()) invalid("wilcoxon_signed_rank: all differences are zero");
  if (d.size() < 5) invalid("wilcoxon_signed_rank: need at least 5 nonzero differences, got " + std::to_string(d.size()));
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  // doubled average ranks stay integral
  std::vector<long> r2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const long twice_avg = static_cast<long>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) r2[order[k]] = twice_avg;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  long w2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += r2[i];
    if (d[i] > 0) w2 += r2[i];
  }
  WilcoxonResult res;
  res.n = n;
  res.w_plus = static_cast<double>(w2) / 2.0;
  if (n <= 25) {
    res.exact = true;
    std::vector<double> count(static_cast<std::size_t>(total2 + 1), 0.0);
    count[0] = 1.0;
    long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (long s = reach; s >= 0; --s)
        if (count[static_cast<std::size_t>(s)] != 0.0) count[static_cast<std::size_t>(s + r2[i])] += count[static_cast<std::size_t>(s)];
      reach += r2[i];
    }
    double le = 0.0, ge = 0.0, all = 0.0;
    for (long s = 0; s <= total2; ++s) {
      const double c = count[static_cast<std::size_t>(s)];
      all += c;
      if (s <= w2) le += c;
      if (s >= w2) ge += c;
    }
    res.p = std::min(1.0, 2.0 * std::min(le, ge) / all);
  } else {
    const double nn = static_cast<double>(n);
    const double mu = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double z = std::max(std::abs(res.w_plus - mu) - 0.5, 0.0) / std::sqrt(var);
    res.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  return res;
}

std::vector<double> bh_fdr(const std::vector<double>& p) {
  const std::size_t m = p.size();
  for (double v : p)
    if (!(v > 0.0 && v <= 1.0)) invalid("bh_fdr: p-values must lie in (0, 1]");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> adj(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const double v = p[order[r]] * static_cast<double>(m) / static_cast<double>(r + 1);
    running = std::min(running, v);
    adj[order[r]] = running;
  }
  return adj;
}

double quantile_of(std::vector<double> v, double q) {
  if (v.empty()) invalid("quantile_of: empty input");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median_of(std::vector<double> v) { return quantile_of(std::move(v), 0.5); }

std::pair<double, double> bootstrap_ci(const Statistic& stat, const std::vector<double>& samples, std::size_t reps,
                                       double level, std::uint64_t seed) {
  if (reps < 2) invalid("bootstrap_ci: insufficient resamples (reps = " + std::to_string(reps) + ")");
  if (samples.size() < 10) invalid("bootstrap_ci: need at least 10 samples");
  if (!(level > 0.0 && level < 1.0)) invalid("bootstrap_ci: level must be in (0, 1)");
  Rng rng(seed);
  std::vector<double> stats(reps), draw(samples.size());
  for (std::size_t r = 0; r < reps; ++r) {
    for (auto& x : draw) x = samples[rng.below(samples.size())];
    stats[r] = stat(draw);
  }
  const double a = (1.0 - level) / 2.0;
  return {quantile_of(stats, a), quantile_of(stats, 1.0 - a)};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, std::size_t lineno) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || !std::isfinite(v)) invalid("paired csv line " + std::to_string(lineno) + ": bad number '" + s + "'");
  return v;
}

}  // namespace

std::vector<PairedObservation> read_paired_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<PairedObservation> out;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (!header) {
      if (f.size() != 4 || f[0] != "run_id" || f[1] != "metric" || f[2] != "baseline" || f[3] != "intervened")
        invalid("paired csv: header must be run_id,metric,baseline,intervened");
      header = true;
      continue;
    }
    if (f.size() != 4) invalid("paired csv line " + std::to_string(lineno) + ": expected 4 fields");
    out.push_back({f[0], f[1], parse_double(f[2], lineno), parse_double(f[3], lineno)});
  }
  if (!header) invalid("paired csv: empty input");
  return out;
}

std::string MetricEffect::stars() const {
  if (p_adjusted < 0.01) return "**";
  if (p_adjusted < 0.05) return "*";
  return "";
}

nlohmann::json EffectReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  for (const auto& m : metrics) {
    nlohmann::json j{{"metric", m.metric},
                     {"n", m.n},
                     {"median_change_pct", num(m.median_change_pct)},
                     {"cliffs_delta", m.cliffs_delta},
                     {"p", m.p},
                     {"p_adjusted", m.p_adjusted},
                     {"ci", {num(m.ci_lo), num(m.ci_hi)}},
                     {"significance", m.stars()}};
    if (!m.note.empty()) j["note"] = m.note;
    rows.push_back(j);
  }
  return {{"metrics", rows},
          {"config", {{"bootstrap_reps", config.bootstrap_reps}, {"level", config.level}, {"seed", config.seed}}}};
}

std::string EffectReport::to_csv() const {
  std::ostringstream os;
  os << "metric,n,median_change_pct,cliffs_delta,p,p_adjusted,ci_lo,ci_hi,significance\n";
  for (const auto& m : metrics)
    os << m.metric << ',' << m.n << ',' << format_number(m.median_change_pct) << ',' << format_number(m.cliffs_delta) << ','
       << format_number(m.p) << ',' << format_number(m.p_adjusted) << ',' << format_number(m.ci_lo) << ','
       << format_number(m.ci_hi) << ',' << m.stars() << '\n';
  return os.str();
}

EffectReport run_effect_study(const std::vector<MetricSamples>& samples, const EffectConfig& cfg) {
  if (samples.empty()) invalid("run_effect_study: no metrics");
  EffectReport rep;
  rep.config = cfg;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    if (s.baseline.size() != s.intervened.size())
      invalid("run_effect_study: metric '" + s.metric + "' has " + std::to_string(s.baseline.size()) + " baseline and " +
              std::to_string(s.intervened.size()) + " intervened values");
    if (s.baseline.empty()) invalid("run_effect_study: metric '" + s.metric + "' has no observations");
    MetricEffect e;
    e.metric = s.metric;
    e.n = s.baseline.size();
    std::vector<double> change, diffs(e.n);
    for (std::size_t i = 0; i < e.n; ++i) {
      diffs[i] = s.intervened[i] - s.baseline[i];
      if (s.baseline[i] != 0.0) change.push_back(100.0 * diffs[i] / s.baseline[i]);
    }
    e.median_change_pct = change.empty() ? nan : median_of(change);
    e.ci_lo = e.ci_hi = nan;
    if (change.size() >= 10) {
      const auto ci = bootstrap_ci([](const std::vector<double>& v) { return median_of(v); }, change, cfg.bootstrap_reps,
                                   cfg.level, mix_seed(cfg.seed, hash_string(s.metric)));
      e.ci_lo = ci.first;
      e.ci_hi = ci.second;
    }
    e.cliffs_delta = cliffs_delta(s.intervened, s.baseline);
    const auto nonzero = static_cast<std::size_t>(std::count_if(diffs.begin(), diffs.end(), [](double v) { return v != 0.0; }));
    if (nonzero >= 5) {
      e.p = wilcoxon_signed_rank(diffs).p;
    } else {
      e.p = 1.0;
      e.note = nonzero == 0 ? "no differences" : "fewer than 5 nonzero differences; p set to 1";
    }
    rep.metrics.push_back(e);
  }
  std::sort(rep.metrics.begin(), rep.metrics.end(), [](const MetricEffect& a, const MetricEffect& b) { return a.metric < b.metric; });
  std::vector<double> p;
  for (const auto& m : rep.metrics) p.push_back(m.p);
  const auto adj = bh_fdr(p);
  for (std::size_t i = 0; i < adj.size(); ++i) rep.metrics[i].p_adjusted = adj[i];
  return rep;
}

EffectReport run_effect_study(const std::vector<PairedObservation>& obs, const EffectConfig& cfg) {
  std::vector<MetricSamples> samples;
  std::map<std::string, std::size_t> index;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& o : obs) {
    if (!seen.insert({o.run_id, o.metric}).second)
      invalid("run_effect_study: duplicate pair for run '" + o.run_id + "', metric '" + o.metric + "'");
    auto [it, fresh] = index.emplace(o.metric, samples.size());
    if (fresh) samples.push_back({o.metric, {}, {}});
    samples[it->second].baseline.push_back(o.baseline);
    samples[it->second].intervened.push_back(o.intervened);
  }
  return run_effect_study(samples, cfg);
}

}  // namespace msma
