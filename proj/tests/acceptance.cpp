// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Run a subset with the criterion names as arguments, e.g. `msma_acceptance boundary gradient`.

#include "msma/ablation.hpp"
#include "msma/alignment.hpp"
#include "msma/boundary.hpp"
#include "msma/curvature.hpp"
#include "msma/estimators.hpp"
#include "msma/mine.hpp"
#include "msma/repr_store.hpp"
#include "msma/statistics.hpp"
#include "msma/synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace msma;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

double gaussian_mi(double rho) { return rho == 0.0 ? 0.0 : -0.5 * std::log(1.0 - rho * rho); }

std::pair<Matrix, Matrix> correlated(Eigen::Index n, double rho, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix x = rng.normal_matrix(n, 1), e = rng.normal_matrix(n, 1);
  return {x, rho * x + std::sqrt(1.0 - rho * rho) * e};
}

double rel_error(const Vector& a, const Vector& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

Vector fd_gradient(const std::function<double(const Vector&)>& f, Vector p, double h = 1e-5) {
  Vector g(p.size());
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    const double keep = p(j);
    p(j) = keep + h;
    const double up = f(p);
    p(j) = keep - h;
    const double dn = f(p);
    p(j) = keep;
    g(j) = (up - dn) / (2 * h);
  }
  return g;
}

ScaleRepresentation alignment_data(std::size_t n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_samples = n;
  spec.seed = seed;
  spec.attention = false;
  return pool_scales(generate_synthetic(spec), spec.l1, spec.l2);
}

// ---------------------------------------------------------------- criteria

void boundary(Outcome& o) {
  const auto t0 = Clock::now();
  int exact = 0, near = 0, stable = 0;
  double worst_cv = 0.0;
  const int runs = 100;
  for (int s = 0; s < runs; ++s) {
    SyntheticSpec spec;
    spec.seed = static_cast<std::uint64_t>(s);
    BoundaryConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(s);
    const auto r = detect_boundaries(generate_synthetic(spec), cfg);
    exact += r.l1 == 2 && r.l2 == 8;
    near += std::abs(static_cast<int>(r.l1) - 2) <= 1 && std::abs(static_cast<int>(r.l2) - 8) <= 1;
    stable += r.cv_std < 0.5;
    worst_cv = std::max(worst_cv, r.cv_std);
  }
  const double secs = seconds_since(t0);
  o.detail << "exact " << exact << "/" << runs << ", within 1 layer " << near << "/" << runs << ", max cv_std "
           << fmt(worst_cv) << ", runtime " << fmt(secs, 3) << " s";
  o.require(exact >= 95, "exact >= 95%");
  o.require(near == runs, "within one layer 100%");
  o.require(stable == runs, "cv_std < 0.5");
  o.require(secs < 120.0, "runtime < 2 min");
}

void alignment(Outcome& o) {
  const auto t0 = Clock::now();
  const ScaleRepresentation s = alignment_data(2048, 1);
  AlignConfig cfg;
  cfg.seed = 3;
  cfg.epoch_metrics = false;
  const auto r = train_alignment(s, cfg);
  const double secs = seconds_since(t0);
  const auto& b = r.report.baseline;
  const auto& f = r.report.final;
  const double kl_red_gm = 1.0 - f.kl_gm / b.kl_gm, kl_red_ml = 1.0 - f.kl_ml / b.kl_ml;
  const double mi_gain_gm = f.mi_gm / b.mi_gm, mi_gain_ml = f.mi_ml / b.mi_ml;
  o.detail << "KL reduction " << fmt(100 * kl_red_gm) << "% / " << fmt(100 * kl_red_ml) << "%, MI gain " << fmt(mi_gain_gm, 3)
           << "x / " << fmt(mi_gain_ml, 3) << "x, DC " << fmt(f.dc_gm) << " / " << fmt(f.dc_ml) << ", runtime " << fmt(secs, 3) << " s";
  o.require(kl_red_gm >= 0.99 && kl_red_ml >= 0.99, "KL reduction >= 99%");
  o.require(mi_gain_gm >= 5.0 && mi_gain_ml >= 5.0, "MI gain >= 5x");
  o.require(f.dc_gm >= 0.99 && f.dc_ml >= 0.99, "DC >= 0.99");
  o.require(secs < 600.0, "runtime < 10 min");
}

void ablation(Outcome& o) {
  const ScaleRepresentation s = alignment_data(2048, 1);
  AblationConfig cfg;
  cfg.base.seed = 3;
  cfg.base.epoch_metrics = false;
  cfg.seed = 3;
  cfg.groups = ablation_groups({"baseline", "full_msma", "no_geo", "only_curv"});
  const auto rep = run_ablation(s, cfg);
  auto kl = [&](const char* g) {
    const auto* row = rep.find(g);
    if (!row || !row->metrics) return std::nan("");
    return row->metrics->kl_gm + row->metrics->kl_ml;
  };
  const double base = kl("baseline"), full = kl("full_msma"), no_geo = kl("no_geo"), only_curv = kl("only_curv");
  o.detail << "KL sum: baseline " << fmt(base) << ", full_msma " << fmt(full) << ", no_geo " << fmt(no_geo) << " ("
           << fmt(no_geo / full, 3) << "x full), only_curv " << fmt(only_curv) << " (" << fmt(only_curv / base, 3) << "x baseline)";
  o.require(no_geo >= 10.0 * full, "no_geo >= 10x full_msma");
  o.require(only_curv <= 2.0 * base && only_curv >= 0.5 * base, "only_curv within 2x baseline");
}

void estimators(Outcome& o) {
  auto g1 = [](double mu, double var) {
    GaussianStats g;
    g.mean = Vector::Constant(1, mu);
    g.cov = Matrix::Constant(1, 1, var);
    return g;
  };
  double kl_err = 0.0;
  for (double mp : {-1.0, 0.0, 2.0})
    for (double vp : {0.5, 1.0, 3.0})
      for (double mq : {0.0, 1.5})
        for (double vq : {0.25, 1.0, 4.0}) {
          const double closed = 0.5 * (std::log(vq / vp) + (vp + (mp - mq) * (mp - mq)) / vq - 1.0);
          kl_err = std::max(kl_err, std::abs(gaussian_kl(g1(mp, vp), g1(mq, vq)) - closed));
        }
  o.detail << "KL max err " << fmt(kl_err, 2);
  o.require(kl_err <= 1e-9, "gaussian_kl to 1e-9");

  for (double rho : {0.0, 0.5, 0.8}) {
    auto [x, y] = correlated(5000, rho, 11 + static_cast<std::uint64_t>(10 * rho));
    const double est = ksg_mi(x, y, 5, 1).mi, truth = gaussian_mi(rho);
    o.detail << ", KSG rho " << rho << ": " << fmt(est) << " vs " << fmt(truth);
    o.require(std::abs(est - truth) <= 0.05, "KSG rho " + fmt(rho) + " within 0.05");
  }

  auto [x, y] = correlated(5000, 0.9, 21);
  const double mine = mine_estimate(x, y).bound, truth = gaussian_mi(0.9);
  o.detail << ", MINE rho 0.9: " << fmt(mine) << " vs " << fmt(truth);
  o.require(mine >= truth - 0.15 && mine <= truth + 0.05, "MINE within [-0.15, +0.05]");

  Rng rng(5);
  const Matrix X = rng.normal_matrix(800, 3);
  const double dc = distance_correlation(X, X);
  o.detail << ", dCor(X,X) - 1 = " << fmt(dc - 1.0, 2);
  o.require(std::abs(dc - 1.0) <= 1e-9, "dCor(X,X) = 1");
}

void local_kl(Outcome& o) {
  FisherModel m;
  m.family = FisherFamily::gaussian_meanvar;
  m.theta.resize(4);
  m.theta << 0.3, -1.0, 1.2, 0.7;
  Vector dir(4);
  dir << 0.6, -0.3, 0.5, 0.4;
  std::vector<double> err;
  for (int k = 0; k < 4; ++k) {
    const Vector d = dir * (0.2 / std::pow(2.0, k));
    err.push_back(std::abs(m.exact_kl(d) - local_kl_quadratic(m, d)));
  }
  o.detail << "remainder shrink per halving:";
  for (std::size_t k = 1; k < err.size(); ++k) {
    const double ratio = err[k - 1] / err[k];
    o.detail << " " << fmt(ratio, 3);
    o.require(ratio >= 6.0 && ratio <= 10.0, "shrink ~8x");
  }
}

// Two-sided exact p by listing every sign pattern of the ranks.
double enumerate_wilcoxon(const std::vector<double>& diffs) {
  std::vector<double> mags;
  for (double d : diffs)
    if (d != 0.0) mags.push_back(std::abs(d));
  const std::size_t n = mags.size();
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n; ++i) {
    double below = 0, same = 0;
    for (std::size_t j = 0; j < n; ++j) {
      below += mags[j] < mags[i];
      same += mags[j] == mags[i];
    }
    ranks[i] = below + (same + 1) / 2.0;
  }
  double observed = 0.0, total = 0.0;
  std::size_t k = 0;
  for (double d : diffs)
    if (d != 0.0) {
      if (d > 0) observed += ranks[k];
      total += ranks[k];
      ++k;
    }
  const double centre = total / 2.0, dev = std::abs(observed - centre);
  std::size_t extreme = 0;
  const std::size_t patterns = std::size_t{1} << n;
  for (std::size_t mask = 0; mask < patterns; ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) w += ranks[i];
    extreme += std::abs(w - centre) >= dev - 1e-9;
  }
  return std::min(1.0, static_cast<double>(extreme) / static_cast<double>(patterns));
}

void statistics(Outcome& o) {
  Rng rng(7);
  double wil_err = 0.0;
  int wil_cases = 0;
  for (std::size_t n = 5; n <= 12; ++n)
    for (int t = 0; t < 25; ++t) {
      std::vector<double> d(n);
      for (auto& v : d) v = static_cast<double>(static_cast<int>(rng.below(9)) - 3);
      std::size_t nz = 0;
      for (double v : d) nz += v != 0.0;
      if (nz < 5) continue;
      wil_err = std::max(wil_err, std::abs(wilcoxon_signed_rank(d).p - enumerate_wilcoxon(d)));
      ++wil_cases;
    }
  o.detail << "Wilcoxon max |p - enum| " << fmt(wil_err, 2) << " over " << wil_cases << " cases";
  o.require(wil_err <= 1e-12, "Wilcoxon matches enumeration");

  int cliff_bad = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> x(1 + rng.below(8)), y(1 + rng.below(8));
    for (auto& v : x) v = static_cast<double>(rng.below(5));
    for (auto& v : y) v = static_cast<double>(rng.below(5));
    long gt = 0, lt = 0;
    for (double a : x)
      for (double b : y) {
        gt += a > b;
        lt += a < b;
      }
    const double expect = static_cast<double>(gt - lt) / static_cast<double>(x.size() * y.size());
    cliff_bad += cliffs_delta(x, y) != expect;
  }
  o.detail << ", Cliff mismatches " << cliff_bad << "/1000";
  o.require(cliff_bad == 0, "cliffs_delta exhaustive");

  const auto adj = bh_fdr({0.01, 0.02, 0.03, 0.04});
  bool bh_ok = true;
  for (double v : adj) bh_ok = bh_ok && std::abs(v - 0.04) <= 1e-15;
  o.detail << ", BH fixture " << (bh_ok ? "ok" : "wrong");
  o.require(bh_ok, "BH fixture");

  const Statistic mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  int covered = 0;
  for (int t = 0; t < 200; ++t) {
    Rng r(mix_seed(99, static_cast<std::uint64_t>(t)));
    std::vector<double> x(1000);
    for (auto& v : x) v = r.normal();
    const auto ci = bootstrap_ci(mean, x, 1000, 0.95, static_cast<std::uint64_t>(t));
    covered += ci.first <= 0.0 && 0.0 <= ci.second;
  }
  o.detail << ", bootstrap coverage " << covered / 2.0 << "%";
  o.require(covered >= 180 && covered <= 198, "coverage in [90%, 99%]");
}

void gradient(Outcome& o) {
  const int points = 100;
  double worst_geo = 0.0, worst_cls = 0.0, worst_mlp = 0.0;
  for (int t = 0; t < points; ++t) {
    Rng rng(mix_seed(17, static_cast<std::uint64_t>(t)));
    const Matrix X = rng.normal_matrix(24, 3), Yd = rng.normal_matrix(24, 2);

    for (MapKind kind : {MapKind::linear, MapKind::mlp}) {
      AlignmentMap f = AlignmentMap::identity(kind, 3, 2, 5, static_cast<std::uint64_t>(t));
      f.whiten(X, &Yd);
      Vector p = f.params();
      p += 0.5 * rng.normal_matrix(p.size(), 1).col(0);
      f.set_params(p);
      AlignmentMap::Cache cache;
      const Matrix Y = f.forward(X, cache);
      Vector g = Vector::Zero(p.size());
      f.backward(cache, (2.0 / 24.0) * (Y - Yd), g);
      const Vector fd = fd_gradient(
          [&](const Vector& q) {
            AlignmentMap c = f;
            c.set_params(q);
            return (c.apply(X) - Yd).squaredNorm() / 24.0;
          },
          p);
      double& worst = kind == MapKind::linear ? worst_geo : worst_mlp;
      worst = std::max(worst, rel_error(g, fd));
    }

    HeadConfig hc;
    hc.global_classes = 5;
    ClassifierHeads heads(3, hc);
    for (Mlp* m : {&heads.global, &heads.mid, &heads.local})
      m->set_params(rng.normal_matrix(static_cast<Eigen::Index>(m->n_params()), 1).col(0));
    const Matrix hG = rng.normal_matrix(24, 3), hI = rng.normal_matrix(24, 3), hL = rng.normal_matrix(24, 3);
    std::vector<int> yG(24), yI(24), yL(24);
    for (std::size_t i = 0; i < 24; ++i) {
      yG[i] = static_cast<int>(rng.below(5));
      yI[i] = static_cast<int>(rng.below(3));
      yL[i] = static_cast<int>(rng.below(3));
    }
    ClassifierHeads::Grad hg;
    heads.loss(hG, hI, hL, yG, yI, yL, &hg);
    Vector g(hg.global.size() + hg.mid.size() + hg.local.size());
    g << hg.global, hg.mid, hg.local;
    Vector p(g.size());
    p << heads.global.params(), heads.mid.params(), heads.local.params();
    const auto ng = hg.global.size(), nm = hg.mid.size();
    const Vector fd = fd_gradient(
        [&](const Vector& q) {
          ClassifierHeads c = heads;
          c.global.set_params(q.head(ng));
          c.mid.set_params(q.segment(ng, nm));
          c.local.set_params(q.tail(q.size() - ng - nm));
          return c.loss(hG, hI, hL, yG, yI, yL, nullptr);
        },
        p);
    worst_cls = std::max(worst_cls, rel_error(g, fd));
  }
  o.detail << "max relative error over " << points << " points: L_geo " << fmt(worst_geo, 2) << ", L_cls "
           << fmt(worst_cls, 2) << ", mlp map " << fmt(worst_mlp, 2);
  o.require(worst_geo <= 1e-4, "L_geo");
  o.require(worst_cls <= 1e-4, "L_cls");
  o.require(worst_mlp <= 1e-4, "mlp map");
}

void curvature(Outcome& o) {
  Rng rng(1);
  const Matrix basis = random_orthonormal(5, 2, rng);
  Matrix T(500, 2);
  for (Eigen::Index i = 0; i < 500; ++i) T.row(i) << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
  const double plane = curvature_penalty(T * basis.transpose(), 10, 2).value;
  Matrix S = rng.normal_matrix(500, 3);
  S.rowwise().normalize();
  const double sphere = curvature_penalty(S, 10, 2).value;
  o.detail << "plane " << fmt(plane, 2) << ", sphere " << fmt(sphere);
  o.require(plane <= 1e-6, "plane <= 1e-6");
  o.require(sphere > 10.0 * plane && sphere > 0.0, "sphere > 10x plane");

  // Early-training loss variance: std of the step losses over the first 3 epochs,
  // mlp maps, with and without the curvature term.
  int reduced = 0;
  const int seeds = 20;
  double sum_with = 0.0, sum_without = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const ScaleRepresentation data = alignment_data(512, static_cast<std::uint64_t>(100 + s));
    auto early_std = [&](double lambda_curv) {
      AlignConfig cfg;
      cfg.kind = MapKind::mlp;
      cfg.seed = static_cast<std::uint64_t>(s);
      cfg.loss.epochs = 3;
      cfg.loss.lambda_curv = lambda_curv;
      cfg.epoch_metrics = false;
      const auto r = train_alignment(data, cfg);
      std::vector<double> v;
      for (const auto& step : r.report.steps) v.push_back(step.total);
      return stddev_of(v);
    };
    const double with = early_std(0.01), without = early_std(0.0);
    sum_with += with;
    sum_without += without;
    reduced += with < without;
  }
  o.detail << ", lambda_curv > 0 lowers early loss std on " << reduced << "/" << seeds << " seeds (mean std " << fmt(sum_with / seeds)
           << " vs " << fmt(sum_without / seeds) << ")";
  o.require(2 * reduced > seeds, "variance reduced on a majority of seeds");
}

void additivity(Outcome& o) {
  struct Case {
    std::size_t dim;
    std::vector<double> stages;
  };
  const std::vector<Case> cases = {{4, {0.1, 0.2}}, {4, {0.05, 0.05, 0.05}}, {8, {0.2, 0.1, 0.3}}, {2, {0.5, 0.01}}};
  o.detail << "ratio composed/sum:";
  for (std::size_t i = 0; i < cases.size(); ++i) {
    ErrorAdditivityConfig cfg;
    cfg.dim = cases[i].dim;
    cfg.stage_errors = cases[i].stages;
    cfg.seed = i;
    const auto r = error_additivity_check(cfg);
    o.detail << " " << fmt(r.ratio, 3);
    o.require(r.ratio >= 0.9 && r.ratio <= 1.3, "ratio in [0.9, 1.3]");
  }
}

void determinism(Outcome& o) {
  auto report = [] {
    SyntheticSpec spec;
    spec.n_samples = 256;
    spec.seed = 5;
    const LayerStack st = generate_synthetic(spec);
    BoundaryConfig bc;
    bc.seed = 5;
    AlignConfig ac;
    ac.seed = 5;
    ac.loss.epochs = 2;
    AblationConfig ab;
    ab.base = ac;
    ab.seed = 5;
    ab.groups = ablation_groups({"full_msma", "no_info"});
    const ScaleRepresentation s = pool_scales(st, 2, 8);
    return detect_boundaries(st, bc).to_json().dump() + train_alignment(s, ac).to_json().dump() + run_ablation(s, ab).to_csv();
  };
  const std::string a = report(), b = report();
  o.detail << a.size() << " bytes, " << (a == b ? "identical" : "different");
  o.require(a == b, "byte-identical reports");
}

struct Criterion {
  const char* name;
  void (*run)(Outcome&);
};

const Criterion kCriteria[] = {
    {"boundary", boundary},     {"alignment", alignment},   {"ablation", ablation},
    {"estimators", estimators}, {"local_kl", local_kl},     {"statistics", statistics},
    {"gradient", gradient},     {"curvature", curvature},   {"additivity", additivity},
    {"determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& c : kCriteria) {
    if (!only.empty() && !only.count(c.name)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [error: " << e.what() << "]";
    }
    std::printf("%s %-12s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.str().c_str(), seconds_since(t0));
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
