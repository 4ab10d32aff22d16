#include "msma/config.hpp"
#include "msma/intervention.hpp"
#include "msma/reports.hpp"
#include "msma/statistics.hpp"
#include "msma/synthetic.hpp"
#include "msma/text_metrics.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace msma;
using doctest::Approx;

namespace {

double average(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

// ---------------------------------------------------------------- interventions

TEST_CASE("apply_intervention") {
  const Matrix h = testing::gaussian(20, 5, 1);
  InterventionSpec spec;
  SUBCASE("identity parameters are bit exact") {
    spec.kind = InterventionKind::scale;
    spec.alpha = 1.0;
    CHECK(apply_intervention(h, spec) == h);
    spec.kind = InterventionKind::noise;
    spec.sigma = 0.0;
    CHECK(apply_intervention(h, spec) == h);
    spec.kind = InterventionKind::translate;
    spec.delta = Vector::Zero(5);
    CHECK(apply_intervention(h, spec) == h);
    const Matrix A = banded_attention(12, 3.0);
    CHECK(apply_attention_temperature(A, 1.0) == A);
  }
  SUBCASE("alpha 2 doubles every row norm") {
    spec.alpha = 2.0;
    const Matrix out = apply_intervention(h, spec);
    for (Eigen::Index i = 0; i < h.rows(); ++i) CHECK(out.row(i).norm() == Approx(2.0 * h.row(i).norm()));
  }
  SUBCASE("translate and noise") {
    spec.kind = InterventionKind::translate;
    spec.delta = Vector::Constant(5, 0.5);
    CHECK((apply_intervention(h, spec) - h).cwiseAbs().minCoeff() == Approx(0.5));
    spec.delta = Vector::Zero(4);
    CHECK_THROWS_AS(apply_intervention(h, spec), Error);
    spec = InterventionSpec{};
    spec.kind = InterventionKind::noise;
    spec.sigma = 0.3;
    spec.seed = 4;
    const Matrix a = apply_intervention(h, spec), b = apply_intervention(h, spec);
    CHECK(a == b);
    const Matrix d = a - h;
    CHECK(std::sqrt(d.squaredNorm() / static_cast<double>(d.size())) == Approx(0.3).epsilon(0.2));
  }
  SUBCASE("attention temperature") {
    const Matrix A = banded_attention(16, 4.0);
    for (double tau : {0.25, 0.5, 2.0, 10.0}) {
      const Matrix B = apply_attention_temperature(A, tau);
      CHECK((B.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
      CHECK(B.minCoeff() >= 0.0);
    }
    // a hotter temperature flattens rows
    Matrix P(1, 3);
    P << 0.7, 0.2, 0.1;
    const Matrix hot = apply_attention_temperature(P, 2.0);
    CHECK(hot(0, 0) < 0.7);
    CHECK(hot(0, 0) == Approx(std::sqrt(0.7) / (std::sqrt(0.7) + std::sqrt(0.2) + std::sqrt(0.1))));
    CHECK_THROWS_AS(apply_attention_temperature(P, 0.0), Error);
    spec.kind = InterventionKind::attention;
    CHECK_THROWS_AS(apply_intervention(h, spec), Error);
  }
}

TEST_CASE("scale_layers") {
  CHECK(scale_layers(Scale::local, 2, 8, 12) == std::pair<std::size_t, std::size_t>{1, 2});
  CHECK(scale_layers(Scale::intermediate, 2, 8, 12) == std::pair<std::size_t, std::size_t>{3, 8});
  CHECK(scale_layers(Scale::global, 2, 8, 12) == std::pair<std::size_t, std::size_t>{9, 12});
  CHECK(scale_layers(Scale::global, 2, 12, 12) == std::pair<std::size_t, std::size_t>{12, 12});
}

TEST_CASE("intervene_stack") {
  SyntheticSpec ss = testing::small_spec(1, 32);
  ss.n_layers = 6;
  ss.l1 = 2;
  ss.l2 = 4;
  ss.seq_len = 16;
  ss.span_profile = {1, 1.5, 2.5, 3, 4, 4.5};
  const LayerStack s = generate_synthetic(ss);
  InterventionSpec spec;
  spec.scale = Scale::intermediate;
  spec.alpha = 2.0;
  const LayerStack out = intervene_stack(s, 2, 4, spec);
  for (std::size_t l = 1; l <= 6; ++l) {
    const bool touched = l == 3 || l == 4;
    CHECK((out.layer(l) - (touched ? 2.0 : 1.0) * s.layer(l)).cwiseAbs().maxCoeff() <= 1e-5);
  }
  CHECK(out.attention == s.attention);

  spec = InterventionSpec{};
  spec.kind = InterventionKind::attention;
  spec.scale = Scale::local;
  spec.tau = 3.0;
  const LayerStack att = intervene_stack(s, 2, 4, spec);
  CHECK(att.hidden == s.hidden);
  for (std::size_t l = 0; l < 6; ++l)
    for (const auto& A : att.attention[l].head_matrices()) CHECK((A.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
  CHECK_FALSE(att.attention[0] == s.attention[0]);
  CHECK(att.attention[4] == s.attention[4]);

  spec = InterventionSpec{};
  spec.kind = InterventionKind::translate;
  spec.magnitude = 2.0;
  const LayerStack tr = intervene_stack(s, 2, 4, spec);
  const Vector dir = default_direction(s, 2, 4, Scale::global);
  CHECK(dir.norm() == Approx(1.0));
  const RowVector shift = (tr.layer(6) - s.layer(6)).colwise().mean();
  CHECK((shift.transpose() - 2.0 * dir).cwiseAbs().maxCoeff() <= 1e-4);

  spec = InterventionSpec{};
  spec.kind = InterventionKind::noise;
  spec.sigma = 0.1;
  const LayerStack n1 = intervene_stack(s, 2, 4, spec);
  CHECK(n1 == intervene_stack(s, 2, 4, spec));
  CHECK(n1.layer(1) == s.layer(1));
  CHECK_FALSE(n1.layer(5) == s.layer(5));
  CHECK_FALSE((n1.layer(5) - s.layer(5)).isApprox(n1.layer(6) - s.layer(6)));
}

TEST_CASE("intervention spec json") {
  InterventionSpec spec;
  spec.kind = InterventionKind::noise;
  spec.sigma = 0.25;
  spec.scale = Scale::local;
  spec.seed = 9;
  const auto back = InterventionSpec::from_json(spec.to_json());
  CHECK(back.kind == spec.kind);
  CHECK(back.sigma == spec.sigma);
  CHECK(back.scale == spec.scale);
  CHECK(back.seed == 9);
  CHECK_THROWS_AS(InterventionSpec::from_json({{"kind", "melt"}}), Error);
  spec.sigma = -1.0;
  CHECK_THROWS_AS(spec.validate(), Error);
}

// ---------------------------------------------------------------- text metrics

TEST_CASE("text_metrics") {
  CHECK(text_metrics("a b a b").lexical_diversity == 0.5);
  const auto hi = text_metrics("Hi. Go. Stop.");
  CHECK(hi.sentence_count == 3);
  CHECK(hi.mean_sentence_length == 1.0);
  CHECK(text_metrics("The cat sat. The cat sat.").coherence.value() == Approx(1.0));
  CHECK_FALSE(text_metrics("One sentence only").coherence.has_value());
  CHECK_FALSE(hi.sentiment.has_value());
  CHECK_THROWS_AS(text_metrics(""), Error);
  CHECK_THROWS_AS(text_metrics(" ... "), Error);

  const Lexicon lex = parse_lexicon("word,score\nGood,1\nbad,-1\ngreat,2\n");
  CHECK(lex.size() == 3);
  TextMetricOptions opt;
  opt.lexicon = &lex;
  CHECK(text_metrics("good GREAT and bad!", opt).sentiment.value() == Approx(2.0 / 3.0));
  CHECK(text_metrics("nothing scored here", opt).sentiment.value() == 0.0);

  const std::vector<Vector> emb = {Vector::Unit(2, 0), Vector::Unit(2, 1)};
  opt.sentence_embeddings = &emb;
  CHECK(text_metrics("First one. Second one.", opt).coherence.value() == Approx(0.0));
  opt.max_dependency_depth = 7.0;
  CHECK(text_metrics("First one. Second one.", opt).max_dependency_depth.value() == 7.0);
}

TEST_CASE("tokenize and split_sentences") {
  CHECK(tokenize("Hello, World! it's 42") == std::vector<std::string>{"hello", "world", "it", "s", "42"});
  CHECK(split_sentences("Wait... what?! Fine.").size() == 3);
  CHECK(tokenize("caf\xc3\xa9 ok").size() == 2);
}

// ---------------------------------------------------------------- statistics

TEST_CASE("cliffs_delta") {
  CHECK(cliffs_delta({4, 5, 6}, {1, 2, 3}) == 1.0);
  CHECK(cliffs_delta({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(cliffs_delta({1, 3}, {2, 4}) == -0.5);
  CHECK_THROWS_AS(cliffs_delta({}, {1}), Error);
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x(5 + rng.below(10)), y(5 + rng.below(10));
    for (auto& v : x) v = static_cast<double>(rng.below(6));
    for (auto& v : y) v = static_cast<double>(rng.below(6));
    const double d = cliffs_delta(x, y);
    CHECK(d == -cliffs_delta(y, x));
    CHECK(std::abs(d) <= 1.0);
  }
}

TEST_CASE("wilcoxon_signed_rank") {
  auto r = wilcoxon_signed_rank({1, 2, 3, 4, 5, 6});
  CHECK(r.exact);
  CHECK(r.n == 6);
  CHECK(r.w_plus == 21.0);
  CHECK(r.p == Approx(0.03125).epsilon(1e-12));
  CHECK(wilcoxon_signed_rank({1, -1, 2, -2, 3, -3}).p == Approx(1.0));
  CHECK(wilcoxon_signed_rank({0, 1, 2, 3, 4, 5, 6}).n == 6);
  Rng rng(2);
  std::vector<double> d(200);
  for (auto& v : d) v = 0.5 + rng.normal();
  r = wilcoxon_signed_rank(d);
  CHECK_FALSE(r.exact);
  CHECK(r.p < 0.001);
  CHECK_THROWS_AS(wilcoxon_signed_rank({0, 0, 0, 0, 0, 0}), Error);
}

TEST_CASE("bh_fdr") {
  CHECK(bh_fdr({0.03}) == std::vector<double>{0.03});
  const auto a = bh_fdr({0.01, 0.02, 0.03, 0.04});
  for (double v : a) CHECK(v == Approx(0.04));
  Rng rng(3);
  std::vector<double> p(30);
  for (auto& v : p) v = rng.uniform(1e-4, 1.0);
  const auto adj = bh_fdr(p);
  std::vector<std::size_t> order(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return p[i] < p[j]; });
  for (std::size_t k = 1; k < order.size(); ++k) CHECK(adj[order[k]] >= adj[order[k - 1]]);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(adj[i] >= p[i]);
    CHECK(adj[i] <= 1.0);
  }
  CHECK_THROWS_AS(bh_fdr({0.0, 0.5}), Error);
  CHECK_THROWS_AS(bh_fdr({1.5}), Error);
}

TEST_CASE("bootstrap_ci and quantiles") {
  const Statistic mean = [](const std::vector<double>& v) { return average(v); };
  const auto c = bootstrap_ci(mean, std::vector<double>(20, 3.5));
  CHECK(c.first == 3.5);
  CHECK(c.second == 3.5);
  std::vector<double> x(50);
  Rng rng(4);
  for (auto& v : x) v = rng.normal();
  CHECK(bootstrap_ci(mean, x, 500, 0.95, 1) == bootstrap_ci(mean, x, 500, 0.95, 1));
  const auto ci = bootstrap_ci(mean, x, 500, 0.95, 1);
  CHECK(ci.first <= average(x));
  CHECK(ci.second >= average(x));
  CHECK_THROWS_WITH_AS(bootstrap_ci(mean, x, 1), doctest::Contains("insufficient resamples"), Error);
  CHECK_THROWS_AS(bootstrap_ci(mean, std::vector<double>(5, 1.0)), Error);

  CHECK(median_of({3, 1, 2}) == 2.0);
  CHECK(median_of({4, 1, 2, 3}) == 2.5);
  CHECK(quantile_of({1, 2, 3, 4, 5}, 0.25) == 2.0);
  CHECK(quantile_of({1, 2}, 0.5) == 1.5);
}

TEST_CASE("effect study") {
  SUBCASE("identical runs") {
    std::vector<MetricSamples> s(2);
    s[0].metric = "b";
    s[1].metric = "a";
    Rng rng(5);
    for (auto& m : s)
      for (int i = 0; i < 30; ++i) {
        const double v = 10.0 + rng.normal();
        m.baseline.push_back(v);
        m.intervened.push_back(v);
      }
    const auto rep = run_effect_study(s);
    REQUIRE(rep.metrics.size() == 2);
    CHECK(rep.metrics[0].metric == "a");
    for (const auto& m : rep.metrics) {
      CHECK(m.cliffs_delta == 0.0);
      CHECK(m.p == 1.0);
      CHECK(m.p_adjusted == 1.0);
      CHECK(m.median_change_pct == 0.0);
      CHECK(m.stars().empty());
    }
  }
  SUBCASE("planted +25% shift") {
    MetricSamples m;
    m.metric = "sentence_count";
    Rng rng(6);
    for (int i = 0; i < 30; ++i) {
      const double b = 20.0 + 2.0 * rng.normal();
      m.baseline.push_back(b);
      m.intervened.push_back(1.25 * b + 0.5 * rng.normal());
    }
    const auto rep = run_effect_study({m});
    const auto& e = rep.metrics[0];
    CHECK(e.cliffs_delta > 0.0);
    CHECK(e.p_adjusted < 0.05);
    CHECK(e.median_change_pct == Approx(25.0).epsilon(0.1));
    CHECK(e.ci_lo <= e.median_change_pct);
    CHECK(e.ci_hi >= e.median_change_pct);
    CHECK(e.stars() == "**");
  }
  SUBCASE("csv input") {
    const std::string csv =
        "run_id,metric,baseline,intervened\n"
        "r1,x,1,2\nr2,x,2,3\nr3,x,3,5\nr4,x,4,6\nr5,x,5,7\nr6,x,6,9\n";
    const auto obs = read_paired_csv(csv);
    CHECK(obs.size() == 6);
    const auto rep = run_effect_study(obs);
    CHECK(rep.metrics[0].n == 6);
    CHECK(rep.metrics[0].p == Approx(0.03125));
    CHECK(rep.to_csv().find("x,") != std::string::npos);
    CHECK_THROWS_AS(run_effect_study(read_paired_csv(csv + "r1,x,1,1\n")), Error);
    CHECK_THROWS_AS(read_paired_csv("run_id,metric,baseline\n"), Error);
  }
  SUBCASE("unpaired lengths") {
    MetricSamples m;
    m.metric = "x";
    m.baseline = {1, 2, 3, 4, 5};
    m.intervened = {1, 2, 3};
    CHECK_THROWS_AS(run_effect_study({m}), Error);
  }
}

// ---------------------------------------------------------------- reports

TEST_CASE("parse_table") {
  const auto rows = parse_table("group,KL_gm,MI_ml\nfull,0.5,NA\nbase,1,\n", "r");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].group == "full");
  CHECK(rows[0].values[0].value() == 0.5);
  CHECK_FALSE(rows[0].values[3].has_value());
  CHECK_FALSE(rows[0].values[1].has_value());
  CHECK_FALSE(rows[1].values[3].has_value());
  CHECK_THROWS_AS(parse_table("name,KL_gm\nx,1\n", "r"), Error);
  CHECK_THROWS_AS(parse_table("group,KL_xx\nx,1\n", "r"), Error);
}

TEST_CASE("combine_runs") {
  testing::TempDir root("combine");
  const auto a = root / "a", b = root / "b", c = root / "c", d = root / "d";
  for (const auto& p : {a, b, c}) std::filesystem::create_directories(p);
  std::ofstream(a / kTableFile) << "group,KL_gm,KL_ml,MI_gm,MI_ml,DC_gm,DC_ml\nzeta,1,2,3,4,5,6\nfull,0.1,0.2,1,1,0.9,0.9\n";
  std::ofstream(b / kTableFile) << "group,KL_gm\nfull,0.3\n";
  std::ofstream(c / kTableFile) << "garbage\n";
  const auto t = combine_runs({a, b, c, d});
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0].group == "full");
  CHECK(t.rows[1].group == "full#2");
  CHECK(t.rows[1].run == "b");
  CHECK(t.rows[2].group == "zeta");
  CHECK(t.warnings.size() == 2);
  const std::string csv = t.to_csv();
  CHECK(csv.rfind("group,run,KL_gm,KL_ml,MI_gm,MI_ml,DC_gm,DC_ml\n", 0) == 0);
  CHECK(csv.find("full#2,b,0.3,NA,NA,NA,NA,NA\n") != std::string::npos);
  CHECK(t.to_markdown().find("| full#2 | b | 0.3 | - |") != std::string::npos);
  CHECK_THROWS_AS(combine_runs({}), Error);
  CHECK_THROWS_AS(combine_runs({c, d}), Error);
}

TEST_CASE("svg output") {
  const auto line = line_plot_svg("loss", "step", "L", {{"a", {3, 2, 1}}, {"b", {1, 1, 1}}});
  CHECK(line.rfind("<svg", 0) == 0);
  CHECK(line.find("</svg>") != std::string::npos);
  CHECK(line.find("<polyline") != std::string::npos);
  const auto heat = heatmap_svg("mi", Matrix::Identity(3, 3), {"1", "2", "3"}, {"1", "2", "3"});
  CHECK(heat.find("<rect") != std::string::npos);
  CHECK(line_plot_svg("t", "x", "y", {{"a", {1, 2}}}) == line_plot_svg("t", "x", "y", {{"a", {1, 2}}}));
}

// ---------------------------------------------------------------- config

TEST_CASE("apply_json") {
  SyntheticSpec s;
  apply_json(s, {{"n_layers", 6}, {"planted_boundaries", {2, 4}}, {"seed", 3}});
  CHECK(s.n_layers == 6);
  CHECK(s.l1 == 2);
  CHECK(s.l2 == 4);
  CHECK(s.seed == 3);
  CHECK_THROWS_WITH_AS(apply_json(s, {{"n_layer", 6}}), doctest::Contains("unknown key 'n_layer'"), Error);
  CHECK_THROWS_AS(apply_json(s, {{"n_layers", "six"}}), Error);

  AlignConfig a;
  apply_json(a, {{"loss", {{"lambda_geo", 0.5}, {"adam", {{"lr", 0.01}}}, {"schedule", "constant"}}},
                 {"heads", {{"enabled", false}}},
                 {"map", "mlp"}});
  CHECK(a.loss.lambda_geo == 0.5);
  CHECK(a.loss.adam.lr == 0.01);
  CHECK_FALSE(a.loss.cosine);
  CHECK_FALSE(a.heads.enabled);
  CHECK(a.kind == MapKind::mlp);
  CHECK_THROWS_AS(apply_json(a, {{"map", "spline"}}), Error);

  // to_json round trips through apply_json
  AlignConfig b;
  apply_json(b, a.to_json());
  CHECK(b.to_json() == a.to_json());
  BoundaryConfig bc;
  bc.alpha = 0.5;
  bc.beta = 0.3;
  BoundaryConfig bc2;
  apply_json(bc2, bc.to_json());
  CHECK(bc2.to_json() == bc.to_json());

  AblationConfig ab;
  apply_json(ab, {{"groups", {"baseline", {{"name", "mine"}, {"lambda_geo", 0.2}}}}});
  REQUIRE(ab.groups.size() == 2);
  CHECK(ab.groups[1].name == "mine");
  CHECK(ab.groups[1].lambda_geo == 0.2);

  CHECK(parse_json_arg("", "x").empty());
  CHECK(parse_json_arg(nullptr, "x").empty());
  CHECK(parse_json_arg("{\"a\":1}", "x")["a"] == 1);
  CHECK_THROWS_AS(parse_json_arg("{", "x"), Error);
}
