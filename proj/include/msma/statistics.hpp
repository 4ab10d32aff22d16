#ifndef MSMA_STATISTICS_HPP
#define MSMA_STATISTICS_HPP

#include "msma/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace msma {

// (#{x > y} - #{x < y}) / (n m) over all pairs.
double cliffs_delta(const std::vector<double>& x, const std::vector<double>& y);

struct WilcoxonResult {
  double w_plus = 0.0;  // sum of ranks of positive differences
  std::size_t n = 0;    // nonzero differences
  double p = 1.0;       // two-sided
  bool exact = false;
};

// Zeros are dropped, tied magnitudes get average ranks. Exact null distribution
// for n <= 25, otherwise a normal approximation with tie and continuity
// correction. Needs at least 5 nonzero differences.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs);

// Benjamini-Hochberg step-up adjusted p-values, in input order.
std::vector<double> bh_fdr(const std::vector<double>& p);

using Statistic = std::function<double(const std::vector<double>&)>;

// Percentile bootstrap interval, seeded.
std::pair<double, double> bootstrap_ci(const Statistic& stat, const std::vector<double>& samples, std::size_t reps = 1000,
                                       double level = 0.95, std::uint64_t seed = 0);

double median_of(std::vector<double> v);
// Linear interpolation between order statistics (type 7).
double quantile_of(std::vector<double> v, double q);

struct PairedObservation {
  std::string run_id;
  std::string metric;
  double baseline = 0.0;
  double intervened = 0.0;
};

// run_id,metric,baseline,intervened with a header line.
std::vector<PairedObservation> read_paired_csv(const std::string& text);

struct EffectConfig {
  std::size_t bootstrap_reps = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
};

struct MetricEffect {
  std::string metric;
  std::size_t n = 0;
  double median_change_pct = 0.0;  // median over pairs of 100 (b' - b) / b, pairs with b = 0 skipped
  double cliffs_delta = 0.0;       // intervened vs baseline
  double p = 1.0;                  // Wilcoxon on intervened - baseline
  double p_adjusted = 1.0;         // BH over all metrics
  double ci_lo = 0.0, ci_hi = 0.0; // bootstrap CI of the median change %
  std::string note;
  std::string stars() const;
};

struct EffectReport {
  std::vector<MetricEffect> metrics;  // sorted by metric name
  EffectConfig config;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

struct MetricSamples {
  std::string metric;
  std::vector<double> baseline, intervened;  // paired by index
};

EffectReport run_effect_study(const std::vector<MetricSamples>& samples, const EffectConfig& cfg = {});
// Groups by metric in first-seen run order; a (run_id, metric) pair may occur once.
EffectReport run_effect_study(const std::vector<PairedObservation>& obs, const EffectConfig& cfg = {});

}  // namespace msma

#endif
