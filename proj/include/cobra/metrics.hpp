#pragma once

// Control-quality metrics over a control curve (coefficient -> CBI):
// monotonicity (soft NDCG, Spearman rho), smoothness (mean absolute first and
// second differences) and expressiveness (range), plus the cross-paradigm
// transfer and cross-model gap analyses.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cobra/regulation.hpp"

namespace cobra {

/// Soft NDCG of ys against its ascending rearrangement:
///   rel_i = exp(-alpha * |ys[i] - sorted[i]| / range), DCG = sum rel_i / log2(i + 2),
///   IDCG = sum 1 / log2(i + 2). A constant curve scores 1. Result in (0, 1].
double ndcg_soft(std::span<const double> ys, double alpha = 1.0);

/// 1-based average ranks (ties share the mean of their positions).
std::vector<double> average_ranks(std::span<const double> values);

struct SpearmanResult {
  double rho = 1.0;
  bool degenerate = false;  // one side constant: rank correlation undefined, reported as 1
};

/// Closed form 1 - 6 sum d^2 / (n (n^2 - 1)) without ties, Pearson
/// correlation of average ranks otherwise.
SpearmanResult spearman(std::span<const double> xs, std::span<const double> ys);
double spearman_rho(std::span<const double> xs, std::span<const double> ys);

double delta1(std::span<const double> ys);          // mean |y[i+1] - y[i]|, needs >= 2 points
double delta2(std::span<const double> ys);          // mean |second difference|, needs >= 3 points
double expressiveness(std::span<const double> ys);  // max - min, needs >= 2 points

/// Sample Pearson correlation; nullopt when either side is constant.
std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys);

struct MetricsReport {
  double ndcg = 1.0;
  double spearman_rho = 1.0;
  bool spearman_degenerate = false;
  double delta1 = 0.0;
  std::optional<double> delta2;  // undefined for 2-point curves
  double expressiveness = 0.0;
  double alpha_used = 1.0;
};

MetricsReport evaluate_curve(const ControlCurve& curve, double alpha = 1.0);
MetricsReport evaluate_values(std::span<const double> xs, std::span<const double> ys, double alpha = 1.0);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

struct TransferReport {
  std::vector<double> coefficients;
  std::vector<double> source_cbi;
  std::vector<double> target_cbi;
  double pearson_r = 0.0;
  bool degenerate = false;  // a constant side leaves r and the fit undefined
  double slope = 0.0;
  double intercept = 0.0;
};

/// Pairs the two curves point by point; throws unless their coefficient grids match.
TransferReport transfer_report(const ControlCurve& source, const ControlCurve& target);

nlohmann::json to_json(const TransferReport& report);

/// Linear interpolation of (xs, ys) at x; xs strictly increasing, x clamped to the span.
double interpolate(std::span<const double> xs, std::span<const double> ys, double x);

/// First x on the piecewise-linear curve where it reaches y; nullopt when y
/// lies outside the achieved range.
std::optional<double> invert_curve(std::span<const double> xs, std::span<const double> ys, double y);

struct ModelGapData {
  std::string model_id;
  ControlCurve calibration;  // calibration paradigm
  ControlCurve target;       // target paradigm, same coefficient grid
};

struct GapCurve {
  std::vector<double> cbi_grid;
  /// Condition name -> spread (max - min across models) per grid point;
  /// nullopt where fewer than two models reach the grid value.
  std::map<std::string, std::vector<std::optional<double>>> spreads;
  std::vector<std::string> notes;
};

/// For each grid CBI, invert every model's calibration curve to a coefficient,
/// read the target-paradigm CBI there and record the spread across models
/// under `condition`. Needs >= 2 models.
void add_controlled_gap(GapCurve& gap, const std::string& condition, const std::vector<ModelGapData>& models);

/// Uncontrolled or uniformly controlled baselines: one target CBI per model,
/// identical at every grid point.
void add_baseline_gap(GapCurve& gap, const std::string& condition, const std::vector<double>& target_cbi_per_model);

GapCurve gap_curve(const std::vector<ModelGapData>& models, const std::vector<double>& cbi_grid,
                   const std::string& condition);

nlohmann::json to_json(const GapCurve& gap);

}  // namespace cobra
