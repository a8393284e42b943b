#include "cobra/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cobra/error.hpp"

namespace cobra {

namespace {

void require_points(std::span<const double> ys, std::size_t n, const char* what) {
  if (ys.size() < n) {
    throw ValidationError(std::string(what) + " needs at least " + std::to_string(n) + " points, got " +
                          std::to_string(ys.size()));
  }
}

bool has_ties(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  return std::adjacent_find(s.begin(), s.end()) != s.end();
}

bool constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double y) { return y == v.front(); });
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

double ndcg_soft(std::span<const double> ys, double alpha) {
  require_points(ys, 2, "NDCG");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("NDCG alpha must be finite and >= 0");
  std::vector<double> ideal(ys.begin(), ys.end());
  std::sort(ideal.begin(), ideal.end());
  const double range = ideal.back() - ideal.front();
  if (range == 0.0) return 1.0;
  double dcg = 0.0;
  double idcg = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double discount = std::log2(static_cast<double>(i) + 2.0);
    dcg += std::exp(-alpha * std::abs(ys[i] - ideal[i]) / range) / discount;
    idcg += 1.0 / discount;
  }
  const double v = dcg / idcg;
  return std::clamp(v, std::numeric_limits<double>::min(), 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("pearson: length mismatch");
  require_points(xs, 2, "Pearson correlation");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

SpearmanResult spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("spearman: length mismatch");
  require_points(ys, 2, "Spearman rho");
  if (constant(xs) || constant(ys)) return {1.0, true};
  const std::vector<double> rx = average_ranks(xs);
  const std::vector<double> ry = average_ranks(ys);
  if (!has_ties(xs) && !has_ties(ys)) {
    const double n = static_cast<double>(xs.size());
    double d2 = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    return {1.0 - 6.0 * d2 / (n * (n * n - 1.0)), false};
  }
  return {*pearson(rx, ry), false};
}

double spearman_rho(std::span<const double> xs, std::span<const double> ys) { return spearman(xs, ys).rho; }

double delta1(std::span<const double> ys) {
  require_points(ys, 2, "delta1");
  double s = 0.0;
  for (std::size_t i = 1; i < ys.size(); ++i) s += std::abs(ys[i] - ys[i - 1]);
  return s / static_cast<double>(ys.size() - 1);
}

double delta2(std::span<const double> ys) {
  require_points(ys, 3, "delta2");
  double s = 0.0;
  for (std::size_t i = 1; i + 1 < ys.size(); ++i) s += std::abs((ys[i + 1] - ys[i]) - (ys[i] - ys[i - 1]));
  return s / static_cast<double>(ys.size() - 2);
}

double expressiveness(std::span<const double> ys) {
  require_points(ys, 2, "expressiveness");
  const auto [lo, hi] = std::minmax_element(ys.begin(), ys.end());
  return *hi - *lo;
}

MetricsReport evaluate_values(std::span<const double> xs, std::span<const double> ys, double alpha) {
  MetricsReport r;
  r.alpha_used = alpha;
  r.ndcg = ndcg_soft(ys, alpha);
  const SpearmanResult s = spearman(xs, ys);
  r.spearman_rho = s.rho;
  r.spearman_degenerate = s.degenerate;
  r.delta1 = delta1(ys);
  if (ys.size() >= 3) r.delta2 = delta2(ys);
  r.expressiveness = expressiveness(ys);
  return r;
}

MetricsReport evaluate_curve(const ControlCurve& curve, double alpha) {
  curve.validate();
  const std::vector<double> xs = curve.coefficients();
  const std::vector<double> ys = curve.values();
  return evaluate_values(xs, ys, alpha);
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"ndcg", r.ndcg},
          {"spearman_rho", r.spearman_rho},
          {"spearman_degenerate", r.spearman_degenerate},
          {"delta1", r.delta1},
          {"delta2", optional_json(r.delta2)},
          {"expressiveness", r.expressiveness},
          {"alpha_used", r.alpha_used}};
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.ndcg = j.at("ndcg").get<double>();
  r.spearman_rho = j.at("spearman_rho").get<double>();
  r.spearman_degenerate = j.value("spearman_degenerate", false);
  r.delta1 = j.at("delta1").get<double>();
  if (!j.at("delta2").is_null()) r.delta2 = j.at("delta2").get<double>();
  r.expressiveness = j.at("expressiveness").get<double>();
  r.alpha_used = j.at("alpha_used").get<double>();
  return r;
}

TransferReport transfer_report(const ControlCurve& source, const ControlCurve& target) {
  source.validate();
  target.validate();
  if (source.coefficients() != target.coefficients()) {
    throw ValidationError("transfer report needs both curves on the same coefficient grid");
  }
  TransferReport t;
  t.coefficients = source.coefficients();
  t.source_cbi = source.values();
  t.target_cbi = target.values();
  const auto r = pearson(t.source_cbi, t.target_cbi);
  if (!r) {
    t.degenerate = true;
    return t;
  }
  t.pearson_r = *r;
  const double n = static_cast<double>(t.source_cbi.size());
  const double mx = std::accumulate(t.source_cbi.begin(), t.source_cbi.end(), 0.0) / n;
  const double my = std::accumulate(t.target_cbi.begin(), t.target_cbi.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < t.source_cbi.size(); ++i) {
    sxy += (t.source_cbi[i] - mx) * (t.target_cbi[i] - my);
    sxx += (t.source_cbi[i] - mx) * (t.source_cbi[i] - mx);
  }
  t.slope = sxy / sxx;
  t.intercept = my - t.slope * mx;
  return t;
}

nlohmann::json to_json(const TransferReport& t) {
  return {{"coefficients", t.coefficients}, {"source_cbi", t.source_cbi}, {"target_cbi", t.target_cbi},
          {"pearson_r", t.pearson_r},       {"degenerate", t.degenerate}, {"slope", t.slope},
          {"intercept", t.intercept}};
}

double interpolate(std::span<const double> xs, std::span<const double> ys, double x) {
  if (xs.size() != ys.size() || xs.empty()) throw ValidationError("interpolate: bad curve");
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - xs.begin()) - 1;
  const double t = (x - xs[i]) / (xs[i + 1] - xs[i]);
  return ys[i] + t * (ys[i + 1] - ys[i]);
}

std::optional<double> invert_curve(std::span<const double> xs, std::span<const double> ys, double y) {
  if (xs.size() != ys.size() || xs.empty()) throw ValidationError("invert_curve: bad curve");
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (ys[i] == y) return xs[i];
    if (i + 1 < ys.size()) {
      const double a = ys[i], b = ys[i + 1];
      if ((a < y && y < b) || (b < y && y < a)) return xs[i] + (y - a) / (b - a) * (xs[i + 1] - xs[i]);
    }
  }
  return std::nullopt;
}

void add_controlled_gap(GapCurve& gap, const std::string& condition, const std::vector<ModelGapData>& models) {
  if (models.size() < 2) throw ValidationError("a gap curve needs at least 2 models");
  std::vector<std::optional<double>> spreads;
  for (double g : gap.cbi_grid) {
    std::vector<double> at_target;
    for (const auto& m : models) {
      m.calibration.validate();
      m.target.validate();
      const std::vector<double> cx = m.calibration.coefficients();
      const std::vector<double> cy = m.calibration.values();
      const auto lambda = invert_curve(cx, cy, g);
      if (!lambda) {
        gap.notes.push_back(condition + ": CBI " + std::to_string(g) + " outside the range reached by " + m.model_id +
                            "; skipped");
        continue;
      }
      const std::vector<double> tx = m.target.coefficients();
      const std::vector<double> ty = m.target.values();
      at_target.push_back(interpolate(tx, ty, *lambda));
    }
    if (at_target.size() < 2) {
      spreads.push_back(std::nullopt);
    } else {
      const auto [lo, hi] = std::minmax_element(at_target.begin(), at_target.end());
      spreads.push_back(*hi - *lo);
    }
  }
  gap.spreads[condition] = std::move(spreads);
}

void add_baseline_gap(GapCurve& gap, const std::string& condition, const std::vector<double>& target_cbi_per_model) {
  if (target_cbi_per_model.size() < 2) throw ValidationError("a gap curve needs at least 2 models");
  const auto [lo, hi] = std::minmax_element(target_cbi_per_model.begin(), target_cbi_per_model.end());
  gap.spreads[condition] = std::vector<std::optional<double>>(gap.cbi_grid.size(), *hi - *lo);
}

GapCurve gap_curve(const std::vector<ModelGapData>& models, const std::vector<double>& cbi_grid,
                   const std::string& condition) {
  GapCurve gap;
  gap.cbi_grid = cbi_grid;
  add_controlled_gap(gap, condition, models);
  return gap;
}

nlohmann::json to_json(const GapCurve& gap) {
  nlohmann::json spreads = nlohmann::json::object();
  for (const auto& [name, values] : gap.spreads) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : values) arr.push_back(optional_json(v));
    spreads[name] = std::move(arr);
  }
  return {{"cbi_grid", gap.cbi_grid}, {"spreads", spreads}, {"notes", gap.notes}};
}

}  // namespace cobra
