#include "hidformer/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hidformer/data.hpp"
#include "hidformer/error.hpp"

namespace hidformer::evaluation {

namespace {

constexpr const char* kModule = "evaluation";

double sample_std(std::span<const double> values, double mean) {
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / static_cast<double>(values.size() - 1));
}

double mean_of(std::span<const double> values) {
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

// Two-sided exact p-value. Ranks are doubled midranks so every rank sum is
// an integer; count[k][s] is the number of k-subsets of the pooled sample
// whose doubled rank sum is s.
double exact_p_value(std::span<const double> a, std::span<const double> b, double u_a) {
  const auto na = a.size(), nb = b.size();
  const auto n = na + nb;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  std::vector<std::size_t> doubled_rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pooled[j] == pooled[i]) ++j;
    for (std::size_t k = i; k < j; ++k) doubled_rank[k] = i + j + 1;  // 2 * midrank
    i = j;
  }
  // U is symmetric in the group labels, so enumerate the smaller group.
  const auto k_max = std::min(na, nb);
  const auto max_sum = std::accumulate(doubled_rank.begin(), doubled_rank.end(), std::size_t{0});
  std::vector<std::vector<long double>> count(k_max + 1,
                                              std::vector<long double>(max_sum + 1, 0.0L));
  count[0][0] = 1.0L;
  std::size_t reach = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = doubled_rank[i];
    reach += r;
    for (std::size_t k = std::min(k_max, i + 1); k >= 1; --k) {
      for (std::size_t s = reach; s >= r; --s) {
        count[k][s] += count[k - 1][s - r];
        if (s == r) break;
      }
    }
  }
  const double centre = static_cast<double>(na * nb) / 2.0;
  const double observed = std::abs(u_a - centre);
  const double k_term = static_cast<double>(k_max * (k_max + 1));
  long double extreme = 0.0L, total = 0.0L;
  for (std::size_t s = 0; s <= max_sum; ++s) {
    if (count[k_max][s] == 0.0L) continue;
    const double u = (static_cast<double>(s) - k_term) / 2.0;
    total += count[k_max][s];
    if (std::abs(u - centre) >= observed - 1e-9) extreme += count[k_max][s];
  }
  return std::min(1.0, static_cast<double>(extreme / total));
}

double normal_p_value(std::span<const double> a, std::span<const double> b, double u_a) {
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double n = na + nb;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j] == pooled[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double variance = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (!(variance > 0.0)) return 1.0;
  const double z = std::max(0.0, std::abs(u_a - na * nb / 2.0) - 0.5) / std::sqrt(variance);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

}  // namespace

AccuracyMetrics accuracy(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw ContractError(kModule, "accuracy expects equal nonzero lengths");
  }
  AccuracyMetrics m;
  double ape = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    m.mae += std::abs(e);
    m.mse += e * e;
    if (truth[i] == 0.0) {
      ++m.zero_truth_points;
    } else {
      ape += std::abs(e) / std::abs(truth[i]);
    }
  }
  const double n = static_cast<double>(pred.size());
  m.mae /= n;
  m.mse /= n;
  if (m.zero_truth_points == 0) m.mape = 100.0 * ape / n;
  return m;
}

int direction(double predicted_next, double latest_close) {
  return predicted_next > latest_close ? 1 : -1;
}

std::vector<double> strategy_returns(std::span<const double> closes,
                                     std::span<const double> predicted_next) {
  if (closes.size() < 2) throw ContractError(kModule, "strategy_returns needs at least 2 closes");
  if (predicted_next.size() != closes.size() - 1) {
    throw ContractError(kModule, "expected one prediction per step after the first close");
  }
  for (double y : closes) {
    if (!(y > 0.0)) throw DataError(kModule, "closes must be positive for log returns");
  }
  std::vector<double> out(predicted_next.size());
  for (std::size_t t = 0; t + 1 < closes.size(); ++t) {
    out[t] = std::log(closes[t + 1] / closes[t]) * direction(predicted_next[t], closes[t]);
  }
  return out;
}

std::vector<double> net_value(std::span<const double> returns) {
  if (returns.empty()) throw ContractError(kModule, "net_value needs at least one return");
  std::vector<double> nv(returns.size());
  double acc = 1.0;
  for (std::size_t i = 0; i < returns.size(); ++i) {
    acc += returns[i];
    nv[i] = acc;
  }
  return nv;
}

RiskMetrics risk_metrics(std::span<const double> returns, std::span<const double> net_value) {
  RiskMetrics r;
  if (returns.size() >= 2) {
    const double mean = mean_of(returns);
    const double sd = sample_std(returns, mean);
    const double annual = std::sqrt(kTradingDaysPerYear);
    r.volatility = sd * annual;
    if (sd > 0.0) r.sharpe = mean / sd * annual;
  }
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : net_value) {
    peak = std::max(peak, v);
    // A nonpositive running peak leaves the fractional drawdown undefined.
    if (peak > 0.0) r.max_drawdown = std::max(r.max_drawdown, (peak - v) / peak);
  }
  return r;
}

BacktestReport backtest(std::span<const double> closes, std::span<const double> predicted_next) {
  BacktestReport report;
  report.returns = strategy_returns(closes, predicted_next);
  report.directions.reserve(predicted_next.size());
  for (std::size_t t = 0; t < predicted_next.size(); ++t) {
    report.directions.push_back(direction(predicted_next[t], closes[t]));
  }
  report.net_value = net_value(report.returns);
  report.final_net_value = report.net_value.back();
  report.risk = risk_metrics(report.returns, report.net_value);
  return report;
}

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                                 PValueMethod method) {
  if (a.empty() || b.empty()) throw ContractError(kModule, "Mann-Whitney U needs nonempty samples");
  MannWhitneyResult r;
  for (double x : a) {
    for (double y : b) {
      if (x > y) r.u_a += 1.0;
      else if (x == y) r.u_a += 0.5;
    }
  }
  r.u_b = static_cast<double>(a.size() * b.size()) - r.u_a;
  r.exact = method == PValueMethod::kExact ||
            (method == PValueMethod::kAuto && a.size() * b.size() <= 400);
  r.p_value = r.exact ? exact_p_value(a, b, r.u_a) : normal_p_value(a, b, r.u_a);
  return r;
}

std::vector<double> persistence_baseline(std::span<const double> window, std::size_t t_x,
                                         std::size_t t_y) {
  if (t_x == 0 || window.size() != t_x * data::kNumChannels) {
    throw ContractError(kModule, "persistence baseline expects a t_x x 6 window");
  }
  return std::vector<double>(t_y, window[(t_x - 1) * data::kNumChannels + data::kClose]);
}

RunAggregate aggregate_runs(std::span<const double> values) {
  if (values.empty()) throw ContractError(kModule, "aggregate_runs needs at least one run");
  RunAggregate agg;
  agg.runs = values.size();
  agg.mean = mean_of(values);
  if (values.size() == 1) {
    agg.single_run = true;
    return agg;
  }
  agg.standard_error = sample_std(values, agg.mean) / std::sqrt(static_cast<double>(values.size()));
  return agg;
}

}  // namespace hidformer::evaluation
