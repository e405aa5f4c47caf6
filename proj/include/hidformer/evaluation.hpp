#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace hidformer::evaluation {

struct AccuracyMetrics {
  double mae = 0.0;
  double mse = 0.0;
  // Percent. Empty when some truth value is zero.
  std::optional<double> mape;
  std::size_t zero_truth_points = 0;
};

/// MAE, MSE and MAPE (100 * mean |e| / |y|) over paired values.
AccuracyMetrics accuracy(std::span<const double> pred, std::span<const double> truth);

/// +1 (long) when the predicted next close exceeds the latest close,
/// otherwise -1 (short, including equality).
int direction(double predicted_next, double latest_close);

/// R_{t+1} = ln(y_{t+1} / y_t) * direction(yhat_{t+1}, y_t) for t = 1..n-1.
/// `closes` holds y_1..y_n; `predicted_next` holds yhat_2..yhat_n.
std::vector<double> strategy_returns(std::span<const double> closes,
                                     std::span<const double> predicted_next);

/// NV_t = 1 + cumulative sum of the returns (additive, not compounded).
std::vector<double> net_value(std::span<const double> returns);

inline constexpr double kTradingDaysPerYear = 252.0;

struct RiskMetrics {
  std::optional<double> volatility;  // annualized; needs >= 2 returns
  double max_drawdown = 0.0;
  std::optional<double> sharpe;  // annualized, zero risk-free rate
};

RiskMetrics risk_metrics(std::span<const double> returns, std::span<const double> net_value);

struct BacktestReport {
  std::vector<int> directions;
  std::vector<double> returns;
  std::vector<double> net_value;
  double final_net_value = 1.0;
  RiskMetrics risk;
};

BacktestReport backtest(std::span<const double> closes, std::span<const double> predicted_next);

enum class PValueMethod { kAuto, kExact, kNormal };

struct MannWhitneyResult {
  double u_a = 0.0;  // pairs with a > b, ties counted 1/2
  double u_b = 0.0;
  double p_value = 1.0;  // two-sided
  bool exact = false;
};

/// Exact permutation distribution when n_a * n_b <= 400 (kAuto), else the
/// normal approximation with tie and continuity corrections.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                                 PValueMethod method = PValueMethod::kAuto);

/// Last observed normalized close of a t_x x 6 window, repeated t_y times.
std::vector<double> persistence_baseline(std::span<const double> window, std::size_t t_x,
                                         std::size_t t_y);

struct RunAggregate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t runs = 0;
  bool single_run = false;
};

/// Mean and standard error (sample std / sqrt(k)); k == 1 gives SE 0.
RunAggregate aggregate_runs(std::span<const double> values);

}  // namespace hidformer::evaluation
