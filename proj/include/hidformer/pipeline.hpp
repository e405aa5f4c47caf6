#pragma once

// End-to-end glue: split a series per a RunConfig, train, predict the
// validation windows and assemble accuracy/backtest reports.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hidformer/config.hpp"
#include "hidformer/data.hpp"
#include "hidformer/evaluation.hpp"
#include "hidformer/model.hpp"
#include "hidformer/training.hpp"

namespace hidformer::pipeline {

struct PreparedData {
  data::PriceSeries series;
  std::size_t train_bars = 0;
  data::NormalizationStats stats;
  data::WindowedDataset train;
  data::WindowedDataset val;
};

/// Chronological split, normalization stats (training range or whole series
/// per stats_scope) and moving windows for both sides.
PreparedData prepare(const data::PriceSeries& series, const RunConfig& cfg);

/// One validation window per row, t_y normalized predictions each.
using Predictions = std::vector<std::vector<double>>;

Predictions predict(const data::WindowedDataset& windows, const model::ModelParams& params,
                    const model::HidformerConfig& cfg);
Predictions persistence_predictions(const data::WindowedDataset& windows);

struct BacktestInputs {
  std::vector<std::string> dates;     // date of each y_{t+1}
  std::vector<double> closes;         // raw y_1..y_n
  std::vector<double> predicted_next; // raw yhat_2..yhat_n
};

/// Uses the first horizon step of every validation window as the next-day
/// prediction. `oracle` substitutes the true next close.
BacktestInputs backtest_inputs(const PreparedData& prepared, const Predictions& predictions,
                               bool oracle = false);

struct RunMetrics {
  evaluation::AccuracyMetrics accuracy;
  evaluation::BacktestReport backtest;
};

RunMetrics evaluate(const PreparedData& prepared, const Predictions& predictions,
                    MetricsScale scale, bool oracle = false);

// ---------------------------------------------------------------------------
// File exports

/// `window_id,horizon_step,truth,pred` (horizon_step is 1-based).
void write_predictions_csv(const data::WindowedDataset& windows, const Predictions& predictions,
                           const std::filesystem::path& path);

struct PredictionDump {
  std::vector<double> truth;
  std::vector<double> pred;
};
PredictionDump read_predictions_csv(const std::filesystem::path& path);

void write_backtest_csv(const BacktestInputs& inputs, const evaluation::BacktestReport& report,
                        const std::filesystem::path& path);

struct MetricsRow {
  std::string symbol;
  std::string run;
  std::uint64_t seed = 0;
  RunMetrics metrics;
};

std::string metrics_header();
std::string metrics_line(const MetricsRow& row);

/// "NA" for an undefined value, otherwise 17 significant digits.
std::string format_optional(const std::optional<double>& value);

std::string summary_line(const evaluation::BacktestReport& report);

}  // namespace hidformer::pipeline
