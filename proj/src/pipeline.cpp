#include "hidformer/pipeline.hpp"

#include <sstream>

#include "hidformer/error.hpp"
#include "hidformer/io.hpp"

namespace hidformer::pipeline {

namespace {

constexpr const char* kModule = "pipeline";

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

PreparedData prepare(const data::PriceSeries& series, const RunConfig& cfg) {
  cfg.validate();
  PreparedData out;
  out.series = series;
  const auto& bars = series.bars;
  out.train_bars = data::train_count(bars.size(), cfg.split_fraction);
  const auto split = data::split_train_val(bars, cfg.split_fraction);
  const auto window = cfg.window_config();
  const auto required = window.t_x + window.t_y;
  if (split.train.size() < required) {
    throw DataError("data", "insufficient data: training split has " +
                                std::to_string(split.train.size()) + " bars, need at least " +
                                std::to_string(required) + " (t_x + t_y)");
  }
  if (split.val.size() < window.t_y) {
    throw DataError("data", "insufficient data: validation split has " +
                                std::to_string(split.val.size()) + " bars, need at least t_y=" +
                                std::to_string(window.t_y));
  }
  const data::BarRange range{0, cfg.stats_scope == StatsScope::kAll ? bars.size()
                                                                     : out.train_bars};
  out.stats = data::compute_norm_stats(bars, range);
  out.train = data::make_windows(split.train, window, out.stats);
  // The backtest needs one window per validation day.
  out.val = data::make_validation_windows(split.train, split.val, {window.t_x, window.t_y, 1},
                                          out.stats);
  return out;
}

Predictions predict(const data::WindowedDataset& windows, const model::ModelParams& params,
                    const model::HidformerConfig& cfg) {
  Predictions out;
  out.reserve(windows.size());
  for (const auto& w : windows.inputs) out.push_back(model::forward(w, params, cfg).to_vector());
  return out;
}

Predictions persistence_predictions(const data::WindowedDataset& windows) {
  Predictions out;
  out.reserve(windows.size());
  for (const auto& w : windows.inputs) {
    out.push_back(evaluation::persistence_baseline(w, windows.t_x, windows.t_y));
  }
  return out;
}

BacktestInputs backtest_inputs(const PreparedData& prepared, const Predictions& predictions,
                               bool oracle) {
  const auto& val = prepared.val;
  if (predictions.size() != val.size() || val.empty()) {
    throw ContractError(kModule, "one prediction row per validation window is required");
  }
  const auto& bars = prepared.series.bars;
  BacktestInputs in;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto last = val.origin_indices[i] + val.t_x - 1;
    if (i == 0) in.closes.push_back(bars[last].close);
    const auto& next = bars[last + 1];
    in.closes.push_back(next.close);
    in.dates.push_back(data::format_date(next.date));
    in.predicted_next.push_back(
        oracle ? next.close
               : data::denormalize(predictions[i].at(0), data::Group::kPrice, prepared.stats));
  }
  return in;
}

RunMetrics evaluate(const PreparedData& prepared, const Predictions& predictions,
                    MetricsScale scale, bool oracle) {
  const auto& val = prepared.val;
  std::vector<double> pred, truth;
  for (std::size_t i = 0; i < val.size(); ++i) {
    for (std::size_t h = 0; h < val.t_y; ++h) {
      double p = oracle ? val.targets[i][h] : predictions.at(i).at(h);
      double y = val.targets[i][h];
      if (scale == MetricsScale::kRaw) {
        p = data::denormalize(p, data::Group::kPrice, prepared.stats);
        y = data::denormalize(y, data::Group::kPrice, prepared.stats);
      }
      pred.push_back(p);
      truth.push_back(y);
    }
  }
  RunMetrics m;
  m.accuracy = evaluation::accuracy(pred, truth);
  const auto inputs = backtest_inputs(prepared, predictions, oracle);
  m.backtest = evaluation::backtest(inputs.closes, inputs.predicted_next);
  return m;
}

// ---------------------------------------------------------------------------

void write_predictions_csv(const data::WindowedDataset& windows, const Predictions& predictions,
                           const std::filesystem::path& path) {
  std::ostringstream out;
  out << "window_id,horizon_step,truth,pred\n";
  for (std::size_t i = 0; i < windows.size(); ++i) {
    for (std::size_t h = 0; h < windows.t_y; ++h) {
      out << i << ',' << h + 1 << ',' << io::format_double(windows.targets[i][h]) << ','
          << io::format_double(predictions.at(i).at(h)) << '\n';
    }
  }
  io::write_text_file(path, out.str(), kModule);
}

PredictionDump read_predictions_csv(const std::filesystem::path& path) {
  const auto text = io::read_text_file(path, kModule);
  std::istringstream lines(text);
  std::string line;
  PredictionDump dump;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != "window_id,horizon_step,truth,pred") {
        throw DataError(kModule, "line 1: unexpected predictions header");
      }
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 4) {
      throw DataError(kModule, "line " + std::to_string(line_no) + ": expected 4 fields");
    }
    try {
      dump.truth.push_back(std::stod(std::string(fields[2])));
      dump.pred.push_back(std::stod(std::string(fields[3])));
    } catch (const std::exception&) {
      throw DataError(kModule, "line " + std::to_string(line_no) + ": unparsable number");
    }
  }
  return dump;
}

void write_backtest_csv(const BacktestInputs& inputs, const evaluation::BacktestReport& report,
                        const std::filesystem::path& path) {
  std::ostringstream out;
  out << "date,close,pred_next,direction,return,net_value\n";
  for (std::size_t t = 0; t < report.returns.size(); ++t) {
    out << inputs.dates[t] << ',' << io::format_double(inputs.closes[t + 1]) << ','
        << io::format_double(inputs.predicted_next[t]) << ',' << report.directions[t] << ','
        << io::format_double(report.returns[t]) << ',' << io::format_double(report.net_value[t])
        << '\n';
  }
  io::write_text_file(path, out.str(), kModule);
}

std::string format_optional(const std::optional<double>& value) {
  return value ? io::format_double(*value) : "NA";
}

std::string metrics_header() {
  return "symbol,run,seed,mae,mse,mape,final_net_value,volatility,max_drawdown,sharpe";
}

std::string metrics_line(const MetricsRow& row) {
  const auto& a = row.metrics.accuracy;
  const auto& b = row.metrics.backtest;
  std::ostringstream out;
  out << row.symbol << ',' << row.run << ',' << row.seed << ',' << io::format_double(a.mae) << ','
      << io::format_double(a.mse) << ',' << format_optional(a.mape) << ','
      << io::format_double(b.final_net_value) << ',' << format_optional(b.risk.volatility) << ','
      << io::format_double(b.risk.max_drawdown) << ',' << format_optional(b.risk.sharpe);
  return out.str();
}

std::string summary_line(const evaluation::BacktestReport& report) {
  return "final_net_value=" + io::format_double(report.final_net_value) +
         " sharpe=" + format_optional(report.risk.sharpe) +
         " max_drawdown=" + io::format_double(report.risk.max_drawdown) +
         " volatility=" + format_optional(report.risk.volatility);
}

}  // namespace hidformer::pipeline
