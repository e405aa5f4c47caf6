#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hidformer::data {

/// Channel order used by every window, checkpoint and export.
enum Channel : std::size_t { kOpen = 0, kHigh, kLow, kClose, kAdjClose, kVolume };
inline constexpr std::size_t kNumChannels = 6;
inline constexpr std::array<const char*, kNumChannels> kChannelNames = {
    "Open", "High", "Low", "Close", "Adj Close", "Volume"};

struct Bar {
  std::chrono::year_month_day date;
  double open = 0.0;
  double high = 0.0;
  double low = 0.0;
  double close = 0.0;
  double adj_close = 0.0;
  double volume = 0.0;

  double channel(std::size_t c) const;
  bool operator==(const Bar&) const = default;
};

struct PriceSeries {
  std::string symbol;
  std::vector<Bar> bars;

  std::size_t size() const { return bars.size(); }
};

struct LoadResult {
  PriceSeries series;
  std::size_t skipped_rows = 0;  // rows containing a "null" field
};

/// Parses a Yahoo-export CSV (header Date,Open,High,Low,Close,Adj Close,Volume).
/// Rows with a "null" field are skipped and counted; the result is sorted by
/// date. The symbol defaults to the file stem.
LoadResult load_csv(const std::filesystem::path& path);
LoadResult parse_csv(std::string_view text, std::string symbol);

/// Writes the series in the input schema with 17 significant digits.
void write_csv(const PriceSeries& series, const std::filesystem::path& path);

/// Debug export: input schema plus a `split` column (train / val).
void write_dataset_csv(const PriceSeries& series, std::size_t train_count,
                       const std::filesystem::path& path);

std::string format_date(std::chrono::year_month_day date);

// ---------------------------------------------------------------------------
// Normalization

enum class Group { kPrice, kVolume };

/// Min/max of the five price channels (pooled) and of volume alone.
struct NormalizationStats {
  double price_min = 0.0;
  double price_max = 1.0;
  double vol_min = 0.0;
  double vol_max = 1.0;
};

/// Half-open bar index interval [begin, end).
struct BarRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

NormalizationStats compute_norm_stats(std::span<const Bar> bars, BarRange range);

double normalize(double x, Group group, const NormalizationStats& stats);
double denormalize(double x_hat, Group group, const NormalizationStats& stats);

// ---------------------------------------------------------------------------
// Splitting and windows

struct Split {
  std::vector<Bar> train;
  std::vector<Bar> val;
};

/// First floor(fraction * n) bars train, the rest validate. Order preserved.
Split split_train_val(std::span<const Bar> bars, double fraction);
std::size_t train_count(std::size_t n, double fraction);

struct WindowConfig {
  std::size_t t_x = 128;
  std::size_t t_y = 128;
  std::size_t stride = 1;
};

/// One flat t_x*6 row-major input matrix and t_y target closes per window.
struct WindowedDataset {
  std::size_t t_x = 0;
  std::size_t t_y = 0;
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> targets;
  std::vector<std::size_t> origin_indices;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
  /// Normalized close of the last input bar of window i.
  double last_input_close(std::size_t i) const;
};

std::size_t window_count(std::size_t n_bars, const WindowConfig& cfg);

/// Moving windows over `bars`. origin_indices are offset by `index_base` so
/// they can refer to positions in a larger series.
WindowedDataset make_windows(std::span<const Bar> bars, const WindowConfig& cfg,
                             const NormalizationStats& stats, std::size_t index_base = 0);

/// Validation windows over (last t_x training bars ++ validation bars); every
/// target lies in the validation period.
WindowedDataset make_validation_windows(std::span<const Bar> train, std::span<const Bar> val,
                                        const WindowConfig& cfg,
                                        const NormalizationStats& stats);

}  // namespace hidformer::data
