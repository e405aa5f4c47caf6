#include "hidformer/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hidformer/error.hpp"
#include "hidformer/io.hpp"

namespace hidformer::data {

namespace {

constexpr const char* kModule = "data";
constexpr std::string_view kHeader = "Date,Open,High,Low,Close,Adj Close,Volume";

std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::chrono::year_month_day parse_date(std::string_view s, std::size_t line) {
  int y = 0;
  unsigned m = 0, d = 0;
  auto bad = [&]() {
    return DataError(kModule, at_line(line) + "invalid date '" + std::string(s) +
                                  "' (expected YYYY-MM-DD)");
  };
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') throw bad();
  auto parse_part = [&](std::string_view part, auto& out) {
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    if (ec != std::errc() || ptr != part.data() + part.size()) throw bad();
  };
  parse_part(s.substr(0, 4), y);
  parse_part(s.substr(5, 2), m);
  parse_part(s.substr(8, 2), d);
  std::chrono::year_month_day date{std::chrono::year{y}, std::chrono::month{m},
                                   std::chrono::day{d}};
  if (!date.ok()) throw bad();
  return date;
}

double parse_number(std::string_view s, const char* column, std::size_t line) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty() || !std::isfinite(value)) {
    throw DataError(kModule, at_line(line) + "unparsable " + column + " value '" +
                                 std::string(s) + "'");
  }
  return value;
}

void validate_bar(const Bar& b, std::size_t line) {
  const double prices[] = {b.open, b.high, b.low, b.close, b.adj_close};
  for (double p : prices) {
    if (!(p > 0.0)) throw DataError(kModule, at_line(line) + "prices must be positive");
  }
  if (b.volume < 0.0) throw DataError(kModule, at_line(line) + "volume must be nonnegative");
  if (b.low > std::min(b.open, b.close) || b.high < std::max(b.open, b.close)) {
    throw DataError(kModule, at_line(line) + "high/low do not bracket open/close");
  }
}

std::string header_error(std::string_view got) {
  return "line 1: expected header '" + std::string(kHeader) + "', got '" + std::string(got) + "'";
}

}  // namespace

double Bar::channel(std::size_t c) const {
  switch (c) {
    case kOpen: return open;
    case kHigh: return high;
    case kLow: return low;
    case kClose: return close;
    case kAdjClose: return adj_close;
    case kVolume: return volume;
    default: throw ContractError(kModule, "channel index out of range");
  }
}

std::string format_date(std::chrono::year_month_day date) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
  return buf;
}

LoadResult parse_csv(std::string_view text, std::string symbol) {
  LoadResult result;
  result.series.symbol = std::move(symbol);
  std::vector<std::pair<Bar, std::size_t>> rows;  // bar, source line

  std::size_t line_no = 0;
  std::size_t start = 0;
  bool saw_header = false;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.remove_prefix(3);
    if (!saw_header) {
      if (line != kHeader) throw DataError(kModule, header_error(line));
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != kNumChannels + 1) {
      throw DataError(kModule, at_line(line_no) + "expected 7 fields, got " +
                                   std::to_string(fields.size()));
    }
    if (std::any_of(fields.begin(), fields.end(), [](auto f) { return f == "null"; })) {
      ++result.skipped_rows;
      continue;
    }
    Bar bar;
    bar.date = parse_date(fields[0], line_no);
    bar.open = parse_number(fields[1], "Open", line_no);
    bar.high = parse_number(fields[2], "High", line_no);
    bar.low = parse_number(fields[3], "Low", line_no);
    bar.close = parse_number(fields[4], "Close", line_no);
    bar.adj_close = parse_number(fields[5], "Adj Close", line_no);
    bar.volume = parse_number(fields[6], "Volume", line_no);
    validate_bar(bar, line_no);
    rows.emplace_back(bar, line_no);
    if (end == text.size()) break;
  }
  if (!saw_header) throw DataError(kModule, header_error(""));
  if (rows.empty()) throw DataError(kModule, "no usable rows");

  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.first.date < b.first.date; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].first.date == rows[i - 1].first.date) {
      throw DataError(kModule, at_line(rows[i].second) + "duplicate date " +
                                   format_date(rows[i].first.date));
    }
  }
  result.series.bars.reserve(rows.size());
  for (auto& r : rows) result.series.bars.push_back(r.first);
  if (result.skipped_rows > 0) {
    std::clog << "data: skipped " << result.skipped_rows << " row(s) containing null\n";
  }
  return result;
}

LoadResult load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(kModule, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), path.stem().string());
}

namespace {

void write_rows(const PriceSeries& series, std::ostream& out, std::size_t train_count,
                bool with_split) {
  out << kHeader << (with_split ? ",split" : "") << '\n';
  for (std::size_t i = 0; i < series.bars.size(); ++i) {
    const auto& b = series.bars[i];
    out << format_date(b.date);
    for (std::size_t c = 0; c < kNumChannels; ++c) out << ',' << io::format_double(b.channel(c));
    if (with_split) out << ',' << (i < train_count ? "train" : "val");
    out << '\n';
  }
}

}  // namespace

void write_csv(const PriceSeries& series, const std::filesystem::path& path) {
  std::ostringstream out;
  write_rows(series, out, 0, false);
  io::write_text_file(path, out.str(), kModule);
}

void write_dataset_csv(const PriceSeries& series, std::size_t train_count,
                       const std::filesystem::path& path) {
  std::ostringstream out;
  write_rows(series, out, train_count, true);
  io::write_text_file(path, out.str(), kModule);
}

// ---------------------------------------------------------------------------

NormalizationStats compute_norm_stats(std::span<const Bar> bars, BarRange range) {
  if (range.begin >= range.end || range.end > bars.size()) {
    throw ContractError(kModule, "normalization range is empty or out of bounds");
  }
  NormalizationStats s;
  s.price_min = s.vol_min = std::numeric_limits<double>::infinity();
  s.price_max = s.vol_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = range.begin; i < range.end; ++i) {
    const auto& b = bars[i];
    for (std::size_t c = kOpen; c <= kAdjClose; ++c) {
      s.price_min = std::min(s.price_min, b.channel(c));
      s.price_max = std::max(s.price_max, b.channel(c));
    }
    s.vol_min = std::min(s.vol_min, b.volume);
    s.vol_max = std::max(s.vol_max, b.volume);
  }
  if (!(s.price_max > s.price_min)) {
    throw DataError(kModule, "degenerate data: prices are constant over the normalization range");
  }
  if (!(s.vol_max > s.vol_min)) {
    throw DataError(kModule, "degenerate data: volume is constant over the normalization range");
  }
  return s;
}

double normalize(double x, Group group, const NormalizationStats& stats) {
  return group == Group::kPrice ? (x - stats.price_min) / (stats.price_max - stats.price_min)
                                : (x - stats.vol_min) / (stats.vol_max - stats.vol_min);
}

double denormalize(double x_hat, Group group, const NormalizationStats& stats) {
  return group == Group::kPrice ? x_hat * (stats.price_max - stats.price_min) + stats.price_min
                                : x_hat * (stats.vol_max - stats.vol_min) + stats.vol_min;
}

std::size_t train_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError(kModule, "split fraction must lie strictly between 0 and 1");
  }
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
}

Split split_train_val(std::span<const Bar> bars, double fraction) {
  const auto cut = train_count(bars.size(), fraction);
  return {{bars.begin(), bars.begin() + static_cast<std::ptrdiff_t>(cut)},
          {bars.begin() + static_cast<std::ptrdiff_t>(cut), bars.end()}};
}

double WindowedDataset::last_input_close(std::size_t i) const {
  return inputs.at(i)[(t_x - 1) * kNumChannels + kClose];
}

std::size_t window_count(std::size_t n_bars, const WindowConfig& cfg) {
  if (n_bars < cfg.t_x + cfg.t_y) return 0;
  return (n_bars - cfg.t_x - cfg.t_y) / cfg.stride + 1;
}

WindowedDataset make_windows(std::span<const Bar> bars, const WindowConfig& cfg,
                             const NormalizationStats& stats, std::size_t index_base) {
  if (cfg.t_x < 1 || cfg.t_y < 1 || cfg.stride < 1) {
    throw ConfigError(kModule, "t_x, t_y and stride must be at least 1");
  }
  const auto required = cfg.t_x + cfg.t_y;
  if (bars.size() < required) {
    throw DataError(kModule, "insufficient data: " + std::to_string(bars.size()) +
                                 " bars, need at least " + std::to_string(required) +
                                 " (t_x + t_y)");
  }
  WindowedDataset ds;
  ds.t_x = cfg.t_x;
  ds.t_y = cfg.t_y;
  const auto count = window_count(bars.size(), cfg);
  ds.inputs.reserve(count);
  ds.targets.reserve(count);
  ds.origin_indices.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    const auto s = w * cfg.stride;
    std::vector<double> input(cfg.t_x * kNumChannels);
    for (std::size_t t = 0; t < cfg.t_x; ++t) {
      const auto& b = bars[s + t];
      for (std::size_t c = 0; c < kNumChannels; ++c) {
        const auto group = c == kVolume ? Group::kVolume : Group::kPrice;
        input[t * kNumChannels + c] = normalize(b.channel(c), group, stats);
      }
    }
    std::vector<double> target(cfg.t_y);
    for (std::size_t h = 0; h < cfg.t_y; ++h) {
      target[h] = normalize(bars[s + cfg.t_x + h].close, Group::kPrice, stats);
    }
    ds.inputs.push_back(std::move(input));
    ds.targets.push_back(std::move(target));
    ds.origin_indices.push_back(index_base + s);
  }
  return ds;
}

WindowedDataset make_validation_windows(std::span<const Bar> train, std::span<const Bar> val,
                                        const WindowConfig& cfg,
                                        const NormalizationStats& stats) {
  const auto context = std::min(cfg.t_x, train.size());
  std::vector<Bar> joined(train.end() - static_cast<std::ptrdiff_t>(context), train.end());
  joined.insert(joined.end(), val.begin(), val.end());
  return make_windows(joined, cfg, stats, train.size() - context);
}

}  // namespace hidformer::data
