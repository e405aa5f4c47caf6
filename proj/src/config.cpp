#include "hidformer/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "hidformer/error.hpp"
#include "hidformer/io.hpp"

namespace hidformer {

namespace {

constexpr const char* kModule = "config";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_integer(std::string_view key, std::string_view value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    throw ConfigError(kModule, "invalid integer for " + std::string(key) + ": '" +
                                   std::string(value) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view value) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty() ||
      !std::isfinite(out)) {
    throw ConfigError(kModule, "invalid number for " + std::string(key) + ": '" +
                                   std::string(value) + "'");
  }
  return out;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> kKeys = {
      "t_x",          "t_y",           "stride",         "n_t",
      "n_e",          "n_b",           "n_d",            "d_ff",
      "merge_factor", "segment_overlap", "batch_size",   "learning_rate",
      "epochs",       "split_fraction", "selection_fraction", "seed",
      "stats_scope",  "metrics_scale"};
  return kKeys;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  value = trim(value);
  auto size = [&](std::size_t& field) { field = parse_integer<std::size_t>(key, value); };
  if (key == "t_x") size(t_x);
  else if (key == "t_y") size(t_y);
  else if (key == "stride") size(stride);
  else if (key == "n_t") size(n_t);
  else if (key == "n_e") size(n_e);
  else if (key == "n_b") size(n_b);
  else if (key == "n_d") size(n_d);
  else if (key == "d_ff") size(d_ff);
  else if (key == "merge_factor") size(merge_factor);
  else if (key == "segment_overlap") size(segment_overlap);
  else if (key == "batch_size") size(batch_size);
  else if (key == "epochs") size(epochs);
  else if (key == "learning_rate") learning_rate = parse_real(key, value);
  else if (key == "split_fraction") split_fraction = parse_real(key, value);
  else if (key == "selection_fraction") selection_fraction = parse_real(key, value);
  else if (key == "seed") seed = parse_integer<std::uint64_t>(key, value);
  else if (key == "stats_scope") {
    if (value == "train") stats_scope = StatsScope::kTrain;
    else if (value == "all") stats_scope = StatsScope::kAll;
    else throw ConfigError(kModule, "stats_scope must be train or all");
  } else if (key == "metrics_scale") {
    if (value == "normalized") metrics_scale = MetricsScale::kNormalized;
    else if (value == "raw") metrics_scale = MetricsScale::kRaw;
    else throw ConfigError(kModule, "metrics_scale must be normalized or raw");
  } else {
    throw ConfigError(kModule, "unknown key '" + std::string(key) + "'");
  }
}

std::string RunConfig::get(std::string_view key) const {
  if (key == "t_x") return std::to_string(t_x);
  if (key == "t_y") return std::to_string(t_y);
  if (key == "stride") return std::to_string(stride);
  if (key == "n_t") return std::to_string(n_t);
  if (key == "n_e") return std::to_string(n_e);
  if (key == "n_b") return std::to_string(n_b);
  if (key == "n_d") return std::to_string(n_d);
  if (key == "d_ff") return std::to_string(d_ff);
  if (key == "merge_factor") return std::to_string(merge_factor);
  if (key == "segment_overlap") return std::to_string(segment_overlap);
  if (key == "batch_size") return std::to_string(batch_size);
  if (key == "epochs") return std::to_string(epochs);
  if (key == "learning_rate") return io::format_double(learning_rate);
  if (key == "split_fraction") return io::format_double(split_fraction);
  if (key == "selection_fraction") return io::format_double(selection_fraction);
  if (key == "seed") return std::to_string(seed);
  if (key == "stats_scope") return stats_scope == StatsScope::kTrain ? "train" : "all";
  if (key == "metrics_scale") return metrics_scale == MetricsScale::kNormalized ? "normalized" : "raw";
  throw ConfigError(kModule, "unknown key '" + std::string(key) + "'");
}

void RunConfig::apply_text(std::string_view text) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(kModule, "line " + std::to_string(line_no) + ": expected key=value");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  for (const auto& key : keys()) out << key << '=' << get(key) << '\n';
  return out.str();
}

void RunConfig::validate() const {
  model_config().validate();
  if (stride < 1) throw ConfigError(kModule, "stride must be at least 1");
  train_config().validate();
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw ConfigError(kModule, "split_fraction must lie strictly between 0 and 1");
  }
}

model::HidformerConfig RunConfig::model_config() const {
  model::HidformerConfig m;
  m.n_t = n_t;
  m.n_e = n_e;
  m.n_b = n_b;
  m.n_d = n_d;
  m.t_x = t_x;
  m.t_y = t_y;
  m.d_ff = d_ff;
  m.merge_factor = merge_factor;
  m.segment_overlap = segment_overlap;
  m.seed = seed;
  return m;
}

data::WindowConfig RunConfig::window_config() const { return {t_x, t_y, stride}; }

training::TrainConfig RunConfig::train_config() const {
  training::TrainConfig t;
  t.batch_size = batch_size;
  t.learning_rate = learning_rate;
  t.epochs = epochs;
  t.seed = seed;
  t.selection_fraction = selection_fraction;
  return t;
}

}  // namespace hidformer
