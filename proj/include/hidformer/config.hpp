#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hidformer/data.hpp"
#include "hidformer/model.hpp"
#include "hidformer/training.hpp"

namespace hidformer {

enum class StatsScope { kTrain, kAll };
enum class MetricsScale { kNormalized, kRaw };

/// Every key a run can be configured with. Serialized as flat `key=value`
/// lines in a fixed order; unknown keys are rejected.
struct RunConfig {
  std::size_t t_x = 128;
  std::size_t t_y = 128;
  std::size_t stride = 1;
  std::size_t n_t = 4;
  std::size_t n_e = 1;
  std::size_t n_b = 3;
  std::size_t n_d = 2;
  std::size_t d_ff = 4;
  std::size_t merge_factor = 2;
  std::size_t segment_overlap = 0;
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  std::size_t epochs = 100;
  double split_fraction = 0.95;
  double selection_fraction = 0.1;
  std::uint64_t seed = 1;
  StatsScope stats_scope = StatsScope::kTrain;
  MetricsScale metrics_scale = MetricsScale::kNormalized;

  static const std::vector<std::string>& keys();

  /// Assigns one key from its text form. Throws ConfigError for unknown keys
  /// and unparsable or out-of-range values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;

  /// Parses `key=value` lines; blank lines and lines starting with '#' are
  /// ignored.
  void apply_text(std::string_view text);
  std::string to_text() const;

  /// Throws ConfigError on any cross-field inconsistency.
  void validate() const;

  model::HidformerConfig model_config() const;
  data::WindowConfig window_config() const;
  training::TrainConfig train_config() const;

  bool operator==(const RunConfig&) const = default;
};

}  // namespace hidformer
