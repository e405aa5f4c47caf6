#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hidformer/data.hpp"
#include "hidformer/model.hpp"
#include "hidformer/tensor.hpp"

namespace hidformer::training {

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  std::size_t epochs = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  std::uint64_t seed = 1;
  // Chronological tail of the training windows used only to pick the best
  // epoch.
  double selection_fraction = 0.1;

  void validate() const;
};

/// Horizon weights t_y, t_y-1, ..., 1.
std::vector<double> horizon_weights(std::size_t t_y);

/// sum_h w_h (pred_h - target_h)^2 / sum_h w_h with w = horizon_weights.
Tensor weighted_mse(const Tensor& pred, const Tensor& target);
double weighted_mse(std::span<const double> pred, std::span<const double> target);

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer_state(const model::ModelParams& params);

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// Throws NumericError naming the parameter if any gradient is non-finite;
/// nothing is modified in that case.
void adam_step(model::ModelParams& params, OptimizerState& state, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double selection_loss = 0.0;
};

struct TrainResult {
  model::ModelParams best;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
};

/// Number of trailing windows held out for best-model selection.
std::size_t selection_count(std::size_t windows, double fraction);

/// Seeded mini-batch training. Each epoch shuffles the non-selection windows,
/// steps Adam once per batch (last partial batch kept), then scores the
/// selection windows. Returns the parameters from the epoch with the lowest
/// selection loss (earliest on ties). When the selection tail would be empty
/// the training windows themselves are scored.
TrainResult train(const data::WindowedDataset& dataset, const model::HidformerConfig& model_cfg,
                  const TrainConfig& cfg);

/// Mean weighted MSE of the model over every window in `dataset`.
double dataset_loss(const data::WindowedDataset& dataset, std::size_t begin, std::size_t end,
                    const model::ModelParams& params, const model::HidformerConfig& cfg);

/// CSV `epoch,train_loss,selection_loss`.
void write_history_csv(const std::vector<EpochRecord>& history,
                       const std::filesystem::path& path);

}  // namespace hidformer::training
