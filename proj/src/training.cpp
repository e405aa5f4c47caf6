#include "hidformer/training.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "hidformer/error.hpp"
#include "hidformer/io.hpp"

namespace hidformer::training {

namespace {

constexpr const char* kModule = "training";

// Unbiased index in [0, bound) by rejection; std::uniform_int_distribution
// is not specified bit-for-bit across standard libraries.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = 0;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[bounded(rng, i)]);
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError(kModule, "batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError(kModule, "learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError(kModule, "Adam betas must lie in [0, 1)");
  }
  if (!(eps_adam > 0.0)) throw ConfigError(kModule, "eps_adam must be positive");
  if (!(selection_fraction >= 0.0 && selection_fraction < 0.5)) {
    throw ConfigError(kModule, "selection_fraction must lie in [0, 0.5)");
  }
}

std::vector<double> horizon_weights(std::size_t t_y) {
  std::vector<double> w(t_y);
  for (std::size_t h = 0; h < t_y; ++h) w[h] = static_cast<double>(t_y - h);
  return w;
}

Tensor weighted_mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape() || pred.rank() != 1) {
    throw ContractError(kModule, "weighted_mse expects equal-length vectors, got " +
                                     shape_to_string(pred.shape()) + " and " +
                                     shape_to_string(target.shape()));
  }
  const auto t_y = pred.numel();
  const auto w = horizon_weights(t_y);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  const auto diff = sub(pred, target);
  const auto weighted = mul(mul(diff, diff), Tensor::from({t_y}, w));
  return scale(sum(weighted), 1.0 / total);
}

double weighted_mse(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) {
    throw ContractError(kModule, "weighted_mse expects equal nonzero lengths");
  }
  const auto w = horizon_weights(pred.size());
  double acc = 0.0, total = 0.0;
  for (std::size_t h = 0; h < pred.size(); ++h) {
    const double e = pred[h] - target[h];
    acc += w[h] * e * e;
    total += w[h];
  }
  return acc / total;
}

OptimizerState make_optimizer_state(const model::ModelParams& params) {
  OptimizerState state;
  for (const auto& e : params.entries()) {
    state.first_moment.emplace_back(e.tensor.numel(), 0.0);
    state.second_moment.emplace_back(e.tensor.numel(), 0.0);
  }
  return state;
}

void adam_step(model::ModelParams& params, OptimizerState& state, const TrainConfig& cfg) {
  auto& entries = params.entries();
  if (state.first_moment.size() != entries.size() || state.second_moment.size() != entries.size()) {
    throw ContractError(kModule, "optimizer state does not match the parameter list");
  }
  for (std::size_t p = 0; p < entries.size(); ++p) {
    if (state.first_moment[p].size() != entries[p].tensor.numel()) {
      throw ContractError(kModule, "optimizer moment shape mismatch for " + entries[p].name);
    }
    for (double g : entries[p].tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError(kModule, "non-finite gradient in parameter " + entries[p].name);
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto values = entries[p].tensor.mutable_data();
    auto grad = entries[p].tensor.grad();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps_adam);
    }
  }
}

std::size_t selection_count(std::size_t windows, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(windows)));
}

double dataset_loss(const data::WindowedDataset& dataset, std::size_t begin, std::size_t end,
                    const model::ModelParams& params, const model::HidformerConfig& cfg) {
  if (begin >= end) return 0.0;
  double total = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    auto pred = model::forward(dataset.inputs[i], params, cfg);
    total += weighted_mse(pred.data(), dataset.targets[i]);
  }
  return total / static_cast<double>(end - begin);
}

TrainResult train(const data::WindowedDataset& dataset, const model::HidformerConfig& model_cfg,
                  const TrainConfig& cfg) {
  cfg.validate();
  model_cfg.validate();
  if (dataset.empty()) throw DataError(kModule, "training dataset is empty");
  if (dataset.t_x != model_cfg.t_x || dataset.t_y != model_cfg.t_y) {
    throw ConfigError(kModule, "dataset windows do not match the model's t_x/t_y");
  }

  const auto n = dataset.size();
  const auto n_sel = selection_count(n, cfg.selection_fraction);
  const auto n_fit = n - n_sel;
  const auto sel_begin = n_sel == 0 ? std::size_t{0} : n_fit;

  TrainResult result;
  auto params = model::init_params(model_cfg, model_cfg.seed);
  result.best = params.clone();
  auto state = make_optimizer_state(params);
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);

  std::vector<std::size_t> order(n_fit);
  double best_loss = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n_fit; start += cfg.batch_size, ++batch_index) {
      const auto stop = std::min(n_fit, start + cfg.batch_size);
      params.zero_grad();
      double batch_loss = 0.0;
      try {
        std::vector<Tensor> losses;
        losses.reserve(stop - start);
        for (std::size_t j = start; j < stop; ++j) {
          const auto idx = order[j];
          auto pred = model::forward(dataset.inputs[idx], params, model_cfg);
          losses.push_back(weighted_mse(pred, Tensor::from({model_cfg.t_y}, dataset.targets[idx])));
        }
        auto loss = scale(sum(concat_flat(losses)), 1.0 / static_cast<double>(stop - start));
        batch_loss = loss.item();
        backward(loss);
        adam_step(params, state, cfg);
      } catch (const NumericError& e) {
        throw NumericError(kModule, "divergence at epoch " + std::to_string(epoch) + " batch " +
                                        std::to_string(batch_index) + " (" + e.what() + ")");
      }
      epoch_loss += batch_loss * static_cast<double>(stop - start);
    }

    double selection_loss = 0.0;
    try {
      selection_loss = dataset_loss(dataset, sel_begin, n, params, model_cfg);
    } catch (const NumericError& e) {
      throw NumericError(kModule, "divergence at epoch " + std::to_string(epoch) +
                                      " during selection (" + e.what() + ")");
    }
    result.history.push_back({epoch, epoch_loss / static_cast<double>(n_fit), selection_loss});
    if (selection_loss < best_loss) {
      best_loss = selection_loss;
      result.best = params.clone();
      result.best_epoch = epoch;
    }
  }
  return result;
}

void write_history_csv(const std::vector<EpochRecord>& history,
                       const std::filesystem::path& path) {
  std::ostringstream out;
  out << "epoch,train_loss,selection_loss\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << io::format_double(r.train_loss) << ','
        << io::format_double(r.selection_loss) << '\n';
  }
  io::write_text_file(path, out.str(), kModule);
}

}  // namespace hidformer::training
