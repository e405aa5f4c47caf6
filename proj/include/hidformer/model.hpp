#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hidformer/tensor.hpp"

namespace hidformer::model {

/// Architecture hyperparameters. Defaults are the reference setup
/// (N_T=4, N_E=1, N_B=3, N_D=2, T_x=T_y=128).
struct HidformerConfig {
  std::size_t n_t = 4;           // tokens per window
  std::size_t n_e = 1;           // embedding width
  std::size_t n_b = 3;           // blocks per tower
  std::size_t n_d = 2;           // decoder layers
  std::size_t t_x = 128;         // input length
  std::size_t t_y = 128;         // horizon
  std::size_t d_ff = 4;          // feed-forward hidden width
  std::size_t merge_factor = 2;  // tokens fused per merge
  // Extra bars each segment reaches back into its predecessor; 0 gives
  // contiguous non-overlapping segments.
  std::size_t segment_overlap = 0;
  std::uint64_t seed = 1;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  std::size_t segment_length() const { return t_x / n_t; }
  std::size_t segment_span() const { return segment_length() + segment_overlap; }
  std::size_t time_features() const;
  std::size_t freq_features() const;
  std::size_t decoder_hidden() const;
  /// Token count after each block's merge, e.g. {2, 1, 1} for n_t=4, n_b=3.
  std::vector<std::size_t> block_token_counts() const;
  /// Length of one tower's concatenated block outputs.
  std::size_t tower_output_size() const;

  bool operator==(const HidformerConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// All learned arrays in a fixed enumeration order. The order is part of the
/// checkpoint format and aligns optimizer state.
class ModelParams {
 public:
  void add(std::string name, Tensor tensor);

  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t total_values() const;

  std::vector<NamedTensor>& entries() { return entries_; }
  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;

  /// Independent copy of every array (values only, gradients zeroed).
  ModelParams clone() const;
  void zero_grad();
  /// True when every array matches name, shape and bit pattern.
  bool identical_to(const ModelParams& other) const;

 private:
  std::vector<NamedTensor> entries_;
};

/// Expected names and shapes for a configuration, in enumeration order.
std::vector<std::pair<std::string, Shape>> param_layout(const HidformerConfig& cfg);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights from a seeded
/// mt19937_64, zero biases and shifts, unit layer-norm scales.
ModelParams init_params(const HidformerConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Building blocks

/// Splits a t_x x 6 row-major window into n_t segments of segment_span() x 6.
std::vector<Tensor> segment_tokens(std::span<const double> window, const HidformerConfig& cfg);

Tensor embed_time(const std::vector<Tensor>& segments, const Tensor& weight, const Tensor& bias);
Tensor embed_freq(const std::vector<Tensor>& segments, const Tensor& weight, const Tensor& bias);

struct AttentionWeights {
  Tensor query_w, query_b;
  Tensor key_w, key_b;
  Tensor value_w, value_b;
  Tensor output_w, output_b;
};

inline constexpr double kAttentionEps = 1e-8;

/// Causal kernelized attention via running sums S_t and z_t.
Tensor recursive_attention(const Tensor& tokens, const AttentionWeights& w);
/// Non-causal kernelized attention over all tokens.
Tensor linear_attention(const Tensor& tokens, const AttentionWeights& w);

/// Fuses adjacent groups of `factor` tokens; identity for one token.
Tensor merge_segments(const Tensor& tokens, const Tensor& weight, const Tensor& bias,
                      std::size_t factor);

enum class Tower { kTime, kFrequency };

struct BlockWeights {
  Tensor norm1_gamma, norm1_beta;
  AttentionWeights attention;
  Tensor norm2_gamma, norm2_beta;
  Tensor ff1_w, ff1_b, ff2_w, ff2_b;
  Tensor merge_w, merge_b;
};

std::vector<BlockWeights> tower_weights(const ModelParams& params, Tower tower,
                                        const HidformerConfig& cfg);

/// Runs n_b blocks and returns every block's merged tokens, flattened and
/// concatenated. `token_counts`, when given, receives each block's output
/// token count.
Tensor tower_forward(const Tensor& tokens, std::span<const BlockWeights> blocks, Tower tower,
                     std::size_t merge_factor, std::vector<std::size_t>* token_counts = nullptr);

struct ForwardTrace {
  std::vector<std::size_t> time_token_counts;
  std::vector<std::size_t> freq_token_counts;
  std::size_t decoder_input = 0;
};

/// One window (t_x x 6 normalized values, row-major) to t_y predicted
/// normalized closes.
Tensor forward(std::span<const double> window, const ModelParams& params,
               const HidformerConfig& cfg, ForwardTrace* trace = nullptr);

/// B windows to a B x t_y matrix (no gradient history).
Tensor forward_batch(const std::vector<std::vector<double>>& windows, const ModelParams& params,
                     const HidformerConfig& cfg);

}  // namespace hidformer::model
