#include "hidformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hidformer/data.hpp"
#include "hidformer/error.hpp"

namespace hidformer::model {

namespace {

constexpr const char* kModule = "model";
constexpr double kLayerNormEps = 1e-5;

const char* tower_prefix(Tower tower) { return tower == Tower::kTime ? "time" : "freq"; }

std::string block_prefix(Tower tower, std::size_t block) {
  return std::string(tower_prefix(tower)) + ".block" + std::to_string(block) + ".";
}

// Uniform double in [0, 1) from the top 53 bits of one generator draw.
double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void HidformerConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(kModule, what); };
  if (t_x < 1 || t_y < 1) fail("t_x and t_y must be at least 1");
  if (n_t < 1) fail("n_t must be at least 1");
  if (t_x % n_t != 0) {
    fail("n_t=" + std::to_string(n_t) + " does not divide t_x=" + std::to_string(t_x));
  }
  if (n_e < 1) fail("n_e must be at least 1");
  if (n_b < 1) fail("n_b must be at least 1");
  if (n_d < 1) fail("n_d must be at least 1");
  if (d_ff < 1) fail("d_ff must be at least 1");
  if (merge_factor < 1) fail("merge_factor must be at least 1");
  if (segment_overlap >= t_x) fail("segment_overlap must be smaller than t_x");
}

std::size_t HidformerConfig::time_features() const {
  return segment_span() * data::kNumChannels;
}

std::size_t HidformerConfig::freq_features() const {
  return 2 * (segment_span() / 2 + 1) * data::kNumChannels;
}

std::size_t HidformerConfig::decoder_hidden() const {
  return std::max<std::size_t>(64, 2 * t_y);
}

std::vector<std::size_t> HidformerConfig::block_token_counts() const {
  std::vector<std::size_t> counts;
  std::size_t n = n_t;
  for (std::size_t b = 0; b < n_b; ++b) {
    if (n > 1) n = (n + merge_factor - 1) / merge_factor;
    counts.push_back(n);
  }
  return counts;
}

std::size_t HidformerConfig::tower_output_size() const {
  std::size_t total = 0;
  for (auto c : block_token_counts()) total += c * n_e;
  return total;
}

// ---------------------------------------------------------------------------
// Params

void ModelParams::add(std::string name, Tensor tensor) {
  if (contains(name)) throw ContractError(kModule, "duplicate parameter " + name);
  entries_.push_back({std::move(name), std::move(tensor)});
}

const Tensor& ModelParams::at(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw ContractError(kModule, "unknown parameter " + std::string(name));
}

bool ModelParams::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const NamedTensor& e) { return e.name == name; });
}

std::size_t ModelParams::total_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams copy;
  for (const auto& e : entries_) {
    copy.add(e.name, Tensor::from(e.tensor.shape(), e.tensor.to_vector(), true));
  }
  return copy;
}

void ModelParams::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

bool ModelParams::identical_to(const ModelParams& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.tensor.shape() != b.tensor.shape()) return false;
    auto ad = a.tensor.data(), bd = b.tensor.data();
    if (!std::equal(ad.begin(), ad.end(), bd.begin(), [](double x, double y) {
          return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
        })) {
      return false;
    }
  }
  return true;
}

std::vector<std::pair<std::string, Shape>> param_layout(const HidformerConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> layout;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    layout.emplace_back(name + ".weight", Shape{in, out});
    layout.emplace_back(name + ".bias", Shape{out});
  };
  auto norm = [&](const std::string& name, std::size_t d) {
    layout.emplace_back(name + ".gamma", Shape{d});
    layout.emplace_back(name + ".beta", Shape{d});
  };
  const auto e = cfg.n_e;
  for (Tower tower : {Tower::kTime, Tower::kFrequency}) {
    const auto features = tower == Tower::kTime ? cfg.time_features() : cfg.freq_features();
    linear(std::string(tower_prefix(tower)) + ".embed", features, e);
    for (std::size_t b = 0; b < cfg.n_b; ++b) {
      const auto p = block_prefix(tower, b);
      norm(p + "norm1", e);
      linear(p + "attn.query", e, e);
      linear(p + "attn.key", e, e);
      linear(p + "attn.value", e, e);
      linear(p + "attn.output", e, e);
      norm(p + "norm2", e);
      linear(p + "ff1", e, cfg.d_ff);
      linear(p + "ff2", cfg.d_ff, e);
      linear(p + "merge", cfg.merge_factor * e, e);
    }
  }
  const auto input = 2 * cfg.tower_output_size();
  const auto hidden = cfg.decoder_hidden();
  for (std::size_t l = 0; l < cfg.n_d; ++l) {
    const auto in = l == 0 ? input : hidden;
    const auto out = l + 1 == cfg.n_d ? cfg.t_y : hidden;
    linear("decoder.layer" + std::to_string(l), in, out);
  }
  return layout;
}

ModelParams init_params(const HidformerConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (auto& [name, shape] : param_layout(cfg)) {
    std::vector<double> values(shape_numel(shape), 0.0);
    if (name.ends_with(".weight")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (auto& v : values) v = bound * (2.0 * unit_uniform(rng) - 1.0);
    } else if (name.ends_with(".gamma")) {
      std::fill(values.begin(), values.end(), 1.0);
    }
    params.add(name, Tensor::from(shape, std::move(values), true));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Embedding

std::vector<Tensor> segment_tokens(std::span<const double> window, const HidformerConfig& cfg) {
  cfg.validate();
  constexpr auto C = data::kNumChannels;
  if (window.size() != cfg.t_x * C) {
    throw ContractError(kModule, "window holds " + std::to_string(window.size()) +
                                     " values, expected t_x*6=" + std::to_string(cfg.t_x * C));
  }
  const auto len = cfg.segment_length();
  const auto span = cfg.segment_span();
  std::vector<Tensor> segments;
  segments.reserve(cfg.n_t);
  for (std::size_t s = 0; s < cfg.n_t; ++s) {
    std::vector<double> values(span * C);
    const auto end = (s + 1) * len;  // exclusive
    for (std::size_t r = 0; r < span; ++r) {
      // Rows before the window start repeat the first bar.
      const auto offset = span - r;
      const auto bar = end >= offset ? end - offset : 0;
      std::copy_n(window.begin() + static_cast<std::ptrdiff_t>(bar * C), C,
                  values.begin() + static_cast<std::ptrdiff_t>(r * C));
    }
    segments.push_back(Tensor::from({span, C}, std::move(values)));
  }
  return segments;
}

Tensor embed_time(const std::vector<Tensor>& segments, const Tensor& weight, const Tensor& bias) {
  std::vector<Tensor> rows;
  rows.reserve(segments.size());
  for (const auto& s : segments) rows.push_back(reshape(s, {1, s.numel()}));
  return affine(concat_rows(rows), weight, bias);
}

Tensor embed_freq(const std::vector<Tensor>& segments, const Tensor& weight, const Tensor& bias) {
  std::vector<Tensor> rows;
  rows.reserve(segments.size());
  for (const auto& s : segments) {
    // Channels become rows so the transform runs along time.
    auto spectrum = rdft(transpose(s));
    rows.push_back(reshape(spectrum, {1, spectrum.numel()}));
  }
  return affine(concat_rows(rows), weight, bias);
}

// ---------------------------------------------------------------------------
// Attention

Tensor recursive_attention(const Tensor& tokens, const AttentionWeights& w) {
  const auto n = tokens.dim(0);
  if (n < 1) throw ContractError(kModule, "attention needs at least one token");
  const auto q = feature_map(affine(tokens, w.query_w, w.query_b));
  const auto k = feature_map(affine(tokens, w.key_w, w.key_b));
  const auto v = affine(tokens, w.value_w, w.value_b);
  Tensor state, norm;  // S_t (d x d) and z_t (d x 1)
  std::vector<Tensor> outputs;
  outputs.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto k_col = transpose(slice_rows(k, t, t + 1));
    const auto outer = matmul(k_col, slice_rows(v, t, t + 1));
    state = t == 0 ? outer : add(state, outer);
    norm = t == 0 ? k_col : add(norm, k_col);
    const auto q_row = slice_rows(q, t, t + 1);
    outputs.push_back(div_rows(matmul(q_row, state), matmul(q_row, norm), kAttentionEps));
  }
  return affine(concat_rows(outputs), w.output_w, w.output_b);
}

Tensor linear_attention(const Tensor& tokens, const AttentionWeights& w) {
  const auto n = tokens.dim(0);
  if (n < 1) throw ContractError(kModule, "attention needs at least one token");
  const auto q = feature_map(affine(tokens, w.query_w, w.query_b));
  const auto k = feature_map(affine(tokens, w.key_w, w.key_b));
  const auto v = affine(tokens, w.value_w, w.value_b);
  const auto k_t = transpose(k);
  const auto state = matmul(k_t, v);
  const auto norm = matmul(k_t, Tensor::full({n, 1}, 1.0));
  return affine(div_rows(matmul(q, state), matmul(q, norm), kAttentionEps), w.output_w,
                w.output_b);
}

Tensor merge_segments(const Tensor& tokens, const Tensor& weight, const Tensor& bias,
                      std::size_t factor) {
  const auto n = tokens.dim(0);
  const auto d = tokens.dim(1);
  if (n <= 1) return tokens;
  const auto groups = (n + factor - 1) / factor;
  const auto padded = groups * factor == n ? tokens : pad_rows(tokens, groups * factor - n);
  // Row-major layout makes each group of `factor` rows one concatenated row.
  return affine(reshape(padded, {groups, factor * d}), weight, bias);
}

// ---------------------------------------------------------------------------
// Towers and full model

std::vector<BlockWeights> tower_weights(const ModelParams& params, Tower tower,
                                        const HidformerConfig& cfg) {
  std::vector<BlockWeights> blocks;
  blocks.reserve(cfg.n_b);
  for (std::size_t b = 0; b < cfg.n_b; ++b) {
    const auto p = block_prefix(tower, b);
    auto get = [&](const std::string& suffix) { return params.at(p + suffix); };
    blocks.push_back(BlockWeights{
        get("norm1.gamma"), get("norm1.beta"),
        AttentionWeights{get("attn.query.weight"), get("attn.query.bias"),
                         get("attn.key.weight"), get("attn.key.bias"),
                         get("attn.value.weight"), get("attn.value.bias"),
                         get("attn.output.weight"), get("attn.output.bias")},
        get("norm2.gamma"), get("norm2.beta"),
        get("ff1.weight"), get("ff1.bias"), get("ff2.weight"), get("ff2.bias"),
        get("merge.weight"), get("merge.bias")});
  }
  return blocks;
}

Tensor tower_forward(const Tensor& tokens, std::span<const BlockWeights> blocks, Tower tower,
                     std::size_t merge_factor, std::vector<std::size_t>* token_counts) {
  Tensor x = tokens;
  std::vector<Tensor> outputs;
  outputs.reserve(blocks.size());
  for (const auto& blk : blocks) {
    auto h = layer_norm(x, blk.norm1_gamma, blk.norm1_beta, kLayerNormEps);
    auto attended = tower == Tower::kTime ? recursive_attention(h, blk.attention)
                                          : linear_attention(h, blk.attention);
    x = add(x, attended);
    h = layer_norm(x, blk.norm2_gamma, blk.norm2_beta, kLayerNormEps);
    x = add(x, affine(relu(affine(h, blk.ff1_w, blk.ff1_b)), blk.ff2_w, blk.ff2_b));
    x = merge_segments(x, blk.merge_w, blk.merge_b, merge_factor);
    if (token_counts) token_counts->push_back(x.dim(0));
    outputs.push_back(x);
  }
  return concat_flat(outputs);
}

Tensor forward(std::span<const double> window, const ModelParams& params,
               const HidformerConfig& cfg, ForwardTrace* trace) {
  const auto segments = segment_tokens(window, cfg);

  const auto time_tokens = embed_time(segments, params.at("time.embed.weight"),
                                      params.at("time.embed.bias"));
  const auto freq_tokens = embed_freq(segments, params.at("freq.embed.weight"),
                                      params.at("freq.embed.bias"));
  const auto time_blocks = tower_weights(params, Tower::kTime, cfg);
  const auto freq_blocks = tower_weights(params, Tower::kFrequency, cfg);
  const auto time_out = tower_forward(time_tokens, time_blocks, Tower::kTime, cfg.merge_factor,
                                      trace ? &trace->time_token_counts : nullptr);
  const auto freq_out = tower_forward(freq_tokens, freq_blocks, Tower::kFrequency,
                                      cfg.merge_factor,
                                      trace ? &trace->freq_token_counts : nullptr);

  Tensor z = concat_flat({time_out, freq_out});
  if (trace) trace->decoder_input = z.numel();
  for (std::size_t l = 0; l < cfg.n_d; ++l) {
    const auto prefix = "decoder.layer" + std::to_string(l);
    z = affine(z, params.at(prefix + ".weight"), params.at(prefix + ".bias"));
    if (l + 1 < cfg.n_d) z = relu(z);
  }
  return z;
}

Tensor forward_batch(const std::vector<std::vector<double>>& windows, const ModelParams& params,
                     const HidformerConfig& cfg) {
  std::vector<double> out;
  out.reserve(windows.size() * cfg.t_y);
  for (const auto& w : windows) {
    auto pred = forward(w, params, cfg);
    auto d = pred.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return Tensor::from({windows.size(), cfg.t_y}, std::move(out));
}

}  // namespace hidformer::model
