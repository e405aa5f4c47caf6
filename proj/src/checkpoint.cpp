#include "hidformer/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <sstream>

#include "hidformer/error.hpp"
#include "hidformer/io.hpp"

namespace hidformer::training {

namespace {

constexpr const char* kModule = "checkpoint";

static_assert(std::endian::native == std::endian::little,
              "weights.bin is written in native byte order");

std::string shape_text(const Shape& shape) {
  if (shape.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

std::size_t parse_size(std::string_view s, const std::string& what) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw CorruptionError(kModule, "malformed " + what + " '" + std::string(s) + "'");
  }
  return out;
}

const char* kModelKeys[] = {"t_x", "t_y", "n_t", "n_e", "n_b", "n_d",
                            "d_ff", "merge_factor", "segment_overlap"};

}  // namespace

void save_checkpoint(const model::ModelParams& params, const RunConfig& config,
                     const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(kModule, "cannot create " + dir.string() + ": " + ec.message());

  std::ostringstream manifest;
  std::string weights;
  weights.reserve(params.total_values() * sizeof(double));
  for (const auto& e : params.entries()) {
    manifest << e.name << ' ' << shape_text(e.tensor.shape()) << " dtype=f64 " << weights.size()
             << '\n';
    for (double v : e.tensor.data()) {
      char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      weights.append(bytes, sizeof bytes);
    }
  }
  io::write_text_file(dir / "config.txt", config.to_text(), kModule);
  io::write_text_file(dir / "manifest.txt", manifest.str(), kModule);
  io::write_text_file(dir / "weights.bin", weights, kModule);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           const std::optional<RunConfig>& expected) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError(kModule, "checkpoint directory not found: " + dir.string());
  }
  Checkpoint ckpt;
  try {
    ckpt.config.apply_text(io::read_text_file(dir / "config.txt", kModule));
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    throw CorruptionError(kModule, std::string("config.txt: ") + e.what());
  }
  if (expected) {
    for (const char* key : kModelKeys) {
      if (expected->get(key) != ckpt.config.get(key)) {
        throw ConfigError(kModule, std::string("config mismatch on ") + key + ": checkpoint has " +
                                       ckpt.config.get(key) + ", requested " + expected->get(key));
      }
    }
  }

  const auto layout = model::param_layout(ckpt.config.model_config());
  const auto manifest = io::read_text_file(dir / "manifest.txt", kModule);
  const auto weights = io::read_text_file(dir / "weights.bin", kModule);

  std::istringstream lines(manifest);
  std::string line;
  std::size_t index = 0;
  std::size_t expected_offset = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string name, shape, dtype, offset_text, extra;
    if (!(fields >> name >> shape >> dtype >> offset_text) || (fields >> extra)) {
      throw CorruptionError(kModule, "malformed manifest line '" + line + "'");
    }
    if (index >= layout.size()) {
      throw CorruptionError(kModule, "manifest lists unexpected array " + name);
    }
    const auto& [want_name, want_shape] = layout[index];
    if (name != want_name) {
      throw CorruptionError(kModule, "manifest lists unknown or misplaced array " + name +
                                         " (expected " + want_name + ")");
    }
    if (shape != shape_text(want_shape)) {
      throw CorruptionError(kModule, "array " + name + " has shape " + shape + ", config implies " +
                                         shape_text(want_shape));
    }
    if (dtype != "dtype=f64") throw CorruptionError(kModule, "unsupported " + dtype + " for " + name);
    const auto offset = parse_size(offset_text, "byte offset");
    if (offset != expected_offset) {
      throw CorruptionError(kModule, "array " + name + " at offset " + offset_text +
                                         ", expected " + std::to_string(expected_offset));
    }
    const auto count = shape_numel(want_shape);
    const auto bytes = count * sizeof(double);
    if (offset + bytes > weights.size()) {
      throw CorruptionError(kModule, "weights.bin is truncated (array " + name + ")");
    }
    std::vector<double> values(count);
    std::memcpy(values.data(), weights.data() + offset, bytes);
    try {
      ckpt.params.add(name, Tensor::from(want_shape, std::move(values), true));
    } catch (const NumericError&) {
      throw CorruptionError(kModule, "array " + name + " holds non-finite values");
    }
    expected_offset += bytes;
    ++index;
  }
  if (index != layout.size()) {
    throw CorruptionError(kModule, "manifest lists " + std::to_string(index) + " arrays, expected " +
                                       std::to_string(layout.size()));
  }
  if (expected_offset != weights.size()) {
    throw CorruptionError(kModule, "weights.bin has " + std::to_string(weights.size()) +
                                       " bytes, manifest accounts for " +
                                       std::to_string(expected_offset));
  }
  return ckpt;
}

}  // namespace hidformer::training
