#pragma once

// On-disk formats shared by the engine, the CLI and the fixture exporter.
//
// FSAT tensor file (all integers little-endian):
//   offset 0   magic   "FSAT"
//          4   u32     version = 1
//          8   u32     dtype   (0 = float32 LE)
//         12   u32     ndim
//         16   u64[ndim] dims
//          …   payload, product(dims) float32 values, row-major
//
// Run configuration: UTF-8 text, one `key = value` per line, `#` comments.
// Metrics report: same syntax, one metric per line, fixed key order.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fsa/attention_head.hpp"
#include "fsa/feedback.hpp"
#include "fsa/matrix.hpp"

namespace fsa::io {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 0;

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Shortest decimal form that parses back to the same double.
std::string format_number(double v);

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const Tensor& t);

// 1-D tensors load as a single row; higher ranks are rejected.
Matrix read_matrix(const std::filesystem::path& path);
void write_matrix(const std::filesystem::path& path, const Matrix& m);

SegmentationMap read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const SegmentationMap& labels);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

struct RunConfig {
  std::filesystem::path tokens;
  std::filesystem::path text;
  std::filesystem::path weights_dir;
  std::optional<std::filesystem::path> external_attention;
  std::optional<std::filesystem::path> labels;  // ground truth for mIoU
  std::filesystem::path output_dir = "out";

  AttentionMode attention_mode = AttentionMode::QK;
  std::optional<double> tau;  // unset means sqrt(v)
  bool use_residual = false;
  bool use_ffn = false;

  FeedbackConfig feedback;

  std::optional<std::size_t> ignore_index;
  bool timing = false;
};

// Keys accepted in a run configuration, in the order format_config emits them.
const std::vector<std::string>& config_keys();

// Relative paths are resolved against `base_dir`.
void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value,
                        const std::filesystem::path& base_dir = {});
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig read_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& cfg);

struct MetricsReport {
  using Series = std::vector<std::pair<std::string, double>>;

  // Keyed by k.
  std::vector<std::pair<std::size_t, double>> retention_init;
  std::vector<std::pair<std::size_t, double>> retention_adapted;
  // Initial attention scored against the adapted segmentation.
  std::vector<std::pair<std::size_t, double>> retention_init_attention_adapted_map;
  Series stage_retention_init;
  Series stage_retention_adapted;
  std::optional<double> miou_init;
  std::optional<double> miou_adapted;
  std::optional<double> mean_kept_fraction;
  Series timing_ms;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

std::string format_metrics(const MetricsReport& report);
MetricsReport parse_metrics(std::string_view text);
void write_metrics(const std::filesystem::path& path, const MetricsReport& report);
MetricsReport read_metrics(const std::filesystem::path& path);

}  // namespace fsa::io
