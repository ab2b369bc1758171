#include "fsa/io.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include "fsa/error.hpp"

namespace fsa::io {
namespace fs = std::filesystem;

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'S', 'A', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes_[pos_ + b]) << (8 * b);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(bytes_[pos_ + b]) << (8 * b);
    pos_ += 8;
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw Error(ErrorKind::Truncated, std::string("file ends inside ") + what);
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

[[noreturn]] void config_error(const std::string& key, const std::string& why) {
  throw Error(ErrorKind::Config, key + ": " + why);
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size() || !std::isfinite(out)) {
    config_error(key, "expected a number, got '" + value + "'");
  }
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) {
    config_error(key, "expected a nonnegative integer, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  config_error(key, "expected true or false, got '" + value + "'");
}

fs::path resolve(const fs::path& base, const std::string& value) {
  fs::path p(value);
  return p.is_relative() && !base.empty() ? base / p : p;
}

template <typename Parse>
auto parse_enum(const std::string& key, const std::string& value, Parse parse) {
  auto parsed = parse(value);
  if (!parsed) config_error(key, "unrecognized value '" + value + "'");
  return *parsed;
}

}  // namespace

std::string format_number(double v) { return format_double(v); }

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::uint64_t count = 1;
  for (auto d : t.dims) count *= d;
  if (t.dims.empty() || count != t.values.size()) {
    throw Error(ErrorKind::Shape, "tensor dims do not match value count");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + 8 * t.dims.size() + 4 * t.values.size());
  for (auto b : kMagic) out.push_back(b);
  put_u32(out, kFormatVersion);
  put_u32(out, kDtypeFloat32);
  put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put_u64(out, d);
  for (float v : t.values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "tensor holds a non-finite value");
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw Error(ErrorKind::BadMagic, "missing FSAT magic");
  }
  Reader in(bytes.subspan(4));
  const auto version = in.u32("header");
  if (version != kFormatVersion) {
    throw Error(ErrorKind::VersionMismatch,
                "unsupported FSAT version " + std::to_string(version));
  }
  const auto dtype = in.u32("header");
  if (dtype != kDtypeFloat32) {
    throw Error(ErrorKind::Io, "unsupported FSAT dtype code " + std::to_string(dtype));
  }
  const auto ndim = in.u32("header");
  if (ndim == 0) throw Error(ErrorKind::Io, "FSAT tensor has zero dimensions");

  Tensor t;
  for (std::uint32_t i = 0; i < ndim; ++i) t.dims.push_back(in.u64("dims"));
  const std::uint64_t max_count = in.remaining() / 4;
  std::uint64_t count = 1;
  bool overflow = false;
  for (auto d : t.dims) {
    if (d != 0 && count > max_count / d) {
      overflow = true;
      break;
    }
    count *= d;
  }
  if (overflow || count * 4 != in.remaining()) {
    throw Error(ErrorKind::Truncated,
                "payload holds " + std::to_string(in.remaining()) + " bytes, dims require " +
                    (overflow ? std::string("more") : std::to_string(count * 4)));
  }
  t.values.resize(count);
  for (auto& v : t.values) {
    v = std::bit_cast<float>(in.u32("payload"));
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "tensor holds a non-finite value");
  }
  return t;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (f.bad()) throw Error(ErrorKind::Io, "error reading " + path.string());
  return bytes;
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  static std::atomic<std::uint64_t> counter{0};
  const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(tid) + "." + std::to_string(counter++);
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) {
      std::error_code ignored;
      fs::remove(tmp, ignored);
      throw Error(ErrorKind::Io, "error writing " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    throw Error(ErrorKind::Io, "cannot rename onto " + path.string() + ": " + ec.message());
  }
}

void write_file_atomic(const fs::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Tensor read_tensor(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_tensor(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_tensor(const fs::path& path, const Tensor& t) {
  write_file_atomic(path, encode_tensor(t));
}

Matrix read_matrix(const fs::path& path) {
  Tensor t = read_tensor(path);
  if (t.dims.size() > 2) {
    throw Error(ErrorKind::Shape, path.string() + ": expected a 1-D or 2-D tensor");
  }
  const std::size_t rows = t.dims.size() == 2 ? t.dims[0] : 1;
  const std::size_t cols = t.dims.back();
  std::vector<double> data(t.values.begin(), t.values.end());
  return Matrix(rows, cols, std::move(data));
}

void write_matrix(const fs::path& path, const Matrix& m) {
  Tensor t;
  t.dims = {m.rows(), m.cols()};
  t.values.reserve(m.size());
  for (double v : m.data()) t.values.push_back(static_cast<float>(v));
  write_tensor(path, t);
}

SegmentationMap read_labels(const fs::path& path) {
  Tensor t = read_tensor(path);
  SegmentationMap out;
  out.reserve(t.values.size());
  for (float v : t.values) {
    if (v < 0.0f || v != std::floor(v) || v > 16777216.0f) {
      throw Error(ErrorKind::Validation, path.string() + ": label values must be nonnegative integers");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

void write_labels(const fs::path& path, const SegmentationMap& labels) {
  Tensor t;
  t.dims = {labels.size()};
  for (auto l : labels) t.values.push_back(static_cast<float>(l));
  write_tensor(path, t);
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "tokens",    "text",         "weights_dir", "external_attention", "labels",
      "output_dir", "attention_mode", "tau",      "use_residual",       "use_ffn",
      "lambda",    "p",            "similarity",  "pruning",            "ratio",
      "threshold", "scaling",      "strategy",    "iterations",         "ignore_index",
      "timing"};
  return keys;
}

void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value,
                        const fs::path& base_dir) {
  auto& fb = cfg.feedback;
  if (key == "tokens") cfg.tokens = resolve(base_dir, value);
  else if (key == "text") cfg.text = resolve(base_dir, value);
  else if (key == "weights_dir") cfg.weights_dir = resolve(base_dir, value);
  else if (key == "external_attention") cfg.external_attention = resolve(base_dir, value);
  else if (key == "labels") cfg.labels = resolve(base_dir, value);
  else if (key == "output_dir") cfg.output_dir = resolve(base_dir, value);
  else if (key == "attention_mode") cfg.attention_mode = parse_enum(key, value, parse_attention_mode);
  else if (key == "tau") {
    if (value == "auto") {
      cfg.tau.reset();
    } else {
      cfg.tau = parse_double(key, value);
      if (!(*cfg.tau > 0.0)) config_error(key, "must be positive");
    }
  } else if (key == "use_residual") cfg.use_residual = parse_bool(key, value);
  else if (key == "use_ffn") cfg.use_ffn = parse_bool(key, value);
  else if (key == "lambda") fb.lambda = parse_double(key, value);
  else if (key == "p") fb.p = parse_double(key, value);
  else if (key == "similarity") fb.similarity_metric = parse_enum(key, value, parse_similarity_metric);
  else if (key == "pruning") fb.pruning_mode = parse_enum(key, value, parse_pruning_mode);
  else if (key == "ratio") fb.ratio = parse_double(key, value);
  else if (key == "threshold") {
    if (value == "auto") fb.threshold.reset();
    else fb.threshold = parse_double(key, value);
  } else if (key == "scaling") fb.scaling_enabled = parse_bool(key, value);
  else if (key == "strategy") fb.adapt_strategy = parse_enum(key, value, parse_adapt_strategy);
  else if (key == "iterations") fb.iterations = parse_count(key, value);
  else if (key == "ignore_index") {
    if (value == "none") cfg.ignore_index.reset();
    else cfg.ignore_index = parse_count(key, value);
  } else if (key == "timing") cfg.timing = parse_bool(key, value);
  else config_error(key, "unknown configuration key");
  fb.validate();
}

RunConfig parse_config(std::string_view text, const fs::path& base_dir) {
  RunConfig cfg;
  std::istringstream lines{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(lines, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Config, "line " + std::to_string(number) + ": expected key = value");
    }
    apply_config_value(cfg, trim(std::string_view(body).substr(0, eq)),
                       trim(std::string_view(body).substr(eq + 1)), base_dir);
  }
  return cfg;
}

RunConfig read_config(const fs::path& path) {
  const auto bytes = read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                      path.parent_path());
}

std::string format_config(const RunConfig& cfg) {
  const auto& fb = cfg.feedback;
  std::ostringstream out;
  auto line = [&](const std::string& key, const std::string& value) {
    out << key << " = " << value << '\n';
  };
  auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
  line("tokens", cfg.tokens.string());
  line("text", cfg.text.string());
  line("weights_dir", cfg.weights_dir.string());
  if (cfg.external_attention) line("external_attention", cfg.external_attention->string());
  if (cfg.labels) line("labels", cfg.labels->string());
  line("output_dir", cfg.output_dir.string());
  line("attention_mode", to_string(cfg.attention_mode));
  line("tau", cfg.tau ? format_double(*cfg.tau) : "auto");
  line("use_residual", flag(cfg.use_residual));
  line("use_ffn", flag(cfg.use_ffn));
  line("lambda", format_double(fb.lambda));
  line("p", format_double(fb.p));
  line("similarity", to_string(fb.similarity_metric));
  line("pruning", to_string(fb.pruning_mode));
  line("ratio", format_double(fb.ratio));
  line("threshold", fb.threshold ? format_double(*fb.threshold) : "auto");
  line("scaling", flag(fb.scaling_enabled));
  line("strategy", to_string(fb.adapt_strategy));
  line("iterations", std::to_string(fb.iterations));
  line("ignore_index", cfg.ignore_index ? std::to_string(*cfg.ignore_index) : "none");
  line("timing", flag(cfg.timing));
  return out.str();
}

std::string format_metrics(const MetricsReport& r) {
  std::ostringstream out;
  out << "# fsa metrics report v1\n";
  auto line = [&](const std::string& key, double v) {
    out << key << " = " << format_double(v) << '\n';
  };
  auto by_k = [&](const std::string& prefix, const auto& series) {
    for (const auto& [k, v] : series) line(prefix + ".k" + std::to_string(k), v);
  };
  auto named = [&](const std::string& prefix, const MetricsReport::Series& series) {
    for (const auto& [name, v] : series) line(prefix + "." + name, v);
  };
  by_k("retention.init", r.retention_init);
  by_k("retention.adapted", r.retention_adapted);
  by_k("retention.init_attention_adapted_map", r.retention_init_attention_adapted_map);
  named("stage_retention.init", r.stage_retention_init);
  named("stage_retention.adapted", r.stage_retention_adapted);
  if (r.miou_init) line("miou.init", *r.miou_init);
  if (r.miou_adapted) line("miou.adapted", *r.miou_adapted);
  if (r.mean_kept_fraction) line("pruning.mean_kept_fraction", *r.mean_kept_fraction);
  named("timing_ms", r.timing_ms);
  return out.str();
}

MetricsReport parse_metrics(std::string_view text) {
  MetricsReport r;
  std::istringstream lines{std::string(text)};
  std::string line;
  while (std::getline(lines, line)) {
    const std::string body = trim(std::string_view(line).substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Config, "metrics: expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const double value = parse_double(key, trim(std::string_view(body).substr(eq + 1)));

    auto starts = [&](std::string_view prefix) { return key.rfind(prefix, 0) == 0; };
    auto suffix = [&](std::string_view prefix) { return key.substr(prefix.size()); };
    auto k_of = [&](std::string_view prefix) {
      const std::string rest = suffix(prefix);
      if (rest.empty() || rest[0] != 'k') config_error(key, "expected .k<N> suffix");
      return parse_count(key, rest.substr(1));
    };

    if (starts("retention.init_attention_adapted_map.")) {
      r.retention_init_attention_adapted_map.emplace_back(
          k_of("retention.init_attention_adapted_map."), value);
    } else if (starts("retention.init.")) {
      r.retention_init.emplace_back(k_of("retention.init."), value);
    } else if (starts("retention.adapted.")) {
      r.retention_adapted.emplace_back(k_of("retention.adapted."), value);
    } else if (starts("stage_retention.init.")) {
      r.stage_retention_init.emplace_back(suffix("stage_retention.init."), value);
    } else if (starts("stage_retention.adapted.")) {
      r.stage_retention_adapted.emplace_back(suffix("stage_retention.adapted."), value);
    } else if (key == "miou.init") {
      r.miou_init = value;
    } else if (key == "miou.adapted") {
      r.miou_adapted = value;
    } else if (key == "pruning.mean_kept_fraction") {
      r.mean_kept_fraction = value;
    } else if (starts("timing_ms.")) {
      r.timing_ms.emplace_back(suffix("timing_ms."), value);
    } else {
      config_error(key, "unknown metrics key");
    }
  }
  return r;
}

void write_metrics(const fs::path& path, const MetricsReport& report) {
  write_file_atomic(path, format_metrics(report));
}

MetricsReport read_metrics(const fs::path& path) {
  const auto bytes = read_file(path);
  return parse_metrics(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace fsa::io
