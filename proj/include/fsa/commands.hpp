#pragma once

// Subcommand implementations behind the `fsa` tool. Each returns the process
// exit code: 0 success, 1 configuration error, 2 file error, 3 numeric
// validation error. Diagnostics go to `err`.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fsa/feedback.hpp"
#include "fsa/io.hpp"
#include "fsa/synth.hpp"

namespace fsa::cli {

struct EngineInputs {
  PatchTokens tokens;
  HeadWeights weights;
  TextEmbeddings text;
  AttentionConfig attention;
  std::optional<SegmentationMap> ground_truth;
};

EngineInputs load_inputs(const io::RunConfig& cfg);
HeadWeights load_weights(const std::filesystem::path& dir, bool use_ffn);

struct EngineRun {
  PipelineResult result;
  io::MetricsReport report;
};

EngineRun run_engine(const io::RunConfig& cfg, const EngineInputs& inputs);

// Fraction of suppressed entries per row of the last feedback map.
std::vector<double> pruning_ratios(const PipelineResult& result);

int cmd_run(const io::RunConfig& cfg, std::ostream& err);
int cmd_run(const std::filesystem::path& config, std::ostream& err);

int cmd_synth(const SynthSpec& spec, const std::filesystem::path& out_dir, std::ostream& err);

struct MetricsRequest {
  std::filesystem::path attention;
  std::filesystem::path pred;
  std::vector<std::size_t> ks = {1, 5, 10};
  std::optional<std::filesystem::path> gt;
  std::optional<std::size_t> num_classes;
  std::optional<std::size_t> ignore_index;
  std::vector<std::pair<std::string, std::filesystem::path>> stages;
  std::optional<std::size_t> stage_k;  // unset: min(10, L - 1)
  std::filesystem::path out = "metrics.txt";
};

int cmd_metrics(const MetricsRequest& req, std::ostream& err);

struct AblationRequest {
  io::RunConfig base;
  std::vector<double> p_values;
  std::vector<double> lambda_values;
  std::filesystem::path out_dir = "ablation";
  std::size_t histogram_bins = 10;
};

int cmd_ablate(const AblationRequest& req, std::ostream& err);

}  // namespace fsa::cli
