// fsa: run feedback-driven self-adaptive attention on exported tensors.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fsa/commands.hpp"
#include "fsa/error.hpp"

namespace {

// Flags for `run` and `ablate` that override keys of the config file. The
// help text shows the engine defaults.
struct Overrides {
  std::map<std::string, std::string> values;

  void add(CLI::App* app, const std::string& key, const std::string& help,
           const std::string& default_text) {
    auto* opt = app->add_option("--" + key, values[key], help);
    if (!default_text.empty()) opt->default_str(default_text);
    // Only explicitly passed flags should be applied.
    opt->each([this, key](const std::string&) { passed.push_back(key); });
  }

  void apply(fsa::io::RunConfig& cfg) const {
    for (const auto& key : passed) fsa::io::apply_config_value(cfg, key, values.at(key));
  }

  std::vector<std::string> passed;
};

void add_overrides(CLI::App* app, Overrides& o) {
  const fsa::FeedbackConfig defaults;
  o.add(app, "attention_mode", "qk, qq, kk, vv or external", "qk");
  o.add(app, "external_attention", "L×L row-stochastic attention file", "");
  o.add(app, "tau", "attention temperature, or auto for sqrt(v)", "auto");
  o.add(app, "use_residual", "add the residual connection", "false");
  o.add(app, "use_ffn", "apply the feed-forward sub-block", "false");
  o.add(app, "lambda", "exponential scaling sharpness", fsa::io::format_number(defaults.lambda));
  o.add(app, "p", "cumulative confidence cutoff", fsa::io::format_number(defaults.p));
  o.add(app, "similarity", "kl or cosine", "kl");
  o.add(app, "pruning", "confidence, fixed_ratio, fixed_threshold or none", "confidence");
  o.add(app, "ratio", "kept fraction for fixed_ratio", fsa::io::format_number(defaults.ratio));
  o.add(app, "threshold", "confidence floor for fixed_threshold, or auto for 1/L", "auto");
  o.add(app, "scaling", "apply exponential scaling to kept entries", "true");
  o.add(app, "strategy", "refine, precondition, replace or ensemble", "ensemble");
  o.add(app, "iterations", "feedback passes", "1");
  o.add(app, "labels", "ground-truth label file for mIoU", "");
  o.add(app, "output_dir", "directory for outputs", "out");
  o.add(app, "ignore_index", "label excluded from mIoU, or none", "none");
  o.add(app, "timing", "record per-stage timings in the report", "false");
}

int load_config(const std::string& path, const Overrides& o, fsa::io::RunConfig& cfg) {
  try {
    cfg = fsa::io::read_config(path);
    o.apply(cfg);
    return 0;
  } catch (const fsa::Error& e) {
    std::cerr << "error: config failed (" << fsa::to_string(e.kind()) << "): " << e.what() << '\n';
    return fsa::exit_code(e.kind());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feedback-driven self-adaptive attention engine"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run the pipeline described by a config file");
  std::string run_config;
  run->add_option("config", run_config, "run configuration")->required();
  Overrides run_overrides;
  add_overrides(run, run_overrides);

  auto* synth = app.add_subcommand("synth", "write a planted-cluster fixture");
  fsa::SynthSpec spec;
  std::string synth_out = "fixture";
  synth->add_option("--L", spec.patches, "patch count")->capture_default_str();
  synth->add_option("--v", spec.visual_dim, "visual feature dim")->capture_default_str();
  synth->add_option("--d", spec.joint_dim, "joint space dim")->capture_default_str();
  synth->add_option("--c", spec.classes, "class count")->capture_default_str();
  synth->add_option("--clusters", spec.clusters, "planted clusters")->capture_default_str();
  synth->add_option("--noise", spec.attention_noise, "attention noise in [0,1]")->capture_default_str();
  synth->add_option("--separation", spec.logit_separation, "cluster separation")->capture_default_str();
  synth->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->capture_default_str();

  auto* metrics = app.add_subcommand("metrics", "score an attention map against a segmentation");
  fsa::cli::MetricsRequest req;
  std::string gt, out = "metrics.txt";
  std::vector<std::string> stages;
  std::size_t num_classes = 0;
  long ignore_index = -1;
  metrics->add_option("--attention", req.attention, "L×L attention file")->required();
  metrics->add_option("--pred", req.pred, "predicted label file")->required();
  metrics->add_option("--k", req.ks, "neighborhood sizes")->capture_default_str();
  metrics->add_option("--gt", gt, "ground-truth label file for mIoU");
  metrics->add_option("--num-classes", num_classes, "class count for mIoU");
  metrics->add_option("--ignore-index", ignore_index, "label excluded from mIoU");
  metrics->add_option("--stage", stages, "NAME=features.fsat, repeatable, in pipeline order");
  metrics->add_option("--stage-k", req.stage_k, "top-k for per-stage retention (default min(10, L-1))");
  metrics->add_option("--out", out, "report path")->capture_default_str();

  auto* ablate = app.add_subcommand("ablate", "sweep p and lambda over one configuration");
  std::string ablate_config;
  fsa::cli::AblationRequest sweep;
  std::string ablate_out = "ablation";
  ablate->add_option("config", ablate_config, "run configuration")->required();
  ablate->add_option("--p-values", sweep.p_values, "cutoffs to sweep")->required()->delimiter(',');
  ablate->add_option("--lambda-values", sweep.lambda_values, "sharpness values to sweep")
      ->required()
      ->delimiter(',');
  ablate->add_option("--bins", sweep.histogram_bins, "pruning-ratio histogram bins")->capture_default_str();
  ablate->add_option("--out", ablate_out, "output directory")->capture_default_str();
  Overrides ablate_overrides;
  add_overrides(ablate, ablate_overrides);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (*run) {
    fsa::io::RunConfig cfg;
    if (int rc = load_config(run_config, run_overrides, cfg); rc != 0) return rc;
    return fsa::cli::cmd_run(cfg, std::cerr);
  }
  if (*synth) return fsa::cli::cmd_synth(spec, synth_out, std::cerr);
  if (*metrics) {
    if (!gt.empty()) req.gt = gt;
    if (num_classes > 0) req.num_classes = num_classes;
    if (ignore_index >= 0) req.ignore_index = static_cast<std::size_t>(ignore_index);
    for (const auto& s : stages) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        std::cerr << "error: --stage expects NAME=PATH, got " << s << '\n';
        return 1;
      }
      req.stages.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    req.out = out;
    return fsa::cli::cmd_metrics(req, std::cerr);
  }
  if (*ablate) {
    if (int rc = load_config(ablate_config, ablate_overrides, sweep.base); rc != 0) return rc;
    sweep.out_dir = ablate_out;
    return fsa::cli::cmd_ablate(sweep, std::cerr);
  }
  return 1;
}
