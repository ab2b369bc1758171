#include "fsa/commands.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <ostream>
#include <sstream>

#include "fsa/error.hpp"
#include "fsa/metrics.hpp"

namespace fsa::cli {
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kReportKs[] = {1, 5, 10};
constexpr std::size_t kStageK = 10;

// Runs `body`, reporting any engine error against the stage that raised it.
template <typename Body>
int guarded(std::ostream& err, const char*& stage, Body&& body) {
  try {
    body();
    return 0;
  } catch (const Error& e) {
    err << "error: " << stage << " failed (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << stage << " failed: " << e.what() << '\n';
    return 2;
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

std::vector<std::pair<std::size_t, double>> retention_series(const AttentionMap& attn,
                                                             const SegmentationMap& labels) {
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t k : kReportKs) {
    if (k + 1 > attn.rows()) break;
    out.emplace_back(k, retention_topk(attn, labels, k).retention);
  }
  return out;
}

}  // namespace

HeadWeights load_weights(const fs::path& dir, bool use_ffn) {
  HeadWeights w;
  w.w_q = io::read_matrix(dir / "w_q.fsat");
  w.w_k = io::read_matrix(dir / "w_k.fsat");
  w.w_v = io::read_matrix(dir / "w_v.fsat");
  w.proj = io::read_matrix(dir / "proj.fsat");
  w.joint = io::read_matrix(dir / "joint.fsat");
  w.use_ffn = use_ffn;
  if (use_ffn) {
    w.ffn = FeedForward{io::read_matrix(dir / "ffn_w1.fsat"), io::read_matrix(dir / "ffn_b1.fsat"),
                        io::read_matrix(dir / "ffn_w2.fsat"), io::read_matrix(dir / "ffn_b2.fsat")};
  }
  return w;
}

EngineInputs load_inputs(const io::RunConfig& cfg) {
  auto require = [](const fs::path& p, const char* key) {
    if (p.empty()) throw Error(ErrorKind::Config, std::string(key) + ": missing required key");
  };
  require(cfg.tokens, "tokens");
  require(cfg.text, "text");
  require(cfg.weights_dir, "weights_dir");
  if (cfg.attention_mode == AttentionMode::External && !cfg.external_attention) {
    throw Error(ErrorKind::Config, "external_attention: required when attention_mode = external");
  }

  PatchTokens tokens(io::read_matrix(cfg.tokens));
  HeadWeights weights = load_weights(cfg.weights_dir, cfg.use_ffn);
  weights.use_residual = cfg.use_residual;
  weights.tau = cfg.tau.value_or(std::sqrt(static_cast<double>(tokens.dim())));
  TextEmbeddings text(io::read_matrix(cfg.text));

  AttentionConfig attention;
  attention.mode = cfg.attention_mode;
  if (cfg.external_attention) attention.external_attention = io::read_matrix(*cfg.external_attention);

  std::optional<SegmentationMap> gt;
  if (cfg.labels) gt = io::read_labels(*cfg.labels);
  return {std::move(tokens), std::move(weights), std::move(text), std::move(attention),
          std::move(gt)};
}

std::vector<double> pruning_ratios(const PipelineResult& result) {
  const auto n = static_cast<double>(result.attn_init.rows());
  std::vector<double> out;
  out.reserve(result.diagnostics.kept_per_row.size());
  for (auto kept : result.diagnostics.kept_per_row) out.push_back(1.0 - static_cast<double>(kept) / n);
  return out;
}

EngineRun run_engine(const io::RunConfig& cfg, const EngineInputs& in) {
  EngineRun run;
  run.result = fsa_pipeline(in.tokens, in.weights, in.text, in.attention, cfg.feedback);
  const PipelineResult& r = run.result;
  io::MetricsReport& rep = run.report;

  rep.retention_init = retention_series(r.attn_init, r.m_init);
  rep.retention_adapted = retention_series(r.attn_adapted, r.m_adapted);
  rep.retention_init_attention_adapted_map = retention_series(r.attn_init, r.m_adapted);

  const std::size_t n = r.attn_init.rows();
  if (n >= 2) {
    const std::size_t k = std::min(kStageK, n - 1);
    rep.stage_retention_init = retention_through_ops(r.attn_init, r.diagnostics.trace_init, k);
    rep.stage_retention_adapted = retention_through_ops(r.attn_init, r.diagnostics.trace_adapted, k);
  }
  if (in.ground_truth) {
    rep.miou_init = miou(r.m_init, *in.ground_truth, in.text.classes(), cfg.ignore_index).mean;
    rep.miou_adapted = miou(r.m_adapted, *in.ground_truth, in.text.classes(), cfg.ignore_index).mean;
  }
  double kept = 0.0;
  for (auto c : r.diagnostics.kept_per_row) kept += static_cast<double>(c);
  rep.mean_kept_fraction = kept / static_cast<double>(n * n);
  if (cfg.timing) rep.timing_ms = r.diagnostics.timing_ms;
  return run;
}

int cmd_run(const io::RunConfig& cfg, std::ostream& err) {
  const char* stage = "load inputs";
  return guarded(err, stage, [&] {
    const EngineInputs inputs = load_inputs(cfg);
    stage = "pipeline";
    const EngineRun run = run_engine(cfg, inputs);
    stage = "write outputs";
    ensure_dir(cfg.output_dir);
    io::write_labels(cfg.output_dir / "m_init.fsat", run.result.m_init);
    io::write_labels(cfg.output_dir / "m_adapted.fsat", run.result.m_adapted);
    io::write_matrix(cfg.output_dir / "feedback_attention.fsat", run.result.a_f);
    io::write_matrix(cfg.output_dir / "adapted_attention.fsat", run.result.attn_adapted);
    io::write_metrics(cfg.output_dir / "metrics.txt", run.report);
  });
}

int cmd_run(const fs::path& config, std::ostream& err) {
  const char* stage = "read config";
  io::RunConfig cfg;
  if (int rc = guarded(err, stage, [&] { cfg = io::read_config(config); }); rc != 0) return rc;
  return cmd_run(cfg, err);
}

int cmd_synth(const SynthSpec& spec, const fs::path& out_dir, std::ostream& err) {
  const char* stage = "validate spec";
  return guarded(err, stage, [&] {
    spec.validate();
    stage = "generate fixture";
    const SynthFixture fx = synthesize(spec);
    stage = "write fixture";
    write_fixture(fx, out_dir);
  });
}

int cmd_metrics(const MetricsRequest& req, std::ostream& err) {
  const char* stage = "load inputs";
  return guarded(err, stage, [&] {
    const Matrix attn = io::read_matrix(req.attention);
    const SegmentationMap pred = io::read_labels(req.pred);
    StageTrace trace;
    for (const auto& [name, path] : req.stages) trace.stages.emplace_back(name, io::read_matrix(path));

    stage = "metrics";
    io::MetricsReport rep;
    for (std::size_t k : req.ks) rep.retention_init.emplace_back(k, retention_topk(attn, pred, k).retention);
    if (!trace.stages.empty()) {
      const std::size_t k = req.stage_k.value_or(std::min<std::size_t>(10, attn.rows() - 1));
      rep.stage_retention_init = retention_through_ops(attn, trace, k);
    }
    if (req.gt) {
      const SegmentationMap gt = io::read_labels(*req.gt);
      std::size_t classes = 0;
      if (req.num_classes) {
        classes = *req.num_classes;
      } else {
        for (auto l : pred) classes = std::max(classes, l + 1);
        for (auto l : gt) classes = std::max(classes, l + 1);
        if (req.ignore_index && classes == *req.ignore_index + 1) {
          throw Error(ErrorKind::Config, "num_classes: required when ignore_index is used");
        }
      }
      rep.miou_init = miou(pred, gt, classes, req.ignore_index).mean;
    }
    stage = "write report";
    io::write_metrics(req.out, rep);
  });
}

int cmd_ablate(const AblationRequest& req, std::ostream& err) {
  const char* stage = "validate sweep";
  return guarded(err, stage, [&] {
    if (req.p_values.empty()) throw Error(ErrorKind::Config, "p: sweep list is empty");
    if (req.lambda_values.empty()) throw Error(ErrorKind::Config, "lambda: sweep list is empty");
    if (req.histogram_bins == 0) throw Error(ErrorKind::Config, "bins: must be at least 1");

    std::vector<io::RunConfig> points;
    for (double p : req.p_values) {
      for (double lambda : req.lambda_values) {
        io::RunConfig cfg = req.base;
        cfg.feedback.p = p;
        cfg.feedback.lambda = lambda;
        cfg.feedback.validate();
        points.push_back(std::move(cfg));
      }
    }

    stage = "load inputs";
    const EngineInputs inputs = load_inputs(req.base);

    stage = "sweep";
    std::vector<std::future<EngineRun>> pending;
    pending.reserve(points.size());
    for (const auto& cfg : points) {
      pending.push_back(std::async(std::launch::async, [&cfg, &inputs] { return run_engine(cfg, inputs); }));
    }
    std::vector<EngineRun> runs;
    runs.reserve(points.size());
    for (auto& f : pending) runs.push_back(f.get());

    stage = "write outputs";
    std::ostringstream table;
    table << "p,lambda,mean_kept_fraction,total_kept,retention_init_k10,retention_adapted_k1,"
             "retention_adapted_k5,retention_adapted_k10,miou_init,miou_adapted\n";
    std::ostringstream hist;
    hist << "p,lambda,bin_lo,bin_hi,rows\n";
    auto num = [](std::optional<double> v) { return v ? io::format_number(*v) : std::string(); };
    auto at_k = [](const auto& series, std::size_t k) -> std::optional<double> {
      for (const auto& [kk, v] : series)
        if (kk == k) return v;
      return std::nullopt;
    };
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto& fb = points[i].feedback;
      const auto& rep = runs[i].report;
      std::size_t total = 0;
      for (auto c : runs[i].result.diagnostics.kept_per_row) total += c;
      table << io::format_number(fb.p) << ',' << io::format_number(fb.lambda) << ','
            << num(rep.mean_kept_fraction) << ',' << total << ','
            << num(at_k(rep.retention_init, 10)) << ',' << num(at_k(rep.retention_adapted, 1)) << ','
            << num(at_k(rep.retention_adapted, 5)) << ',' << num(at_k(rep.retention_adapted, 10))
            << ',' << num(rep.miou_init) << ',' << num(rep.miou_adapted) << '\n';

      std::vector<std::size_t> counts(req.histogram_bins, 0);
      for (double ratio : pruning_ratios(runs[i].result)) {
        auto bin = static_cast<std::size_t>(ratio * static_cast<double>(req.histogram_bins));
        ++counts[std::min(bin, req.histogram_bins - 1)];
      }
      for (std::size_t b = 0; b < counts.size(); ++b) {
        const double width = 1.0 / static_cast<double>(req.histogram_bins);
        hist << io::format_number(fb.p) << ',' << io::format_number(fb.lambda) << ','
             << io::format_number(static_cast<double>(b) * width) << ','
             << io::format_number(static_cast<double>(b + 1) * width) << ',' << counts[b] << '\n';
      }
    }
    ensure_dir(req.out_dir);
    io::write_file_atomic(req.out_dir / "ablation.csv", table.str());
    io::write_file_atomic(req.out_dir / "pruning_hist.csv", hist.str());
  });
}

}  // namespace fsa::cli
