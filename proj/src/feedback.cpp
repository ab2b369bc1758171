#include "fsa/feedback.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "fsa/error.hpp"

namespace fsa {
namespace {

constexpr double kDenominatorFloor = 1e-12;
constexpr double kDistributionTolerance = 1e-6;

void require_distributions(const Matrix& y) {
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double total = 0.0;
    for (double x : y.row(i)) {
      if (!(x >= 0.0) || !std::isfinite(x)) {
        throw Error(ErrorKind::Validation,
                    "row " + std::to_string(i) + " is not a probability distribution");
      }
      total += x;
    }
    if (std::abs(total - 1.0) > kDistributionTolerance) {
      throw Error(ErrorKind::Validation, "row " + std::to_string(i) + " sums to " +
                                             std::to_string(total) + ", expected 1");
    }
  }
}

class StageTimer {
 public:
  explicit StageTimer(std::vector<std::pair<std::string, double>>& sink) : sink_(sink) {}

  void lap(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(now - last_).count();
    last_ = now;
    auto it = std::find_if(sink_.begin(), sink_.end(),
                           [&](const auto& entry) { return entry.first == stage; });
    if (it == sink_.end()) {
      sink_.emplace_back(stage, ms);
    } else {
      it->second += ms;
    }
  }

 private:
  std::vector<std::pair<std::string, double>>& sink_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace

void FeedbackConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw Error(ErrorKind::Config, key + ": " + why);
  };
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda", "must be a finite value >= 0");
  if (!(p > 0.0 && p <= 1.0)) fail("p", "must lie in (0, 1]");
  if (!(ratio > 0.0 && ratio <= 1.0)) fail("ratio", "must lie in (0, 1]");
  if (threshold && !(*threshold >= 0.0 && std::isfinite(*threshold))) {
    fail("threshold", "must be a finite value >= 0");
  }
  if (iterations < 1) fail("iterations", "must be at least 1");
}

std::string to_string(SimilarityMetric m) {
  return m == SimilarityMetric::KL ? "kl" : "cosine";
}

std::string to_string(PruningMode m) {
  switch (m) {
    case PruningMode::Confidence: return "confidence";
    case PruningMode::FixedRatio: return "fixed_ratio";
    case PruningMode::FixedThreshold: return "fixed_threshold";
    case PruningMode::None: return "none";
  }
  return "confidence";
}

std::string to_string(AdaptStrategy s) {
  switch (s) {
    case AdaptStrategy::Refine: return "refine";
    case AdaptStrategy::Precondition: return "precondition";
    case AdaptStrategy::Replace: return "replace";
    case AdaptStrategy::Ensemble: return "ensemble";
  }
  return "ensemble";
}

std::optional<SimilarityMetric> parse_similarity_metric(const std::string& name) {
  for (auto m : {SimilarityMetric::KL, SimilarityMetric::Cosine})
    if (to_string(m) == name) return m;
  return std::nullopt;
}

std::optional<PruningMode> parse_pruning_mode(const std::string& name) {
  for (auto m : {PruningMode::Confidence, PruningMode::FixedRatio, PruningMode::FixedThreshold,
                 PruningMode::None})
    if (to_string(m) == name) return m;
  return std::nullopt;
}

std::optional<AdaptStrategy> parse_adapt_strategy(const std::string& name) {
  for (auto s : {AdaptStrategy::Refine, AdaptStrategy::Precondition, AdaptStrategy::Replace,
                 AdaptStrategy::Ensemble})
    if (to_string(s) == name) return s;
  return std::nullopt;
}

AttentionMap uniform_attention(std::size_t n) {
  if (n == 0) throw Error(ErrorKind::Shape, "uniform attention needs at least one patch");
  return Matrix(n, n, 1.0 / static_cast<double>(n));
}

DenseLogits isolate_logits(const DenseLogits& y, const DenseLogits& y_uni) {
  return row_softmax(subtract(y, y_uni));
}

Matrix kl_divergence_matrix(const DenseLogits& y_iso) {
  require_distributions(y_iso);
  const std::size_t n = y_iso.rows();
  const std::size_t c = y_iso.cols();

  // KL(i||j) = sum_k p_ik ln p_ik - sum_k p_ik ln max(p_jk, floor).
  // The second term is a plain inner product once the logs are tabulated.
  Matrix log_q(n, c);
  std::vector<double> neg_entropy(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double pk = y_iso(i, k);
      log_q(i, k) = std::log(std::max(pk, kDenominatorFloor));
      if (pk > 0.0) neg_entropy[i] += pk * std::log(pk);
    }
  }
  Matrix d = matmul_transposed(y_iso, log_q);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = d.row(i);
    for (std::size_t j = 0; j < n; ++j) r[j] = std::max(0.0, neg_entropy[i] - r[j]);
    r[i] = 0.0;
  }
  return d;
}

Matrix cosine_similarity_matrix(const DenseLogits& y_iso) {
  require_distributions(y_iso);
  Matrix s = cosine_rows(y_iso, y_iso);
  for (double& x : s.data()) x = 0.5 * (1.0 + x);
  return s;
}

Matrix pairwise_divergence(const DenseLogits& y_iso, SimilarityMetric metric) {
  return metric == SimilarityMetric::KL ? kl_divergence_matrix(y_iso)
                                        : cosine_similarity_matrix(y_iso);
}

Matrix divergence_to_similarity(const Matrix& d) {
  Matrix s = d;
  for (double& x : s.data()) {
    if (!(x >= 0.0)) {
      throw Error(ErrorKind::Validation, "divergence must be nonnegative, got " + std::to_string(x));
    }
    x = 1.0 / (x + 1.0);
  }
  return s;
}

Matrix output_similarity(const DenseLogits& y_iso, SimilarityMetric metric) {
  Matrix m = pairwise_divergence(y_iso, metric);
  return metric == SimilarityMetric::KL ? divergence_to_similarity(m) : m;
}

ConfidenceState cumulative_confidence(const Matrix& s) {
  ConfidenceState out;
  out.s_hat = row_softmax(s);
  const std::size_t n = s.rows();
  const std::size_t m = s.cols();
  out.c = Matrix(n, m);
  out.order.resize(n * m);

  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto conf = out.s_hat.row(i);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
    double running = 0.0;
    auto c_row = out.c.row(i);
    for (std::size_t r = 0; r < m; ++r) {
      running += conf[idx[r]];
      c_row[idx[r]] = running;
      out.order[i * m + r] = idx[r];
    }
  }
  return out;
}

MaskedMatrix prune_scale(const Matrix& s, const ConfidenceState& conf, const FeedbackConfig& cfg) {
  cfg.validate();
  if (s.rows() != conf.c.rows() || s.cols() != conf.c.cols() ||
      conf.order.size() != s.size()) {
    throw Error(ErrorKind::Shape, "prune_scale: similarity and confidence shapes differ");
  }
  const std::size_t n = s.rows();
  const std::size_t m = s.cols();
  std::vector<bool> suppressed(s.size(), true);
  auto keep = [&](std::size_t i, std::size_t j) { suppressed[i * m + j] = false; };

  const double threshold = cfg.threshold.value_or(1.0 / static_cast<double>(m));
  const auto ratio_count = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(cfg.ratio * static_cast<double>(m))), 1, m);

  for (std::size_t i = 0; i < n; ++i) {
    // The top-ranked entry always survives, so no row is left empty.
    keep(i, conf.top(i));
    switch (cfg.pruning_mode) {
      case PruningMode::Confidence:
        for (std::size_t j = 0; j < m; ++j)
          if (conf.c(i, j) <= cfg.p) keep(i, j);
        break;
      case PruningMode::FixedRatio:
        for (std::size_t r = 0; r < ratio_count; ++r) keep(i, conf.order[i * m + r]);
        break;
      case PruningMode::FixedThreshold:
        for (std::size_t j = 0; j < m; ++j)
          if (conf.s_hat(i, j) >= threshold) keep(i, j);
        break;
      case PruningMode::None:
        for (std::size_t j = 0; j < m; ++j) keep(i, j);
        break;
    }
  }

  Matrix values(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (suppressed[i * m + j]) continue;
      const double x = s(i, j);
      values(i, j) = cfg.scaling_enabled ? x * std::exp(cfg.lambda * x) : x;
    }
  }
  return MaskedMatrix(std::move(values), std::move(suppressed));
}

AttentionMap feedback_attention(const MaskedMatrix& s_sparse) { return row_softmax(s_sparse); }

AttentionMap adapt_attention(const AttentionMap& attn_init, const AttentionMap& a_f,
                             AdaptStrategy strategy) {
  require_square(attn_init, "initial attention");
  require_square(a_f, "feedback attention");
  if (attn_init.rows() != a_f.rows()) {
    throw Error(ErrorKind::Shape, "initial and feedback attention sizes differ");
  }
  require_row_stochastic(attn_init, kStochasticTolerance, "initial attention");
  require_row_stochastic(a_f, kStochasticTolerance, "feedback attention");

  // Feedback attention is sparse, so keep it on the left of every product:
  // Attn · A^f is evaluated as (A^fᵀ · Attnᵀ)ᵀ.
  auto refine = [&] { return matmul(a_f, attn_init); };
  auto precondition = [&] { return transpose(matmul(transpose(a_f), transpose(attn_init))); };

  switch (strategy) {
    case AdaptStrategy::Refine: return refine();
    case AdaptStrategy::Precondition: return precondition();
    case AdaptStrategy::Replace: return a_f;
    case AdaptStrategy::Ensemble: {
      Matrix sum = add(add(refine(), precondition()), a_f);
      return scale(sum, 1.0 / 3.0);
    }
  }
  throw Error(ErrorKind::Config, "unknown adaptation strategy");
}

FeedbackState build_feedback(const DenseLogits& y, const DenseLogits& y_uni,
                             const FeedbackConfig& cfg) {
  cfg.validate();
  FeedbackState st;
  st.y_iso = isolate_logits(y, y_uni);
  st.s = output_similarity(st.y_iso, cfg.similarity_metric);
  st.confidence = cumulative_confidence(st.s);
  st.s_sparse = prune_scale(st.s, st.confidence, cfg);
  st.a_f = feedback_attention(st.s_sparse);
  return st;
}

PipelineResult fsa_pipeline(const PatchTokens& tokens, const HeadWeights& w,
                            const TextEmbeddings& text, const AttentionConfig& acfg,
                            const FeedbackConfig& fcfg) {
  fcfg.validate();
  w.validate();
  PipelineResult out;
  auto& diag = out.diagnostics;
  StageTimer timer(diag.timing_ms);

  const QKV qkv = qkv_project(tokens, w);
  out.attn_init = initial_attention(qkv, acfg, w.tau);
  timer.lap("initial_attention");

  out.y_init = dense_logits(head_forward(out.attn_init, tokens, w, qkv.v, &diag.trace_init), text);
  out.m_init = segment(out.y_init);
  timer.lap("head_init");

  const AttentionMap uniform = uniform_attention(tokens.count());
  AttentionMap current = out.attn_init;
  DenseLogits y_current = out.y_init;
  for (std::size_t it = 0; it < fcfg.iterations; ++it) {
    const DenseLogits y_uni = dense_logits(head_forward(uniform, tokens, w, qkv.v), text);
    timer.lap("uniform_branch");

    FeedbackState fb = build_feedback(y_current, y_uni, fcfg);
    timer.lap("feedback");

    current = adapt_attention(current, fb.a_f, fcfg.adapt_strategy);
    timer.lap("adapt");

    const bool last = it + 1 == fcfg.iterations;
    StageTrace* trace = last ? &diag.trace_adapted : nullptr;
    y_current = dense_logits(head_forward(current, tokens, w, qkv.v, trace), text);
    timer.lap("head_adapted");

    if (last) {
      diag.kept_per_row.resize(tokens.count());
      for (std::size_t i = 0; i < tokens.count(); ++i)
        diag.kept_per_row[i] = fb.s_sparse.kept_in_row(i);
      out.a_f = std::move(fb.a_f);
    }
  }
  diag.iterations = fcfg.iterations;
  out.attn_adapted = std::move(current);
  out.y_adapted = std::move(y_current);
  out.m_adapted = segment(out.y_adapted);
  return out;
}

}  // namespace fsa
