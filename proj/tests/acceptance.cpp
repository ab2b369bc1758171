// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fsa/attention_head.hpp"
#include "fsa/feedback.hpp"
#include "fsa/io.hpp"
#include "fsa/metrics.hpp"
#include "fsa/synth.hpp"
#include "oracles.hpp"

using fsa::Matrix;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

struct Criterion {
  const char* name;
  double time_limit_ms;  // <= 0: untimed
  std::function<Outcome()> check;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

Matrix random_distributions(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double spread) {
  return fsa::row_softmax(oracle::random_matrix(rng, rows, cols, -spread, spread));
}

bool row_stochastic(const Matrix& m, double tol, double* worst) {
  bool ok = true;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double total = 0.0;
    for (double x : m.row(i)) {
      if (!(x >= 0.0) || !std::isfinite(x)) ok = false;
      total += x;
    }
    *worst = std::max(*worst, std::abs(total - 1.0));
    if (std::abs(total - 1.0) > tol) ok = false;
  }
  return ok;
}

std::vector<bool> keep_row(const fsa::MaskedMatrix& m, std::size_t i) {
  std::vector<bool> out(m.values.cols());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = !m.is_suppressed(i, j);
  return out;
}

// Columns of row i ordered by descending value, ties to the lower index.
std::vector<std::size_t> ranking(std::span<const double> row, const std::vector<bool>& keep) {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < row.size(); ++j)
    if (keep[j]) idx.push_back(j);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  return idx;
}

fsa::SynthSpec planted_spec() {
  fsa::SynthSpec spec;
  spec.patches = 64;
  spec.classes = 8;
  spec.clusters = 4;
  spec.attention_noise = 0.4;
  spec.logit_separation = 4.0;
  spec.seed = 7;
  return spec;
}

fsa::PipelineResult run_planted(const fsa::SynthFixture& fx, std::size_t iterations) {
  fsa::AttentionConfig acfg{fsa::AttentionMode::External, fx.attention};
  fsa::FeedbackConfig fcfg;
  fcfg.iterations = iterations;
  return fsa::fsa_pipeline(fsa::PatchTokens{fx.tokens}, fx.weights, fsa::TextEmbeddings{fx.text}, acfg, fcfg);
}

Outcome isolation_null() {
  std::mt19937_64 rng(11);
  double worst_iso = 0.0, worst_d = 0.0, worst_s = 0.0;
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const std::size_t L = 4 + trial * 3, v = 8, d = 6, c = 5;
    fsa::HeadWeights w = fsa::HeadWeights::bare(v);
    w.w_v = oracle::random_matrix(rng, v, v);
    w.proj = oracle::random_matrix(rng, v, v);
    w.joint = oracle::random_matrix(rng, v, d);
    w.use_residual = trial % 2 == 1;
    const fsa::PatchTokens tokens{oracle::random_matrix(rng, L, v)};
    const fsa::TextEmbeddings text{oracle::random_matrix(rng, c, d)};
    const Matrix uni = fsa::uniform_attention(L);
    const Matrix y = fsa::dense_logits(fsa::head_forward(uni, tokens, w), text);
    const Matrix y_uni = fsa::dense_logits(fsa::head_forward(fsa::uniform_attention(L), tokens, w), text);
    for (auto metric : {fsa::SimilarityMetric::KL, fsa::SimilarityMetric::Cosine}) {
      const Matrix iso = fsa::isolate_logits(y, y_uni);
      for (double x : iso.data()) worst_iso = std::max(worst_iso, std::abs(x - 1.0 / double(c)));
      if (metric == fsa::SimilarityMetric::KL) {
        const Matrix d_mat = fsa::pairwise_divergence(iso, metric);
        for (double x : d_mat.data()) worst_d = std::max(worst_d, std::abs(x));
      }
      const Matrix s_mat = fsa::output_similarity(iso, metric);
      for (double x : s_mat.data()) worst_s = std::max(worst_s, std::abs(x - 1.0));
    }
  }
  const bool ok = worst_iso <= 1e-9 && worst_d <= 1e-9 && worst_s <= 1e-9;
  return {ok, fmt("max |Y_iso - 1/c| = %.3g, max |D| = %.3g", worst_iso, worst_d) +
                  fmt(", max |S - 1| = %.3g", worst_s)};
}

Outcome pruning_oracle() {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<std::size_t> len(1, 16);
  std::uniform_real_distribution<double> pick(0.0, 1.0);
  std::size_t mismatched_keep = 0;
  double worst_c = 0.0;
  for (std::size_t trial = 0; trial < 1000; ++trial) {
    const std::size_t L = len(rng);
    Matrix s = oracle::random_matrix(rng, 1, L, 0.0, 1.0);
    // Every fourth row carries ties.
    if (trial % 4 == 0)
      for (double& x : s.row(0)) x = std::round(x * 3.0) / 3.0;
    fsa::FeedbackConfig cfg;
    cfg.p = pick(rng);
    const auto conf = fsa::cumulative_confidence(s);
    const auto pruned = fsa::prune_scale(s, conf, cfg);
    const auto ref = oracle::confidence_row({s.row(0).begin(), s.row(0).end()}, cfg.p);
    if (keep_row(pruned, 0) != ref.keep) ++mismatched_keep;
    for (std::size_t j = 0; j < L; ++j) worst_c = std::max(worst_c, std::abs(conf.c(0, j) - ref.c[j]));
  }
  return {mismatched_keep == 0 && worst_c <= 1e-12,
          fmt("keep-set mismatches %.0f of 1000, max |C - C_ref| = %.3g", double(mismatched_keep), worst_c)};
}

Outcome stochasticity() {
  std::mt19937_64 rng(37);
  std::uniform_int_distribution<std::size_t> len(1, 32), classes(2, 12), mode(0, 3), metric(0, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const fsa::PruningMode modes[] = {fsa::PruningMode::Confidence, fsa::PruningMode::FixedRatio,
                                    fsa::PruningMode::FixedThreshold, fsa::PruningMode::None};
  double worst = 0.0;
  std::size_t failures = 0;
  for (std::size_t trial = 0; trial < 500; ++trial) {
    const std::size_t L = len(rng), c = classes(rng);
    fsa::FeedbackConfig cfg;
    cfg.pruning_mode = modes[mode(rng)];
    cfg.similarity_metric = metric(rng) ? fsa::SimilarityMetric::Cosine : fsa::SimilarityMetric::KL;
    cfg.p = unit(rng);
    cfg.lambda = 4.0 * unit(rng);
    cfg.ratio = std::max(0.01, unit(rng));
    cfg.scaling_enabled = trial % 3 != 0;
    const Matrix y = oracle::random_matrix(rng, L, c, -5.0, 5.0);
    const Matrix y_uni = oracle::random_matrix(rng, L, c, -5.0, 5.0);
    const auto fb = fsa::build_feedback(y, y_uni, cfg);
    const Matrix attn = oracle::random_stochastic(rng, L, L, trial % 2 ? 0.5 : 0.0);
    bool ok = row_stochastic(fb.a_f, 1e-6, &worst);
    for (auto s : {fsa::AdaptStrategy::Refine, fsa::AdaptStrategy::Precondition, fsa::AdaptStrategy::Replace,
                   fsa::AdaptStrategy::Ensemble}) {
      ok = row_stochastic(fsa::adapt_attention(attn, fb.a_f, s), 1e-6, &worst) && ok;
    }
    if (!ok) ++failures;
  }
  return {failures == 0, fmt("%.0f of 500 inputs failed, max |row sum - 1| = %.3g", double(failures), worst)};
}

Outcome monotonicity() {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<std::size_t> len(1, 32);
  std::size_t superset_violations = 0, order_violations = 0;
  for (std::size_t trial = 0; trial < 300; ++trial) {
    const std::size_t L = len(rng);
    const Matrix y_iso = random_distributions(rng, L, 6, 3.0);
    const Matrix s = fsa::output_similarity(y_iso, fsa::SimilarityMetric::KL);
    const auto conf = fsa::cumulative_confidence(s);

    std::vector<fsa::MaskedMatrix> by_p;
    for (int step = 1; step <= 10; ++step) {
      fsa::FeedbackConfig cfg;
      cfg.p = step / 10.0;
      by_p.push_back(fsa::prune_scale(s, conf, cfg));
    }
    for (std::size_t k = 1; k < by_p.size(); ++k)
      for (std::size_t i = 0; i < L; ++i) {
        const auto small = keep_row(by_p[k - 1], i), large = keep_row(by_p[k], i);
        for (std::size_t j = 0; j < L; ++j)
          if (small[j] && !large[j]) ++superset_violations;
      }

    std::vector<std::vector<std::size_t>> reference;
    for (double lambda : {0.0, 1.0, 2.0, 4.0}) {
      fsa::FeedbackConfig cfg;
      cfg.lambda = lambda;
      const auto pruned = fsa::prune_scale(s, conf, cfg);
      const Matrix a_f = fsa::feedback_attention(pruned);
      for (std::size_t i = 0; i < L; ++i) {
        const auto keep = keep_row(pruned, i);
        const auto order = ranking(a_f.row(i), keep);
        if (lambda == 0.0) {
          reference.push_back(ranking(s.row(i), keep));
        }
        if (order != reference[i]) ++order_violations;
      }
    }
  }
  return {superset_violations == 0 && order_violations == 0,
          fmt("superset violations %.0f, ranking changes %.0f", double(superset_violations),
              double(order_violations))};
}

Outcome kl_accuracy() {
  std::mt19937_64 rng(53);
  std::uniform_int_distribution<std::size_t> classes(2, 30);
  std::uniform_real_distribution<double> spread(0.1, 20.0);
  double worst = 0.0;
  bool diagonal_zero = true;
  for (std::size_t trial = 0; trial < 100; ++trial) {
    const std::size_t c = classes(rng);
    const Matrix pair = random_distributions(rng, 2, c, spread(rng));
    const Matrix d = fsa::kl_divergence_matrix(pair);
    for (std::size_t i = 0; i < 2; ++i) {
      if (d(i, i) != 0.0) diagonal_zero = false;
      const std::size_t j = 1 - i;
      const double ref = oracle::kl_high_precision({pair.row(i).begin(), pair.row(i).end()},
                                                   {pair.row(j).begin(), pair.row(j).end()});
      worst = std::max(worst, std::abs(d(i, j) - std::max(ref, 0.0)));
    }
  }
  return {worst < 1e-9 && diagonal_zero,
          fmt("max abs error %.3g, diagonal exactly zero: ", worst) + (diagonal_zero ? "yes" : "no")};
}

double accuracy(const fsa::SegmentationMap& pred, const fsa::SegmentationMap& truth) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

Outcome planted_cluster() {
  const auto fx = fsa::synthesize(planted_spec());
  const auto result = run_planted(fx, 1);
  const double r_init = fsa::retention_topk(result.attn_init, fx.labels, 10).retention;
  const double r_adapted = fsa::retention_topk(result.attn_adapted, fx.labels, 10).retention;
  const double acc = accuracy(result.m_adapted, fx.labels);
  return {r_adapted >= r_init && acc >= 0.95,
          fmt("retention@10 init %.4f adapted %.4f", r_init, r_adapted) + fmt(", accuracy %.4f", acc)};
}

Outcome retention_oracle() {
  std::mt19937_64 rng(61);
  // Entries drawn from a small grid so rows are full of ties.
  std::uniform_int_distribution<int> grid(0, 3);
  std::size_t checked = 0, mismatches = 0;
  for (std::size_t L = 2; L <= 5; ++L) {
    const std::size_t classes = std::min<std::size_t>(L, 3);
    std::size_t labelings = 1;
    for (std::size_t i = 0; i < L; ++i) labelings *= classes;
    for (std::size_t a = 0; a < 60; ++a) {
      Matrix attn(L, L);
      for (double& x : attn.data()) x = grid(rng);
      for (std::size_t i = 0; i < L; ++i) {
        double total = 0.0;
        for (double x : attn.row(i)) total += x;
        if (total == 0.0) attn(i, (i + 1) % L) = total = 1.0;
        for (double& x : attn.row(i)) x /= total;
      }
      for (std::size_t code = 0; code < labelings; ++code) {
        fsa::SegmentationMap labels(L);
        for (std::size_t i = 0, rest = code; i < L; ++i, rest /= classes) labels[i] = rest % classes;
        for (std::size_t k = 1; k <= std::min<std::size_t>(3, L - 1); ++k) {
          ++checked;
          if (fsa::retention_topk(attn, labels, k).retention != oracle::retention_exhaustive(attn, labels, k))
            ++mismatches;
        }
      }
    }
  }
  return {mismatches == 0, fmt("%.0f disagreements over %.0f cases", double(mismatches), double(checked))};
}

Outcome format_round_trip() {
  std::mt19937_64 rng(71);
  std::uniform_int_distribution<std::size_t> ndim(1, 4), extent(1, 7);
  std::normal_distribution<float> value(0.0f, 100.0f);
  std::size_t failures = 0;
  for (std::size_t trial = 0; trial < 50; ++trial) {
    fsa::io::Tensor t;
    std::size_t count = 1;
    for (std::size_t k = ndim(rng); k > 0; --k) {
      t.dims.push_back(extent(rng));
      count *= t.dims.back();
    }
    for (std::size_t i = 0; i < count; ++i) t.values.push_back(value(rng));
    const auto first = fsa::io::encode_tensor(t);
    const auto again = fsa::io::encode_tensor(fsa::io::decode_tensor(first));
    if (first != again) ++failures;
  }
  return {failures == 0, fmt("%.0f of 50 tensors differed after write-read-write", double(failures))};
}

Outcome iteration_null() {
  const auto fx = fsa::synthesize(planted_spec());
  const double once = fsa::retention_topk(run_planted(fx, 1).attn_adapted, fx.labels, 10).retention;
  const double twice = fsa::retention_topk(run_planted(fx, 2).attn_adapted, fx.labels, 10).retention;
  return {std::abs(twice - once) < 0.02,
          fmt("retention@10 after 1 pass %.4f, after 2 passes %.4f", once, twice)};
}

Outcome throughput() {
  const std::size_t L = 784, v = 64, d = 32, c = 21;
  std::mt19937_64 rng(83);
  fsa::HeadWeights w = fsa::HeadWeights::bare(v);
  w.joint = oracle::random_matrix(rng, v, d);
  const fsa::PatchTokens tokens{oracle::random_matrix(rng, L, v)};
  const fsa::TextEmbeddings text{oracle::random_matrix(rng, c, d)};
  const Matrix attn = oracle::random_stochastic(rng, L, L);
  const Matrix y = fsa::dense_logits(fsa::head_forward(attn, tokens, w), text);

  const auto start = std::chrono::steady_clock::now();
  const Matrix y_uni = fsa::dense_logits(fsa::head_forward(fsa::uniform_attention(L), tokens, w), text);
  const auto fb = fsa::build_feedback(y, y_uni, fsa::FeedbackConfig{});
  const Matrix adapted = fsa::adapt_attention(attn, fb.a_f, fsa::AdaptStrategy::Ensemble);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return {ms < 500.0 && adapted.rows() == L, fmt("feedback stage at L=784, c=21 took %.1f ms", ms)};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"isolation null", 1000.0, isolation_null},
      {"pruning oracle equivalence", 5000.0, pruning_oracle},
      {"stochasticity", 0.0, stochasticity},
      {"monotonicity and order preservation", 0.0, monotonicity},
      {"KL kernel accuracy", 0.0, kl_accuracy},
      {"planted-cluster end-to-end", 2000.0, planted_cluster},
      {"retention metric oracle", 0.0, retention_oracle},
      {"format round-trip", 0.0, format_round_trip},
      {"iteration null finding", 0.0, iteration_null},
      {"throughput sanity", 500.0, throughput},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome out{false, ""};
    const auto start = std::chrono::steady_clock::now();
    try {
      out = c.check();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    bool pass = out.pass;
    std::string timing = fmt("%.1f ms", ms);
    if (c.time_limit_ms > 0.0) {
      timing += fmt(", limit %.0f ms", c.time_limit_ms);
      pass = pass && ms < c.time_limit_ms;
    }
    std::printf("%s %s: %s (%s)\n", pass ? "PASS" : "FAIL", c.name, out.detail.c_str(), timing.c_str());
    failed += pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
