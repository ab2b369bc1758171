#pragma once

// Feedback-driven self-adaptive attention.
//
// The output logits of the last block are turned back into an L×L patch
// affinity: the initial attention's own contribution is isolated against a
// uniform-attention branch, patches are compared through the divergence of
// their class distributions, the resulting similarity is sparsified by
// cumulative confidence, and the sparse map is folded back into the
// attention that mixes V.

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fsa/attention_head.hpp"
#include "fsa/matrix.hpp"

namespace fsa {

enum class SimilarityMetric { KL, Cosine };
enum class PruningMode { Confidence, FixedRatio, FixedThreshold, None };
enum class AdaptStrategy { Refine, Precondition, Replace, Ensemble };

struct FeedbackConfig {
  double lambda = 2.0;  // exponential scaling sharpness
  double p = 0.45;      // cumulative confidence cutoff
  SimilarityMetric similarity_metric = SimilarityMetric::KL;
  PruningMode pruning_mode = PruningMode::Confidence;
  double ratio = 0.25;  // FixedRatio
  std::optional<double> threshold;  // FixedThreshold; unset means 1/L

  bool scaling_enabled = true;
  AdaptStrategy adapt_strategy = AdaptStrategy::Ensemble;
  std::size_t iterations = 1;

  // Throws ErrorKind::Config naming the offending field.
  void validate() const;
};

std::string to_string(SimilarityMetric m);
std::string to_string(PruningMode m);
std::string to_string(AdaptStrategy s);
std::optional<SimilarityMetric> parse_similarity_metric(const std::string& name);
std::optional<PruningMode> parse_pruning_mode(const std::string& name);
std::optional<AdaptStrategy> parse_adapt_strategy(const std::string& name);

// Per-row confidence ranking of a similarity map.
struct ConfidenceState {
  Matrix s_hat;  // row softmax of S
  Matrix c;      // inclusive cumulative confidence, in original column order
  // order[i * L + r] is the column holding rank r of row i (descending S_hat,
  // ties to the lower column).
  std::vector<std::size_t> order;

  std::size_t top(std::size_t row) const { return order[row * c.cols()]; }
};

AttentionMap uniform_attention(std::size_t n);

DenseLogits isolate_logits(const DenseLogits& y, const DenseLogits& y_uni);

// D[i][j] = KL(Y_iso[i] || Y_iso[j]) in nats.
Matrix kl_divergence_matrix(const DenseLogits& y_iso);
// (1 + cos) / 2 between class distributions; already a similarity.
Matrix cosine_similarity_matrix(const DenseLogits& y_iso);
// KL mode returns D, cosine mode returns S directly.
Matrix pairwise_divergence(const DenseLogits& y_iso, SimilarityMetric metric);

Matrix divergence_to_similarity(const Matrix& d);

// S for either metric: 1/(D+1) under KL, the cosine map otherwise.
Matrix output_similarity(const DenseLogits& y_iso, SimilarityMetric metric);

ConfidenceState cumulative_confidence(const Matrix& s);

MaskedMatrix prune_scale(const Matrix& s, const ConfidenceState& conf, const FeedbackConfig& cfg);

AttentionMap feedback_attention(const MaskedMatrix& s_sparse);

AttentionMap adapt_attention(const AttentionMap& attn_init, const AttentionMap& a_f,
                             AdaptStrategy strategy);

// Everything the feedback stage derives from one pair of logit maps.
struct FeedbackState {
  DenseLogits y_iso;
  Matrix s;
  ConfidenceState confidence;
  MaskedMatrix s_sparse;
  AttentionMap a_f;
};

FeedbackState build_feedback(const DenseLogits& y, const DenseLogits& y_uni,
                             const FeedbackConfig& cfg);

struct PipelineResult {
  AttentionMap attn_init;
  AttentionMap a_f;         // feedback attention of the final iteration
  AttentionMap attn_adapted;  // effective attention applied to V
  DenseLogits y_init;
  DenseLogits y_adapted;
  SegmentationMap m_init;
  SegmentationMap m_adapted;

  struct Diagnostics {
    std::vector<std::size_t> kept_per_row;  // final iteration
    std::size_t iterations = 0;
    // Milliseconds per stage in pipeline order, accumulated across iterations.
    std::vector<std::pair<std::string, double>> timing_ms;
    StageTrace trace_init;
    StageTrace trace_adapted;
  } diagnostics;
};

PipelineResult fsa_pipeline(const PatchTokens& tokens, const HeadWeights& w,
                            const TextEmbeddings& text, const AttentionConfig& acfg,
                            const FeedbackConfig& fcfg);

}  // namespace fsa
