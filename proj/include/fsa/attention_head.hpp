#pragma once

// Last transformer block of a ViT image encoder, reduced to one fused head,
// plus the cosine-logit readout against class text embeddings.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fsa/matrix.hpp"

namespace fsa {

using AttentionMap = Matrix;
using DenseLogits = Matrix;

// L×v patch features with the CLS token already removed.
struct PatchTokens {
  Matrix x;

  explicit PatchTokens(Matrix features);
  std::size_t count() const { return x.rows(); }
  std::size_t dim() const { return x.cols(); }
};

struct FeedForward {
  Matrix w1;  // v×h
  Matrix b1;  // 1×h
  Matrix w2;  // h×v
  Matrix b2;  // 1×v
};

struct HeadWeights {
  Matrix w_q;    // v×v
  Matrix w_k;    // v×v
  Matrix w_v;    // v×v
  Matrix proj;   // v×v
  Matrix joint;  // v×d, projection into the shared image-text space
  std::optional<FeedForward> ffn;
  double tau = 1.0;
  bool use_residual = false;
  bool use_ffn = false;

  std::size_t visual_dim() const { return w_q.rows(); }
  std::size_t joint_dim() const { return joint.cols(); }

  // Identity projections, no residual and no FFN: the bare head used by
  // ClearCLIP/ProxyCLIP-style last layers.
  static HeadWeights bare(std::size_t v);
  // Throws ErrorKind::Shape / Validation when shapes or tau are inconsistent.
  void validate() const;
};

// c×d class embeddings.
struct TextEmbeddings {
  Matrix t;

  explicit TextEmbeddings(Matrix embeddings);
  std::size_t classes() const { return t.rows(); }
  std::size_t dim() const { return t.cols(); }
};

enum class AttentionMode { QK, QQ, KK, VV, External };

struct AttentionConfig {
  AttentionMode mode = AttentionMode::QK;
  std::optional<Matrix> external_attention;
};

inline constexpr double kStochasticTolerance = 1e-5;

std::string to_string(AttentionMode mode);
std::optional<AttentionMode> parse_attention_mode(const std::string& name);

struct QKV {
  Matrix q;
  Matrix k;
  Matrix v;
};

QKV qkv_project(const PatchTokens& tokens, const HeadWeights& w);

AttentionMap initial_attention(const QKV& qkv, const AttentionConfig& cfg, double tau);

// Features captured after each operation of the block, in order:
// context, post_proj, post_residual, post_ffn, post_joint.
struct StageTrace {
  std::vector<std::pair<std::string, Matrix>> stages;
};

Matrix head_forward(const AttentionMap& attn, const PatchTokens& tokens,
                    const HeadWeights& w, const Matrix& values);
// Same computation, recording every intermediate feature matrix.
Matrix head_forward(const AttentionMap& attn, const PatchTokens& tokens,
                    const HeadWeights& w, const Matrix& values, StageTrace* trace);
// Convenience overload that projects V itself.
Matrix head_forward(const AttentionMap& attn, const PatchTokens& tokens, const HeadWeights& w);

DenseLogits dense_logits(const Matrix& z, const TextEmbeddings& text);

SegmentationMap segment(const DenseLogits& y);

double gelu(double x);

}  // namespace fsa
