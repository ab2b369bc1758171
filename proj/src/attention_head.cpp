#include "fsa/attention_head.hpp"

#include <cmath>
#include <numbers>

#include "fsa/error.hpp"

namespace fsa {
namespace {

void expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorKind::Shape, std::string(name) + " must be " + std::to_string(rows) + "x" +
                                      std::to_string(cols) + ", got " + std::to_string(m.rows()) +
                                      "x" + std::to_string(m.cols()));
  }
}

Matrix add_bias(Matrix m, const Matrix& bias) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias(0, j);
  }
  return m;
}

}  // namespace

PatchTokens::PatchTokens(Matrix features) : x(std::move(features)) {
  if (x.empty()) throw Error(ErrorKind::Shape, "patch tokens are empty");
  if (!all_finite(x)) throw Error(ErrorKind::Validation, "patch tokens contain non-finite values");
}

TextEmbeddings::TextEmbeddings(Matrix embeddings) : t(std::move(embeddings)) {
  if (t.rows() < 2) throw Error(ErrorKind::Shape, "text embeddings need at least 2 classes");
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double sq = 0.0;
    for (double x : t.row(i)) sq += x * x;
    if (!(sq > 0.0) || !std::isfinite(sq)) {
      throw Error(ErrorKind::DegenerateVector,
                  "text embedding row " + std::to_string(i) + " has zero norm");
    }
  }
}

HeadWeights HeadWeights::bare(std::size_t v) {
  HeadWeights w;
  w.w_q = Matrix::identity(v);
  w.w_k = Matrix::identity(v);
  w.w_v = Matrix::identity(v);
  w.proj = Matrix::identity(v);
  w.joint = Matrix::identity(v);
  w.tau = std::sqrt(static_cast<double>(v));
  return w;
}

void HeadWeights::validate() const {
  const std::size_t v = w_q.rows();
  expect_shape(w_q, v, v, "W_Q");
  expect_shape(w_k, v, v, "W_K");
  expect_shape(w_v, v, v, "W_V");
  expect_shape(proj, v, v, "Proj");
  if (joint.rows() != v) expect_shape(joint, v, joint.cols(), "joint projection");
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw Error(ErrorKind::Validation, "tau must be positive, got " + std::to_string(tau));
  }
  if (use_ffn) {
    if (!ffn) throw Error(ErrorKind::Shape, "use_ffn is set but no FFN parameters were given");
    const std::size_t h = ffn->w1.cols();
    expect_shape(ffn->w1, v, h, "FFN W1");
    expect_shape(ffn->b1, 1, h, "FFN b1");
    expect_shape(ffn->w2, h, v, "FFN W2");
    expect_shape(ffn->b2, 1, v, "FFN b2");
  }
}

std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::QK: return "qk";
    case AttentionMode::QQ: return "qq";
    case AttentionMode::KK: return "kk";
    case AttentionMode::VV: return "vv";
    case AttentionMode::External: return "external";
  }
  return "qk";
}

std::optional<AttentionMode> parse_attention_mode(const std::string& name) {
  for (auto m : {AttentionMode::QK, AttentionMode::QQ, AttentionMode::KK, AttentionMode::VV,
                 AttentionMode::External}) {
    if (to_string(m) == name) return m;
  }
  return std::nullopt;
}

QKV qkv_project(const PatchTokens& tokens, const HeadWeights& w) {
  return {matmul(tokens.x, w.w_q), matmul(tokens.x, w.w_k), matmul(tokens.x, w.w_v)};
}

AttentionMap initial_attention(const QKV& qkv, const AttentionConfig& cfg, double tau) {
  if (qkv.q.rows() != qkv.k.rows() || qkv.q.rows() != qkv.v.rows() ||
      qkv.q.cols() != qkv.k.cols() || qkv.q.cols() != qkv.v.cols()) {
    throw Error(ErrorKind::Shape, "Q, K and V must share a shape");
  }
  if (!(tau > 0.0)) throw Error(ErrorKind::Validation, "tau must be positive");

  auto self_attention = [tau](const Matrix& lhs, const Matrix& rhs) {
    return row_softmax(scale(matmul_transposed(lhs, rhs), 1.0 / tau));
  };
  switch (cfg.mode) {
    case AttentionMode::QK: return self_attention(qkv.q, qkv.k);
    case AttentionMode::QQ: return self_attention(qkv.q, qkv.q);
    case AttentionMode::KK: return self_attention(qkv.k, qkv.k);
    case AttentionMode::VV: return self_attention(qkv.v, qkv.v);
    case AttentionMode::External: {
      if (!cfg.external_attention) {
        throw Error(ErrorKind::Config, "external attention mode requires an attention matrix");
      }
      const Matrix& ext = *cfg.external_attention;
      const std::size_t n = qkv.q.rows();
      expect_shape(ext, n, n, "external attention");
      require_row_stochastic(ext, kStochasticTolerance, "external attention");
      return ext;
    }
  }
  throw Error(ErrorKind::Config, "unknown attention mode");
}

Matrix head_forward(const AttentionMap& attn, const PatchTokens& tokens, const HeadWeights& w,
                    const Matrix& values, StageTrace* trace) {
  const std::size_t n = tokens.count();
  expect_shape(attn, n, n, "attention");
  expect_shape(values, n, tokens.dim(), "V");
  require_row_stochastic(attn, kStochasticTolerance, "attention");
  w.validate();
  if (w.visual_dim() != tokens.dim()) {
    throw Error(ErrorKind::Shape, "weights expect visual dim " + std::to_string(w.visual_dim()) +
                                      ", tokens have " + std::to_string(tokens.dim()));
  }

  auto record = [trace](const char* name, const Matrix& m) {
    if (trace) trace->stages.emplace_back(name, m);
  };

  Matrix context = matmul(attn, values);
  record("context", context);
  Matrix y = matmul(context, w.proj);
  record("post_proj", y);
  if (w.use_residual) y = add(tokens.x, y);
  record("post_residual", y);
  Matrix z = y;
  if (w.use_ffn) {
    Matrix hidden = add_bias(matmul(y, w.ffn->w1), w.ffn->b1);
    for (double& h : hidden.data()) h = gelu(h);
    z = add(y, add_bias(matmul(hidden, w.ffn->w2), w.ffn->b2));
  }
  record("post_ffn", z);
  Matrix out = matmul(z, w.joint);
  record("post_joint", out);
  return out;
}

Matrix head_forward(const AttentionMap& attn, const PatchTokens& tokens, const HeadWeights& w,
                    const Matrix& values) {
  return head_forward(attn, tokens, w, values, nullptr);
}

Matrix head_forward(const AttentionMap& attn, const PatchTokens& tokens, const HeadWeights& w) {
  return head_forward(attn, tokens, w, matmul(tokens.x, w.w_v), nullptr);
}

DenseLogits dense_logits(const Matrix& z, const TextEmbeddings& text) {
  return cosine_rows(z, text.t);
}

SegmentationMap segment(const DenseLogits& y) {
  if (y.cols() < 2) throw Error(ErrorKind::Shape, "segmentation needs at least 2 classes");
  return row_argmax(y);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

}  // namespace fsa
