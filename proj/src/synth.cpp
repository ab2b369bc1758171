#include "fsa/synth.hpp"

#include <cmath>
#include <numbers>

#include "fsa/error.hpp"
#include "fsa/io.hpp"

namespace fsa {

double SplitMix64::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 == 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

// Modified Gram-Schmidt, rows in order.
void orthonormalize_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t k = 0; k < i; ++k) {
      const auto q = m.row(k);
      double dot = 0.0;
      for (std::size_t j = 0; j < r.size(); ++j) dot += r[j] * q[j];
      for (std::size_t j = 0; j < r.size(); ++j) r[j] -= dot * q[j];
    }
    double sq = 0.0;
    for (double x : r) sq += x * x;
    const double norm = std::sqrt(sq);
    if (!(norm > 1e-9)) throw Error(ErrorKind::DegenerateVector, "synth: random basis is rank deficient");
    for (double& x : r) x /= norm;
  }
}

}  // namespace

void SynthSpec::validate() const {
  auto fail = [](const char* key, const std::string& why) {
    throw Error(ErrorKind::Config, std::string(key) + ": " + why);
  };
  if (patches < 2) fail("L", "need at least 2 patches");
  if (visual_dim < 1) fail("v", "must be at least 1");
  if (joint_dim < 1) fail("d", "must be at least 1");
  if (classes < 2) fail("c", "need at least 2 classes");
  if (joint_dim > visual_dim) fail("d", "must not exceed v");
  if (classes > joint_dim) fail("c", "must not exceed d");
  if (clusters < 1 || clusters > std::min(patches, classes)) {
    fail("clusters", "must lie in [1, min(L, c)]");
  }
  if (2 * clusters > patches) fail("clusters", "every cluster needs at least 2 patches");
  if (!(attention_noise >= 0.0 && attention_noise <= 1.0)) fail("noise", "must lie in [0, 1]");
  if (!(logit_separation >= 0.0) || !std::isfinite(logit_separation)) {
    fail("separation", "must be a finite value >= 0");
  }
}

SynthFixture synthesize(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.patches;
  const std::size_t v = spec.visual_dim;
  const std::size_t d = spec.joint_dim;
  const double sqrt_v = std::sqrt(static_cast<double>(v));
  SplitMix64 rng(spec.seed);

  Matrix text(spec.classes, d);
  for (double& x : text.data()) x = rng.normal();
  orthonormalize_rows(text);

  Matrix joint_t(d, v);
  for (double& x : joint_t.data()) x = rng.normal();
  orthonormalize_rows(joint_t);
  const Matrix joint = transpose(joint_t);

  // prototype · joint reproduces the text direction exactly.
  const Matrix prototypes = matmul(text, joint_t);

  SynthFixture fx;
  fx.labels.resize(n);
  fx.tokens = Matrix(n, v);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i * spec.clusters / n;
    fx.labels[i] = label;
    auto r = fx.tokens.row(i);
    const auto proto = prototypes.row(label);
    for (std::size_t j = 0; j < v; ++j) {
      r[j] = spec.logit_separation * proto[j] + rng.normal() / sqrt_v;
    }
  }

  std::vector<std::size_t> cluster_size(spec.clusters, 0);
  for (auto l : fx.labels) ++cluster_size[l];

  fx.attention = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = fx.attention.row(i);
    const double clean = (1.0 - spec.attention_noise) / static_cast<double>(cluster_size[fx.labels[i]]);
    for (std::size_t j = 0; j < n; ++j)
      if (fx.labels[j] == fx.labels[i]) r[j] = clean;

    std::size_t cols[kNoiseSpikes];
    double weights[kNoiseSpikes];
    double total = 0.0;
    for (std::size_t s = 0; s < kNoiseSpikes; ++s) {
      cols[s] = std::min(n - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)));
      weights[s] = -std::log(1.0 - rng.uniform());
      total += weights[s];
    }
    for (std::size_t s = 0; s < kNoiseSpikes; ++s) {
      const double w = total > 0.0 ? weights[s] / total : 1.0 / kNoiseSpikes;
      r[cols[s]] += spec.attention_noise * w;
    }
  }

  HeadWeights& w = fx.weights;
  w.w_q = Matrix(v, v);
  for (double& x : w.w_q.data()) x = rng.normal() / sqrt_v;
  w.w_k = Matrix(v, v);
  for (double& x : w.w_k.data()) x = rng.normal() / sqrt_v;
  w.w_v = Matrix::identity(v);
  w.proj = Matrix::identity(v);
  w.joint = joint;
  w.tau = std::sqrt(static_cast<double>(v));

  fx.text = text;
  return fx;
}

void write_fixture(const SynthFixture& fx, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "weights", ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + (dir / "weights").string() + ": " + ec.message());

  io::write_matrix(dir / "tokens.fsat", fx.tokens);
  io::write_matrix(dir / "text.fsat", fx.text);
  io::write_matrix(dir / "attention.fsat", fx.attention);
  io::write_labels(dir / "labels.fsat", fx.labels);
  io::write_matrix(dir / "weights" / "w_q.fsat", fx.weights.w_q);
  io::write_matrix(dir / "weights" / "w_k.fsat", fx.weights.w_k);
  io::write_matrix(dir / "weights" / "w_v.fsat", fx.weights.w_v);
  io::write_matrix(dir / "weights" / "proj.fsat", fx.weights.proj);
  io::write_matrix(dir / "weights" / "joint.fsat", fx.weights.joint);

  io::RunConfig cfg;
  cfg.tokens = "tokens.fsat";
  cfg.text = "text.fsat";
  cfg.weights_dir = "weights";
  cfg.external_attention = "attention.fsat";
  cfg.labels = "labels.fsat";
  cfg.output_dir = "out";
  cfg.attention_mode = AttentionMode::External;
  cfg.tau = fx.weights.tau;
  io::write_file_atomic(dir / "run.cfg", "# planted-cluster fixture\n" + io::format_config(cfg));
}

}  // namespace fsa
