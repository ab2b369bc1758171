#include <random>

#include "doctest.h"
#include "fsa/error.hpp"
#include "fsa/feedback.hpp"
#include "fsa/metrics.hpp"
#include "oracles.hpp"

using fsa::Matrix;

namespace {

const Matrix kBlocks{{0.5, 0.5, 0, 0}, {0.5, 0.5, 0, 0}, {0, 0, 0.5, 0.5}, {0, 0, 0.5, 0.5}};

}  // namespace

TEST_CASE("retention_topk") {
  CHECK(fsa::retention_topk(kBlocks, {0, 0, 1, 1}, 1).retention == 1.0);
  CHECK(fsa::retention_topk(kBlocks, {0, 1, 0, 1}, 1).retention == 0.0);

  const auto r = fsa::retention_topk(fsa::uniform_attention(4), {0, 0, 0, 1}, 3);
  CHECK(r.retention == 0.75);
  CHECK(r.per_patch_hits == std::vector<bool>{true, true, true, false});
  CHECK(r.k == 3);

  try {
    fsa::retention_topk(Matrix{{1.0}}, {0}, 1);
    FAIL("expected metric-undefined error");
  } catch (const fsa::Error& e) {
    CHECK(e.kind() == fsa::ErrorKind::MetricUndefined);
  }
  CHECK_THROWS_AS(fsa::retention_topk(kBlocks, {0, 0, 1, 1}, 4), fsa::Error);
  CHECK_THROWS_AS(fsa::retention_topk(kBlocks, {0, 0, 1, 1}, 0), fsa::Error);
  CHECK_THROWS_AS(fsa::retention_topk(kBlocks, {0, 0, 1}, 1), fsa::Error);
}

TEST_CASE("retention_topk matches the exhaustive reference on small inputs") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = 2 + rng() % 5;  // 2..6
    Matrix attn = oracle::random_stochastic(rng, n, n, 0.4);
    if (trial % 3 == 0)  // quantize to force ties
      for (double& x : attn.data()) x = std::round(x * 4.0) / 4.0;
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng() % 3;
    for (std::size_t k = 1; k <= std::min<std::size_t>(3, n - 1); ++k) {
      CHECK(fsa::retention_topk(attn, labels, k).retention == oracle::retention_exhaustive(attn, labels, k));
    }
  }
}

TEST_CASE("retention properties") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng() % 20;
    const Matrix attn = oracle::random_stochastic(rng, n, n, 0.5);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng() % 4;
    std::vector<std::size_t> relabeled(n);
    const std::size_t perm[4] = {2, 0, 3, 1};
    for (std::size_t i = 0; i < n; ++i) relabeled[i] = perm[labels[i]];

    double prev = 0.0;
    for (std::size_t k = 1; k < n; ++k) {
      const double r = fsa::retention_topk(attn, labels, k).retention;
      CHECK(r == fsa::retention_topk(attn, relabeled, k).retention);
      CHECK(r >= prev);
      prev = r;
    }
  }
}

TEST_CASE("retention_through_ops") {
  // Identity attention used as its own features: all off-diagonal scores
  // tie at zero, and both rankings break ties toward the lower index.
  fsa::StageTrace trace;
  trace.stages.emplace_back("context", Matrix::identity(4));
  trace.stages.emplace_back("post_proj", Matrix::identity(4));
  const auto out = fsa::retention_through_ops(Matrix::identity(4), trace, 1);
  REQUIRE(out.size() == 2);
  CHECK(out[0].first == "context");
  CHECK(out[0].second == 1.0);
  CHECK(out[1].second == out[0].second);

  const Matrix attn{{0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}, {1, 0, 0, 0}};
  fsa::StageTrace spread;
  spread.stages.emplace_back("context", Matrix{{1, 0}, {0.9, 0.1}, {0.1, 0.9}, {0.95, 0.05}});
  // Nearest by cosine: 0->3, 1->3, 2->1, 3->0; anchors are 1,2,3,0.
  CHECK(fsa::retention_through_ops(attn, spread, 1)[0].second == 0.25);

  // Constant features: every similarity ties, so top-k is the lowest other
  // indices. Anchors are 1,2,3,0; with k=2 the candidate sets are
  // {1,2},{0,2},{0,1},{0,1}; patch 2 loses its anchor.
  fsa::StageTrace flat;
  flat.stages.emplace_back("context", Matrix(4, 3, 1.0));
  CHECK(fsa::retention_through_ops(attn, flat, 2)[0].second == 0.75);
  CHECK(fsa::retention_through_ops(attn, flat, 3)[0].second == 1.0);

  CHECK_THROWS_AS(fsa::retention_through_ops(Matrix{{1.0}}, flat, 1), fsa::Error);
}

TEST_CASE("miou") {
  CHECK(fsa::miou({0, 1, 2, 1}, {0, 1, 2, 1}, 3).mean == 1.0);
  CHECK(fsa::miou({0, 0, 0}, {1, 1, 1}, 2).mean == 0.0);

  const auto r = fsa::miou({0, 0, 1, 1}, {0, 1, 1, 1}, 3);
  CHECK(*r.per_class[0] == 0.5);
  CHECK(*r.per_class[1] == doctest::Approx(2.0 / 3.0));
  CHECK(!r.per_class[2]);
  CHECK(r.mean == doctest::Approx(7.0 / 12.0));

  const auto ignored = fsa::miou({0, 1, 1, 1}, {0, 255, 1, 1}, 2, 255);
  CHECK(ignored.mean == 1.0);

  CHECK_THROWS_AS(fsa::miou({0, 3}, {0, 1}, 2), fsa::Error);
  CHECK_THROWS_AS(fsa::miou({0}, {0, 1}, 2), fsa::Error);

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> a(20), b(20);
    for (auto& x : a) x = rng() % 5;
    for (auto& x : b) x = rng() % 5;
    CHECK(fsa::miou(a, a, 5).mean == 1.0);
    CHECK(fsa::miou(a, b, 5).mean == fsa::miou(b, a, 5).mean);
  }
}
