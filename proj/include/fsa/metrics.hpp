#pragma once

// Coherence-retention between attention and predictions, and mIoU.

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fsa/attention_head.hpp"
#include "fsa/matrix.hpp"

namespace fsa {

struct RetentionReport {
  std::size_t k = 0;
  double retention = 0.0;
  std::vector<bool> per_patch_hits;
};

// Fraction of patches whose k most-attended other patches include one with
// the same predicted label. Self is never a candidate; ties go to the lower
// column index.
RetentionReport retention_topk(const AttentionMap& attn, const SegmentationMap& labels,
                               std::size_t k);

// For each stage of `trace`, the fraction of patches whose most-attended
// other patch under `attn_init` stays among their k most cosine-similar
// patches at that stage.
std::vector<std::pair<std::string, double>> retention_through_ops(const AttentionMap& attn_init,
                                                                  const StageTrace& trace,
                                                                  std::size_t k = 10);

struct MiouResult {
  // Unset for classes absent from both maps.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
};

MiouResult miou(const SegmentationMap& pred, const SegmentationMap& gt, std::size_t num_classes,
                std::optional<std::size_t> ignore_index = std::nullopt);

// Indices of the k largest entries of `values`, excluding `skip`, in rank
// order (descending value, ties to the lower index).
std::vector<std::size_t> top_k_excluding(std::span<const double> values, std::size_t k,
                                         std::size_t skip);

}  // namespace fsa
