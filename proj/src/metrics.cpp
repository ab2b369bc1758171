#include "fsa/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "fsa/error.hpp"

namespace fsa {
namespace {

void require_metric_size(std::size_t n, std::size_t k) {
  if (n < 2) throw Error(ErrorKind::MetricUndefined, "retention needs at least 2 patches");
  if (k < 1 || k > n - 1) {
    throw Error(ErrorKind::Validation, "k must lie in [1, " + std::to_string(n - 1) +
                                           "], got " + std::to_string(k));
  }
}

}  // namespace

std::vector<std::size_t> top_k_excluding(std::span<const double> values, std::size_t k,
                                         std::size_t skip) {
  std::vector<std::size_t> idx;
  idx.reserve(values.size());
  for (std::size_t j = 0; j < values.size(); ++j)
    if (j != skip) idx.push_back(j);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return values[a] > values[b] || (values[a] == values[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

RetentionReport retention_topk(const AttentionMap& attn, const SegmentationMap& labels,
                               std::size_t k) {
  require_square(attn, "attention");
  const std::size_t n = attn.rows();
  if (labels.size() != n) {
    throw Error(ErrorKind::Shape, "segmentation map length " + std::to_string(labels.size()) +
                                      " does not match attention size " + std::to_string(n));
  }
  require_metric_size(n, k);

  RetentionReport report;
  report.k = k;
  report.per_patch_hits.resize(n);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto top = top_k_excluding(attn.row(i), k, i);
    const bool hit = std::any_of(top.begin(), top.end(),
                                 [&](std::size_t j) { return labels[j] == labels[i]; });
    report.per_patch_hits[i] = hit;
    hits += hit ? 1 : 0;
  }
  report.retention = static_cast<double>(hits) / static_cast<double>(n);
  return report;
}

std::vector<std::pair<std::string, double>> retention_through_ops(const AttentionMap& attn_init,
                                                                  const StageTrace& trace,
                                                                  std::size_t k) {
  require_square(attn_init, "attention");
  const std::size_t n = attn_init.rows();
  require_metric_size(n, k);

  std::vector<std::size_t> anchor(n);
  for (std::size_t i = 0; i < n; ++i) anchor[i] = top_k_excluding(attn_init.row(i), 1, i)[0];

  std::vector<std::pair<std::string, double>> out;
  out.reserve(trace.stages.size());
  for (const auto& [name, features] : trace.stages) {
    if (features.rows() != n) {
      throw Error(ErrorKind::Shape, "stage " + name + " has " + std::to_string(features.rows()) +
                                        " rows, expected " + std::to_string(n));
    }
    const Matrix sim = cosine_rows(features, features);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto top = top_k_excluding(sim.row(i), k, i);
      kept += std::find(top.begin(), top.end(), anchor[i]) != top.end() ? 1 : 0;
    }
    out.emplace_back(name, static_cast<double>(kept) / static_cast<double>(n));
  }
  return out;
}

MiouResult miou(const SegmentationMap& pred, const SegmentationMap& gt, std::size_t num_classes,
                std::optional<std::size_t> ignore_index) {
  if (pred.size() != gt.size()) {
    throw Error(ErrorKind::Shape, "prediction and ground truth lengths differ");
  }
  std::vector<std::size_t> inter(num_classes, 0);
  std::vector<std::size_t> uni(num_classes, 0);
  auto check = [&](std::size_t label, const char* which) {
    if (label >= num_classes) {
      throw Error(ErrorKind::Validation, std::string(which) + " label " + std::to_string(label) +
                                             " out of range for " + std::to_string(num_classes) +
                                             " classes");
    }
  };
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (ignore_index && (gt[i] == *ignore_index || pred[i] == *ignore_index)) continue;
    check(pred[i], "predicted");
    check(gt[i], "ground-truth");
    if (pred[i] == gt[i]) {
      ++inter[pred[i]];
      ++uni[pred[i]];
    } else {
      ++uni[pred[i]];
      ++uni[gt[i]];
    }
  }

  MiouResult out;
  out.per_class.resize(num_classes);
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (uni[c] == 0) continue;
    const double iou = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    out.per_class[c] = iou;
    total += iou;
    ++present;
  }
  out.mean = present == 0 ? 0.0 : total / static_cast<double>(present);
  return out;
}

}  // namespace fsa
