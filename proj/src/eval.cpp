// SPDX-License-Identifier: Apache-2.0
#include "sldro/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "sldro/common.hpp"

namespace sldro {

Predictor argmax_predictor(const ModelSpec& spec, const ParamVector& params) {
  return [spec, params](std::span<const double> x) {
    return argmax(forward(spec, params, x).logits);
  };
}

GroupMetrics summarize_group_accuracies(std::vector<double> per_group_accuracy,
                                        std::vector<std::size_t> group_sizes) {
  GroupMetrics m;
  m.per_group_accuracy = std::move(per_group_accuracy);
  m.group_sizes = std::move(group_sizes);
  double sum = 0.0;
  std::size_t present = 0;
  double worst = std::numeric_limits<double>::infinity();
  double correct = 0.0;
  std::size_t total = 0;
  for (std::size_t g = 0; g < m.per_group_accuracy.size(); ++g) {
    const double acc = m.per_group_accuracy[g];
    if (std::isnan(acc)) continue;
    sum += acc;
    ++present;
    worst = std::min(worst, acc);
    if (g < m.group_sizes.size()) {
      correct += acc * static_cast<double>(m.group_sizes[g]);
      total += m.group_sizes[g];
    }
  }
  if (present == 0) throw std::invalid_argument("group metrics: every group is empty");
  m.average_accuracy = sum / static_cast<double>(present);
  m.worst_group_accuracy = worst;
  m.overall_accuracy = total > 0 ? correct / static_cast<double>(total) : m.average_accuracy;
  return m;
}

GroupMetrics group_metrics(const Predictor& predict, std::span<const LabeledExample> test_set,
                           std::size_t group_count) {
  if (test_set.empty()) throw std::invalid_argument("group_metrics: empty test set");
  std::vector<std::size_t> correct(group_count, 0);
  std::vector<std::size_t> sizes(group_count, 0);
  for (const auto& ex : test_set) {
    if (ex.group >= group_count) {
      throw std::out_of_range(fmt::format("example '{}' has group {} but G = {}", ex.id, ex.group,
                                          group_count));
    }
    ++sizes[ex.group];
    if (predict(ex.features) == ex.label) ++correct[ex.group];
  }
  std::vector<double> acc(group_count, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t g = 0; g < group_count; ++g) {
    if (sizes[g] > 0) acc[g] = static_cast<double>(correct[g]) / static_cast<double>(sizes[g]);
  }
  auto m = summarize_group_accuracies(std::move(acc), std::move(sizes));
  std::size_t hits = std::accumulate(correct.begin(), correct.end(), std::size_t{0});
  m.overall_accuracy = static_cast<double>(hits) / static_cast<double>(test_set.size());
  return m;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_std: no values");
  MeanStd r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

ExplanationReport block_mask_explain(const ModelSpec& spec, const ParamVector& params,
                                     std::span<const double> x, std::span<const FeatureBlock> blocks,
                                     std::span<const double> baseline) {
  if (baseline.size() != x.size()) throw std::invalid_argument("explain: baseline dimension mismatch");
  std::vector<int> cover(x.size(), 0);
  for (const auto& b : blocks) {
    if (b.begin >= b.end || b.end > x.size()) {
      throw std::invalid_argument(fmt::format("explain: invalid block [{}, {})", b.begin, b.end));
    }
    for (std::size_t k = b.begin; k < b.end; ++k) ++cover[k];
  }
  for (std::size_t k = 0; k < cover.size(); ++k) {
    if (cover[k] != 1) {
      throw std::invalid_argument(
          fmt::format("explain: blocks must partition the features; feature {} covered {} times", k,
                      cover[k]));
    }
  }

  ExplanationReport report;
  report.blocks.assign(blocks.begin(), blocks.end());
  report.base_prediction = forward(spec, params, x);
  report.explained_class = argmax(report.base_prediction.logits);
  // Log-probability rather than the raw logit: a single softmax logit can shift
  // freely without changing any prediction.
  const std::size_t c = report.explained_class;
  const double base_lp = log_softmax(report.base_prediction.logits)[c];
  std::vector<double> masked(x.begin(), x.end());
  for (const auto& b : blocks) {
    for (std::size_t k = b.begin; k < b.end; ++k) masked[k] = baseline[k];
    report.importance.push_back(base_lp - log_softmax(forward(spec, params, masked).logits)[c]);
    for (std::size_t k = b.begin; k < b.end; ++k) masked[k] = x[k];
  }
  report.ranking.resize(blocks.size());
  std::iota(report.ranking.begin(), report.ranking.end(), 0);
  std::stable_sort(report.ranking.begin(), report.ranking.end(), [&](std::size_t a, std::size_t b) {
    return report.importance[a] > report.importance[b];
  });
  return report;
}

std::vector<double> feature_mean(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw std::invalid_argument("feature_mean: no rows");
  std::vector<double> mean(rows.front().size(), 0.0);
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += r[k];
  }
  for (double& v : mean) v /= static_cast<double>(rows.size());
  return mean;
}

AgreementReport annotation_agreement_report(std::span<const AnnotatedExample> dataset,
                                            const TruthTable& truth) {
  AgreementReport report;
  if (dataset.empty()) return report;
  const std::size_t m = dataset.front().annotations.size();
  std::vector<std::size_t> agree(m, 0);
  std::size_t contained = 0;
  for (const auto& ex : dataset) {
    auto it = truth.find(ex.id);
    if (it == truth.end()) throw DataError(fmt::format("no ground truth for example '{}'", ex.id));
    bool hit = false;
    for (std::size_t j = 0; j < m; ++j) {
      if (ex.annotations[j] == it->second) {
        ++agree[j];
        hit = true;
      }
    }
    contained += hit ? 1 : 0;
  }
  const auto n = static_cast<double>(dataset.size());
  for (std::size_t a : agree) report.annotator_accuracy.push_back(static_cast<double>(a) / n);
  report.truth_in_candidates = static_cast<double>(contained) / n;
  return report;
}

}  // namespace sldro
