// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sldro/data.hpp"
#include "sldro/models.hpp"

namespace sldro {

/// Maps a feature vector to a class index.
using Predictor = std::function<std::size_t(std::span<const double>)>;

/// argmax of the classifier's logits, lowest index on ties.
Predictor argmax_predictor(const ModelSpec& spec, const ParamVector& params);

struct GroupMetrics {
  std::vector<double> per_group_accuracy;  ///< NaN for empty groups
  std::vector<std::size_t> group_sizes;
  double average_accuracy = 0.0;       ///< unweighted mean over nonempty groups
  double worst_group_accuracy = 0.0;   ///< min over nonempty groups
  double overall_accuracy = 0.0;       ///< example-weighted
};

GroupMetrics group_metrics(const Predictor& predict, std::span<const LabeledExample> test_set,
                           std::size_t group_count);

/// Aggregates already-computed per-group accuracies (NaN marks an empty group).
GroupMetrics summarize_group_accuracies(std::vector<double> per_group_accuracy,
                                        std::vector<std::size_t> group_sizes);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation; 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

/// Contiguous feature range [begin, end).
struct FeatureBlock {
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct ExplanationReport {
  std::vector<FeatureBlock> blocks;
  std::vector<double> importance;
  std::vector<std::size_t> ranking;  ///< block indices, most important first
  Prediction base_prediction;
  std::size_t explained_class = 0;
};

/// Importance of a block = log-probability of the predicted class on x minus
/// the same after the block is replaced by `baseline` values. Blocks must partition [0, d).
ExplanationReport block_mask_explain(const ModelSpec& spec, const ParamVector& params,
                                     std::span<const double> x, std::span<const FeatureBlock> blocks,
                                     std::span<const double> baseline);

/// Feature-wise mean of a set of vectors (the "mean-of-dataset" baseline).
std::vector<double> feature_mean(std::span<const std::vector<double>> rows);

struct AgreementReport {
  std::vector<double> annotator_accuracy;
  double truth_in_candidates = 0.0;
};

/// Throws DataError naming the first example id missing from `truth`.
AgreementReport annotation_agreement_report(std::span<const AnnotatedExample> dataset,
                                            const TruthTable& truth);

}  // namespace sldro
