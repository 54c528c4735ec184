// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sldro/data.hpp"
#include "sldro/losses.hpp"
#include "sldro/models.hpp"

namespace sldro {

/// Plain gradient descent with the same batching contract as the bi-level
/// trainer: batches drawn uniformly with replacement, or the whole set in order
/// when batch_size >= n.
struct SgdConfig {
  std::size_t steps = 500;
  double step_size = 0.5;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Hard-labeled training set produced by a label-identification method.
struct AggregatedDataset {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> features;
  std::vector<std::size_t> labels;
  std::string provenance;
  double kept_fraction = 0.0;

  std::size_t size() const { return labels.size(); }
};

/// Modal annotation, lowest class on ties.
std::size_t majority_vote(std::span<const std::size_t> annotations);
std::size_t majority_vote(const AnnotatedExample& example);

struct PmVoteResult {
  std::vector<std::size_t> labels;
  std::vector<double> annotator_weights;
  std::size_t iterations_run = 0;
};

/// Iterative agreement-weighted voting: alternate weighted-majority labels and
/// annotator weights proportional to (agreement rate + epsilon).
PmVoteResult pm_vote(std::span<const AnnotatedExample> dataset, std::size_t iterations,
                     double epsilon);

/// Keeps unanimous examples only.
AggregatedDataset consensus_filter(std::span<const AnnotatedExample> dataset);

/// Wraps per-example labels as an aggregated dataset keeping every example.
AggregatedDataset aggregate_hard(std::span<const AnnotatedExample> dataset,
                                 std::span<const std::size_t> labels, std::string provenance);

struct DawidSkeneResult {
  std::vector<SoftLabel> posteriors;
  /// confusion[j][true][observed]
  std::vector<std::vector<std::vector<double>>> confusion;
  std::vector<double> class_prior;
  std::vector<std::size_t> labels;
  std::size_t iterations_run = 0;
};

/// Expectation-maximization over per-annotator confusion matrices, initialized
/// from vote fractions.
DawidSkeneResult dawid_skene(std::span<const AnnotatedExample> dataset, std::size_t classes,
                             std::size_t max_iters, double tol, double smoothing = 1e-2);

/// Vote fractions: ybar_c = (votes for c) / M.
std::vector<SoftLabel> vote_fractions(std::span<const AnnotatedExample> dataset,
                                      std::size_t classes);

/// Called after every pass over the data with the current parameters; may
/// rewrite the targets in place.
using EpochHook = std::function<void(const ParamVector& theta, std::vector<SoftLabel>& targets)>;

/// Gradient descent on mean soft-label cross-entropy from init_params(spec, seed).
ParamVector fit_soft_targets(const ModelSpec& spec, std::span<const std::vector<double>> features,
                             std::vector<SoftLabel> targets, const SgdConfig& config,
                             const EpochHook& on_epoch = {});

/// Hard-label ERM. Throws DataError on an empty dataset.
ParamVector train_on_aggregated(const AggregatedDataset& agg, const ModelSpec& spec,
                                const SgdConfig& config);

struct Ensemble {
  ModelSpec spec;
  std::vector<ParamVector> members;

  /// Majority vote over member argmax predictions.
  std::size_t predict(std::span<const double> x) const;
};

/// One classifier per annotator. With distinct_seeds each member's seed is
/// derived from config.seed and its index; otherwise all share config.seed.
Ensemble train_ensemble(std::span<const AnnotatedExample> dataset, const ModelSpec& spec,
                        const SgdConfig& config, bool distinct_seeds = true);

/// Mean over examples of (1/|S_i|) sum_{c in S_i} -log f_c(x_i).
double average_label_loss(const ModelSpec& spec, const ParamVector& theta,
                          std::span<const AnnotatedExample> dataset);
ParamVector average_label_train(std::span<const AnnotatedExample> dataset, const ModelSpec& spec,
                                const SgdConfig& config);

struct ProdenResult {
  ParamVector theta;
  std::vector<SoftLabel> candidate_weights;
};

/// Progressive disambiguation: candidate weights start uniform over S_i and are
/// reset to the model's renormalized probabilities on S_i after each epoch.
ProdenResult proden_train(std::span<const AnnotatedExample> dataset, const ModelSpec& spec,
                          const SgdConfig& config);

ParamVector vanilla_soft_train(std::span<const AnnotatedExample> dataset, const ModelSpec& spec,
                               const SgdConfig& config);

/// Gradient descent on the group-DRO risk of the validation set only.
ParamVector erm_groupdro_validation(std::span<const LabeledExample> val_set, const ModelSpec& spec,
                                   std::size_t group_count, const SgdConfig& config,
                                   std::vector<double>* risk_trace = nullptr);

}  // namespace sldro
