// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sldro/data.hpp"

namespace sldro {

/// Two-cue benchmark: core features carry the label; spurious features carry a
/// cue class that matches the label with probability rho.
struct SpuriousConfig {
  std::size_t n_train = 4000;
  std::size_t n_val = 200;
  std::size_t n_test = 4000;
  std::size_t d_core = 1;
  std::size_t d_spurious = 1;
  double rho_train = 0.9;
  double rho_eval = 0.5;
  double label_noise = 0.0;  ///< probability the core features follow a wrong class
  std::size_t class_count = 2;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t feature_dim() const { return d_core + d_spurious; }
};

/// Ground-truth-bearing example, before annotation.
struct TruthExample {
  std::string id;
  std::vector<double> features;
  std::size_t label = 0;
  std::size_t cue = 0;  ///< spurious cue class; the example's topic
};

using ConfusionMatrix = std::vector<std::vector<double>>;

/// Simulated annotator. Constant annotators use one confusion matrix; instance-
/// dependent ones switch matrix on the sign of the first spurious feature.
struct AnnotatorModel {
  std::string name;
  ConfusionMatrix negative_cue;
  ConfusionMatrix positive_cue;

  static AnnotatorModel constant(std::string name, ConfusionMatrix matrix);
  static AnnotatorModel instance_dependent(std::string name, ConfusionMatrix negative,
                                           ConfusionMatrix positive);

  bool is_instance_dependent() const { return negative_cue != positive_cue; }
  const std::vector<double>& row(std::size_t true_class, bool cue_positive) const;
  void validate(std::size_t classes) const;
};

/// Diagonal `accuracy`, remaining mass spread evenly.
ConfusionMatrix symmetric_confusion(std::size_t classes, double accuracy);

struct SpuriousBenchmark {
  std::vector<TruthExample> train;
  std::vector<LabeledExample> val;
  std::vector<LabeledExample> test;
  GroupSpec groups;
  std::size_t spurious_offset = 0;  ///< index of the first spurious feature
};

SpuriousBenchmark generate_spurious(const SpuriousConfig& config);

/// Draws one label per annotator from its confusion row for the true class.
/// With ensure_truth_present, an example whose annotations miss the truth has a
/// uniformly chosen annotator's label replaced by it.
std::vector<AnnotatedExample> annotate(std::span<const TruthExample> examples,
                                       std::span<const AnnotatorModel> annotators,
                                       std::size_t spurious_offset, bool ensure_truth_present,
                                       std::uint64_t seed);

/// Three constant "human" annotators (accuracy 0.8, 0.75, 0.7) and three
/// cue-dependent "LLM" annotators: two pulled toward the cue's class, one away
/// from it.
std::vector<AnnotatorModel> default_annotators(std::size_t classes);

TruthTable truth_table(std::span<const TruthExample> examples);

}  // namespace sldro
