// SPDX-License-Identifier: Apache-2.0
#include "sldro/synth.hpp"

#include <cmath>
#include <random>
#include <tuple>

#include <fmt/format.h>

#include "sldro/common.hpp"

namespace sldro {

void SpuriousConfig::validate() const {
  if (n_train == 0 || n_val == 0 || n_test == 0) throw ConfigError("synthetic: counts must be >= 1");
  if (d_core == 0 || d_spurious == 0) throw ConfigError("synthetic: feature dims must be >= 1");
  for (double rho : {rho_train, rho_eval}) {
    if (!(rho >= 0.0 && rho <= 1.0)) {
      throw ConfigError(fmt::format("synthetic: rho must lie in [0, 1], got {}", rho));
    }
  }
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) {
    throw ConfigError("synthetic: label_noise must lie in [0, 1]");
  }
  if (class_count < 2) throw ConfigError("synthetic: class_count must be >= 2");
}

AnnotatorModel AnnotatorModel::constant(std::string name, ConfusionMatrix matrix) {
  return AnnotatorModel{std::move(name), matrix, matrix};
}

AnnotatorModel AnnotatorModel::instance_dependent(std::string name, ConfusionMatrix negative,
                                                  ConfusionMatrix positive) {
  return AnnotatorModel{std::move(name), std::move(negative), std::move(positive)};
}

const std::vector<double>& AnnotatorModel::row(std::size_t true_class, bool cue_positive) const {
  return cue_positive ? positive_cue.at(true_class) : negative_cue.at(true_class);
}

void AnnotatorModel::validate(std::size_t classes) const {
  for (const auto* matrix : {&negative_cue, &positive_cue}) {
    if (matrix->size() != classes) {
      throw ConfigError(fmt::format("annotator '{}': confusion matrix needs {} rows", name, classes));
    }
    for (const auto& row : *matrix) {
      if (row.size() != classes) {
        throw ConfigError(fmt::format("annotator '{}': confusion row needs {} entries", name, classes));
      }
      double sum = 0.0;
      for (double p : row) {
        if (!(p >= 0.0)) throw ConfigError(fmt::format("annotator '{}': negative probability", name));
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError(fmt::format("annotator '{}': confusion row sums to {}", name, sum));
      }
    }
  }
}

ConfusionMatrix symmetric_confusion(std::size_t classes, double accuracy) {
  const double off = (1.0 - accuracy) / static_cast<double>(classes - 1);
  ConfusionMatrix m(classes, std::vector<double>(classes, off));
  for (std::size_t c = 0; c < classes; ++c) m[c][c] = accuracy;
  return m;
}

namespace {

// Class means sit on [-1, 1]; two classes land on -1 and +1.
double class_mean(std::size_t c, std::size_t classes) {
  return -1.0 + 2.0 * static_cast<double>(c) / static_cast<double>(classes - 1);
}

std::size_t other_class(Rng& rng, std::size_t c, std::size_t classes) {
  std::uniform_int_distribution<std::size_t> pick(0, classes - 2);
  const std::size_t k = pick(rng);
  return k >= c ? k + 1 : k;
}

struct Draw {
  std::vector<double> features;
  std::size_t label;
  std::size_t cue;
};

Draw draw_example(Rng& rng, const SpuriousConfig& config, double rho) {
  const std::size_t classes = config.class_count;
  std::uniform_int_distribution<std::size_t> pick_class(0, classes - 1);
  std::bernoulli_distribution agree(rho);
  std::bernoulli_distribution noisy(config.label_noise);
  std::normal_distribution<double> noise(0.0, 1.0);

  Draw d;
  d.label = pick_class(rng);
  const std::size_t core_class = noisy(rng) ? other_class(rng, d.label, classes) : d.label;
  d.cue = agree(rng) ? d.label : other_class(rng, d.label, classes);
  d.features.reserve(config.feature_dim());
  for (std::size_t k = 0; k < config.d_core; ++k) {
    d.features.push_back(class_mean(core_class, classes) + noise(rng));
  }
  for (std::size_t k = 0; k < config.d_spurious; ++k) {
    d.features.push_back(class_mean(d.cue, classes) + noise(rng));
  }
  return d;
}

std::vector<LabeledExample> draw_labeled(Rng& rng, const SpuriousConfig& config, std::size_t n,
                                         const std::string& prefix, const GroupSpec& groups) {
  std::vector<LabeledExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Draw d = draw_example(rng, config, config.rho_eval);
    LabeledExample ex;
    ex.id = fmt::format("{}-{:06d}", prefix, i);
    ex.features = std::move(d.features);
    ex.label = d.label;
    ex.topic = d.cue;
    ex.group = *groups.lookup(d.cue, d.label);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

SpuriousBenchmark generate_spurious(const SpuriousConfig& config) {
  config.validate();
  SpuriousBenchmark bench;
  bench.groups = GroupSpec::topic_by_label(config.class_count, config.class_count);
  bench.spurious_offset = config.d_core;

  Rng train_rng(derive_seed(config.seed, 10));
  bench.train.reserve(config.n_train);
  for (std::size_t i = 0; i < config.n_train; ++i) {
    Draw d = draw_example(train_rng, config, config.rho_train);
    bench.train.push_back({fmt::format("tr-{:06d}", i), std::move(d.features), d.label, d.cue});
  }
  Rng val_rng(derive_seed(config.seed, 11));
  bench.val = draw_labeled(val_rng, config, config.n_val, "va", bench.groups);
  Rng test_rng(derive_seed(config.seed, 12));
  bench.test = draw_labeled(test_rng, config, config.n_test, "te", bench.groups);
  return bench;
}

std::vector<AnnotatedExample> annotate(std::span<const TruthExample> examples,
                                       std::span<const AnnotatorModel> annotators,
                                       std::size_t spurious_offset, bool ensure_truth_present,
                                       std::uint64_t seed) {
  if (annotators.empty()) throw ConfigError("annotate: at least one annotator is required");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick_annotator(0, annotators.size() - 1);
  std::vector<AnnotatedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const bool cue_positive = ex.features.at(spurious_offset) > 0.0;
    AnnotatedExample annotated{ex.id, ex.features, {}};
    bool has_truth = false;
    for (const auto& annotator : annotators) {
      const auto& row = annotator.row(ex.label, cue_positive);
      std::discrete_distribution<std::size_t> draw(row.begin(), row.end());
      const std::size_t a = draw(rng);
      has_truth |= a == ex.label;
      annotated.annotations.push_back(a);
    }
    if (ensure_truth_present && !has_truth) annotated.annotations[pick_annotator(rng)] = ex.label;
    out.push_back(std::move(annotated));
  }
  return out;
}

std::vector<AnnotatorModel> default_annotators(std::size_t classes) {
  std::vector<AnnotatorModel> out;
  out.push_back(AnnotatorModel::constant("human-1", symmetric_confusion(classes, 0.8)));
  out.push_back(AnnotatorModel::constant("human-2", symmetric_confusion(classes, 0.75)));
  out.push_back(AnnotatorModel::constant("human-3", symmetric_confusion(classes, 0.7)));

  // With probability q an LLM answers the cue's class (or, when averse, a class
  // other than the cue's) instead of the truth.
  auto cue_biased = [classes](double q, bool averse) {
    ConfusionMatrix negative(classes, std::vector<double>(classes, 0.0));
    ConfusionMatrix positive = negative;
    const std::size_t neg_target = averse ? classes - 1 : 0;
    const std::size_t pos_target = averse ? 0 : classes - 1;
    for (std::size_t y = 0; y < classes; ++y) {
      negative[y][y] += 1.0 - q;
      negative[y][neg_target] += q;
      positive[y][y] += 1.0 - q;
      positive[y][pos_target] += q;
    }
    return AnnotatorModel::instance_dependent("", negative, positive);
  };
  const std::tuple<const char*, double, bool> llms[] = {
      {"llm-1", 0.7, false}, {"llm-2", 0.5, false}, {"llm-3", 0.5, true}};
  for (const auto& [name, q, averse] : llms) {
    AnnotatorModel a = cue_biased(q, averse);
    a.name = name;
    out.push_back(std::move(a));
  }
  return out;
}

TruthTable truth_table(std::span<const TruthExample> examples) {
  TruthTable t;
  for (const auto& ex : examples) t[ex.id] = ex.label;
  return t;
}

}  // namespace sldro
