// SPDX-License-Identifier: Apache-2.0
// Deterministic datasets shared by the unit tests and the acceptance binary.
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sldro/bilevel.hpp"
#include "sldro/data.hpp"
#include "sldro/models.hpp"

namespace sldro::testing {

// Two overlapping Gaussian classes in the plane, two annotators (truthful and
// 20% noisy), validation = training points with true labels in one group so
// the outer risk is smooth. Linear classifier and linear estimator, full
// batches, estimator started at uniform annotator weights.
struct CuratedInstance {
  std::vector<AnnotatedExample> train;
  std::vector<LabeledExample> val;
  BilevelModels models;
  ParamVector theta0;
  ParamVector w0;
};

inline CuratedInstance curated_instance(std::size_t n = 40) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution flip(0.2);
  CuratedInstance inst;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % 2;
    const double m = y == 1 ? 0.7 : -0.7;
    std::vector<double> x = {m + noise(rng), m + noise(rng)};
    const std::size_t noisy = flip(rng) ? 1 - y : y;
    const std::string id = "c" + std::to_string(i);
    inst.train.push_back({id, x, {y, noisy}});
    inst.val.push_back({id, x, y, 0, 0});
  }
  inst.models.classifier = {ModelFamily::LinearSoftmax, 2, 2, 0};
  inst.models.estimator = {ModelFamily::LinearSoftmax, 2, 2, 0};
  inst.models.classes = 2;
  inst.theta0 = init_params(inst.models.classifier, 11);
  inst.w0 = ParamVector::zeros(inst.models.estimator);
  return inst;
}

inline TrainConfig curated_config(std::size_t steps = 200) {
  TrainConfig c;
  c.steps = steps;
  c.inner_step = 0.05;
  c.outer_step = 1.5;
  c.batch_train = 1'000'000;
  c.batch_val = 1'000'000;
  c.seed = 3;
  c.outer_risk.kind = OuterRisk::Kind::GroupDro;
  c.outer_risk.group_count = 1;
  return c;
}

// alpha = 1.5 / sqrt(T), mu = 5 / T.
inline TrainConfig curated_rate_config(std::size_t steps) {
  TrainConfig c = curated_config(steps);
  c.schedule = StepSchedule::SqrtHorizon;
  c.k1 = 1.5;
  c.k2 = 5.0;
  return c;
}

inline DiagnosticsReport run_curated(const CuratedInstance& inst, const TrainConfig& config) {
  BilevelTrainer trainer(inst.train, inst.val, inst.models, config, inst.theta0, inst.w0);
  trainer.run();
  return trainer.diagnostics();
}

// Random tiny bi-level problem for gradient checks.
struct TinyInstance {
  std::vector<AnnotatedExample> train;
  std::vector<LabeledExample> val;
  BilevelModels models;
  ParamVector theta;
  ParamVector w;
  std::size_t groups = 1;
};

inline TinyInstance tiny_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = pick(1, 3);
  const std::size_t classes = pick(2, 3);
  // Linear estimator has (d + 1) * M parameters; keep it at most 12.
  std::size_t m = pick(1, 3);
  while ((d + 1) * m > 12) --m;
  TinyInstance t;
  t.groups = pick(1, 3);
  for (std::size_t i = 0, n = pick(1, 8); i < n; ++i) {
    AnnotatedExample ex{"t" + std::to_string(i), {}, {}};
    for (std::size_t k = 0; k < d; ++k) ex.features.push_back(normal(rng));
    for (std::size_t j = 0; j < m; ++j) ex.annotations.push_back(pick(0, classes - 1));
    t.train.push_back(std::move(ex));
  }
  for (std::size_t i = 0, n = pick(1, 8); i < n; ++i) {
    LabeledExample ex{"v" + std::to_string(i), {}, pick(0, classes - 1), 0, 0};
    for (std::size_t k = 0; k < d; ++k) ex.features.push_back(normal(rng));
    ex.group = pick(0, t.groups - 1);
    t.val.push_back(std::move(ex));
  }
  t.models.classifier = {ModelFamily::LinearSoftmax, d, classes, 0};
  t.models.estimator = {ModelFamily::LinearSoftmax, d, m, 0};
  t.models.classes = classes;
  t.theta = init_params(t.models.classifier, seed * 2 + 1);
  t.w = init_params(t.models.estimator, seed * 2 + 2);
  // Glorot scale is small for these shapes; widen so softmaxes are not flat.
  for (double& v : t.w.values) v *= 2.0;
  return t;
}

}  // namespace sldro::testing
