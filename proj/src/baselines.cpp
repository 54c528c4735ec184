// SPDX-License-Identifier: Apache-2.0
#include "sldro/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "sldro/common.hpp"

namespace sldro {

void SgdConfig::validate() const {
  if (batch_size == 0) throw ConfigError("sgd: batch_size must be >= 1");
  if (!(step_size > 0.0)) throw ConfigError("sgd: step_size must be positive");
}

std::size_t majority_vote(std::span<const std::size_t> annotations) {
  if (annotations.empty()) throw std::invalid_argument("majority_vote: no annotations");
  const std::size_t classes = *std::max_element(annotations.begin(), annotations.end()) + 1;
  std::vector<double> counts(classes, 0.0);
  for (std::size_t a : annotations) counts[a] += 1.0;
  return argmax(counts);
}

std::size_t majority_vote(const AnnotatedExample& example) {
  return majority_vote(example.annotations);
}

namespace {

std::size_t max_class(std::span<const AnnotatedExample> dataset) {
  std::size_t mx = 0;
  for (const auto& ex : dataset) {
    for (std::size_t a : ex.annotations) mx = std::max(mx, a);
  }
  return mx + 1;
}

std::size_t weighted_vote(const AnnotatedExample& ex, std::span<const double> weights,
                          std::size_t classes) {
  std::vector<double> score(classes, 0.0);
  for (std::size_t j = 0; j < ex.annotations.size(); ++j) score[ex.annotations[j]] += weights[j];
  return argmax(score);
}

}  // namespace

PmVoteResult pm_vote(std::span<const AnnotatedExample> dataset, std::size_t iterations,
                     double epsilon) {
  PmVoteResult result;
  if (dataset.empty()) return result;
  const std::size_t m = dataset.front().annotations.size();
  const std::size_t classes = max_class(dataset);
  result.annotator_weights.assign(m, 1.0 / static_cast<double>(m));
  result.labels.resize(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    result.labels[i] = weighted_vote(dataset[i], result.annotator_weights, classes);
  }
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<double> weights(m, 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      std::size_t agree = 0;
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        agree += dataset[i].annotations[j] == result.labels[i] ? 1 : 0;
      }
      weights[j] = static_cast<double>(agree) / static_cast<double>(dataset.size()) + epsilon;
      total += weights[j];
    }
    for (double& w : weights) w /= total;
    result.annotator_weights = weights;
    ++result.iterations_run;

    bool changed = false;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const std::size_t label = weighted_vote(dataset[i], result.annotator_weights, classes);
      changed |= label != result.labels[i];
      result.labels[i] = label;
    }
    if (!changed) break;
  }
  return result;
}

AggregatedDataset consensus_filter(std::span<const AnnotatedExample> dataset) {
  AggregatedDataset agg;
  agg.provenance = "consensus";
  for (const auto& ex : dataset) {
    const auto cands = candidate_set(ex);
    if (cands.size() != 1) continue;
    agg.ids.push_back(ex.id);
    agg.features.push_back(ex.features);
    agg.labels.push_back(cands.front());
  }
  agg.kept_fraction =
      dataset.empty() ? 0.0 : static_cast<double>(agg.size()) / static_cast<double>(dataset.size());
  return agg;
}

AggregatedDataset aggregate_hard(std::span<const AnnotatedExample> dataset,
                                 std::span<const std::size_t> labels, std::string provenance) {
  if (labels.size() != dataset.size()) throw std::invalid_argument("aggregate_hard: size mismatch");
  AggregatedDataset agg;
  agg.provenance = std::move(provenance);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    agg.ids.push_back(dataset[i].id);
    agg.features.push_back(dataset[i].features);
    agg.labels.push_back(labels[i]);
  }
  agg.kept_fraction = dataset.empty() ? 0.0 : 1.0;
  return agg;
}

std::vector<SoftLabel> vote_fractions(std::span<const AnnotatedExample> dataset,
                                      std::size_t classes) {
  std::vector<SoftLabel> out;
  out.reserve(dataset.size());
  for (const auto& ex : dataset) {
    const std::vector<double> uniform(ex.annotations.size(),
                                      1.0 / static_cast<double>(ex.annotations.size()));
    out.push_back(soft_label_aggregate(ex.annotations, uniform, classes));
  }
  return out;
}

DawidSkeneResult dawid_skene(std::span<const AnnotatedExample> dataset, std::size_t classes,
                             std::size_t max_iters, double tol, double smoothing) {
  DawidSkeneResult r;
  r.posteriors = vote_fractions(dataset, classes);
  if (dataset.empty()) return r;
  const std::size_t n = dataset.size();
  const std::size_t m = dataset.front().annotations.size();

  auto m_step = [&] {
    r.class_prior.assign(classes, smoothing);
    r.confusion.assign(m, std::vector<std::vector<double>>(classes, std::vector<double>(classes, smoothing)));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < classes; ++c) {
        const double t = r.posteriors[i][c];
        r.class_prior[c] += t;
        for (std::size_t j = 0; j < m; ++j) r.confusion[j][c][dataset[i].annotations[j]] += t;
      }
    }
    const double prior_total = std::accumulate(r.class_prior.begin(), r.class_prior.end(), 0.0);
    for (double& p : r.class_prior) p /= prior_total;
    for (auto& matrix : r.confusion) {
      for (auto& row : matrix) {
        const double total = std::accumulate(row.begin(), row.end(), 0.0);
        for (double& v : row) v /= total;
      }
    }
  };

  m_step();
  for (std::size_t it = 0; it < max_iters; ++it) {
    double max_change = 0.0;
    std::vector<double> logp(classes);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < classes; ++c) {
        double s = std::log(r.class_prior[c]);
        for (std::size_t j = 0; j < m; ++j) s += std::log(r.confusion[j][c][dataset[i].annotations[j]]);
        logp[c] = s;
      }
      const auto post = softmax(logp);
      for (std::size_t c = 0; c < classes; ++c) {
        max_change = std::max(max_change, std::abs(post[c] - r.posteriors[i][c]));
      }
      r.posteriors[i] = post;
    }
    m_step();
    ++r.iterations_run;
    if (max_change < tol) break;
  }
  r.labels.reserve(n);
  for (const auto& p : r.posteriors) r.labels.push_back(argmax(p));
  return r;
}

ParamVector fit_soft_targets(const ModelSpec& spec, std::span<const std::vector<double>> features,
                             std::vector<SoftLabel> targets, const SgdConfig& config,
                             const EpochHook& on_epoch) {
  config.validate();
  if (features.size() != targets.size()) throw std::invalid_argument("fit_soft_targets: size mismatch");
  ParamVector theta = init_params(spec, derive_seed(config.seed, 1));
  const std::size_t n = features.size();
  if (n == 0 || config.steps == 0) return theta;

  Rng rng(derive_seed(config.seed, 3));
  const bool full_batch = config.batch_size >= n;
  const std::size_t batch = full_batch ? n : config.batch_size;
  const std::size_t steps_per_epoch = full_batch ? 1 : (n + batch - 1) / batch;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(batch);
  const double scale = 1.0 / static_cast<double>(batch);

  for (std::size_t step = 0; step < config.steps; ++step) {
    if (full_batch) {
      std::iota(idx.begin(), idx.end(), 0);
    } else {
      for (auto& i : idx) i = pick(rng);
    }
    ParamVector grad = ParamVector::zeros(spec);
    for (std::size_t i : idx) {
      auto dlogits = forward(spec, theta, features[i]).probabilities;
      for (std::size_t c = 0; c < dlogits.size(); ++c) dlogits[c] -= targets[i][c];
      accumulate_param_grad(spec, theta, features[i], dlogits, scale, grad);
    }
    theta.axpy(-config.step_size, grad);
    if (!theta.all_finite()) {
      throw NumericError(fmt::format("non-finite parameters at step {}", step + 1));
    }
    if (on_epoch && (step + 1) % steps_per_epoch == 0) on_epoch(theta, targets);
  }
  return theta;
}

ParamVector train_on_aggregated(const AggregatedDataset& agg, const ModelSpec& spec,
                                const SgdConfig& config) {
  if (agg.size() == 0) {
    throw DataError(fmt::format("aggregated dataset '{}' is empty; nothing to train on",
                                agg.provenance));
  }
  std::vector<SoftLabel> targets;
  targets.reserve(agg.size());
  for (std::size_t y : agg.labels) targets.push_back(one_hot(y, spec.output_dim));
  return fit_soft_targets(spec, agg.features, std::move(targets), config);
}

std::size_t Ensemble::predict(std::span<const double> x) const {
  std::vector<double> votes(spec.output_dim, 0.0);
  for (const auto& member : members) votes[argmax(forward(spec, member, x).logits)] += 1.0;
  return argmax(votes);
}

Ensemble train_ensemble(std::span<const AnnotatedExample> dataset, const ModelSpec& spec,
                        const SgdConfig& config, bool distinct_seeds) {
  Ensemble ens{spec, {}};
  if (dataset.empty()) throw DataError("ensemble: empty training set");
  const std::size_t m = dataset.front().annotations.size();
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<std::size_t> labels;
    labels.reserve(dataset.size());
    for (const auto& ex : dataset) labels.push_back(ex.annotations[j]);
    SgdConfig member = config;
    if (distinct_seeds) member.seed = derive_seed(config.seed, 100 + j);
    ens.members.push_back(
        train_on_aggregated(aggregate_hard(dataset, labels, fmt::format("annotator-{}", j)), spec, member));
  }
  return ens;
}

namespace {

std::vector<std::vector<double>> features_of(std::span<const AnnotatedExample> dataset) {
  std::vector<std::vector<double>> out;
  out.reserve(dataset.size());
  for (const auto& ex : dataset) out.push_back(ex.features);
  return out;
}

SoftLabel uniform_over(const std::vector<std::size_t>& support, std::size_t classes) {
  SoftLabel out(classes, 0.0);
  for (std::size_t c : support) out[c] = 1.0 / static_cast<double>(support.size());
  return out;
}

}  // namespace

double average_label_loss(const ModelSpec& spec, const ParamVector& theta,
                          std::span<const AnnotatedExample> dataset) {
  if (dataset.empty()) throw std::invalid_argument("average_label_loss: empty dataset");
  double total = 0.0;
  for (const auto& ex : dataset) {
    const auto target = uniform_over(candidate_set(ex), spec.output_dim);
    total += soft_cross_entropy(forward(spec, theta, ex.features).logits, target);
  }
  return total / static_cast<double>(dataset.size());
}

ParamVector average_label_train(std::span<const AnnotatedExample> dataset, const ModelSpec& spec,
                                const SgdConfig& config) {
  std::vector<SoftLabel> targets;
  targets.reserve(dataset.size());
  for (const auto& ex : dataset) targets.push_back(uniform_over(candidate_set(ex), spec.output_dim));
  return fit_soft_targets(spec, features_of(dataset), std::move(targets), config);
}

ProdenResult proden_train(std::span<const AnnotatedExample> dataset, const ModelSpec& spec,
                          const SgdConfig& config) {
  std::vector<std::vector<std::size_t>> supports;
  std::vector<SoftLabel> weights;
  for (const auto& ex : dataset) {
    supports.push_back(candidate_set(ex));
    weights.push_back(uniform_over(supports.back(), spec.output_dim));
  }
  const auto features = features_of(dataset);
  ProdenResult result;
  result.candidate_weights = weights;
  auto disambiguate = [&](const ParamVector& theta, std::vector<SoftLabel>& targets) {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto f = forward(spec, theta, features[i]).probabilities;
      double mass = 0.0;
      for (std::size_t c : supports[i]) mass += f[c];
      std::fill(targets[i].begin(), targets[i].end(), 0.0);
      for (std::size_t c : supports[i]) targets[i][c] = f[c] / mass;
    }
    result.candidate_weights = targets;
  };
  result.theta = fit_soft_targets(spec, features, std::move(weights), config, disambiguate);
  return result;
}

ParamVector vanilla_soft_train(std::span<const AnnotatedExample> dataset, const ModelSpec& spec,
                               const SgdConfig& config) {
  return fit_soft_targets(spec, features_of(dataset), vote_fractions(dataset, spec.output_dim), config);
}

ParamVector erm_groupdro_validation(std::span<const LabeledExample> val_set, const ModelSpec& spec,
                                   std::size_t group_count, const SgdConfig& config,
                                   std::vector<double>* risk_trace) {
  config.validate();
  if (val_set.empty()) throw DataError("erm-dro: empty validation set");
  ParamVector theta = init_params(spec, derive_seed(config.seed, 1));
  Rng rng(derive_seed(config.seed, 3));
  const std::size_t n = val_set.size();
  const bool full_batch = config.batch_size >= n;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<LabeledExample> batch;
  for (std::size_t step = 0; step < config.steps; ++step) {
    if (full_batch) {
      batch.assign(val_set.begin(), val_set.end());
    } else {
      batch.clear();
      for (std::size_t i = 0; i < config.batch_size; ++i) batch.push_back(val_set[pick(rng)]);
    }
    const RiskValue risk = groupdro_risk(spec, theta, batch, group_count);
    if (risk_trace) risk_trace->push_back(risk.value);
    theta.axpy(-config.step_size, risk_gradient(spec, theta, batch, risk));
    if (!theta.all_finite()) {
      throw NumericError(fmt::format("non-finite parameters at step {}", step + 1));
    }
  }
  return theta;
}

}  // namespace sldro
