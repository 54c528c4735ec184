// SPDX-License-Identifier: Apache-2.0
#include "sldro/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace sldro {

SoftLabel soft_label_aggregate(std::span<const std::size_t> annotations,
                               std::span<const double> v, std::size_t classes) {
  if (annotations.size() != v.size()) {
    throw std::invalid_argument("soft_label_aggregate: annotations and weights differ in length");
  }
  SoftLabel out(classes, 0.0);
  for (std::size_t j = 0; j < annotations.size(); ++j) {
    if (annotations[j] >= classes) {
      throw std::out_of_range(fmt::format("annotation {} out of range for {} classes",
                                          annotations[j], classes));
    }
    out[annotations[j]] += v[j];
  }
  return out;
}

double soft_cross_entropy(std::span<const double> logits, std::span<const double> target) {
  const auto logp = log_softmax(logits);
  double loss = 0.0;
  for (std::size_t c = 0; c < logp.size(); ++c) {
    if (target[c] != 0.0) loss -= target[c] * logp[c];
  }
  return loss;
}

double example_loss(const ModelSpec& spec, const ParamVector& params, const LabeledExample& ex) {
  const auto logits = forward(spec, params, ex.features).logits;
  return -log_softmax(logits)[ex.label];
}

double inner_loss(const ModelSpec& spec, const ParamVector& theta,
                  std::span<const AnnotatedExample> batch, std::span<const SoftLabel> soft_labels) {
  if (batch.empty()) throw std::invalid_argument("inner_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += soft_cross_entropy(forward(spec, theta, batch[i].features).logits, soft_labels[i]);
  }
  return total / static_cast<double>(batch.size());
}

ParamVector inner_loss_gradient(const ModelSpec& spec, const ParamVector& theta,
                                std::span<const AnnotatedExample> batch,
                                std::span<const SoftLabel> soft_labels) {
  if (batch.empty()) throw std::invalid_argument("inner_loss_gradient: empty batch");
  ParamVector grad = ParamVector::zeros(spec);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto dlogits = forward(spec, theta, batch[i].features).probabilities;
    for (std::size_t c = 0; c < dlogits.size(); ++c) dlogits[c] -= soft_labels[i][c];
    accumulate_param_grad(spec, theta, batch[i].features, dlogits, scale, grad);
  }
  return grad;
}

namespace {

std::vector<double> per_example_losses(const ModelSpec& spec, const ParamVector& theta,
                                       std::span<const LabeledExample> batch) {
  std::vector<double> losses;
  losses.reserve(batch.size());
  for (const auto& ex : batch) losses.push_back(example_loss(spec, theta, ex));
  return losses;
}

}  // namespace

RiskValue groupdro_risk(const ModelSpec& spec, const ParamVector& theta,
                        std::span<const LabeledExample> batch, std::size_t group_count) {
  if (batch.empty()) throw std::invalid_argument("groupdro_risk: empty batch");
  const auto losses = per_example_losses(spec, theta, batch);
  RiskValue risk;
  risk.per_group.assign(group_count, 0.0);
  risk.group_counts.assign(group_count, 0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t g = batch[i].group;
    if (g >= group_count) {
      throw std::out_of_range(fmt::format("example '{}' has group {} but G = {}", batch[i].id, g,
                                          group_count));
    }
    risk.per_group[g] += losses[i];
    ++risk.group_counts[g];
  }
  for (std::size_t g = 0; g < group_count; ++g) {
    if (risk.group_counts[g] == 0) {
      risk.per_group[g] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    risk.per_group[g] /= static_cast<double>(risk.group_counts[g]);
    if (!risk.argmax_group || risk.per_group[g] > risk.per_group[*risk.argmax_group]) {
      risk.argmax_group = g;
    }
  }
  risk.value = risk.per_group[*risk.argmax_group];
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].group == *risk.argmax_group) risk.contributors.push_back(i);
  }
  return risk;
}

RiskValue cvar_risk(const ModelSpec& spec, const ParamVector& theta,
                    std::span<const LabeledExample> batch, double alpha) {
  if (batch.empty()) throw std::invalid_argument("cvar_risk: empty batch");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("cvar_risk: alpha must be in (0, 1]");
  const auto losses = per_example_losses(spec, theta, batch);
  const std::size_t n = batch.size();
  // guard ceil against alpha*n landing a hair above an integer
  auto k = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
  RiskValue risk;
  risk.active_set.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(risk.active_set.begin(), risk.active_set.end());
  double total = 0.0;
  for (std::size_t i : risk.active_set) total += losses[i];
  risk.value = total / static_cast<double>(k);
  risk.contributors = risk.active_set;
  return risk;
}

double erm_risk(const ModelSpec& spec, const ParamVector& theta,
                std::span<const LabeledExample> batch) {
  if (batch.empty()) throw std::invalid_argument("erm_risk: empty batch");
  double total = 0.0;
  for (const auto& ex : batch) total += example_loss(spec, theta, ex);
  return total / static_cast<double>(batch.size());
}

ParamVector risk_gradient(const ModelSpec& spec, const ParamVector& theta,
                          std::span<const LabeledExample> batch, const RiskValue& risk) {
  ParamVector grad = ParamVector::zeros(spec);
  if (risk.contributors.empty()) return grad;
  const double scale = 1.0 / static_cast<double>(risk.contributors.size());
  for (std::size_t i : risk.contributors) {
    const auto& ex = batch[i];
    auto dlogits = forward(spec, theta, ex.features).probabilities;
    dlogits[ex.label] -= 1.0;
    accumulate_param_grad(spec, theta, ex.features, dlogits, scale, grad);
  }
  return grad;
}

RiskValue OuterRisk::evaluate(const ModelSpec& spec, const ParamVector& theta,
                              std::span<const LabeledExample> batch) const {
  switch (kind) {
    case Kind::GroupDro:
      return groupdro_risk(spec, theta, batch, group_count);
    case Kind::Cvar:
      return cvar_risk(spec, theta, batch, cvar_alpha);
    case Kind::Erm: {
      RiskValue risk;
      risk.value = erm_risk(spec, theta, batch);
      risk.contributors.resize(batch.size());
      std::iota(risk.contributors.begin(), risk.contributors.end(), 0);
      return risk;
    }
  }
  throw std::logic_error("unknown outer risk");
}

std::string_view to_string(OuterRisk::Kind kind) {
  switch (kind) {
    case OuterRisk::Kind::GroupDro:
      return "groupdro";
    case OuterRisk::Kind::Cvar:
      return "cvar";
    case OuterRisk::Kind::Erm:
      return "erm";
  }
  return "unknown";
}

}  // namespace sldro
