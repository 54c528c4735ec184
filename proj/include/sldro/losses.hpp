// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sldro/data.hpp"
#include "sldro/models.hpp"

namespace sldro {

/// Length-C probability vector used as a training target.
using SoftLabel = std::vector<double>;

/// ybar_c = sum of v_j over annotators j who voted c.
SoftLabel soft_label_aggregate(std::span<const std::size_t> annotations,
                               std::span<const double> v, std::size_t classes);

/// -sum_c target_c log softmax(logits)_c
double soft_cross_entropy(std::span<const double> logits, std::span<const double> target);

/// Cross-entropy of one example against its true class.
double example_loss(const ModelSpec& spec, const ParamVector& params, const LabeledExample& ex);

/// Mean soft-label cross-entropy over the batch.
double inner_loss(const ModelSpec& spec, const ParamVector& theta,
                  std::span<const AnnotatedExample> batch, std::span<const SoftLabel> soft_labels);

/// Gradient of inner_loss; per example dlogits = f - ybar.
ParamVector inner_loss_gradient(const ModelSpec& spec, const ParamVector& theta,
                                std::span<const AnnotatedExample> batch,
                                std::span<const SoftLabel> soft_labels);

/// Outcome of evaluating an outer risk. `contributors` lists the batch indices
/// whose mean loss gradient is the risk's (sub)gradient.
struct RiskValue {
  double value = 0.0;
  std::vector<double> per_group;          ///< NaN for groups absent from the batch
  std::vector<std::size_t> group_counts;  ///< empty unless group-based
  std::optional<std::size_t> argmax_group;
  std::vector<std::size_t> active_set;  ///< CVaR only
  std::vector<std::size_t> contributors;
};

/// Max over present groups of the mean cross-entropy; ties go to the lowest group.
RiskValue groupdro_risk(const ModelSpec& spec, const ParamVector& theta,
                        std::span<const LabeledExample> batch, std::size_t group_count);

/// Mean of the ceil(alpha n) largest per-example losses.
RiskValue cvar_risk(const ModelSpec& spec, const ParamVector& theta,
                    std::span<const LabeledExample> batch, double alpha);

double erm_risk(const ModelSpec& spec, const ParamVector& theta,
                std::span<const LabeledExample> batch);

/// Mean cross-entropy gradient over risk.contributors.
ParamVector risk_gradient(const ModelSpec& spec, const ParamVector& theta,
                          std::span<const LabeledExample> batch, const RiskValue& risk);

/// Selects which outer risk the bi-level trainer minimizes.
struct OuterRisk {
  enum class Kind { GroupDro, Cvar, Erm };
  Kind kind = Kind::GroupDro;
  std::size_t group_count = 1;
  double cvar_alpha = 1.0;

  RiskValue evaluate(const ModelSpec& spec, const ParamVector& theta,
                     std::span<const LabeledExample> batch) const;
};

std::string_view to_string(OuterRisk::Kind kind);

}  // namespace sldro
