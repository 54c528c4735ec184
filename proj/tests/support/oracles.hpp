// SPDX-License-Identifier: Apache-2.0
// Test-side reference computations. Nothing here calls the analytic gradient
// code it is used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "sldro/bilevel.hpp"
#include "sldro/losses.hpp"
#include "sldro/models.hpp"

namespace sldro::testing {

// Central differences of f over every coordinate of p.
inline ParamVector central_difference(const std::function<double(const ParamVector&)>& f,
                                      const ParamVector& p, double eps = 1e-5) {
  ParamVector g = ParamVector::zeros_like(p);
  ParamVector probe = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    probe[i] = p[i] + eps;
    const double up = f(probe);
    probe[i] = p[i] - eps;
    const double down = f(probe);
    probe[i] = p[i];
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

// Per-coordinate |a - b| <= max(rel * max(|a|, |b|), abs_floor).
inline bool close_relative(const ParamVector& a, const ParamVector& b, double rel, double abs_floor,
                           double* worst = nullptr) {
  if (a.size() != b.size()) return false;
  bool ok = true;
  double w = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = std::abs(a[i] - b[i]);
    const double tol = std::max(rel * std::max(std::abs(a[i]), std::abs(b[i])), abs_floor);
    w = std::max(w, diff / tol);
    if (diff > tol) ok = false;
  }
  if (worst) *worst = w;
  return ok;
}

// Cross-entropy of one example written out directly from the logits.
inline double reference_ce(std::span<const double> logits, std::size_t label) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z);
  double s = 0.0;
  for (double z : logits) s += std::exp(z - mx);
  return -(logits[label] - mx - std::log(s));
}

// Reference outer risks over a labeled batch, recomputed from scratch.
inline double reference_groupdro(const ModelSpec& spec, const ParamVector& theta,
                                 std::span<const LabeledExample> batch, std::size_t groups) {
  std::vector<double> sum(groups, 0.0);
  std::vector<std::size_t> count(groups, 0);
  for (const auto& ex : batch) {
    sum[ex.group] += reference_ce(forward(spec, theta, ex.features).logits, ex.label);
    ++count[ex.group];
  }
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < groups; ++g) {
    if (count[g] > 0) best = std::max(best, sum[g] / static_cast<double>(count[g]));
  }
  return best;
}

inline std::vector<double> reference_losses(const ModelSpec& spec, const ParamVector& theta,
                                            std::span<const LabeledExample> batch) {
  std::vector<double> out;
  for (const auto& ex : batch) out.push_back(reference_ce(forward(spec, theta, ex.features).logits, ex.label));
  return out;
}

inline double reference_cvar(std::vector<double> losses, double alpha) {
  std::sort(losses.begin(), losses.end(), std::greater<>());
  const auto n = static_cast<double>(losses.size());
  std::size_t k = static_cast<std::size_t>(std::ceil(alpha * n - 1e-9));
  k = std::clamp<std::size_t>(k, 1, losses.size());
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += losses[i];
  return s / static_cast<double>(k);
}

// R(theta'(w)) as a plain function of w, for finite-differencing.
inline double outer_objective(const BilevelModels& models, const ParamVector& theta,
                              const ParamVector& w, std::span<const AnnotatedExample> train,
                              std::span<const LabeledExample> val, double mu,
                              const OuterRisk& outer) {
  const ParamVector theta_prime = pseudo_update(models, theta, w, train, mu);
  return outer.evaluate(models.classifier, theta_prime, val).value;
}

// Soft label by explicit enumeration: for each class c, add every v_j whose
// annotator picked c.
inline std::vector<double> brute_force_soft_label(std::span<const std::size_t> annotations,
                                                  std::span<const double> v, std::size_t classes) {
  std::vector<double> out(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < annotations.size(); ++j) {
      if (annotations[j] == c) out[c] += v[j];
    }
  }
  return out;
}

}  // namespace sldro::testing
