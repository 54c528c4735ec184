// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sldro {

enum class ModelFamily { LinearSoftmax, Mlp };

std::string_view to_string(ModelFamily family);
ModelFamily parse_model_family(std::string_view name);

/// Architecture of a classifier (output_dim = C) or a weight estimator
/// (output_dim = M). The MLP has one tanh hidden layer.
struct ModelSpec {
  ModelFamily family = ModelFamily::LinearSoftmax;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::size_t hidden_dim = 0;

  /// Layer widths: {in, out} or {in, hidden, out}.
  std::vector<std::size_t> layout() const;
  std::size_t param_count() const;
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

/// Flat parameter storage. Each layer is a row-major (out x in) weight block
/// followed by its bias vector.
struct ParamVector {
  std::vector<double> values;
  std::vector<std::size_t> layout;

  static ParamVector zeros(const ModelSpec& spec);
  static ParamVector zeros_like(const ParamVector& other);

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  /// this += scale * other
  void axpy(double scale, const ParamVector& other);
  void scale(double factor);
  bool all_finite() const;

  bool operator==(const ParamVector&) const = default;
};

double dot(const ParamVector& a, const ParamVector& b);
double squared_norm(const ParamVector& a);
ParamVector difference(const ParamVector& a, const ParamVector& b);

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probabilities;
};

/// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

/// Glorot-uniform weights, zero biases.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

Prediction forward(const ModelSpec& spec, const ParamVector& params, std::span<const double> x);

/// Backpropagates an output gradient into a parameter gradient:
/// out += scale * d(dlogits . logits(params)) / d params.
void accumulate_param_grad(const ModelSpec& spec, const ParamVector& params,
                           std::span<const double> x, std::span<const double> dlogits,
                           double scale, ParamVector& out);

ParamVector grad_params(const ModelSpec& spec, const ParamVector& params,
                        std::span<const double> x, std::span<const double> dlogits);

/// Entry c is the gradient of -log f_c(x; params).
std::vector<ParamVector> per_class_param_grads(const ModelSpec& spec, const ParamVector& params,
                                               std::span<const double> x);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace sldro
