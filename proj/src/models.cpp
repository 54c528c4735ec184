// SPDX-License-Identifier: Apache-2.0
#include "sldro/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "sldro/common.hpp"

namespace sldro {

std::string_view to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::LinearSoftmax:
      return "linear-softmax";
    case ModelFamily::Mlp:
      return "mlp-1-hidden";
  }
  return "unknown";
}

ModelFamily parse_model_family(std::string_view name) {
  if (name == "linear-softmax") return ModelFamily::LinearSoftmax;
  if (name == "mlp-1-hidden") return ModelFamily::Mlp;
  throw ConfigError(fmt::format("unknown model family '{}' (expected linear-softmax or mlp-1-hidden)",
                                name));
}

std::vector<std::size_t> ModelSpec::layout() const {
  if (family == ModelFamily::Mlp) return {input_dim, hidden_dim, output_dim};
  return {input_dim, output_dim};
}

std::size_t ModelSpec::param_count() const {
  auto sizes = layout();
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) total += sizes[l] * sizes[l + 1] + sizes[l + 1];
  return total;
}

void ModelSpec::validate() const {
  if (input_dim == 0 || output_dim == 0) {
    throw ConfigError("model spec: input_dim and output_dim must be positive");
  }
  if (family == ModelFamily::Mlp && hidden_dim == 0) {
    throw ConfigError("model spec: mlp-1-hidden requires hidden_dim > 0");
  }
}

ParamVector ParamVector::zeros(const ModelSpec& spec) {
  return ParamVector{std::vector<double>(spec.param_count(), 0.0), spec.layout()};
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
  return ParamVector{std::vector<double>(other.values.size(), 0.0), other.layout};
}

void ParamVector::axpy(double scale, const ParamVector& other) {
  if (other.values.size() != values.size()) throw std::invalid_argument("axpy: size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += scale * other.values[i];
}

void ParamVector::scale(double factor) {
  for (double& v : values) v *= factor;
}

bool ParamVector::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double dot(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(const ParamVector& a) { return dot(a, a); }

ParamVector difference(const ParamVector& a, const ParamVector& b) {
  ParamVector out = a;
  out.axpy(-1.0, b);
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double v : out) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : out) v -= lse;
  return out;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector params = ParamVector::zeros(spec);
  Rng rng(seed);
  auto sizes = spec.layout();
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t fan_in = sizes[l];
    const std::size_t fan_out = sizes[l + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) params[offset + i] = dist(rng);
    offset += fan_in * fan_out + fan_out;  // biases stay zero
  }
  return params;
}

namespace {

void check_shapes(const ModelSpec& spec, const ParamVector& params, std::span<const double> x) {
  if (params.size() != spec.param_count()) {
    throw std::invalid_argument(fmt::format("parameter count {} does not match spec ({})",
                                            params.size(), spec.param_count()));
  }
  if (x.size() != spec.input_dim) {
    throw std::invalid_argument(
        fmt::format("input dimension {} does not match spec ({})", x.size(), spec.input_dim));
  }
}

// y = W x + b for a row-major (out x in) block starting at `offset`.
void affine(const std::vector<double>& p, std::size_t offset, std::size_t in, std::size_t out,
            std::span<const double> x, std::vector<double>& y) {
  y.assign(out, 0.0);
  const double* w = p.data() + offset;
  const double* b = w + in * out;
  for (std::size_t o = 0; o < out; ++o) {
    double s = b[o];
    for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * x[i];
    y[o] = s;
  }
}

}  // namespace

Prediction forward(const ModelSpec& spec, const ParamVector& params, std::span<const double> x) {
  check_shapes(spec, params, x);
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("forward: non-finite input");
  }
  Prediction pred;
  if (spec.family == ModelFamily::LinearSoftmax) {
    affine(params.values, 0, spec.input_dim, spec.output_dim, x, pred.logits);
  } else {
    std::vector<double> hidden;
    affine(params.values, 0, spec.input_dim, spec.hidden_dim, x, hidden);
    for (double& h : hidden) h = std::tanh(h);
    const std::size_t second = spec.input_dim * spec.hidden_dim + spec.hidden_dim;
    affine(params.values, second, spec.hidden_dim, spec.output_dim, hidden, pred.logits);
  }
  pred.probabilities = softmax(pred.logits);
  return pred;
}

void accumulate_param_grad(const ModelSpec& spec, const ParamVector& params,
                           std::span<const double> x, std::span<const double> dlogits,
                           double scale, ParamVector& out) {
  check_shapes(spec, params, x);
  if (dlogits.size() != spec.output_dim) {
    throw std::invalid_argument(fmt::format("dlogits length {} does not match output_dim {}",
                                            dlogits.size(), spec.output_dim));
  }
  if (out.size() != params.size()) throw std::invalid_argument("gradient buffer size mismatch");
  const std::size_t in = spec.input_dim;
  const std::size_t nout = spec.output_dim;
  if (spec.family == ModelFamily::LinearSoftmax) {
    double* gw = out.values.data();
    double* gb = gw + in * nout;
    for (std::size_t o = 0; o < nout; ++o) {
      const double d = scale * dlogits[o];
      for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += d * x[i];
      gb[o] += d;
    }
    return;
  }
  const std::size_t hid = spec.hidden_dim;
  std::vector<double> hidden;
  affine(params.values, 0, in, hid, x, hidden);
  for (double& h : hidden) h = std::tanh(h);

  const std::size_t second = in * hid + hid;
  const double* w2 = params.values.data() + second;
  double* gw1 = out.values.data();
  double* gb1 = gw1 + in * hid;
  double* gw2 = out.values.data() + second;
  double* gb2 = gw2 + hid * nout;

  std::vector<double> dhidden(hid, 0.0);
  for (std::size_t o = 0; o < nout; ++o) {
    const double d = scale * dlogits[o];
    for (std::size_t h = 0; h < hid; ++h) {
      gw2[o * hid + h] += d * hidden[h];
      dhidden[h] += w2[o * hid + h] * d;
    }
    gb2[o] += d;
  }
  for (std::size_t h = 0; h < hid; ++h) {
    const double da = dhidden[h] * (1.0 - hidden[h] * hidden[h]);
    for (std::size_t i = 0; i < in; ++i) gw1[h * in + i] += da * x[i];
    gb1[h] += da;
  }
}

ParamVector grad_params(const ModelSpec& spec, const ParamVector& params,
                        std::span<const double> x, std::span<const double> dlogits) {
  ParamVector out = ParamVector::zeros(spec);
  accumulate_param_grad(spec, params, x, dlogits, 1.0, out);
  return out;
}

std::vector<ParamVector> per_class_param_grads(const ModelSpec& spec, const ParamVector& params,
                                               std::span<const double> x) {
  const Prediction pred = forward(spec, params, x);
  std::vector<ParamVector> out;
  out.reserve(spec.output_dim);
  for (std::size_t c = 0; c < spec.output_dim; ++c) {
    std::vector<double> dlogits = pred.probabilities;
    dlogits[c] -= 1.0;
    out.push_back(grad_params(spec, params, x, dlogits));
  }
  return out;
}

}  // namespace sldro
