// SPDX-License-Identifier: Apache-2.0
#include "sldro/bilevel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

namespace sldro {

using nlohmann::json;

double TrainConfig::mu() const {
  if (schedule == StepSchedule::SqrtHorizon) return k2 / static_cast<double>(std::max<std::size_t>(steps, 1));
  return inner_step;
}

double TrainConfig::alpha() const {
  if (schedule == StepSchedule::SqrtHorizon) {
    return k1 / std::sqrt(static_cast<double>(std::max<std::size_t>(steps, 1)));
  }
  return outer_step;
}

void TrainConfig::validate() const {
  if (batch_train == 0 || batch_val == 0) throw ConfigError("train: batch sizes must be >= 1");
  if (schedule == StepSchedule::Constant) {
    if (!(inner_step > 0.0) || !(outer_step > 0.0)) {
      throw ConfigError("train: mu and alpha must be positive");
    }
  } else if (!(k1 > 0.0) || !(k2 > 0.0)) {
    throw ConfigError("train: the sqrt-horizon schedule requires k1 > 0 and k2 > 0");
  }
  if (outer_risk.kind == OuterRisk::Kind::Cvar &&
      !(outer_risk.cvar_alpha > 0.0 && outer_risk.cvar_alpha <= 1.0)) {
    throw ConfigError("train: cvar alpha must lie in (0, 1]");
  }
  if (outer_risk.group_count == 0) throw ConfigError("train: group count must be positive");
  if (!(fd_epsilon > 0.0)) throw ConfigError("train: fd_epsilon must be positive");
}

std::vector<SoftLabel> estimator_soft_labels(const BilevelModels& models, const ParamVector& w,
                                             std::span<const AnnotatedExample> batch) {
  std::vector<SoftLabel> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) {
    const auto v = forward(models.estimator, w, ex.features).probabilities;
    out.push_back(soft_label_aggregate(ex.annotations, v, models.classes));
  }
  return out;
}

ParamVector inner_gradient(const BilevelModels& models, const ParamVector& theta,
                           const ParamVector& w, std::span<const AnnotatedExample> batch) {
  const auto labels = estimator_soft_labels(models, w, batch);
  return inner_loss_gradient(models.classifier, theta, batch, labels);
}

ParamVector pseudo_update(const BilevelModels& models, const ParamVector& theta,
                          const ParamVector& w, std::span<const AnnotatedExample> train_batch,
                          double mu) {
  ParamVector next = theta;
  if (mu == 0.0) return next;
  next.axpy(-mu, inner_gradient(models, theta, w, train_batch));
  return next;
}

MetaGradient metagrad_w_detailed(const BilevelModels& models, const ParamVector& theta,
                                 const ParamVector& w,
                                 std::span<const AnnotatedExample> train_batch,
                                 std::span<const LabeledExample> val_batch, double mu,
                                 const OuterRisk& outer) {
  if (train_batch.empty() || val_batch.empty()) {
    throw std::invalid_argument("metagrad_w: batches must be nonempty");
  }
  MetaGradient out;
  out.theta_prime = pseudo_update(models, theta, w, train_batch, mu);
  out.risk_at_prime = outer.evaluate(models.classifier, out.theta_prime, val_batch);
  out.risk_grad_at_prime =
      risk_gradient(models.classifier, out.theta_prime, val_batch, out.risk_at_prime);
  out.grad = ParamVector::zeros(models.estimator);

  const ParamVector& u = out.risk_grad_at_prime;
  const double coeff = -mu / static_cast<double>(train_batch.size());
  const std::size_t m = models.estimator.output_dim;
  std::vector<double> class_score(models.classes);
  std::vector<double> dv(m);
  std::vector<double> dz(m);
  for (const auto& ex : train_batch) {
    const auto per_class = per_class_param_grads(models.classifier, theta, ex.features);
    for (std::size_t c = 0; c < models.classes; ++c) class_score[c] = dot(per_class[c], u);

    // dR/dv_j through ybar_c = sum_{j: a_j = c} v_j
    const auto v = forward(models.estimator, w, ex.features).probabilities;
    double v_dot_dv = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      dv[j] = coeff * class_score[ex.annotations[j]];
      v_dot_dv += v[j] * dv[j];
    }
    // softmax backprop
    for (std::size_t j = 0; j < m; ++j) dz[j] = v[j] * (dv[j] - v_dot_dv);
    accumulate_param_grad(models.estimator, w, ex.features, dz, 1.0, out.grad);
  }
  return out;
}

ParamVector metagrad_w(const BilevelModels& models, const ParamVector& theta, const ParamVector& w,
                       std::span<const AnnotatedExample> train_batch,
                       std::span<const LabeledExample> val_batch, double mu,
                       const OuterRisk& outer) {
  return metagrad_w_detailed(models, theta, w, train_batch, val_batch, mu, outer).grad;
}

ParamVector metagrad_w_finite_difference(const BilevelModels& models, const ParamVector& theta,
                                         const ParamVector& w,
                                         std::span<const AnnotatedExample> train_batch,
                                         std::span<const LabeledExample> val_batch, double mu,
                                         const OuterRisk& outer, double epsilon) {
  auto risk_at = [&](const ParamVector& w_probe) {
    const auto theta_prime = pseudo_update(models, theta, w_probe, train_batch, mu);
    return outer.evaluate(models.classifier, theta_prime, val_batch).value;
  };
  ParamVector grad = ParamVector::zeros_like(w);
  ParamVector probe = w;
  for (std::size_t j = 0; j < w.size(); ++j) {
    probe[j] = w[j] + epsilon;
    const double plus = risk_at(probe);
    probe[j] = w[j] - epsilon;
    const double minus = risk_at(probe);
    probe[j] = w[j];
    grad[j] = (plus - minus) / (2.0 * epsilon);
  }
  return grad;
}

ParamVector update_w(const ParamVector& w, const ParamVector& metagrad, double alpha) {
  ParamVector next = w;
  next.axpy(-alpha, metagrad);
  return next;
}

ParamVector update_theta(const BilevelModels& models, const ParamVector& theta,
                         const ParamVector& w_next, std::span<const AnnotatedExample> train_batch,
                         double mu) {
  return pseudo_update(models, theta, w_next, train_batch, mu);
}

void estimate_assumption_constants(const StepGradients& step, DiagnosticsReport& report) {
  const double inner_sq = squared_norm(step.inner_grad);
  if (inner_sq >= 1e-24) {
    const double k = dot(step.risk_grad_at_prime, step.inner_grad) / inner_sq;
    report.k_hat = report.k_samples > 0 ? std::min(report.k_hat, k) : k;
    ++report.k_samples;
  }
  if (std::sqrt(squared_norm(difference(step.theta, step.theta_prime))) >= 1e-12) {
    const std::vector<ParamVector> points = {step.theta, step.theta_prime};
    const std::vector<ParamVector> grads = {step.risk_grad, step.risk_grad_at_prime};
    report.L_hat = std::max(report.L_hat, lipschitz_estimate(points, grads));
    ++report.L_samples;
  }
  const double u_norm = std::sqrt(squared_norm(step.risk_grad_at_prime));
  report.sigma_hat = std::max({report.sigma_hat, std::sqrt(inner_sq),
                               std::sqrt(squared_norm(step.risk_grad)), u_norm});
  if (step.mu * u_norm >= 1e-12) {
    report.sigma_prime_hat = std::max(report.sigma_prime_hat, std::sqrt(step.grad_w_sq) / (step.mu * u_norm));
  }
}

double lipschitz_estimate(std::span<const ParamVector> points, std::span<const ParamVector> grads) {
  if (points.size() != grads.size()) throw std::invalid_argument("lipschitz_estimate: size mismatch");
  double best = 0.0;
  for (std::size_t a = 0; a < points.size(); ++a) {
    for (std::size_t b = a + 1; b < points.size(); ++b) {
      const double dist = std::sqrt(squared_norm(difference(points[a], points[b])));
      if (dist < 1e-12) continue;
      best = std::max(best, std::sqrt(squared_norm(difference(grads[a], grads[b]))) / dist);
    }
  }
  return best;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  json doc = {{"step", step},
              {"theta", {{"layout", theta.layout}, {"values", theta.values}}},
              {"w", {{"layout", w.layout}, {"values", w.values}}},
              {"rng", rng_state}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write checkpoint '{}'", path.string()));
  out << doc.dump() << '\n';
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open checkpoint '{}'", path.string()));
  try {
    const json doc = json::parse(in);
    Checkpoint cp;
    cp.step = doc.at("step").get<std::size_t>();
    cp.theta.layout = doc.at("theta").at("layout").get<std::vector<std::size_t>>();
    cp.theta.values = doc.at("theta").at("values").get<std::vector<double>>();
    cp.w.layout = doc.at("w").at("layout").get<std::vector<std::size_t>>();
    cp.w.values = doc.at("w").at("values").get<std::vector<double>>();
    cp.rng_state = doc.at("rng").get<std::string>();
    return cp;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("checkpoint '{}': {}", path.string(), e.what()));
  }
}

BilevelTrainer::BilevelTrainer(std::span<const AnnotatedExample> train_set,
                               std::span<const LabeledExample> val_set, BilevelModels models,
                               TrainConfig config, ParamVector theta0, ParamVector w0)
    : train_set_(train_set),
      val_set_(val_set),
      models_(std::move(models)),
      config_(std::move(config)),
      theta_(std::move(theta0)),
      w_(std::move(w0)),
      rng_(derive_seed(config_.seed, 3)) {
  config_.validate();
  models_.classifier.validate();
  models_.estimator.validate();
  if (theta_.size() != models_.classifier.param_count() ||
      w_.size() != models_.estimator.param_count()) {
    throw std::invalid_argument("BilevelTrainer: initial parameters do not match model specs");
  }
  if (config_.steps > 0 && (train_set_.empty() || val_set_.empty())) {
    throw DataError("bilevel training needs nonempty training and validation sets");
  }
}

std::vector<AnnotatedExample> BilevelTrainer::sample_train() {
  if (config_.batch_train >= train_set_.size()) return {train_set_.begin(), train_set_.end()};
  std::uniform_int_distribution<std::size_t> pick(0, train_set_.size() - 1);
  std::vector<AnnotatedExample> batch;
  batch.reserve(config_.batch_train);
  for (std::size_t i = 0; i < config_.batch_train; ++i) batch.push_back(train_set_[pick(rng_)]);
  return batch;
}

std::vector<LabeledExample> BilevelTrainer::sample_val() {
  if (config_.batch_val >= val_set_.size()) return {val_set_.begin(), val_set_.end()};
  std::uniform_int_distribution<std::size_t> pick(0, val_set_.size() - 1);
  std::vector<LabeledExample> batch;
  batch.reserve(config_.batch_val);
  for (std::size_t i = 0; i < config_.batch_val; ++i) batch.push_back(val_set_[pick(rng_)]);
  return batch;
}

void BilevelTrainer::step() {
  if (done()) return;
  const double mu = config_.mu();
  const double alpha = config_.alpha();
  const auto train_batch = sample_train();
  const auto val_batch = sample_val();
  const OuterRisk& outer = config_.outer_risk;

  const RiskValue risk_now = outer.evaluate(models_.classifier, theta_, val_batch);

  MetaGradient meta =
      metagrad_w_detailed(models_, theta_, w_, train_batch, val_batch, mu, outer);
  if (config_.backend == MetagradBackend::FiniteDifference) {
    meta.grad = metagrad_w_finite_difference(models_, theta_, w_, train_batch, val_batch, mu, outer,
                                             config_.fd_epsilon);
  }
  ParamVector w_next = update_w(w_, meta.grad, alpha);

  const auto labels_next = estimator_soft_labels(models_, w_next, train_batch);
  const ParamVector inner_grad =
      inner_loss_gradient(models_.classifier, theta_, train_batch, labels_next);
  const double inner_value = inner_loss(models_.classifier, theta_, train_batch, labels_next);
  ParamVector theta_next = theta_;
  theta_next.axpy(-mu, inner_grad);

  const RiskValue risk_next = outer.evaluate(models_.classifier, theta_next, val_batch);
  if (!std::isfinite(risk_now.value) || !std::isfinite(inner_value) || !theta_next.all_finite() ||
      !w_next.all_finite()) {
    throw NumericError(fmt::format("non-finite loss or parameters at step {}", step_ + 1));
  }

  const double grad_w_sq = squared_norm(meta.grad);
  report_.risk_trace.push_back(risk_now.value);
  report_.risk_after_trace.push_back(risk_next.value);
  report_.grad_w_norms.push_back(grad_w_sq);
  report_.inner_loss_trace.push_back(inner_value);
  report_.argmax_groups.push_back(risk_now.argmax_group ? static_cast<long>(*risk_now.argmax_group)
                                                        : -1L);
  if (risk_next.value <= risk_now.value + 1e-9) ++monotone_steps_;

  if (config_.diagnostics) {
    const ParamVector risk_grad_now = risk_gradient(models_.classifier, theta_, val_batch, risk_now);
    estimate_assumption_constants({theta_, meta.theta_prime, inner_grad, risk_grad_now,
                                   meta.risk_grad_at_prime, grad_w_sq, mu},
                                  report_);
  }

  w_ = std::move(w_next);
  theta_ = std::move(theta_next);
  ++step_;
  finish_report();
}

void BilevelTrainer::finish_report() {
  const std::size_t n = report_.risk_trace.size();
  report_.monotone_fraction = n == 0 ? 1.0 : static_cast<double>(monotone_steps_) / static_cast<double>(n);
}

void BilevelTrainer::run() {
  while (!done()) step();
  if (config_.diagnostics && report_.k_samples > 0 && report_.L_hat > 0.0) {
    const double mu_bound = 2.0 * report_.k_hat / report_.L_hat;
    if (config_.mu() > mu_bound) {
      fmt::print(stderr,
                 "warning: inner step {} exceeds the descent bound 2k/L = {} (k_hat={}, L_hat={})\n",
                 config_.mu(), mu_bound, report_.k_hat, report_.L_hat);
    }
    if (config_.schedule == StepSchedule::SqrtHorizon && config_.k1 >= 2.0 / report_.L_hat) {
      fmt::print(stderr, "warning: k1 = {} is not below 2/L_hat = {}\n", config_.k1,
                 2.0 / report_.L_hat);
    }
  }
}

Checkpoint BilevelTrainer::checkpoint() const {
  std::ostringstream rng_text;
  rng_text << rng_;
  return Checkpoint{theta_, w_, step_, rng_text.str()};
}

void BilevelTrainer::restore(const Checkpoint& checkpoint) {
  if (checkpoint.theta.size() != theta_.size() || checkpoint.w.size() != w_.size()) {
    throw DataError("checkpoint parameters do not match the model specs");
  }
  theta_ = checkpoint.theta;
  w_ = checkpoint.w;
  step_ = checkpoint.step;
  std::istringstream rng_text(checkpoint.rng_state);
  rng_text >> rng_;
  if (!rng_text) throw DataError("checkpoint has a corrupt random-stream state");
  report_ = DiagnosticsReport{};
  monotone_steps_ = 0;
}

void BilevelTrainer::write_trace_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out << "step,risk,grad_w_sq_norm,inner_loss,argmax_group\n";
  const std::size_t first = step_ - report_.risk_trace.size();
  for (std::size_t i = 0; i < report_.risk_trace.size(); ++i) {
    fmt::print(out, "{},{},{},{},{}\n", first + i + 1, report_.risk_trace[i],
               report_.grad_w_norms[i], report_.inner_loss_trace[i], report_.argmax_groups[i]);
  }
}

TrainResult train(std::span<const AnnotatedExample> train_set,
                  std::span<const LabeledExample> val_set, const ModelSpec& classifier_spec,
                  const ModelSpec& estimator_spec, std::size_t classes, const TrainConfig& config) {
  BilevelTrainer trainer(train_set, val_set, BilevelModels{classifier_spec, estimator_spec, classes},
                         config, init_params(classifier_spec, derive_seed(config.seed, 1)),
                         init_params(estimator_spec, derive_seed(config.seed, 2)));
  trainer.run();
  return TrainResult{trainer.theta(), trainer.w(), trainer.diagnostics()};
}

}  // namespace sldro
