// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sldro/common.hpp"
#include "sldro/data.hpp"
#include "sldro/losses.hpp"
#include "sldro/models.hpp"

namespace sldro {

/// Step-size policy. `SqrtHorizon` uses alpha = k1 / sqrt(T), mu = k2 / T.
enum class StepSchedule { Constant, SqrtHorizon };

/// How the outer gradient over the estimator parameters is computed.
enum class MetagradBackend { Analytic, FiniteDifference };

struct TrainConfig {
  std::size_t steps = 1000;  ///< T
  double inner_step = 0.5;   ///< mu
  double outer_step = 2.0;   ///< alpha
  StepSchedule schedule = StepSchedule::Constant;
  double k1 = 0.0;
  double k2 = 0.0;
  std::size_t batch_train = 128;  ///< >= dataset size means full batch, in order
  std::size_t batch_val = 256;
  std::uint64_t seed = 0;
  OuterRisk outer_risk;
  bool diagnostics = true;
  MetagradBackend backend = MetagradBackend::Analytic;
  double fd_epsilon = 1e-5;

  double mu() const;
  double alpha() const;
  void validate() const;
};

/// The two networks: classifier f_theta (C outputs) and weight estimator v_w (M outputs).
struct BilevelModels {
  ModelSpec classifier;
  ModelSpec estimator;
  std::size_t classes = 0;
};

/// Soft labels ybar_i = softmax(v_w(x_i)) aggregated over the annotations.
std::vector<SoftLabel> estimator_soft_labels(const BilevelModels& models, const ParamVector& w,
                                             std::span<const AnnotatedExample> batch);

/// grad_theta L(theta; w) on the batch.
ParamVector inner_gradient(const BilevelModels& models, const ParamVector& theta,
                           const ParamVector& w, std::span<const AnnotatedExample> batch);

/// theta' = theta - mu grad_theta L(theta; w). Inputs are not modified.
ParamVector pseudo_update(const BilevelModels& models, const ParamVector& theta,
                          const ParamVector& w, std::span<const AnnotatedExample> train_batch,
                          double mu);

struct MetaGradient {
  ParamVector grad;               ///< d R(theta'(w)) / d w
  ParamVector theta_prime;
  RiskValue risk_at_prime;
  ParamVector risk_grad_at_prime;  ///< grad_theta R(theta')
};

/// Analytic outer gradient through the one-step pseudo-update.
///
/// The inner loss is linear in ybar, so d theta' / d ybar_ic = -(mu/B) g_ic with
/// g_ic the gradient of -log f_c(x_i; theta). Contracting with u = grad R(theta')
/// gives per-example class scores s_ic = <g_ic, u>, and the result is the
/// estimator backprop of sum_i sum_c ybar_ic(w) * (-(mu/B) s_ic).
MetaGradient metagrad_w_detailed(const BilevelModels& models, const ParamVector& theta,
                                 const ParamVector& w,
                                 std::span<const AnnotatedExample> train_batch,
                                 std::span<const LabeledExample> val_batch, double mu,
                                 const OuterRisk& outer);

ParamVector metagrad_w(const BilevelModels& models, const ParamVector& theta, const ParamVector& w,
                       std::span<const AnnotatedExample> train_batch,
                       std::span<const LabeledExample> val_batch, double mu,
                       const OuterRisk& outer);

/// Coordinate-wise central differences of R(theta'(w)). Slow; for cross-checks.
ParamVector metagrad_w_finite_difference(const BilevelModels& models, const ParamVector& theta,
                                         const ParamVector& w,
                                         std::span<const AnnotatedExample> train_batch,
                                         std::span<const LabeledExample> val_batch, double mu,
                                         const OuterRisk& outer, double epsilon);

ParamVector update_w(const ParamVector& w, const ParamVector& metagrad, double alpha);

ParamVector update_theta(const BilevelModels& models, const ParamVector& theta,
                         const ParamVector& w_next, std::span<const AnnotatedExample> train_batch,
                         double mu);

struct DiagnosticsReport {
  std::vector<double> risk_trace;        ///< R(theta_t) on the step's validation batch
  std::vector<double> risk_after_trace;  ///< R(theta_{t+1}) on the same batch
  std::vector<double> grad_w_norms;      ///< ||grad_w R(theta'_{t+1})||^2
  std::vector<double> inner_loss_trace;  ///< L(theta_t; w_{t+1})
  std::vector<long> argmax_groups;       ///< -1 when the risk is not group based
  double k_hat = 0.0;
  double L_hat = 0.0;
  double sigma_hat = 0.0;
  double sigma_prime_hat = 0.0;
  double monotone_fraction = 1.0;
  std::size_t k_samples = 0;
  std::size_t L_samples = 0;
};

/// One step's gradients as seen by the assumption-constant estimates.
struct StepGradients {
  const ParamVector& theta;
  const ParamVector& theta_prime;
  const ParamVector& inner_grad;          ///< grad_theta L(theta; w_next)
  const ParamVector& risk_grad;           ///< grad R(theta)
  const ParamVector& risk_grad_at_prime;  ///< grad R(theta')
  double grad_w_sq = 0.0;
  double mu = 0.0;
};

/// Folds one step into k_hat (running min), L_hat, sigma_hat and sigma_prime_hat
/// (running max) and their sample counts.
void estimate_assumption_constants(const StepGradients& step, DiagnosticsReport& report);

/// max over pairs (a, b) of ||grad_a - grad_b|| / ||a - b||; coincident points are skipped.
double lipschitz_estimate(std::span<const ParamVector> points, std::span<const ParamVector> grads);

/// Everything needed to continue a run bit-identically.
struct Checkpoint {
  ParamVector theta;
  ParamVector w;
  std::size_t step = 0;
  std::string rng_state;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Runs the alternating loop: sample batches, pseudo-update theta, step w on the
/// outer risk at theta', then step theta on the inner loss with the new w.
class BilevelTrainer {
 public:
  BilevelTrainer(std::span<const AnnotatedExample> train_set,
                 std::span<const LabeledExample> val_set, BilevelModels models, TrainConfig config,
                 ParamVector theta0, ParamVector w0);

  void step();
  void run();
  bool done() const { return step_ >= config_.steps; }
  std::size_t current_step() const { return step_; }

  const ParamVector& theta() const { return theta_; }
  const ParamVector& w() const { return w_; }
  const DiagnosticsReport& diagnostics() const { return report_; }
  const TrainConfig& config() const { return config_; }

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& checkpoint);

  /// Columns: step, risk, grad_w_sq_norm, inner_loss, argmax_group.
  void write_trace_csv(const std::filesystem::path& path) const;

 private:
  std::vector<AnnotatedExample> sample_train();
  std::vector<LabeledExample> sample_val();
  void finish_report();

  std::span<const AnnotatedExample> train_set_;
  std::span<const LabeledExample> val_set_;
  BilevelModels models_;
  TrainConfig config_;
  ParamVector theta_;
  ParamVector w_;
  std::size_t step_ = 0;
  Rng rng_;
  DiagnosticsReport report_;
  std::size_t monotone_steps_ = 0;
};

struct TrainResult {
  ParamVector theta;
  ParamVector w;
  DiagnosticsReport diagnostics;
};

/// Initializes both networks from the config seed and runs config.steps iterations.
TrainResult train(std::span<const AnnotatedExample> train_set,
                  std::span<const LabeledExample> val_set, const ModelSpec& classifier_spec,
                  const ModelSpec& estimator_spec, std::size_t classes, const TrainConfig& config);

}  // namespace sldro
