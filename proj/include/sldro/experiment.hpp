// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sldro/baselines.hpp"
#include "sldro/bilevel.hpp"
#include "sldro/data.hpp"
#include "sldro/eval.hpp"
#include "sldro/models.hpp"
#include "sldro/synth.hpp"

namespace sldro {

/// Registered method ids, in report order.
const std::vector<std::string>& method_registry();
bool is_registered_method(std::string_view id);
/// Throws ConfigError listing the registered ids.
void require_registered_method(std::string_view id);

/// Initial estimator weights. `Zero` starts every example at uniform annotator
/// weights, i.e. at the vote-fraction soft labels.
enum class EstimatorInit { Glorot, Zero };

/// Everything a method needs besides data and seed. Model input/output dims
/// are filled in from the data by run_method.
struct MethodConfig {
  ModelSpec classifier;
  ModelSpec estimator;
  EstimatorInit estimator_init = EstimatorInit::Zero;
  TrainConfig bilevel;
  SgdConfig sgd;
  std::size_t pm_iterations = 20;
  double pm_epsilon = 1e-3;
  std::size_t ds_max_iters = 100;
  double ds_tol = 1e-6;
  double cvar_alpha = 0.3;
};

struct Datasets {
  std::vector<AnnotatedExample> train;
  std::vector<LabeledExample> val;
  std::vector<LabeledExample> test;
  std::size_t classes = 0;
  std::size_t annotators = 0;
  std::size_t feature_dim = 0;
  std::size_t group_count = 1;
};

/// Annotates the benchmark's training split and packages all three splits.
/// Annotation draws use derive_seed(config_seed, 13).
Datasets synthetic_datasets(const SpuriousBenchmark& bench, std::span<const AnnotatorModel> annotators,
                            std::size_t classes, bool ensure_truth_present, std::uint64_t config_seed);

/// A trained predictor as written to model files. Ensembles carry one
/// parameter vector per member; every other method carries exactly one.
struct TrainedModel {
  std::string method;
  std::string outer_risk = "none";  ///< "groupdro", "cvar" or "none"
  std::uint64_t seed = 0;
  ModelSpec spec;
  std::vector<ParamVector> members;

  bool trained_with_groups() const { return outer_risk == "groupdro"; }
  std::size_t predict(std::span<const double> x) const;
  Predictor predictor() const;

  void save(const std::filesystem::path& path) const;
  static TrainedModel load(const std::filesystem::path& path);
};

struct MethodRun {
  TrainedModel model;
  std::optional<double> kept_fraction;  ///< label-identification methods only
  std::optional<BilevelTrainer> trainer;
};

MethodRun run_method(std::string_view id, const Datasets& data, const MethodConfig& config,
                     std::uint64_t seed);

struct SeedMetrics {
  std::string method;
  std::uint64_t seed = 0;
  GroupMetrics metrics;
};

struct SummaryRow {
  std::string method;
  std::string metric;  ///< "average", "worst_group" or "overall"
  MeanStd value;
};

/// Per-seed metrics in seed order. With jobs > 1 seeds run concurrently; the
/// merge is by seed index. A failing seed rethrows with the seed named.
std::vector<SeedMetrics> run_experiment(std::string_view id, const Datasets& data,
                                        const MethodConfig& config,
                                        std::span<const std::uint64_t> seeds, std::size_t jobs = 1);

/// Several methods at once; results are grouped by method in `ids` order and
/// by seed within a method, whatever `jobs` is.
std::vector<SeedMetrics> run_comparison(std::span<const std::string> ids, const Datasets& data,
                                        const MethodConfig& config,
                                        std::span<const std::uint64_t> seeds, std::size_t jobs = 1);

std::vector<SummaryRow> summarize(std::span<const SeedMetrics> results);

/// method,seed,average,worst_group,overall,group_0..group_{G-1}
void write_metrics_csv(const std::filesystem::path& path, std::span<const SeedMetrics> rows,
                       std::size_t group_count);
/// method,metric,mean,std
void write_summary_csv(const std::filesystem::path& path, std::span<const SummaryRow> rows);

}  // namespace sldro
