// SPDX-License-Identifier: Apache-2.0
#include "sldro/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "sldro/common.hpp"

namespace sldro {

using nlohmann::json;

const std::vector<std::string>& method_registry() {
  static const std::vector<std::string> ids = {
      "mv",     "pm",           "consensus", "label-model", "ensemble",    "avg-label",
      "proden", "vanilla-soft", "erm-dro",   "bilevel",     "bilevel-cvar"};
  return ids;
}

bool is_registered_method(std::string_view id) {
  const auto& ids = method_registry();
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

void require_registered_method(std::string_view id) {
  if (!is_registered_method(id)) {
    throw ConfigError(fmt::format("unknown method '{}'; registered methods: {}", id,
                                  fmt::join(method_registry(), ", ")));
  }
}

Datasets synthetic_datasets(const SpuriousBenchmark& bench, std::span<const AnnotatorModel> annotators,
                            std::size_t classes, bool ensure_truth_present, std::uint64_t config_seed) {
  Datasets data;
  data.train = annotate(bench.train, annotators, bench.spurious_offset, ensure_truth_present,
                        derive_seed(config_seed, 13));
  data.val = bench.val;
  data.test = bench.test;
  data.classes = classes;
  data.annotators = annotators.size();
  data.feature_dim = bench.train.empty() ? 0 : bench.train.front().features.size();
  data.group_count = bench.groups.group_count();
  return data;
}

std::size_t TrainedModel::predict(std::span<const double> x) const {
  if (members.size() == 1) return argmax(forward(spec, members.front(), x).logits);
  return Ensemble{spec, members}.predict(x);
}

Predictor TrainedModel::predictor() const {
  return [model = *this](std::span<const double> x) { return model.predict(x); };
}

void TrainedModel::save(const std::filesystem::path& path) const {
  json doc = {{"method", method},
              {"outer_risk", outer_risk},
              {"seed", seed},
              {"classifier",
               {{"family", std::string(to_string(spec.family))},
                {"input_dim", spec.input_dim},
                {"output_dim", spec.output_dim},
                {"hidden_dim", spec.hidden_dim}}},
              {"members", json::array()}};
  for (const auto& p : members) doc["members"].push_back({{"layout", p.layout}, {"values", p.values}});
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write model file '{}'", path.string()));
  out << doc.dump() << '\n';
}

TrainedModel TrainedModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open model file '{}'", path.string()));
  TrainedModel model;
  try {
    const json doc = json::parse(in);
    model.method = doc.at("method").get<std::string>();
    model.outer_risk = doc.at("outer_risk").get<std::string>();
    model.seed = doc.at("seed").get<std::uint64_t>();
    const json& c = doc.at("classifier");
    model.spec.family = parse_model_family(c.at("family").get<std::string>());
    model.spec.input_dim = c.at("input_dim").get<std::size_t>();
    model.spec.output_dim = c.at("output_dim").get<std::size_t>();
    model.spec.hidden_dim = c.at("hidden_dim").get<std::size_t>();
    for (const json& m : doc.at("members")) {
      ParamVector p;
      p.layout = m.at("layout").get<std::vector<std::size_t>>();
      p.values = m.at("values").get<std::vector<double>>();
      model.members.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw DataError(fmt::format("model file '{}': {}", path.string(), e.what()));
  }
  model.spec.validate();
  if (model.members.empty()) throw DataError(fmt::format("model file '{}' has no parameters", path.string()));
  for (const auto& p : model.members) {
    if (p.size() != model.spec.param_count() || p.layout != model.spec.layout()) {
      throw DataError(fmt::format("model file '{}': parameters do not match the architecture",
                                  path.string()));
    }
  }
  return model;
}

namespace {

MethodRun hard_label_run(const AggregatedDataset& agg, const ModelSpec& spec, const SgdConfig& sgd) {
  MethodRun run;
  run.kept_fraction = agg.kept_fraction;
  run.model.members.push_back(train_on_aggregated(agg, spec, sgd));
  return run;
}

MethodRun bilevel_run(const Datasets& data, const MethodConfig& config, const ModelSpec& clf,
                      std::uint64_t seed, bool cvar) {
  ModelSpec est = config.estimator;
  est.input_dim = data.feature_dim;
  est.output_dim = data.annotators;
  TrainConfig tc = config.bilevel;
  tc.seed = seed;
  tc.outer_risk.kind = cvar ? OuterRisk::Kind::Cvar : OuterRisk::Kind::GroupDro;
  tc.outer_risk.group_count = data.group_count;
  tc.outer_risk.cvar_alpha = config.cvar_alpha;

  ParamVector w0 = config.estimator_init == EstimatorInit::Zero
                       ? ParamVector::zeros(est)
                       : init_params(est, derive_seed(seed, 2));
  MethodRun run;
  run.trainer.emplace(data.train, data.val, BilevelModels{clf, est, data.classes}, tc,
                      init_params(clf, derive_seed(seed, 1)), std::move(w0));
  run.trainer->run();
  run.model.outer_risk = cvar ? "cvar" : "groupdro";
  run.model.members.push_back(run.trainer->theta());
  return run;
}

}  // namespace

MethodRun run_method(std::string_view id, const Datasets& data, const MethodConfig& config,
                     std::uint64_t seed) {
  require_registered_method(id);
  ModelSpec clf = config.classifier;
  clf.input_dim = data.feature_dim;
  clf.output_dim = data.classes;
  clf.validate();
  SgdConfig sgd = config.sgd;
  sgd.seed = seed;

  MethodRun run;
  if (id == "mv") {
    std::vector<std::size_t> labels;
    labels.reserve(data.train.size());
    for (const auto& ex : data.train) labels.push_back(majority_vote(ex));
    run = hard_label_run(aggregate_hard(data.train, labels, "mv"), clf, sgd);
  } else if (id == "pm") {
    const auto pm = pm_vote(data.train, config.pm_iterations, config.pm_epsilon);
    run = hard_label_run(aggregate_hard(data.train, pm.labels, "pm"), clf, sgd);
  } else if (id == "consensus") {
    run = hard_label_run(consensus_filter(data.train), clf, sgd);
  } else if (id == "label-model") {
    const auto ds = dawid_skene(data.train, data.classes, config.ds_max_iters, config.ds_tol);
    run = hard_label_run(aggregate_hard(data.train, ds.labels, "label-model"), clf, sgd);
  } else if (id == "ensemble") {
    run.model.members = train_ensemble(data.train, clf, sgd).members;
  } else if (id == "avg-label") {
    run.model.members.push_back(average_label_train(data.train, clf, sgd));
  } else if (id == "proden") {
    run.model.members.push_back(proden_train(data.train, clf, sgd).theta);
  } else if (id == "vanilla-soft") {
    run.model.members.push_back(vanilla_soft_train(data.train, clf, sgd));
  } else if (id == "erm-dro") {
    run.model.members.push_back(erm_groupdro_validation(data.val, clf, data.group_count, sgd));
    run.model.outer_risk = "groupdro";
  } else {
    run = bilevel_run(data, config, clf, seed, id == "bilevel-cvar");
  }
  run.model.method = std::string(id);
  run.model.seed = seed;
  run.model.spec = clf;
  return run;
}

namespace {

struct Job {
  std::string method;
  std::uint64_t seed;
};

std::vector<SeedMetrics> run_jobs(const std::vector<Job>& jobs_list, const Datasets& data,
                                  const MethodConfig& config, std::size_t jobs) {
  std::vector<SeedMetrics> results(jobs_list.size());
  std::vector<std::exception_ptr> errors(jobs_list.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs_list.size(); i = next++) {
      try {
        const auto& job = jobs_list[i];
        const MethodRun run = run_method(job.method, data, config, job.seed);
        results[i] = {job.method, job.seed,
                      group_metrics(run.model.predictor(), data.test, data.group_count)};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(jobs_list.size(), 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    const auto& job = jobs_list[i];
    try {
      std::rethrow_exception(errors[i]);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("method '{}', seed {}: {}", job.method, job.seed, e.what()));
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("method '{}', seed {}: {}", job.method, job.seed, e.what()));
    } catch (const DataError& e) {
      throw DataError(fmt::format("method '{}', seed {}: {}", job.method, job.seed, e.what()));
    } catch (const std::exception& e) {
      throw std::runtime_error(fmt::format("method '{}', seed {}: {}", job.method, job.seed, e.what()));
    }
  }
  return results;
}

}  // namespace

std::vector<SeedMetrics> run_experiment(std::string_view id, const Datasets& data,
                                        const MethodConfig& config,
                                        std::span<const std::uint64_t> seeds, std::size_t jobs) {
  const std::string ids[] = {std::string(id)};
  return run_comparison(ids, data, config, seeds, jobs);
}

std::vector<SeedMetrics> run_comparison(std::span<const std::string> ids, const Datasets& data,
                                        const MethodConfig& config,
                                        std::span<const std::uint64_t> seeds, std::size_t jobs) {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  std::vector<Job> list;
  for (const auto& id : ids) {
    require_registered_method(id);
    for (std::uint64_t s : seeds) list.push_back({id, s});
  }
  return run_jobs(list, data, config, jobs);
}

std::vector<SummaryRow> summarize(std::span<const SeedMetrics> results) {
  std::vector<SummaryRow> rows;
  std::size_t i = 0;
  while (i < results.size()) {
    std::size_t j = i;
    std::vector<double> avg, worst, overall;
    while (j < results.size() && results[j].method == results[i].method) {
      avg.push_back(results[j].metrics.average_accuracy);
      worst.push_back(results[j].metrics.worst_group_accuracy);
      overall.push_back(results[j].metrics.overall_accuracy);
      ++j;
    }
    rows.push_back({results[i].method, "average", mean_std(avg)});
    rows.push_back({results[i].method, "worst_group", mean_std(worst)});
    rows.push_back({results[i].method, "overall", mean_std(overall)});
    i = j;
  }
  return rows;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, std::span<const SeedMetrics> rows,
                       std::size_t group_count) {
  auto out = open_csv(path);
  out << "method,seed,average,worst_group,overall";
  for (std::size_t g = 0; g < group_count; ++g) out << ",group_" << g;
  out << '\n';
  for (const auto& r : rows) {
    fmt::print(out, "{},{},{},{},{}", r.method, r.seed, r.metrics.average_accuracy,
               r.metrics.worst_group_accuracy, r.metrics.overall_accuracy);
    for (std::size_t g = 0; g < group_count; ++g) {
      const double acc = g < r.metrics.per_group_accuracy.size()
                             ? r.metrics.per_group_accuracy[g]
                             : std::nan("");
      // Empty cell for a group with no test examples.
      if (std::isnan(acc)) {
        out << ',';
      } else {
        fmt::print(out, ",{}", acc);
      }
    }
    out << '\n';
  }
}

void write_summary_csv(const std::filesystem::path& path, std::span<const SummaryRow> rows) {
  auto out = open_csv(path);
  out << "method,metric,mean,std\n";
  for (const auto& r : rows) fmt::print(out, "{},{},{},{}\n", r.method, r.metric, r.value.mean, r.value.std);
}

}  // namespace sldro
