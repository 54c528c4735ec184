// SPDX-License-Identifier: Apache-2.0
#include "sldro/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "sldro/common.hpp"
#include "sldro/config.hpp"
#include "sldro/eval.hpp"
#include "sldro/experiment.hpp"

namespace sldro {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> method;
};

RunConfig load_with_overrides(const std::string& path, const Overrides& o) {
  RunConfig cfg = load_run_config(path);
  if (o.out) cfg.output_dir = *o.out;
  if (o.method) cfg.method = *o.method;
  cfg.validate();
  return cfg;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

void write_json(const fs::path& path, const json& doc) { open_output(path) << doc.dump(2) << '\n'; }

int cmd_gen_data(const std::string& config_path, const Overrides& o) {
  RunConfig cfg = load_with_overrides(config_path, o);
  if (!cfg.synthetic) throw ConfigError("gen-data needs a 'synthetic' section");
  if (o.seed) cfg.synthetic->generator.seed = *o.seed;
  const auto& syn = *cfg.synthetic;
  const SpuriousBenchmark bench = generate_spurious(syn.generator);
  const Datasets data = synthetic_datasets(bench, syn.annotators, syn.generator.class_count,
                                           syn.ensure_truth_present, syn.generator.seed);

  const fs::path out = cfg.output_dir;
  write_annotated_dataset(out / "train.jsonl", data.train);
  write_labeled_dataset(out / "val.jsonl", data.val);
  write_labeled_dataset(out / "test.jsonl", data.test);
  write_group_spec(out / "groups.json", bench.groups);
  write_truth(out / "truth.jsonl", truth_table(bench.train));
  fmt::print("wrote {} train, {} val, {} test examples ({} annotators, {} groups) to {}\n",
             data.train.size(), data.val.size(), data.test.size(), data.annotators,
             data.group_count, out.string());
  return kExitOk;
}

void write_diagnostics(const fs::path& path, const DiagnosticsReport& d) {
  write_json(path, {{"steps", d.risk_trace.size()},
                    {"k_hat", d.k_hat},
                    {"L_hat", d.L_hat},
                    {"sigma_hat", d.sigma_hat},
                    {"sigma_prime_hat", d.sigma_prime_hat},
                    {"monotone_fraction", d.monotone_fraction},
                    {"k_samples", d.k_samples},
                    {"L_samples", d.L_samples}});
}

int cmd_train(const std::string& config_path, const Overrides& o) {
  const RunConfig cfg = load_with_overrides(config_path, o);
  const std::uint64_t seed = o.seed.value_or(cfg.seeds.front());
  const Datasets data = load_datasets(cfg);
  const MethodRun run = run_method(cfg.method, data, cfg.methods, seed);

  const fs::path out = cfg.output_dir;
  run.model.save(out / "model.json");
  if (run.trainer) {
    run.trainer->checkpoint().save(out / "checkpoint.json");
    run.trainer->write_trace_csv(out / "trace.csv");
    write_diagnostics(out / "diagnostics.json", run.trainer->diagnostics());
  }
  if (run.kept_fraction) {
    write_json(out / "aggregation.json", {{"method", cfg.method},
                                          {"examples", data.train.size()},
                                          {"kept_fraction", *run.kept_fraction}});
  }
  fmt::print("trained '{}' (seed {}) -> {}\n", cfg.method, seed, (out / "model.json").string());
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& test_path,
             const std::optional<std::string>& groups_path, const std::string& out_dir) {
  const TrainedModel model = TrainedModel::load(model_path);
  if (!groups_path && model.trained_with_groups()) {
    throw ConfigError(fmt::format(
        "model '{}' was trained with a group-DRO objective; pass --groups with its group file",
        model_path));
  }
  const GroupSpec groups = groups_path ? load_group_spec(*groups_path) : GroupSpec::single_group();
  const DatasetSchema schema{1, model.spec.output_dim, model.spec.input_dim};
  const auto test = load_labeled_dataset(test_path, schema, groups);
  const SeedMetrics row{model.method, model.seed,
                        group_metrics(model.predictor(), test, groups.group_count())};
  write_metrics_csv(fs::path(out_dir) / "metrics.csv", std::span(&row, 1), groups.group_count());
  fmt::print("{}: average {:.4f}, worst-group {:.4f}, overall {:.4f}\n", model.method,
             row.metrics.average_accuracy, row.metrics.worst_group_accuracy,
             row.metrics.overall_accuracy);
  return kExitOk;
}

int cmd_compare(const std::string& config_path, const Overrides& o, std::size_t jobs) {
  RunConfig cfg = load_with_overrides(config_path, o);
  if (o.seed) {
    // Same number of runs, consecutive seeds from the override.
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) cfg.seeds[i] = *o.seed + i;
  }
  const Datasets data = load_datasets(cfg);
  const auto results = run_comparison(method_registry(), data, cfg.methods, cfg.seeds, jobs);
  const auto summary = summarize(results);
  const fs::path out = cfg.output_dir;
  write_metrics_csv(out / "metrics.csv", results, data.group_count);
  write_summary_csv(out / "summary.csv", summary);
  for (std::size_t i = 0; i + 2 < summary.size(); i += 3) {
    fmt::print("{:<14} average {:.4f} +/- {:.4f}   worst-group {:.4f} +/- {:.4f}\n",
               summary[i].method, summary[i].value.mean, summary[i].value.std,
               summary[i + 1].value.mean, summary[i + 1].value.std);
  }
  return kExitOk;
}

// "0:2,2:5" -> [0,2) [2,5)
std::vector<FeatureBlock> parse_blocks(const std::string& text) {
  std::vector<FeatureBlock> blocks;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, comma - pos);
    const std::size_t colon = item.find(':');
    FeatureBlock b;
    const char* s = item.data();
    const auto r1 = std::from_chars(s, s + (colon == std::string::npos ? 0 : colon), b.begin);
    const auto r2 = colon == std::string::npos
                        ? std::from_chars_result{s, std::errc::invalid_argument}
                        : std::from_chars(s + colon + 1, s + item.size(), b.end);
    if (colon == std::string::npos || r1.ec != std::errc{} || r2.ec != std::errc{} ||
        r1.ptr != s + colon || r2.ptr != s + item.size()) {
      throw ConfigError(fmt::format("--blocks: expected begin:end, got '{}'", item));
    }
    blocks.push_back(b);
    pos = comma + 1;
  }
  return blocks;
}

int cmd_explain(const std::string& model_path, const std::string& data_path,
                const std::optional<std::string>& blocks_text, const std::string& baseline_kind,
                std::size_t limit, const std::string& out_dir) {
  const TrainedModel model = TrainedModel::load(model_path);
  if (model.members.size() != 1) throw ConfigError("explain needs a single-model method, not an ensemble");
  if (baseline_kind != "zero" && baseline_kind != "mean") {
    throw ConfigError(fmt::format("--baseline: expected 'zero' or 'mean', got '{}'", baseline_kind));
  }
  const std::size_t d = model.spec.input_dim;
  std::vector<FeatureBlock> blocks;
  if (blocks_text) {
    blocks = parse_blocks(*blocks_text);
  } else {
    for (std::size_t k = 0; k < d; ++k) blocks.push_back({k, k + 1});
  }
  const DatasetSchema schema{1, model.spec.output_dim, d};
  const auto examples = load_labeled_dataset(data_path, schema, GroupSpec::single_group());
  std::vector<std::vector<double>> rows;
  for (const auto& ex : examples) rows.push_back(ex.features);
  const std::vector<double> baseline =
      baseline_kind == "zero" || rows.empty() ? std::vector<double>(d, 0.0) : feature_mean(rows);

  auto out = open_output(fs::path(out_dir) / "explain.csv");
  out << "id,block,importance,rank\n";
  const std::size_t n = limit == 0 ? examples.size() : std::min(limit, examples.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto report =
        block_mask_explain(model.spec, model.members.front(), examples[i].features, blocks, baseline);
    std::vector<std::size_t> rank(blocks.size());
    for (std::size_t r = 0; r < report.ranking.size(); ++r) rank[report.ranking[r]] = r + 1;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      fmt::print(out, "{},{}:{},{},{}\n", examples[i].id, blocks[b].begin, blocks[b].end,
                 report.importance[b], rank[b]);
    }
  }
  fmt::print("explained {} examples over {} blocks\n", n, blocks.size());
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Soft-label weight learning with a group-robust outer objective"};
  app.require_subcommand(1);
  Overrides o;

  auto add_overrides = [&o](CLI::App* cmd, bool with_method) {
    cmd->add_option("--seed", o.seed, "Override the seed");
    cmd->add_option("--out", o.out, "Override the output directory");
    if (with_method) cmd->add_option("--method", o.method, "Override the method id");
  };

  std::string config_path;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark files");
  gen->add_option("config", config_path, "Run config (JSON)")->required();
  add_overrides(gen, false);

  auto* train = app.add_subcommand("train", "Train one method");
  train->add_option("config", config_path, "Run config (JSON)")->required();
  add_overrides(train, true);

  std::string model_path, data_path, out_dir = ".";
  std::optional<std::string> groups_path;
  auto* eval = app.add_subcommand("eval", "Evaluate a model file on a labeled dataset");
  eval->add_option("--model", model_path, "Model file")->required();
  eval->add_option("--test", data_path, "Labeled test set (JSONL)")->required();
  eval->add_option("--groups", groups_path, "Group file (JSON)");
  eval->add_option("--out", out_dir, "Output directory");

  std::size_t jobs = 1;
  auto* compare = app.add_subcommand("compare", "Run every registered method over the config's seeds");
  compare->add_option("config", config_path, "Run config (JSON)")->required();
  compare->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  add_overrides(compare, false);

  std::optional<std::string> blocks_text;
  std::string baseline_kind = "zero";
  std::size_t limit = 0;
  auto* explain = app.add_subcommand("explain", "Block-masking importances for a model");
  explain->add_option("--model", model_path, "Model file")->required();
  explain->add_option("--data", data_path, "Labeled dataset (JSONL)")->required();
  explain->add_option("--blocks", blocks_text, "Feature blocks as begin:end,... (default: one per feature)");
  explain->add_option("--baseline", baseline_kind, "zero or mean");
  explain->add_option("--limit", limit, "Explain only the first N examples (0 = all)");
  explain->add_option("--out", out_dir, "Output directory");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  if (!argv_rev.empty()) argv_rev.pop_back();  // program name
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(config_path, o);
    if (*train) return cmd_train(config_path, o);
    if (*eval) return cmd_eval(model_path, data_path, groups_path, out_dir);
    if (*compare) return cmd_compare(config_path, o, jobs);
    if (*explain) return cmd_explain(model_path, data_path, blocks_text, baseline_kind, limit, out_dir);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace sldro
