// SPDX-License-Identifier: Apache-2.0
#include "sldro/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "sldro/common.hpp"

namespace sldro {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers can
// be reported as unknown.
class Section {
 public:
  Section(const json& value, std::string path) : value_(value), path_(std::move(path)) {
    if (!value_.is_object()) throw ConfigError(fmt::format("{}: expected an object", where()));
  }

  const json* find(const char* key) {
    allowed_.emplace_back(key);
    auto it = value_.find(key);
    return it == value_.end() ? nullptr : &*it;
  }

  void count(const char* key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw type_error(key, "a non-negative integer");
      out = v->get<std::size_t>();
    }
  }

  void seed(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw type_error(key, "a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void real(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw type_error(key, "a number");
      out = v->get<double>();
    }
  }

  void flag(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw type_error(key, "true or false");
      out = v->get<bool>();
    }
  }

  void text(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw type_error(key, "a string");
      out = v->get<std::string>();
    }
  }

  std::optional<Section> child(const char* key) {
    if (const json* v = find(key)) {
      return Section(*v, path_.empty() ? std::string(key) : fmt::format("{}.{}", path_, key));
    }
    return std::nullopt;
  }

  /// Throws on the first key nobody asked for.
  void finish() const {
    for (const auto& [key, _] : value_.items()) {
      if (std::find(allowed_.begin(), allowed_.end(), key) == allowed_.end()) {
        throw ConfigError(fmt::format("{}: unknown key '{}'", where(), key));
      }
    }
  }

 private:
  std::string where() const { return path_.empty() ? std::string("config") : path_; }

  ConfigError type_error(const char* key, const char* expected) const {
    return ConfigError(fmt::format("{}.{}: expected {}", where(), key, expected));
  }

  const json& value_;
  std::string path_;
  std::vector<std::string> allowed_;
};

ModelSpec read_model(Section& s) {
  ModelSpec spec;
  std::string family = std::string(to_string(spec.family));
  s.text("family", family);
  try {
    spec.family = parse_model_family(family);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  s.count("hidden_dim", spec.hidden_dim);
  return spec;
}

ConfusionMatrix read_matrix(const json& value, const std::string& path) {
  if (!value.is_array()) throw ConfigError(fmt::format("{}: expected an array of rows", path));
  ConfusionMatrix m;
  for (const json& row : value) {
    if (!row.is_array()) throw ConfigError(fmt::format("{}: expected an array of rows", path));
    std::vector<double> r;
    for (const json& p : row) {
      if (!p.is_number()) throw ConfigError(fmt::format("{}: entries must be numbers", path));
      r.push_back(p.get<double>());
    }
    m.push_back(std::move(r));
  }
  return m;
}

std::vector<AnnotatorModel> read_annotators(const json& value, const std::string& path) {
  if (!value.is_array()) throw ConfigError(fmt::format("{}: expected an array", path));
  std::vector<AnnotatorModel> out;
  for (std::size_t j = 0; j < value.size(); ++j) {
    const std::string item_path = fmt::format("{}[{}]", path, j);
    Section s(value[j], item_path);
    std::string name = fmt::format("annotator-{}", j);
    s.text("name", name);
    const json* confusion = s.find("confusion");
    const json* negative = s.find("negative_cue");
    const json* positive = s.find("positive_cue");
    s.finish();
    if (confusion && !negative && !positive) {
      out.push_back(AnnotatorModel::constant(name, read_matrix(*confusion, item_path + ".confusion")));
    } else if (!confusion && negative && positive) {
      out.push_back(AnnotatorModel::instance_dependent(
          name, read_matrix(*negative, item_path + ".negative_cue"),
          read_matrix(*positive, item_path + ".positive_cue")));
    } else {
      throw ConfigError(fmt::format(
          "{}: give either 'confusion' or both 'negative_cue' and 'positive_cue'", item_path));
    }
  }
  return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

void RunConfig::validate() const {
  require_registered_method(method);
  if (seeds.empty()) throw ConfigError("config.seeds: at least one seed is required");
  if (data.has_value() == synthetic.has_value()) {
    throw ConfigError("config: give exactly one of 'data' and 'synthetic'");
  }
  if (synthetic) {
    synthetic->generator.validate();
    if (synthetic->annotators.empty()) throw ConfigError("synthetic.annotators: at least one annotator");
    for (const auto& a : synthetic->annotators) a.validate(synthetic->generator.class_count);
  }
  if (data) {
    data->schema.validate();
    for (const auto& [key, path] : {std::pair{"train", &data->train}, std::pair{"val", &data->val},
                                    std::pair{"test", &data->test}, std::pair{"groups", &data->groups}}) {
      if (path->empty()) throw ConfigError(fmt::format("data.{}: path is required", key));
      if (!fs::exists(*path)) {
        throw ConfigError(fmt::format("data.{}: '{}' does not exist", key, path->string()));
      }
    }
  }
  for (const auto* spec : {&methods.classifier, &methods.estimator}) {
    if (spec->family == ModelFamily::Mlp && spec->hidden_dim == 0) {
      throw ConfigError("model: mlp-1-hidden requires hidden_dim > 0");
    }
  }
  methods.bilevel.validate();
  methods.sgd.validate();
  if (!(methods.cvar_alpha > 0.0 && methods.cvar_alpha <= 1.0)) {
    throw ConfigError("train.cvar_alpha must lie in (0, 1]");
  }
  if (!(methods.pm_epsilon >= 0.0)) throw ConfigError("baseline.pm_epsilon must be >= 0");
  if (!(methods.ds_tol >= 0.0)) throw ConfigError("baseline.ds_tol must be >= 0");
}

RunConfig parse_run_config(std::string_view text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  RunConfig cfg;
  Section root(doc, "");
  root.text("method", cfg.method);
  if (const json* seeds = root.find("seeds")) {
    if (!seeds->is_array()) throw ConfigError("config.seeds: expected an array");
    cfg.seeds.clear();
    for (const json& s : *seeds) {
      if (!s.is_number_unsigned()) throw ConfigError("config.seeds: entries must be non-negative integers");
      cfg.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  std::string out = cfg.output_dir.string();
  root.text("output_dir", out);
  cfg.output_dir = out;

  if (auto s = root.child("data")) {
    DataPaths paths;
    std::string train, val, test, groups;
    s->text("train", train);
    s->text("val", val);
    s->text("test", test);
    s->text("groups", groups);
    paths.train = train.empty() ? fs::path{} : resolve(base_dir, train);
    paths.val = val.empty() ? fs::path{} : resolve(base_dir, val);
    paths.test = test.empty() ? fs::path{} : resolve(base_dir, test);
    paths.groups = groups.empty() ? fs::path{} : resolve(base_dir, groups);
    s->count("annotators", paths.schema.annotators);
    s->count("classes", paths.schema.classes);
    s->count("feature_dim", paths.schema.feature_dim);
    s->finish();
    cfg.data = std::move(paths);
  }
  if (auto s = root.child("synthetic")) {
    SyntheticSection syn;
    SpuriousConfig& g = syn.generator;
    s->count("n_train", g.n_train);
    s->count("n_val", g.n_val);
    s->count("n_test", g.n_test);
    s->count("d_core", g.d_core);
    s->count("d_spurious", g.d_spurious);
    s->real("rho_train", g.rho_train);
    s->real("rho_eval", g.rho_eval);
    s->real("label_noise", g.label_noise);
    s->count("class_count", g.class_count);
    s->seed("seed", g.seed);
    s->flag("ensure_truth_present", syn.ensure_truth_present);
    if (const json* a = s->find("annotators")) {
      syn.annotators = read_annotators(*a, "synthetic.annotators");
    } else if (g.class_count >= 2) {
      syn.annotators = default_annotators(g.class_count);
    }
    s->finish();
    cfg.synthetic = std::move(syn);
  }
  if (auto s = root.child("classifier")) {
    cfg.methods.classifier = read_model(*s);
    s->finish();
  }
  if (auto s = root.child("estimator")) {
    std::string init = "zero";
    s->text("init", init);
    if (init == "zero") {
      cfg.methods.estimator_init = EstimatorInit::Zero;
    } else if (init == "glorot") {
      cfg.methods.estimator_init = EstimatorInit::Glorot;
    } else {
      throw ConfigError(fmt::format("estimator.init: expected 'zero' or 'glorot', got '{}'", init));
    }
    ModelSpec spec = read_model(*s);
    s->finish();
    cfg.methods.estimator = spec;
  }
  if (auto s = root.child("train")) {
    TrainConfig& t = cfg.methods.bilevel;
    s->count("steps", t.steps);
    s->real("inner_step", t.inner_step);
    s->real("outer_step", t.outer_step);
    std::string schedule = "constant";
    s->text("schedule", schedule);
    if (schedule == "constant") {
      t.schedule = StepSchedule::Constant;
    } else if (schedule == "sqrt-horizon") {
      t.schedule = StepSchedule::SqrtHorizon;
    } else {
      throw ConfigError(
          fmt::format("train.schedule: expected 'constant' or 'sqrt-horizon', got '{}'", schedule));
    }
    s->real("k1", t.k1);
    s->real("k2", t.k2);
    s->count("batch_train", t.batch_train);
    s->count("batch_val", t.batch_val);
    s->real("cvar_alpha", cfg.methods.cvar_alpha);
    s->flag("diagnostics", t.diagnostics);
    std::string backend = "analytic";
    s->text("metagrad", backend);
    if (backend == "analytic") {
      t.backend = MetagradBackend::Analytic;
    } else if (backend == "finite-difference") {
      t.backend = MetagradBackend::FiniteDifference;
    } else {
      throw ConfigError(fmt::format(
          "train.metagrad: expected 'analytic' or 'finite-difference', got '{}'", backend));
    }
    s->real("fd_epsilon", t.fd_epsilon);
    s->finish();
  }
  if (auto s = root.child("baseline")) {
    SgdConfig& b = cfg.methods.sgd;
    s->count("steps", b.steps);
    s->real("step_size", b.step_size);
    s->count("batch_size", b.batch_size);
    s->count("pm_iterations", cfg.methods.pm_iterations);
    s->real("pm_epsilon", cfg.methods.pm_epsilon);
    s->count("ds_max_iters", cfg.methods.ds_max_iters);
    s->real("ds_tol", cfg.methods.ds_tol);
    s->finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path.parent_path());
}

Datasets load_datasets(const RunConfig& config) {
  if (config.synthetic) {
    const auto& syn = *config.synthetic;
    return synthetic_datasets(generate_spurious(syn.generator), syn.annotators,
                              syn.generator.class_count, syn.ensure_truth_present,
                              syn.generator.seed);
  }
  const DataPaths& paths = config.data.value();
  const GroupSpec groups = load_group_spec(paths.groups);
  Datasets data;
  data.train = load_annotated_dataset(paths.train, paths.schema);
  data.val = load_labeled_dataset(paths.val, paths.schema, groups);
  data.test = load_labeled_dataset(paths.test, paths.schema, groups);
  data.classes = paths.schema.classes;
  data.annotators = paths.schema.annotators;
  data.feature_dim = paths.schema.feature_dim;
  data.group_count = groups.group_count();
  return data;
}

}  // namespace sldro
