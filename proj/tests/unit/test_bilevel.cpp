// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "sldro/bilevel.hpp"

using namespace sldro;
using namespace sldro::testing;
namespace fs = std::filesystem;

namespace {

OuterRisk groupdro(std::size_t groups) { return {OuterRisk::Kind::GroupDro, groups, 1.0}; }

// True when the group max at theta' has a clear winner, so the outer risk is
// differentiable there and central differences are meaningful.
bool clear_argmax(const TinyInstance& t, const OuterRisk& outer, double mu) {
  const auto theta_prime = pseudo_update(t.models, t.theta, t.w, t.train, mu);
  const auto r = outer.evaluate(t.models.classifier, theta_prime, t.val);
  for (std::size_t g = 0; g < r.per_group.size(); ++g) {
    if (g == *r.argmax_group || r.group_counts[g] == 0) continue;
    if (r.value - r.per_group[g] < 1e-4) return false;
  }
  return true;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("TrainConfig schedules and validation") {
  TrainConfig c;
  CHECK(c.mu() == 0.5);
  CHECK(c.alpha() == 2.0);
  c.schedule = StepSchedule::SqrtHorizon;
  c.k1 = 1.5;
  c.k2 = 5.0;
  c.steps = 400;
  CHECK(c.alpha() == 1.5 / 20.0);
  CHECK(c.mu() == 5.0 / 400.0);
  c.validate();
  c.k1 = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  TrainConfig bad;
  bad.batch_val = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.outer_risk = {OuterRisk::Kind::Cvar, 1, 0.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("pseudo_update: mu = 0 and stationary targets leave theta unchanged") {
  const auto t = tiny_instance(3);
  CHECK(pseudo_update(t.models, t.theta, t.w, t.train, 0.0) == t.theta);

  // uniform weights over two disagreeing annotators give ybar = f for a uniform predictor
  BilevelModels models{{ModelFamily::LinearSoftmax, 1, 2, 0}, {ModelFamily::LinearSoftmax, 1, 2, 0}, 2};
  const std::vector<AnnotatedExample> batch = {{"s", {0.7}, {0, 1}}};
  const auto theta = ParamVector::zeros(models.classifier);
  const auto w = ParamVector::zeros(models.estimator);
  CHECK(pseudo_update(models, theta, w, batch, 0.3) == theta);
}

TEST_CASE("pseudo_update matches hand arithmetic on a logistic example") {
  BilevelModels models{{ModelFamily::LinearSoftmax, 1, 2, 0}, {ModelFamily::LinearSoftmax, 1, 2, 0}, 2};
  const std::vector<AnnotatedExample> batch = {{"h", {2.0}, {0, 0}}};
  // f = (1/2, 1/2), ybar = (1, 0), dlogits = (-1/2, 1/2), dW = dlogits * x, db = dlogits
  const auto theta = ParamVector::zeros(models.classifier);
  const auto w = ParamVector::zeros(models.estimator);
  const auto next = pseudo_update(models, theta, w, batch, 0.1);
  const double expect[] = {0.1, -0.1, 0.05, -0.05};
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(next[i] - expect[i]) <= 1e-12);
}

TEST_CASE("pseudo_update does not modify its inputs") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = tiny_instance(seed);
    const auto theta = t.theta, w = t.w;
    const auto train = t.train;
    (void)pseudo_update(t.models, t.theta, t.w, t.train, 0.7);
    (void)metagrad_w(t.models, t.theta, t.w, t.train, t.val, 0.7, groupdro(t.groups));
    CHECK(t.theta == theta);
    CHECK(t.w == w);
    CHECK(t.train == train);
  }
}

TEST_CASE("shifting every estimator logit leaves soft labels and the outer risk unchanged") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto t = tiny_instance(seed);
    ParamVector shifted = t.w;
    const std::size_t d = t.models.estimator.input_dim, m = t.models.estimator.output_dim;
    for (std::size_t j = 0; j < m; ++j) shifted[d * m + j] += 3.25;
    const auto a = estimator_soft_labels(t.models, t.w, t.train);
    const auto b = estimator_soft_labels(t.models, shifted, t.train);
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t c = 0; c < a[i].size(); ++c) CHECK(std::abs(a[i][c] - b[i][c]) <= 1e-14);
    }
    const auto outer = groupdro(t.groups);
    CHECK(std::abs(outer_objective(t.models, t.theta, t.w, t.train, t.val, 0.5, outer) -
                   outer_objective(t.models, t.theta, shifted, t.train, t.val, 0.5, outer)) <= 1e-12);
  }
}

TEST_CASE("metagrad_w vanishes for mu = 0 or a zero outer gradient") {
  const auto t = tiny_instance(5);
  CHECK(squared_norm(metagrad_w(t.models, t.theta, t.w, t.train, t.val, 0.0, groupdro(t.groups))) == 0.0);

  // Uniform soft labels on a uniform predictor give theta' = theta = 0, and the
  // validation gradients of four symmetric points cancel exactly.
  BilevelModels models{{ModelFamily::LinearSoftmax, 1, 2, 0}, {ModelFamily::LinearSoftmax, 1, 2, 0}, 2};
  const std::vector<AnnotatedExample> train = {{"a", {1.0}, {0, 1}}};
  const std::vector<LabeledExample> val = {{"p", {1.0}, 0, 0, 0}, {"q", {-1.0}, 0, 0, 0},
                                           {"r", {1.0}, 1, 0, 0}, {"s", {-1.0}, 1, 0, 0}};
  const auto meta = metagrad_w_detailed(models, ParamVector::zeros(models.classifier),
                                        ParamVector::zeros(models.estimator), train, val, 0.3, groupdro(1));
  CHECK(squared_norm(meta.risk_grad_at_prime) == 0.0);
  CHECK(squared_norm(meta.grad) == 0.0);
}

TEST_CASE("metagrad_w matches the finite-difference oracle on a fixed tiny instance") {
  // d = 2, C = 2, M = 2, four train and four validation examples
  BilevelModels models{{ModelFamily::LinearSoftmax, 2, 2, 0}, {ModelFamily::LinearSoftmax, 2, 2, 0}, 2};
  const std::vector<AnnotatedExample> train = {{"a", {0.3, -1.0}, {0, 1}},
                                               {"b", {1.2, 0.4}, {1, 1}},
                                               {"c", {-0.7, 0.9}, {1, 0}},
                                               {"d", {0.1, 0.2}, {0, 0}}};
  const std::vector<LabeledExample> val = {{"p", {0.5, 0.5}, 1, 0, 0},
                                           {"q", {-1.0, 0.3}, 0, 0, 0},
                                           {"r", {0.8, -0.6}, 1, 1, 0},
                                           {"s", {-0.2, -0.9}, 0, 1, 0}};
  const auto theta = init_params(models.classifier, 101);
  auto w = init_params(models.estimator, 102);
  w.scale(2.0);
  for (const auto& outer : {groupdro(2), OuterRisk{OuterRisk::Kind::Erm, 1, 1.0},
                            OuterRisk{OuterRisk::Kind::Cvar, 1, 0.5}}) {
    const auto g = metagrad_w(models, theta, w, train, val, 0.8, outer);
    const auto fd = central_difference(
        [&](const ParamVector& probe) { return outer_objective(models, theta, probe, train, val, 0.8, outer); },
        w, 1e-5);
    double worst = 0.0;
    CHECK(close_relative(g, fd, 1e-4, 1e-8, &worst));
    CHECK(squared_norm(g) > 0.0);
    // the shipped finite-difference backend agrees with the test-side oracle
    const auto shipped = metagrad_w_finite_difference(models, theta, w, train, val, 0.8, outer, 1e-5);
    CHECK(close_relative(shipped, fd, 1e-12, 1e-14));
  }
}

TEST_CASE("metagrad_w property: matches finite differences on fuzzed tiny instances") {
  int checked = 0;
  for (std::uint64_t seed = 100; seed < 400; ++seed) {
    const auto t = tiny_instance(seed);
    const auto outer = groupdro(t.groups);
    if (!clear_argmax(t, outer, 0.9)) continue;
    REQUIRE(t.models.estimator.param_count() <= 12);
    const auto g = metagrad_w(t.models, t.theta, t.w, t.train, t.val, 0.9, outer);
    const auto fd = central_difference(
        [&](const ParamVector& probe) {
          return outer_objective(t.models, t.theta, probe, t.train, t.val, 0.9, outer);
        },
        t.w, 1e-5);
    double worst = 0.0;
    INFO("seed " << seed);
    CHECK(close_relative(g, fd, 1e-4, 1e-8, &worst));
    ++checked;
  }
  CHECK(checked >= 200);
}

TEST_CASE("update_w arithmetic") {
  ParamVector w{{1.0, 2.0}, {}};
  const ParamVector g{{0.5, -1.0}, {}};
  CHECK(update_w(w, g, 2.0).values == std::vector<double>{0.0, 4.0});
  CHECK(update_w(w, ParamVector::zeros_like(w), 3.0) == w);
  CHECK(update_w(w, g, 0.0) == w);
}

TEST_CASE("update_theta is pseudo_update with the new weights and descends the inner loss") {
  const auto inst = curated_instance();
  const auto w = init_params(inst.models.estimator, 4);
  CHECK(update_theta(inst.models, inst.theta0, w, inst.train, 0.2) ==
        pseudo_update(inst.models, inst.theta0, w, inst.train, 0.2));
  CHECK(update_theta(inst.models, inst.theta0, w, inst.train, 0.0) == inst.theta0);

  const auto labels = estimator_soft_labels(inst.models, w, inst.train);
  const auto next = update_theta(inst.models, inst.theta0, w, inst.train, 0.05);
  CHECK(inner_loss(inst.models.classifier, next, inst.train, labels) <=
        inner_loss(inst.models.classifier, inst.theta0, inst.train, labels));
}

TEST_CASE("lipschitz_estimate on a quadratic and on coincident points") {
  std::vector<ParamVector> pts, grads;
  for (double th : {0.0, 1.0, 2.0}) {
    pts.push_back(ParamVector{{th}, {}});
    grads.push_back(ParamVector{{th}, {}});  // gradient of th^2 / 2
  }
  CHECK(lipschitz_estimate(pts, grads) == 1.0);

  const std::vector<ParamVector> same = {ParamVector{{1.0}, {}}, ParamVector{{1.0}, {}}};
  const std::vector<ParamVector> g2 = {ParamVector{{0.0}, {}}, ParamVector{{5.0}, {}}};
  const double est = lipschitz_estimate(same, g2);
  CHECK(std::isfinite(est));
  CHECK(est == 0.0);
}

TEST_CASE("T = 0 returns the initial parameters and an empty report") {
  const auto inst = curated_instance();
  auto config = curated_config(0);
  BilevelTrainer trainer(inst.train, inst.val, inst.models, config, inst.theta0, inst.w0);
  trainer.run();
  CHECK(trainer.theta() == inst.theta0);
  CHECK(trainer.w() == inst.w0);
  CHECK(trainer.diagnostics().risk_trace.empty());
  CHECK(trainer.diagnostics().sigma_hat == 0.0);
  CHECK(trainer.diagnostics().monotone_fraction == 1.0);
}

TEST_CASE("training is deterministic and resumes bit-identically from a checkpoint") {
  const auto inst = curated_instance(60);
  auto config = curated_config(12);
  config.batch_train = 8;
  config.batch_val = 5;
  config.outer_risk = groupdro(1);

  BilevelTrainer a(inst.train, inst.val, inst.models, config, inst.theta0, inst.w0);
  a.run();
  BilevelTrainer b(inst.train, inst.val, inst.models, config, inst.theta0, inst.w0);
  b.run();
  CHECK(a.theta() == b.theta());
  CHECK(a.w() == b.w());
  CHECK(a.diagnostics().risk_trace == b.diagnostics().risk_trace);

  const fs::path dir = fs::temp_directory_path() / "sldro_test_bilevel_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  BilevelTrainer first(inst.train, inst.val, inst.models, config, inst.theta0, inst.w0);
  for (int i = 0; i < 5; ++i) first.step();
  first.checkpoint().save(dir / "ckpt.json");

  BilevelTrainer resumed(inst.train, inst.val, inst.models, config, init_params(inst.models.classifier, 99),
                         init_params(inst.models.estimator, 98));
  resumed.restore(Checkpoint::load(dir / "ckpt.json"));
  CHECK(resumed.current_step() == 5);
  resumed.run();
  CHECK(resumed.theta() == a.theta());
  CHECK(resumed.w() == a.w());
  CHECK(resumed.diagnostics().risk_trace.size() == 7);

  resumed.write_trace_csv(dir / "trace.csv");
  const auto text = read_file(dir / "trace.csv");
  CHECK(text.rfind("step,risk,grad_w_sq_norm,inner_loss,argmax_group\n6,", 0) == 0);

  Checkpoint broken = first.checkpoint();
  broken.rng_state = "garbage";
  CHECK_THROWS_AS(resumed.restore(broken), DataError);
}

TEST_CASE("different seeds sample different batches") {
  const auto inst = curated_instance(60);
  auto config = curated_config(5);
  config.batch_train = 4;
  config.batch_val = 4;
  BilevelTrainer a(inst.train, inst.val, inst.models, config, inst.theta0, inst.w0);
  a.run();
  config.seed = 4;
  BilevelTrainer b(inst.train, inst.val, inst.models, config, inst.theta0, inst.w0);
  b.run();
  CHECK_FALSE(a.theta() == b.theta());
}

TEST_CASE("the analytic and finite-difference backends train to nearly the same parameters") {
  const auto inst = curated_instance();
  auto config = curated_config(20);
  BilevelTrainer a(inst.train, inst.val, inst.models, config, inst.theta0, inst.w0);
  a.run();
  config.backend = MetagradBackend::FiniteDifference;
  BilevelTrainer b(inst.train, inst.val, inst.models, config, inst.theta0, inst.w0);
  b.run();
  CHECK(close_relative(a.w(), b.w(), 1e-6, 1e-9));
}

TEST_CASE("curated full-batch instance descends every step") {
  const auto inst = curated_instance();
  const auto report = run_curated(inst, curated_config(200));
  CHECK(report.monotone_fraction == 1.0);
  for (std::size_t t = 0; t < report.risk_trace.size(); ++t) {
    CHECK(report.risk_after_trace[t] <= report.risk_trace[t] + 1e-9);
    if (t + 1 < report.risk_trace.size()) CHECK(report.risk_trace[t + 1] == report.risk_after_trace[t]);
  }
  CHECK(report.k_hat > 0.0);
  CHECK(report.L_hat > 0.0);
  CHECK(0.05 <= 2.0 * report.k_hat / report.L_hat);
  CHECK(report.sigma_hat > 0.0);
  CHECK(report.sigma_prime_hat > 0.0);
}

TEST_CASE("training rejects empty data and mismatched parameters") {
  const auto inst = curated_instance();
  const std::vector<LabeledExample> no_val;
  CHECK_THROWS_AS(BilevelTrainer(inst.train, no_val, inst.models, curated_config(3), inst.theta0, inst.w0),
                  DataError);
  CHECK_THROWS(BilevelTrainer(inst.train, inst.val, inst.models, curated_config(3),
                                  ParamVector{{1.0}, {}}, inst.w0));
}

TEST_CASE("estimate_assumption_constants folds steps into running extrema") {
  const ParamVector origin{{0.0, 0.0}, {}}, unit{{1.0, 0.0}, {}}, two{{2.0, 0.0}, {}}, minus{{-1.0, 0.0}, {}};
  DiagnosticsReport report;
  estimate_assumption_constants({origin, unit, two, origin, unit, 4.0, 0.5}, report);
  CHECK(report.k_hat == 0.5);
  CHECK(report.L_hat == 1.0);
  CHECK(report.sigma_hat == 2.0);
  CHECK(report.sigma_prime_hat == 4.0);
  CHECK(report.k_samples == 1);
  CHECK(report.L_samples == 1);

  // k drops, coincident points leave L alone, vanishing inner gradients are skipped
  estimate_assumption_constants({origin, origin, unit, origin, minus, 0.0, 0.5}, report);
  CHECK(report.k_hat == -1.0);
  CHECK(report.L_hat == 1.0);
  CHECK(report.L_samples == 1);
  estimate_assumption_constants({origin, unit, origin, origin, minus, 0.0, 0.0}, report);
  CHECK(report.k_samples == 2);
  CHECK(report.sigma_prime_hat == 4.0);
}
