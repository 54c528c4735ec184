// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

#include "sldro/eval.hpp"
#include "sldro/synth.hpp"

using namespace sldro;
using Catch::Matchers::ContainsSubstring;

namespace {

// Predicts the label stored in the first feature.
std::size_t echo(std::span<const double> x) { return static_cast<std::size_t>(x[0]); }

LabeledExample labeled(std::size_t predicted, std::size_t label, std::size_t group) {
  return {"e", {static_cast<double>(predicted)}, label, group, 0};
}

// Group g gets `hits` correct predictions out of `size`.
void add_group(std::vector<LabeledExample>& out, std::size_t group, std::size_t hits, std::size_t size) {
  for (std::size_t i = 0; i < size; ++i) out.push_back(labeled(i < hits ? 1 : 0, 1, group));
}

}  // namespace

TEST_CASE("group_metrics worked examples") {
  std::vector<LabeledExample> test;
  add_group(test, 0, 9, 10);
  add_group(test, 1, 6, 10);
  add_group(test, 2, 8, 10);
  const auto m = group_metrics(echo, test, 3);
  CHECK(m.average_accuracy == Catch::Approx(0.7667).margin(5e-5));
  CHECK(std::abs(m.worst_group_accuracy - 0.6) <= 1e-15);
  CHECK(std::abs(m.overall_accuracy - 23.0 / 30.0) <= 1e-15);
  CHECK(m.group_sizes == std::vector<std::size_t>{10, 10, 10});

  std::vector<LabeledExample> perfect;
  add_group(perfect, 0, 5, 5);
  add_group(perfect, 1, 3, 3);
  const auto p = group_metrics(echo, perfect, 2);
  CHECK(p.average_accuracy == 1.0);
  CHECK(p.worst_group_accuracy == 1.0);

  std::vector<LabeledExample> single;
  add_group(single, 0, 3, 7);
  const auto s = group_metrics(echo, single, 1);
  CHECK(s.average_accuracy == s.overall_accuracy);
  CHECK(s.worst_group_accuracy == s.overall_accuracy);
}

TEST_CASE("group_metrics excludes empty groups and rejects bad input") {
  std::vector<LabeledExample> test;
  add_group(test, 0, 1, 2);
  add_group(test, 2, 2, 2);
  const auto m = group_metrics(echo, test, 4);
  CHECK(std::isnan(m.per_group_accuracy[1]));
  CHECK(std::isnan(m.per_group_accuracy[3]));
  CHECK(m.average_accuracy == 0.75);
  CHECK(m.worst_group_accuracy == 0.5);

  CHECK_THROWS(group_metrics(echo, {}, 2));
  CHECK_THROWS(group_metrics(echo, test, 2));
}

TEST_CASE("group_metrics property: ordering of aggregates and permutation invariance") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t groups = 1 + rng() % 5;
    std::vector<LabeledExample> test;
    for (std::size_t i = 0, n = 1 + rng() % 40; i < n; ++i) test.push_back(labeled(rng() % 2, rng() % 2, rng() % groups));
    const auto m = group_metrics(echo, test, groups);
    double mx = 0.0;
    for (double a : m.per_group_accuracy) {
      if (!std::isnan(a)) mx = std::max(mx, a);
    }
    CHECK(m.worst_group_accuracy <= m.average_accuracy + 1e-15);
    CHECK(m.average_accuracy <= mx + 1e-15);

    auto shuffled = test;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto ms = group_metrics(echo, shuffled, groups);
    CHECK(ms.group_sizes == m.group_sizes);
    CHECK(ms.worst_group_accuracy == m.worst_group_accuracy);
    CHECK(ms.average_accuracy == m.average_accuracy);
    CHECK(ms.overall_accuracy == m.overall_accuracy);
  }
}

TEST_CASE("summarize_group_accuracies matches the group arithmetic") {
  const auto m = summarize_group_accuracies({0.9, 0.6, 0.8}, {10, 10, 10});
  CHECK(std::abs(m.average_accuracy - 2.3 / 3.0) <= 1e-15);
  CHECK(m.worst_group_accuracy == 0.6);
}

TEST_CASE("mean_std uses the sample standard deviation") {
  const double v[] = {0.7, 0.8, 0.9};
  const auto ms = mean_std(v);
  CHECK(std::abs(ms.mean - 0.8) <= 1e-15);
  CHECK(std::abs(ms.std - 0.1) <= 1e-15);
  const double one[] = {0.4};
  CHECK(mean_std(one).std == 0.0);
  const double same[] = {0.3, 0.3, 0.3};
  CHECK(mean_std(same).std == 0.0);
}

TEST_CASE("block_mask_explain matches the closed form for linear models") {
  std::mt19937_64 rng(32);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng() % 5, classes = 2 + rng() % 3;
    const ModelSpec spec{ModelFamily::LinearSoftmax, d, classes, 0};
    const auto params = init_params(spec, rng());
    std::vector<double> x(d), base(d);
    for (auto& v : x) v = normal(rng);
    for (auto& v : base) v = normal(rng);
    // random contiguous partition
    std::vector<FeatureBlock> blocks;
    for (std::size_t b = 0; b < d;) {
      const std::size_t len = 1 + rng() % (d - b);
      blocks.push_back({b, b + len});
      b += len;
    }
    const auto report = block_mask_explain(spec, params, x, blocks, base);
    const std::size_t c = report.explained_class;
    CHECK(c == argmax(forward(spec, params, x).logits));
    // closed form: logits are W x + b, so masking a block shifts logit c' by W[c'] . (base - x) on it
    auto log_prob = [&](const std::vector<double>& logits) {
      double mx = logits[0];
      for (double z : logits) mx = std::max(mx, z);
      double s = 0.0;
      for (double z : logits) s += std::exp(z - mx);
      return logits[c] - mx - std::log(s);
    };
    std::vector<double> logits(classes);
    for (std::size_t k = 0; k < classes; ++k) {
      logits[k] = params[classes * d + k];
      for (std::size_t f = 0; f < d; ++f) logits[k] += params[k * d + f] * x[f];
    }
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      auto masked = logits;
      for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t f = blocks[b].begin; f < blocks[b].end; ++f) masked[k] += params[k * d + f] * (base[f] - x[f]);
      }
      CHECK(std::abs(report.importance[b] - (log_prob(logits) - log_prob(masked))) <= 1e-12);
    }
    auto sorted = report.ranking;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(blocks.size());
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(sorted == iota);
    for (std::size_t r = 1; r < report.ranking.size(); ++r) {
      CHECK(report.importance[report.ranking[r - 1]] >= report.importance[report.ranking[r]]);
    }
  }
}

TEST_CASE("block_mask_explain ignores a shift shared by every class") {
  const ModelSpec spec{ModelFamily::LinearSoftmax, 3, 2, 0};
  const auto params = init_params(spec, 8);
  auto shifted = params;
  // add the same row to both classes' weights and the same bias
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t f = 0; f < 3; ++f) shifted[c * 3 + f] += 0.7 * static_cast<double>(f + 1);
    shifted[6 + c] += 2.0;
  }
  const double x[] = {0.4, -1.1, 2.0};
  const double base[] = {0.0, 0.0, 0.0};
  const FeatureBlock blocks[] = {{0, 1}, {1, 3}};
  const auto a = block_mask_explain(spec, params, x, blocks, base);
  const auto b = block_mask_explain(spec, shifted, x, blocks, base);
  CHECK(a.explained_class == b.explained_class);
  CHECK(a.ranking == b.ranking);
  for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(a.importance[k] - b.importance[k]) <= 1e-12);
}

TEST_CASE("block_mask_explain: unchanged blocks score zero, bad partitions are rejected") {
  const ModelSpec spec{ModelFamily::Mlp, 3, 2, 4};
  const auto params = init_params(spec, 5);
  const double x[] = {0.3, -0.2, 1.0};
  const double base[] = {0.3, 9.0, 9.0};
  const FeatureBlock blocks[] = {{0, 1}, {1, 3}};
  const auto r = block_mask_explain(spec, params, x, blocks, base);
  CHECK(r.importance[0] == 0.0);

  const FeatureBlock overlap[] = {{0, 2}, {1, 3}};
  CHECK_THROWS(block_mask_explain(spec, params, x, overlap, base));
  const FeatureBlock gap[] = {{0, 1}, {2, 3}};
  CHECK_THROWS(block_mask_explain(spec, params, x, gap, base));
  const FeatureBlock empty[] = {{1, 1}, {0, 3}};
  CHECK_THROWS(block_mask_explain(spec, params, x, empty, base));
}

TEST_CASE("feature_mean averages columns") {
  const std::vector<std::vector<double>> rows = {{1.0, 2.0}, {3.0, -2.0}};
  CHECK(feature_mean(rows) == std::vector<double>{2.0, 0.0});
}

TEST_CASE("annotation agreement report") {
  SpuriousConfig cfg;
  cfg.n_train = 2000;
  const auto bench = generate_spurious(cfg);
  ConfusionMatrix wrong = {{0.0, 1.0}, {1.0, 0.0}};
  const std::vector<AnnotatorModel> annotators = {
      AnnotatorModel::constant("id", symmetric_confusion(2, 1.0)),
      AnnotatorModel::constant("bad", wrong),
      AnnotatorModel::constant("good", symmetric_confusion(2, 0.8))};
  const auto data = annotate(bench.train, annotators, bench.spurious_offset, false, 3);
  const auto truth = truth_table(bench.train);
  const auto report = annotation_agreement_report(data, truth);
  CHECK(report.annotator_accuracy[0] == 1.0);
  CHECK(report.annotator_accuracy[1] == 0.0);
  CHECK(std::abs(report.annotator_accuracy[2] - 0.8) <= 0.03);
  CHECK(report.truth_in_candidates == 1.0);

  TruthTable partial = truth;
  partial.erase(data[5].id);
  CHECK_THROWS_WITH(annotation_agreement_report(data, partial), ContainsSubstring(data[5].id));
}
