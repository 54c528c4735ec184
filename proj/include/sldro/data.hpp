// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sldro {

/// Shape of a dataset: M annotators, C classes, d features. Declared up front
/// so ragged files are rejected at load time.
struct DatasetSchema {
  std::size_t annotators = 0;
  std::size_t classes = 0;
  std::size_t feature_dim = 0;

  void validate() const;
};

/// Training unit: features plus M crowd annotations.
struct AnnotatedExample {
  std::string id;
  std::vector<double> features;
  std::vector<std::size_t> annotations;

  bool operator==(const AnnotatedExample&) const = default;
};

/// Validation/test unit: features, ground truth and the group it falls in.
struct LabeledExample {
  std::string id;
  std::vector<double> features;
  std::size_t label = 0;
  std::size_t group = 0;
  std::size_t topic = 0;

  bool operator==(const LabeledExample&) const = default;
};

struct GroupTriple {
  std::size_t topic = 0;
  std::size_t label = 0;
  std::size_t group = 0;
};

/// Maps (topic, label) pairs onto contiguous group indices 0..G-1.
class GroupSpec {
 public:
  GroupSpec() = default;

  /// Throws DataError unless the triples define a bijection onto 0..G-1.
  static GroupSpec from_triples(std::span<const GroupTriple> triples);

  /// Every (topic, label) pair gets group topic * classes + label.
  static GroupSpec topic_by_label(std::size_t topics, std::size_t classes);

  std::optional<std::size_t> lookup(std::size_t topic, std::size_t label) const;
  std::size_t group_count() const { return group_count_; }
  std::vector<GroupTriple> triples() const;

  /// A spec with a single group that accepts any pair.
  static GroupSpec single_group();
  bool is_catch_all() const { return catch_all_; }

 private:
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> table_;
  std::size_t group_count_ = 0;
  bool catch_all_ = false;
};

std::vector<double> one_hot(std::size_t class_index, std::size_t classes);

/// Hashed bag-of-words, L2-normalized. Empty text maps to the zero vector.
std::vector<double> featurize_text(std::string_view text, std::size_t dimension);

/// Distinct annotated classes, ascending.
std::vector<std::size_t> candidate_set(const AnnotatedExample& example);

std::vector<AnnotatedExample> load_annotated_dataset(const std::filesystem::path& path,
                                                     const DatasetSchema& schema);
std::vector<LabeledExample> load_labeled_dataset(const std::filesystem::path& path,
                                                 const DatasetSchema& schema,
                                                 const GroupSpec& groups);

void write_annotated_dataset(const std::filesystem::path& path,
                             std::span<const AnnotatedExample> examples);
void write_labeled_dataset(const std::filesystem::path& path,
                           std::span<const LabeledExample> examples);

GroupSpec load_group_spec(const std::filesystem::path& path);
void write_group_spec(const std::filesystem::path& path, const GroupSpec& spec);

/// Sidecar of ground-truth labels for training examples (id -> class).
using TruthTable = std::map<std::string, std::size_t>;
TruthTable load_truth(const std::filesystem::path& path);
void write_truth(const std::filesystem::path& path, const TruthTable& truth);

}  // namespace sldro
