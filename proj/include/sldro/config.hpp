// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sldro/experiment.hpp"
#include "sldro/synth.hpp"

namespace sldro {

/// Dataset files on disk; the schema is declared here so ragged files fail at load.
struct DataPaths {
  std::filesystem::path train;
  std::filesystem::path val;
  std::filesystem::path test;
  std::filesystem::path groups;
  DatasetSchema schema;
};

struct SyntheticSection {
  SpuriousConfig generator;
  std::vector<AnnotatorModel> annotators;  ///< default_annotators when the key is absent
  bool ensure_truth_present = true;
};

/// One run, as read from a JSON config document. Exactly one of `data` and
/// `synthetic` is set.
struct RunConfig {
  std::string method = "bilevel";
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::filesystem::path output_dir = "out";
  std::optional<DataPaths> data;
  std::optional<SyntheticSection> synthetic;
  MethodConfig methods;

  /// Checks ranges, the method id and that every referenced path exists.
  void validate() const;
};

/// Parses and validates. Unknown keys, wrong types and bad values throw
/// ConfigError. Relative data paths resolve against the config file's directory.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Reads the data files or generates the synthetic benchmark.
Datasets load_datasets(const RunConfig& config);

}  // namespace sldro
