// SPDX-License-Identifier: Apache-2.0
#include "sldro/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

#include "sldro/common.hpp"

namespace sldro {

using nlohmann::json;

void DatasetSchema::validate() const {
  if (classes < 2) throw ConfigError(fmt::format("schema: classes must be >= 2, got {}", classes));
  if (feature_dim == 0) throw ConfigError("schema: feature_dim must be positive");
  if (annotators == 0) throw ConfigError("schema: annotators must be positive");
}

GroupSpec GroupSpec::from_triples(std::span<const GroupTriple> triples) {
  GroupSpec spec;
  std::set<std::size_t> seen_groups;
  for (const auto& t : triples) {
    auto key = std::make_pair(t.topic, t.label);
    if (spec.table_.contains(key)) {
      throw DataError(fmt::format("group spec: pair (topic={}, label={}) mapped twice", t.topic,
                                  t.label));
    }
    if (seen_groups.contains(t.group)) {
      throw DataError(fmt::format("group spec: group {} assigned to more than one pair", t.group));
    }
    spec.table_.emplace(key, t.group);
    seen_groups.insert(t.group);
  }
  std::size_t expected = 0;
  for (std::size_t g : seen_groups) {
    if (g != expected) {
      throw DataError(fmt::format("group spec: group indices must be contiguous from 0, missing {}",
                                  expected));
    }
    ++expected;
  }
  spec.group_count_ = seen_groups.size();
  return spec;
}

GroupSpec GroupSpec::topic_by_label(std::size_t topics, std::size_t classes) {
  std::vector<GroupTriple> triples;
  for (std::size_t t = 0; t < topics; ++t) {
    for (std::size_t c = 0; c < classes; ++c) triples.push_back({t, c, t * classes + c});
  }
  return from_triples(triples);
}

GroupSpec GroupSpec::single_group() {
  GroupSpec spec;
  spec.group_count_ = 1;
  spec.catch_all_ = true;
  return spec;
}

std::optional<std::size_t> GroupSpec::lookup(std::size_t topic, std::size_t label) const {
  if (catch_all_) return 0;
  auto it = table_.find({topic, label});
  if (it == table_.end()) return std::nullopt;
  return it->second;
}

std::vector<GroupTriple> GroupSpec::triples() const {
  std::vector<GroupTriple> out;
  for (const auto& [key, g] : table_) out.push_back({key.first, key.second, g});
  return out;
}

std::vector<double> one_hot(std::size_t class_index, std::size_t classes) {
  std::vector<double> v(classes, 0.0);
  v.at(class_index) = 1.0;
  return v;
}

namespace {

// FNV-1a, 64 bit.
std::uint64_t hash_token(std::string_view token) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : token) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::vector<double> featurize_text(std::string_view text, std::size_t dimension) {
  if (dimension == 0) throw ConfigError("featurize_text: dimension must be positive");
  std::vector<double> out(dimension, 0.0);
  std::string token;
  auto flush = [&] {
    if (!token.empty()) {
      out[hash_token(token) % dimension] += 1.0;
      token.clear();
    }
  };
  for (char raw : text) {
    auto ch = static_cast<unsigned char>(raw);
    if (std::isalnum(ch)) {
      token.push_back(static_cast<char>(std::tolower(ch)));
    } else {
      flush();
    }
  }
  flush();
  double norm = 0.0;
  for (double v : out) norm += v * v;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& v : out) v /= norm;
  }
  return out;
}

std::vector<std::size_t> candidate_set(const AnnotatedExample& example) {
  std::vector<std::size_t> out(example.annotations.begin(), example.annotations.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

struct RecordContext {
  std::size_t line = 0;
  std::string id;

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(fmt::format("line {}, record '{}': {}", line, id, what));
  }
};

std::size_t read_index(const json& value, const RecordContext& ctx, std::string_view field,
                       std::size_t bound) {
  if (!value.is_number_integer()) ctx.fail(fmt::format("field '{}' must be an integer", field));
  auto raw = value.get<std::int64_t>();
  if (raw < 0 || static_cast<std::uint64_t>(raw) >= bound) {
    ctx.fail(fmt::format("field '{}' value {} out of range [0, {})", field, raw, bound));
  }
  return static_cast<std::size_t>(raw);
}

std::vector<double> read_features(const json& record, const RecordContext& ctx, std::size_t dim) {
  const bool has_features = record.contains("features");
  const bool has_text = record.contains("text");
  if (has_features == has_text) ctx.fail("exactly one of 'features' or 'text' is required");
  if (has_text) {
    if (!record["text"].is_string()) ctx.fail("field 'text' must be a string");
    return featurize_text(record["text"].get<std::string>(), dim);
  }
  const json& arr = record["features"];
  if (!arr.is_array()) ctx.fail("field 'features' must be an array");
  if (arr.size() != dim) {
    ctx.fail(fmt::format("feature dimension {} does not match schema dimension {}", arr.size(), dim));
  }
  std::vector<double> out;
  out.reserve(dim);
  for (const auto& v : arr) {
    if (!v.is_number()) ctx.fail("features must be numbers");
    double x = v.get<double>();
    if (!std::isfinite(x)) ctx.fail("non-finite feature value");
    out.push_back(x);
  }
  return out;
}

// Calls fn(record, ctx) for each non-blank line; ids must be unique.
template <typename Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  RecordContext ctx;
  std::unordered_set<std::string> ids;
  while (std::getline(in, line)) {
    ++ctx.line;
    ctx.id.clear();
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      ctx.fail(fmt::format("invalid JSON: {}", e.what()));
    }
    if (!record.is_object()) ctx.fail("record must be a JSON object");
    if (!record.contains("id") || !record["id"].is_string()) ctx.fail("missing string field 'id'");
    ctx.id = record["id"].get<std::string>();
    if (!ids.insert(ctx.id).second) ctx.fail("duplicate id");
    fn(record, ctx);
  }
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

}  // namespace

std::vector<AnnotatedExample> load_annotated_dataset(const std::filesystem::path& path,
                                                     const DatasetSchema& schema) {
  schema.validate();
  std::vector<AnnotatedExample> out;
  for_each_record(path, [&](const json& record, const RecordContext& ctx) {
    AnnotatedExample ex;
    ex.id = ctx.id;
    ex.features = read_features(record, ctx, schema.feature_dim);
    if (!record.contains("annotations")) ctx.fail("missing field 'annotations'");
    const json& ann = record["annotations"];
    if (!ann.is_array()) ctx.fail("field 'annotations' must be an array");
    if (ann.size() != schema.annotators) {
      ctx.fail(fmt::format("expected {} annotations, found {}", schema.annotators, ann.size()));
    }
    for (const auto& a : ann) ex.annotations.push_back(read_index(a, ctx, "annotations", schema.classes));
    out.push_back(std::move(ex));
  });
  return out;
}

std::vector<LabeledExample> load_labeled_dataset(const std::filesystem::path& path,
                                                 const DatasetSchema& schema,
                                                 const GroupSpec& groups) {
  // annotator count is irrelevant for labeled files
  DatasetSchema{std::max<std::size_t>(schema.annotators, 1), schema.classes, schema.feature_dim}
      .validate();
  std::vector<LabeledExample> out;
  for_each_record(path, [&](const json& record, const RecordContext& ctx) {
    LabeledExample ex;
    ex.id = ctx.id;
    ex.features = read_features(record, ctx, schema.feature_dim);
    if (!record.contains("label")) ctx.fail("missing field 'label'");
    ex.label = read_index(record["label"], ctx, "label", schema.classes);
    if (!record.contains("topic")) ctx.fail("missing field 'topic'");
    ex.topic = read_index(record["topic"], ctx, "topic", static_cast<std::size_t>(INT64_MAX));
    auto group = groups.lookup(ex.topic, ex.label);
    if (!group) {
      ctx.fail(fmt::format("unmapped (topic, label) pair ({}, {})", ex.topic, ex.label));
    }
    ex.group = *group;
    out.push_back(std::move(ex));
  });
  return out;
}

void write_annotated_dataset(const std::filesystem::path& path,
                             std::span<const AnnotatedExample> examples) {
  auto out = open_for_write(path);
  for (const auto& ex : examples) {
    json record = {{"id", ex.id}, {"features", ex.features}, {"annotations", ex.annotations}};
    out << record.dump() << '\n';
  }
}

void write_labeled_dataset(const std::filesystem::path& path,
                           std::span<const LabeledExample> examples) {
  auto out = open_for_write(path);
  for (const auto& ex : examples) {
    json record = {{"id", ex.id}, {"features", ex.features}, {"label", ex.label}, {"topic", ex.topic}};
    out << record.dump() << '\n';
  }
}

GroupSpec load_group_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open group spec '{}'", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(fmt::format("group spec '{}': invalid JSON: {}", path.string(), e.what()));
  }
  if (!doc.is_array()) throw DataError("group spec must be a JSON array of {topic, label, group}");
  std::vector<GroupTriple> triples;
  for (const auto& item : doc) {
    if (!item.is_object() || item.size() != 3 || !item.contains("topic") ||
        !item.contains("label") || !item.contains("group")) {
      throw DataError(fmt::format("group spec entry must be {{topic, label, group}}: {}", item.dump()));
    }
    for (const char* key : {"topic", "label", "group"}) {
      if (!item[key].is_number_unsigned()) {
        throw DataError(fmt::format("group spec field '{}' must be a non-negative integer", key));
      }
    }
    triples.push_back({item["topic"].get<std::size_t>(), item["label"].get<std::size_t>(),
                       item["group"].get<std::size_t>()});
  }
  return GroupSpec::from_triples(triples);
}

void write_group_spec(const std::filesystem::path& path, const GroupSpec& spec) {
  json doc = json::array();
  for (const auto& t : spec.triples()) {
    doc.push_back({{"topic", t.topic}, {"label", t.label}, {"group", t.group}});
  }
  auto out = open_for_write(path);
  out << doc.dump() << '\n';
}

TruthTable load_truth(const std::filesystem::path& path) {
  TruthTable truth;
  for_each_record(path, [&](const json& record, const RecordContext& ctx) {
    if (!record.contains("label")) ctx.fail("missing field 'label'");
    truth[ctx.id] = read_index(record["label"], ctx, "label", static_cast<std::size_t>(INT64_MAX));
  });
  return truth;
}

void write_truth(const std::filesystem::path& path, const TruthTable& truth) {
  auto out = open_for_write(path);
  for (const auto& [id, label] : truth) {
    out << json{{"id", id}, {"label", label}}.dump() << '\n';
  }
}

}  // namespace sldro
