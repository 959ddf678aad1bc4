// Copyright 2026 The dpforge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Datasets: synthetic Gaussian blobs, class subsampling for imbalance
// studies, MNIST-style IDX files and CSV files with a JSON schema sidecar.
//
// Multiclass datasets carry one class id per example. Multilabel datasets
// carry one ternary code per label (negative, positive, uncertain). Optional
// categorical attributes (e.g. sex, age bracket) define subgroups.

#ifndef DPFORGE_DATA_HPP_
#define DPFORGE_DATA_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <nlohmann/json.hpp>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_join.h"
#include "absl/strings/str_split.h"
#include "absl/strings/string_view.h"
#include "dpforge/models.hpp"
#include "dpforge/numeric.hpp"
#include "dpforge/random.hpp"

namespace dpforge::data {

enum class Split : uint8_t { kTrain, kValid, kTest };
enum class Task { kMulticlass, kMultilabel };

inline absl::string_view SplitName(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kValid:
      return "valid";
    case Split::kTest:
      return "test";
  }
  return "train";
}

struct Attribute {
  std::string name;
  std::vector<std::string> categories;
  bool operator==(const Attribute&) const = default;
};

struct Dataset {
  Matrix features;  // N x d
  std::vector<std::string> feature_names;
  Task task = Task::kMulticlass;
  // Number of classes (multiclass) or of labels (multilabel).
  int64_t num_classes = 2;
  std::vector<std::string> label_names;
  // N x label_width() codes: class ids, or models::LabelCode per label.
  std::vector<int32_t> labels;
  std::vector<Attribute> attributes;
  std::vector<int32_t> attribute_codes;  // N x attributes.size()
  std::vector<Split> split;
  // Height and width when the features are images (IDX input).
  std::vector<int64_t> image_dims;

  int64_t size() const { return features.rows; }
  int64_t dim() const { return features.cols; }
  int64_t label_width() const {
    return task == Task::kMulticlass ? 1 : num_classes;
  }
  int32_t Label(int64_t i) const { return labels[static_cast<size_t>(i)]; }
  std::span<const int32_t> LabelRow(int64_t i) const {
    return {labels.data() + i * label_width(),
            static_cast<size_t>(label_width())};
  }
  int32_t AttributeCode(int64_t i, size_t a) const {
    return attribute_codes[static_cast<size_t>(i) * attributes.size() + a];
  }

  absl::Status Validate() const {
    const size_t n = static_cast<size_t>(size());
    if (labels.size() != n * static_cast<size_t>(label_width())) {
      return absl::InvalidArgumentError(
          absl::StrCat("expected ", n * label_width(), " label entries, got ",
                       labels.size()));
    }
    if (split.size() != n) {
      return absl::InvalidArgumentError("split tags do not match row count");
    }
    if (attribute_codes.size() != n * attributes.size()) {
      return absl::InvalidArgumentError(
          "attribute codes do not match row count");
    }
    for (size_t i = 0; i < labels.size(); ++i) {
      const int32_t y = labels[i];
      const bool ok = task == Task::kMulticlass
                          ? (y >= 0 && y < num_classes)
                          : (y >= models::kNegative && y <= models::kUncertain);
      if (!ok) {
        return absl::InvalidArgumentError(
            absl::StrCat("label ", y, " out of range at entry ", i));
      }
    }
    for (size_t i = 0; i < attribute_codes.size(); ++i) {
      const auto& attr = attributes[i % attributes.size()];
      const int32_t code = attribute_codes[i];
      if (code < 0 || code >= static_cast<int32_t>(attr.categories.size())) {
        return absl::InvalidArgumentError(absl::StrCat(
            "attribute ", attr.name, " code out of range in row ",
            i / attributes.size()));
      }
    }
    return absl::OkStatus();
  }

  // Rows `indices` in the given order, all fields carried along.
  Dataset Subset(std::span<const int64_t> indices) const {
    Dataset out = *this;
    out.features = Matrix(static_cast<int64_t>(indices.size()), dim());
    out.labels.clear();
    out.attribute_codes.clear();
    out.split.clear();
    const size_t a = attributes.size();
    for (size_t r = 0; r < indices.size(); ++r) {
      const int64_t i = indices[r];
      std::copy_n(features.Row(i).begin(), dim(),
                  out.features.Row(static_cast<int64_t>(r)).begin());
      const auto y = LabelRow(i);
      out.labels.insert(out.labels.end(), y.begin(), y.end());
      for (size_t k = 0; k < a; ++k) {
        out.attribute_codes.push_back(AttributeCode(i, k));
      }
      out.split.push_back(split[static_cast<size_t>(i)]);
    }
    return out;
  }

  std::vector<int64_t> IndicesOf(Split s) const {
    std::vector<int64_t> out;
    for (int64_t i = 0; i < size(); ++i) {
      if (split[static_cast<size_t>(i)] == s) out.push_back(i);
    }
    return out;
  }

  bool operator==(const Dataset&) const = default;
};

// Soft training target of example i (see models::SmoothedOneHot and
// models::MultilabelTarget).
inline Vector Target(const Dataset& ds, int64_t i, double smoothing,
                     std::span<const int32_t> uncertain_to = {},
                     double uncertain_smoothing = 0.2) {
  if (ds.task == Task::kMulticlass) {
    return models::SmoothedOneHot(ds.Label(i), ds.num_classes, smoothing);
  }
  return models::MultilabelTarget(ds.LabelRow(i), uncertain_to, smoothing,
                                  uncertain_smoothing);
}

// Gaussian blobs with identity covariance. Class centres sit on a circle in
// the first two coordinates (on a line when dim = 1) with neighbouring
// centres `separation` apart. Classes are interleaved in row order.
inline absl::StatusOr<Dataset> SynthBlobs(int64_t num_classes,
                                          int64_t per_class, int64_t dim,
                                          double separation, uint64_t seed) {
  if (num_classes < 1 || per_class < 1 || dim < 1 || !(separation >= 0)) {
    return absl::InvalidArgumentError(
        "synth_blobs needs positive counts and non-negative separation");
  }
  Dataset ds;
  ds.num_classes = std::max<int64_t>(num_classes, 2);
  ds.task = Task::kMulticlass;
  ds.label_names = {"label"};
  for (int64_t j = 0; j < dim; ++j) ds.feature_names.push_back(absl::StrCat("x", j));
  const int64_t n = num_classes * per_class;
  ds.features = Matrix(n, dim);
  std::vector<Vector> centers(static_cast<size_t>(num_classes), Vector(dim, 0.0));
  for (int64_t c = 0; c < num_classes; ++c) {
    if (dim == 1 || num_classes <= 2) {
      centers[c][0] = separation * (static_cast<double>(c) -
                                    0.5 * static_cast<double>(num_classes - 1));
    } else {
      const double angle =
          2.0 * std::numbers::pi * static_cast<double>(c) / num_classes;
      const double radius =
          separation / (2.0 * std::sin(std::numbers::pi / num_classes));
      centers[c][0] = radius * std::cos(angle);
      centers[c][1] = radius * std::sin(angle);
    }
  }
  Rng rng(DeriveKey(seed, {0xB10B}));
  for (int64_t r = 0; r < n; ++r) {
    const int64_t c = r % num_classes;
    for (int64_t j = 0; j < dim; ++j) {
      ds.features(r, j) = centers[c][j] + rng.Normal();
    }
    ds.labels.push_back(static_cast<int32_t>(c));
    ds.split.push_back(Split::kTrain);
  }
  return ds;
}

// Tags a random `valid_fraction` / `test_fraction` of rows as valid / test.
inline absl::StatusOr<Dataset> AssignSplits(Dataset ds, double valid_fraction,
                                            double test_fraction,
                                            uint64_t seed) {
  if (!(valid_fraction >= 0 && test_fraction >= 0 &&
        valid_fraction + test_fraction < 1)) {
    return absl::InvalidArgumentError("split fractions must sum below one");
  }
  const size_t n = static_cast<size_t>(ds.size());
  std::vector<int64_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int64_t>(i);
  Rng rng(DeriveKey(seed, {0x5B17}));
  rng.Shuffle(std::span<int64_t>(order));
  const size_t n_valid = static_cast<size_t>(std::floor(valid_fraction * n));
  const size_t n_test = static_cast<size_t>(std::floor(test_fraction * n));
  for (size_t k = 0; k < n; ++k) {
    ds.split[order[k]] = k < n_valid            ? Split::kValid
                         : k < n_valid + n_test ? Split::kTest
                                                : Split::kTrain;
  }
  return ds;
}

// Keeps ceil(keep_fraction * count) examples of class `class_id`, chosen
// uniformly at random; other rows and the row order are untouched.
inline absl::StatusOr<Dataset> SubsampleClass(const Dataset& ds,
                                              int32_t class_id,
                                              double keep_fraction,
                                              uint64_t seed) {
  if (ds.task != Task::kMulticlass) {
    return absl::InvalidArgumentError("subsample_class needs a multiclass set");
  }
  if (!(keep_fraction > 0 && keep_fraction <= 1)) {
    return absl::InvalidArgumentError(
        absl::StrCat("keep_fraction must lie in (0, 1], got ", keep_fraction));
  }
  std::vector<int64_t> members;
  for (int64_t i = 0; i < ds.size(); ++i) {
    if (ds.Label(i) == class_id) members.push_back(i);
  }
  if (class_id < 0 || class_id >= ds.num_classes || members.empty()) {
    return absl::InvalidArgumentError(
        absl::StrCat("unknown class ", class_id));
  }
  const size_t keep = static_cast<size_t>(
      std::ceil(keep_fraction * static_cast<double>(members.size()) - 1e-9));
  Rng rng(DeriveKey(seed, {0x5C1A55, static_cast<uint64_t>(class_id)}));
  const auto chosen = SampleWithoutReplacement(rng, members.size(), keep);
  std::vector<bool> drop(static_cast<size_t>(ds.size()), false);
  for (int64_t m : members) drop[static_cast<size_t>(m)] = true;
  for (size_t c : chosen) drop[static_cast<size_t>(members[c])] = false;
  std::vector<int64_t> rows;
  for (int64_t i = 0; i < ds.size(); ++i) {
    if (!drop[static_cast<size_t>(i)]) rows.push_back(i);
  }
  return ds.Subset(rows);
}

// "name=value|name=value" over the attributes in `which`.
inline std::string SubgroupKey(const Dataset& ds, int64_t i,
                               std::span<const size_t> which) {
  std::vector<std::string> parts;
  for (size_t a : which) {
    parts.push_back(absl::StrCat(
        ds.attributes[a].name, "=",
        ds.attributes[a].categories[static_cast<size_t>(ds.AttributeCode(i, a))]));
  }
  return absl::StrJoin(parts, "|");
}

// ---------------------------------------------------------------- IDX files

struct IdxArray {
  std::vector<int64_t> dims;
  std::vector<uint8_t> values;
};

inline absl::StatusOr<std::string> ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot open ", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline absl::Status WriteFile(const std::string& path, absl::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) return absl::PermissionDeniedError(absl::StrCat("cannot write ", path));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  return out ? absl::OkStatus()
             : absl::DataLossError(absl::StrCat("short write to ", path));
}

// Parses an unsigned-byte IDX array: 0x00 0x00 0x08 ndim, big-endian 32-bit
// dimensions, then the payload.
inline absl::StatusOr<IdxArray> ParseIdx(absl::string_view bytes) {
  auto fail = [](size_t offset, absl::string_view what) {
    return absl::DataLossError(
        absl::StrCat("IDX parse error at byte offset ", offset, ": ", what));
  };
  if (bytes.size() < 4) return fail(bytes.size(), "truncated magic number");
  const auto* b = reinterpret_cast<const uint8_t*>(bytes.data());
  if (b[0] != 0 || b[1] != 0) return fail(0, "magic must start with two zero bytes");
  if (b[2] != 0x08) return fail(2, "only unsigned byte (0x08) data is supported");
  const int ndim = b[3];
  if (ndim < 1) return fail(3, "zero dimensions");
  IdxArray out;
  size_t offset = 4;
  uint64_t count = 1;
  for (int k = 0; k < ndim; ++k) {
    if (offset + 4 > bytes.size()) return fail(offset, "truncated dimension header");
    const uint32_t dim = (uint32_t{b[offset]} << 24) | (uint32_t{b[offset + 1]} << 16) |
                         (uint32_t{b[offset + 2]} << 8) | uint32_t{b[offset + 3]};
    out.dims.push_back(dim);
    count *= dim;
    offset += 4;
  }
  if (bytes.size() - offset < count) {
    return fail(bytes.size(), absl::StrCat("truncated payload: expected ", count,
                                           " bytes after offset ", offset));
  }
  if (bytes.size() - offset > count) {
    return fail(offset + count, "trailing bytes after payload");
  }
  out.values.assign(b + offset, b + offset + count);
  return out;
}

inline std::string SerializeIdx(const IdxArray& array) {
  std::string out = {0, 0, 0x08, static_cast<char>(array.dims.size())};
  for (int64_t d : array.dims) {
    const uint32_t v = static_cast<uint32_t>(d);
    out.push_back(static_cast<char>(v >> 24));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>(v & 0xFF));
  }
  out.append(array.values.begin(), array.values.end());
  return out;
}

inline double RescalePixel(uint8_t v) { return v / 127.5 - 1.0; }
inline uint8_t QuantizePixel(double x) {
  return static_cast<uint8_t>(std::clamp(std::lround((x + 1.0) * 127.5), 0L, 255L));
}

// Images (magic 0x00000803, N x rows x cols) and labels (0x00000801, N)
// rescaled to [-1, 1] with x / 127.5 - 1.
inline absl::StatusOr<Dataset> DatasetFromIdx(absl::string_view image_bytes,
                                              absl::string_view label_bytes,
                                              int64_t num_classes = 10) {
  auto images = ParseIdx(image_bytes);
  if (!images.ok()) return images.status();
  auto labels = ParseIdx(label_bytes);
  if (!labels.ok()) return labels.status();
  if (images->dims.size() != 3) {
    return absl::DataLossError("IDX parse error at byte offset 3: image file "
                               "must have 3 dimensions (magic 0x00000803)");
  }
  if (labels->dims.size() != 1) {
    return absl::DataLossError("IDX parse error at byte offset 3: label file "
                               "must have 1 dimension (magic 0x00000801)");
  }
  const int64_t n = images->dims[0];
  if (labels->dims[0] != n) {
    return absl::DataLossError(absl::StrCat(
        "IDX parse error at byte offset 4: ", labels->dims[0], " labels for ",
        n, " images"));
  }
  const int64_t d = images->dims[1] * images->dims[2];
  Dataset ds;
  ds.num_classes = num_classes;
  ds.label_names = {"label"};
  ds.image_dims = {images->dims[1], images->dims[2]};
  for (int64_t j = 0; j < d; ++j) ds.feature_names.push_back(absl::StrCat("p", j));
  ds.features = Matrix(n, d);
  for (size_t i = 0; i < images->values.size(); ++i) {
    ds.features.data[i] = RescalePixel(images->values[i]);
  }
  for (int64_t i = 0; i < n; ++i) {
    const int32_t y = labels->values[static_cast<size_t>(i)];
    if (y >= num_classes) {
      return absl::DataLossError(absl::StrCat(
          "IDX parse error at byte offset ", 8 + i, ": label ", y,
          " >= num_classes ", num_classes));
    }
    ds.labels.push_back(y);
    ds.split.push_back(Split::kTrain);
  }
  return ds;
}

inline absl::StatusOr<Dataset> LoadIdx(const std::string& image_path,
                                       const std::string& label_path,
                                       int64_t num_classes = 10) {
  auto images = ReadFile(image_path);
  if (!images.ok()) return images.status();
  auto labels = ReadFile(label_path);
  if (!labels.ok()) return labels.status();
  return DatasetFromIdx(*images, *labels, num_classes);
}

struct IdxPair {
  std::string images;
  std::string labels;
};

inline absl::StatusOr<IdxPair> DatasetToIdx(const Dataset& ds) {
  if (ds.image_dims.size() != 2 || ds.image_dims[0] * ds.image_dims[1] != ds.dim()) {
    return absl::InvalidArgumentError("dataset has no image dimensions");
  }
  if (ds.task != Task::kMulticlass) {
    return absl::InvalidArgumentError("IDX labels must be class ids");
  }
  IdxArray images{{ds.size(), ds.image_dims[0], ds.image_dims[1]}, {}};
  for (double x : ds.features.data) images.values.push_back(QuantizePixel(x));
  IdxArray labels{{ds.size()}, {}};
  for (int32_t y : ds.labels) {
    if (y < 0 || y > 255) return absl::InvalidArgumentError("label exceeds a byte");
    labels.values.push_back(static_cast<uint8_t>(y));
  }
  return IdxPair{SerializeIdx(images), SerializeIdx(labels)};
}

// ---------------------------------------------------------------- CSV files
//
// Schema sidecar (JSON):
//   {"version": 1, "task": "multiclass" | "multilabel", "num_classes": K,
//    "features": [...], "labels": [...],
//    "attributes": [{"name": ..., "categories": [...]}, ...]}
// CSV header: features, labels, attributes, then "split". Values contain no
// commas or quotes. Multilabel entries are 0, 1 or U.

inline std::string FormatDouble(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline nlohmann::json SchemaOf(const Dataset& ds) {
  nlohmann::json attrs = nlohmann::json::array();
  for (const auto& a : ds.attributes) {
    attrs.push_back({{"name", a.name}, {"categories", a.categories}});
  }
  return {{"version", 1},
          {"task", ds.task == Task::kMulticlass ? "multiclass" : "multilabel"},
          {"num_classes", ds.num_classes},
          {"features", ds.feature_names},
          {"labels", ds.label_names},
          {"attributes", attrs}};
}

inline absl::StatusOr<Dataset> ParseCsv(absl::string_view text,
                                        const nlohmann::json& schema) {
  Dataset ds;
  try {
    if (schema.value("version", 0) != 1) {
      return absl::InvalidArgumentError("schema version must be 1");
    }
    const std::string task = schema.at("task").get<std::string>();
    if (task != "multiclass" && task != "multilabel") {
      return absl::InvalidArgumentError(absl::StrCat("unknown task ", task));
    }
    ds.task = task == "multiclass" ? Task::kMulticlass : Task::kMultilabel;
    ds.num_classes = schema.at("num_classes").get<int64_t>();
    ds.feature_names = schema.at("features").get<std::vector<std::string>>();
    ds.label_names = schema.at("labels").get<std::vector<std::string>>();
    for (const auto& a : schema.value("attributes", nlohmann::json::array())) {
      ds.attributes.push_back({a.at("name").get<std::string>(),
                               a.at("categories").get<std::vector<std::string>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    return absl::InvalidArgumentError(absl::StrCat("bad schema: ", e.what()));
  }
  if (static_cast<int64_t>(ds.label_names.size()) != ds.label_width()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "schema lists ", ds.label_names.size(), " label columns, task needs ",
        ds.label_width()));
  }
  std::vector<std::string> expected = ds.feature_names;
  expected.insert(expected.end(), ds.label_names.begin(), ds.label_names.end());
  for (const auto& a : ds.attributes) expected.push_back(a.name);
  expected.push_back("split");

  const int64_t d = static_cast<int64_t>(ds.feature_names.size());
  const size_t lw = ds.label_names.size();
  const size_t na = ds.attributes.size();
  std::vector<double> feats;
  size_t offset = 0;
  int64_t line_no = 0;
  auto fail = [&](absl::string_view what) {
    return absl::DataLossError(absl::StrCat("CSV parse error in row ", line_no,
                                            " (byte offset ", offset, "): ", what));
  };
  bool header_seen = false;
  while (offset < text.size()) {
    size_t end = text.find('\n', offset);
    if (end == absl::string_view::npos) end = text.size();
    absl::string_view line = text.substr(offset, end - offset);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      offset = end + 1;
      ++line_no;
      continue;
    }
    std::vector<absl::string_view> fields = absl::StrSplit(line, ',');
    if (!header_seen) {
      if (fields.size() != expected.size() ||
          !std::equal(fields.begin(), fields.end(), expected.begin())) {
        return fail(absl::StrCat("header does not match schema; expected ",
                                 absl::StrJoin(expected, ",")));
      }
      header_seen = true;
      offset = end + 1;
      ++line_no;
      continue;
    }
    if (fields.size() != expected.size()) {
      return fail(absl::StrCat("expected ", expected.size(), " fields, got ",
                               fields.size()));
    }
    size_t f = 0;
    for (int64_t j = 0; j < d; ++j, ++f) {
      double v = 0.0;
      const auto sv = fields[f];
      const auto res = std::from_chars(sv.data(), sv.data() + sv.size(), v);
      if (res.ec != std::errc() || res.ptr != sv.data() + sv.size() ||
          !std::isfinite(v)) {
        return fail(absl::StrCat("bad number '", sv, "' in column ", expected[f]));
      }
      feats.push_back(v);
    }
    for (size_t k = 0; k < lw; ++k, ++f) {
      const auto sv = fields[f];
      int32_t y = 0;
      if (ds.task == Task::kMultilabel && sv == "U") {
        y = models::kUncertain;
      } else {
        const auto res = std::from_chars(sv.data(), sv.data() + sv.size(), y);
        if (res.ec != std::errc() || res.ptr != sv.data() + sv.size()) {
          return fail(absl::StrCat("bad label '", sv, "' in column ", expected[f]));
        }
        const bool ok = ds.task == Task::kMulticlass
                            ? (y >= 0 && y < ds.num_classes)
                            : (y == 0 || y == 1);
        if (!ok) return fail(absl::StrCat("label ", y, " out of range"));
      }
      ds.labels.push_back(y);
    }
    for (size_t a = 0; a < na; ++a, ++f) {
      const auto& cats = ds.attributes[a].categories;
      const auto it = std::find(cats.begin(), cats.end(), fields[f]);
      if (it == cats.end()) {
        return fail(absl::StrCat("unknown category '", fields[f],
                                 "' for attribute ", ds.attributes[a].name));
      }
      ds.attribute_codes.push_back(static_cast<int32_t>(it - cats.begin()));
    }
    const auto sv = fields[f];
    if (sv == "train") {
      ds.split.push_back(Split::kTrain);
    } else if (sv == "valid") {
      ds.split.push_back(Split::kValid);
    } else if (sv == "test") {
      ds.split.push_back(Split::kTest);
    } else {
      return fail(absl::StrCat("unknown split '", sv, "'"));
    }
    offset = end + 1;
    ++line_no;
  }
  if (!header_seen) {
    return absl::DataLossError("CSV parse error in row 0 (byte offset 0): "
                               "missing header");
  }
  const int64_t n = static_cast<int64_t>(ds.split.size());
  ds.features = Matrix(n, d);
  ds.features.data = std::move(feats);
  return ds;
}

// Canonical CSV text: shortest round-trip numbers, '\n' line ends.
inline std::string FormatCsv(const Dataset& ds) {
  std::vector<std::string> header = ds.feature_names;
  header.insert(header.end(), ds.label_names.begin(), ds.label_names.end());
  for (const auto& a : ds.attributes) header.push_back(a.name);
  header.push_back("split");
  std::string out = absl::StrJoin(header, ",");
  out += '\n';
  for (int64_t i = 0; i < ds.size(); ++i) {
    std::vector<std::string> row;
    for (double x : ds.features.Row(i)) row.push_back(FormatDouble(x));
    for (int32_t y : ds.LabelRow(i)) {
      row.push_back(ds.task == Task::kMultilabel && y == models::kUncertain
                        ? std::string("U")
                        : absl::StrCat(y));
    }
    for (size_t a = 0; a < ds.attributes.size(); ++a) {
      row.push_back(ds.attributes[a].categories[ds.AttributeCode(i, a)]);
    }
    row.emplace_back(SplitName(ds.split[static_cast<size_t>(i)]));
    out += absl::StrJoin(row, ",");
    out += '\n';
  }
  return out;
}

inline std::string FormatSchema(const Dataset& ds) {
  return SchemaOf(ds).dump(2) + "\n";
}

inline absl::StatusOr<Dataset> LoadCsv(const std::string& csv_path,
                                       const std::string& schema_path) {
  auto schema_text = ReadFile(schema_path);
  if (!schema_text.ok()) return schema_text.status();
  nlohmann::json schema = nlohmann::json::parse(*schema_text, nullptr, false);
  if (schema.is_discarded()) {
    return absl::InvalidArgumentError(
        absl::StrCat("schema ", schema_path, " is not valid JSON"));
  }
  auto text = ReadFile(csv_path);
  if (!text.ok()) return text.status();
  return ParseCsv(*text, schema);
}

inline absl::Status WriteCsv(const Dataset& ds, const std::string& csv_path,
                             const std::string& schema_path) {
  if (auto st = WriteFile(csv_path, FormatCsv(ds)); !st.ok()) return st;
  return WriteFile(schema_path, FormatSchema(ds));
}

}  // namespace dpforge::data

#endif  // DPFORGE_DATA_HPP_
