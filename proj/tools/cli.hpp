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

// The dpforge command line: one subcommand per pipeline stage.
//
// Every subcommand takes --config (JSON), --seed (or DPFORGE_SEED) and
// --out (output directory). Flags override config entries. Each run writes
// its outputs plus manifest_<subcommand>.json recording the SHA-256 of the
// canonical merged config. Exit codes: 0 success, 1 usage or config error,
// 2 computation error, 3 inconclusive audit.

#ifndef DPFORGE_TOOLS_CLI_HPP_
#define DPFORGE_TOOLS_CLI_HPP_

#include <openssl/evp.h>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_join.h"
#include "absl/strings/str_split.h"
#include "dpforge/accountant.hpp"
#include "dpforge/attacks.hpp"
#include "dpforge/audit.hpp"
#include "dpforge/data.hpp"
#include "dpforge/fairness.hpp"
#include "dpforge/interpret.hpp"
#include "dpforge/models.hpp"
#include "dpforge/privatizer.hpp"
#include "dpforge/study.hpp"
#include "dpforge/train.hpp"
#include "nlohmann/json.hpp"

namespace dpforge::cli {

using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitCompute = 2;
inline constexpr int kExitInconclusive = 3;
inline constexpr int kSchemaVersion = 1;

// ------------------------------------------------------------- utilities

inline std::string Sha256Hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

// Objects keep their keys sorted, so the compact dump is canonical.
inline std::string CanonicalJson(const json& j) { return j.dump(); }

inline std::string Num(double x) { return data::FormatDouble(x); }

// JSON has no infinity; +inf is written as null.
inline json JsonNumber(double x) {
  return std::isfinite(x) ? json(x) : json(nullptr);
}

// Raised while reading the config; maps to the usage exit code.
struct ConfigError {
  absl::Status status;
};

class Outputs {
 public:
  explicit Outputs(std::string dir) : dir_(std::move(dir)) {}

  absl::Status Write(const std::string& name, const std::string& bytes) {
    const std::string path = (std::filesystem::path(dir_) / name).string();
    if (auto st = data::WriteFile(path, bytes); !st.ok()) return st;
    paths_.push_back(path);
    return absl::OkStatus();
  }
  absl::Status WriteJson(const std::string& name, const json& j) {
    return Write(name, j.dump(2) + "\n");
  }
  const std::vector<std::string>& paths() const { return paths_; }
  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::vector<std::string> paths_;
};

struct Outcome {
  json result;  // printed to stdout
  json nominal_budget = nullptr;
  bool inconclusive = false;
};

// Reads `key` of `j` as T, or `fallback` when absent.
template <typename T>
T Value(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError{absl::InvalidArgumentError(
        absl::StrCat("config key '", key, "': ", e.what()))};
  }
}

template <typename T>
T Required(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) {
    throw ConfigError{absl::InvalidArgumentError(
        absl::StrCat("config is missing required key '", key, "'"))};
  }
  return Value<T>(j, key, T{});
}

inline const json& Section(const json& j, const char* key) {
  static const json kEmpty = json::object();
  if (!j.contains(key)) return kEmpty;
  if (!j.at(key).is_object()) {
    throw ConfigError{absl::InvalidArgumentError(
        absl::StrCat("config key '", key, "' must be an object"))};
  }
  return j.at(key);
}

inline void Check(const absl::Status& st) {
  if (!st.ok()) throw ConfigError{st};
}

// ------------------------------------------------------------- flags

enum class FlagKind { kNumber, kInteger, kString, kBool };

struct Flag {
  std::string name;     // e.g. "--epsilon"
  std::string pointer;  // JSON pointer in the merged config
  FlagKind kind;
  std::string help;
};

struct Invocation {
  std::string config_path;
  std::string seed_text;
  std::string out_dir = ".";
  std::map<std::string, std::string> values;  // pointer -> raw text
  std::map<std::string, bool> switches;       // pointer -> set
  std::vector<std::string> positional;
};

inline json ParseFlagValue(const Flag& f, const std::string& text) {
  switch (f.kind) {
    case FlagKind::kNumber: {
      double v = 0;
      if (!absl::SimpleAtod(text, &v)) {
        throw ConfigError{absl::InvalidArgumentError(
            absl::StrCat(f.name, " expects a number, got '", text, "'"))};
      }
      return v;
    }
    case FlagKind::kInteger: {
      int64_t v = 0;
      if (!absl::SimpleAtoi(text, &v)) {
        throw ConfigError{absl::InvalidArgumentError(
            absl::StrCat(f.name, " expects an integer, got '", text, "'"))};
      }
      return v;
    }
    case FlagKind::kString:
      return text;
    case FlagKind::kBool:
      return true;
  }
  return nullptr;
}

// Config file, then flags on top; adds the schema version when absent.
inline json MergeConfig(const Invocation& inv, const std::vector<Flag>& flags) {
  json config = json::object();
  if (!inv.config_path.empty()) {
    auto text = data::ReadFile(inv.config_path);
    Check(text.status());
    config = json::parse(*text, nullptr, false);
    if (config.is_discarded() || !config.is_object()) {
      throw ConfigError{absl::InvalidArgumentError(
          absl::StrCat("config ", inv.config_path, " is not a JSON object"))};
    }
  }
  const int version = Value<int>(config, "schema_version", kSchemaVersion);
  if (version != kSchemaVersion) {
    throw ConfigError{absl::InvalidArgumentError(
        absl::StrCat("unsupported schema_version ", version))};
  }
  config["schema_version"] = kSchemaVersion;
  for (const auto& f : flags) {
    const json::json_pointer ptr(f.pointer);
    if (f.kind == FlagKind::kBool) {
      auto it = inv.switches.find(f.pointer);
      if (it != inv.switches.end() && it->second) config[ptr] = true;
      continue;
    }
    auto it = inv.values.find(f.pointer);
    if (it != inv.values.end()) config[ptr] = ParseFlagValue(f, it->second);
  }
  return config;
}

inline uint64_t ResolveSeed(const Invocation& inv) {
  std::string text = inv.seed_text;
  if (text.empty()) {
    const char* env = std::getenv("DPFORGE_SEED");
    if (env != nullptr) text = env;
  }
  if (text.empty()) return 0;
  uint64_t seed = 0;
  if (!absl::SimpleAtoi(text, &seed)) {
    throw ConfigError{absl::InvalidArgumentError(
        absl::StrCat("seed must be a non-negative integer, got '", text, "'"))};
  }
  return seed;
}

// ------------------------------------------------------------- calibrate

inline std::vector<Flag> CalibrateFlags() {
  return {{"--epsilon", "/epsilon", FlagKind::kNumber, "target epsilon"},
          {"--delta", "/delta", FlagKind::kNumber, "target delta"},
          {"--batch", "/batch", FlagKind::kInteger, "expected batch size"},
          {"--dataset-size", "/dataset_size", FlagKind::kInteger, "N"},
          {"--steps", "/steps", FlagKind::kInteger, "number of updates"},
          {"--sigma", "/sigma", FlagKind::kNumber, "noise multiplier (report epsilon)"},
          {"--grid-step", "/grid_step", FlagKind::kNumber, "PLD grid step"}};
}

inline absl::StatusOr<Outcome> RunCalibrate(const json& c, uint64_t, Outputs& out) {
  const auto batch = Required<int64_t>(c, "batch");
  const auto n = Required<int64_t>(c, "dataset_size");
  const auto steps = Required<int64_t>(c, "steps");
  const double delta = Value<double>(c, "delta", n > 0 ? 1.0 / n : 0.0);
  const double grid = Value<double>(c, "grid_step", accountant::kDefaultGridStep);
  if (batch < 1 || n < batch || steps < 1) {
    throw ConfigError{absl::InvalidArgumentError(
        "need 1 <= batch <= dataset_size and steps >= 1")};
  }
  const double q = static_cast<double>(batch) / static_cast<double>(n);
  Outcome o;
  json r;
  r["q"] = q;
  r["steps"] = steps;
  r["delta"] = delta;
  r["grid_step"] = grid;
  if (c.contains("sigma") && !c.contains("epsilon")) {
    const double sigma = Required<double>(c, "sigma");
    auto eps = accountant::EpsilonForMechanism({sigma, q, steps}, delta, grid);
    if (!eps.ok()) return eps.status();
    auto pld = accountant::ComposedPld({sigma, q, steps}, grid);
    r["sigma"] = sigma;
    r["epsilon"] = JsonNumber(*eps);
    if (!pld.ok()) return pld.status();
    r["infinity_mass"] = std::max(pld->remove.infinity_mass(), pld->add.infinity_mass());
  } else {
    const double eps = Required<double>(c, "epsilon");
    const accountant::PrivacyBudget budget{eps, delta};
    Check(budget.Validate());
    auto cal = accountant::CalibrateSigma(budget, q, steps, grid);
    if (!cal.ok()) return cal.status();
    r["sigma"] = cal->sigma;
    r["epsilon"] = cal->epsilon;
    r["infinity_mass"] = cal->infinity_mass;
    o.nominal_budget = {{"epsilon", eps}, {"delta", delta}};
  }
  if (auto st = out.WriteJson("calibrate.json", r); !st.ok()) return st;
  o.result = r;
  return o;
}

// ------------------------------------------------------------- interpret

inline std::vector<Flag> InterpretFlags() {
  return {{"--epsilon", "/epsilon", FlagKind::kNumber, "epsilon"},
          {"--delta", "/delta", FlagKind::kNumber, "delta"},
          {"--grid-points", "/grid_points", FlagKind::kInteger, "alpha grid size"},
          {"--k-max", "/k_max", FlagKind::kInteger, "largest K in the K-choice table"}};
}

inline absl::StatusOr<Outcome> RunInterpret(const json& c, uint64_t, Outputs& out) {
  const accountant::PrivacyBudget b{Required<double>(c, "epsilon"),
                                    Value<double>(c, "delta", 0.0)};
  Check(interpret::ValidateBudget(b));
  const auto points = Value<int64_t>(c, "grid_points", 101);
  const auto k_max = Value<int64_t>(c, "k_max", 64);
  if (k_max < 2) throw ConfigError{absl::InvalidArgumentError("k_max must be >= 2")};
  auto region = interpret::MiaRegion(b, points);
  if (!region.ok()) {
    if (region.status().code() == absl::StatusCode::kInvalidArgument) {
      throw ConfigError{region.status()};
    }
    return region.status();
  }
  std::string mia = "alpha,beta_lower\n";
  for (size_t i = 0; i < region->alpha_grid.size(); ++i) {
    absl::StrAppend(&mia, Num(region->alpha_grid[i]), ",", Num(region->beta_lower[i]), "\n");
  }
  std::string kc = "k,success\n";
  for (int64_t k = 2; k <= k_max; ++k) {
    auto s = interpret::KChoiceSuccess(b, k);
    if (!s.ok()) return s.status();
    absl::StrAppend(&kc, k, ",", Num(*s), "\n");
  }
  auto adv = interpret::AdvantageUpper(b);
  auto mu = interpret::CalibrateMu(b);
  auto crowd = interpret::CrowdThreshold(b);
  if (!adv.ok()) return adv.status();
  if (!mu.ok()) return mu.status();
  if (!crowd.ok()) return crowd.status();
  json r{{"epsilon", b.epsilon},        {"delta", b.delta},
         {"advantage_upper", *adv},     {"mu", *mu},
         {"crowd_threshold", *crowd}};
  if (auto st = out.Write("mia_region.csv", mia); !st.ok()) return st;
  if (auto st = out.Write("k_choice.csv", kc); !st.ok()) return st;
  if (auto st = out.WriteJson("interpret.json", r); !st.ok()) return st;
  Outcome o;
  o.result = r;
  o.nominal_budget = {{"epsilon", b.epsilon}, {"delta", b.delta}};
  return o;
}

// ------------------------------------------------------------- train

inline models::Architecture ParseArch(const std::string& s) {
  if (s == "linear") return models::Architecture::kLinear;
  if (s == "mlp") return models::Architecture::kMlp;
  if (s == "conv") return models::Architecture::kConv;
  throw ConfigError{absl::InvalidArgumentError(
      absl::StrCat("unknown arch '", s, "' (linear, mlp, conv)"))};
}

inline models::Head ParseHead(const std::string& s) {
  if (s == "softmax") return models::Head::kSoftmax;
  if (s == "sigmoid") return models::Head::kSigmoid;
  throw ConfigError{absl::InvalidArgumentError(
      absl::StrCat("unknown head '", s, "' (softmax, sigmoid)"))};
}

inline data::Dataset LoadData(const json& d, uint64_t seed) {
  const auto source = Value<std::string>(d, "source", "synth_blobs");
  absl::StatusOr<data::Dataset> ds;
  if (source == "synth_blobs") {
    ds = data::SynthBlobs(Value<int64_t>(d, "classes", 3), Value<int64_t>(d, "per_class", 200),
                          Value<int64_t>(d, "dim", 4), Value<double>(d, "separation", 3.0),
                          Value<uint64_t>(d, "seed", seed));
  } else if (source == "csv") {
    ds = data::LoadCsv(Required<std::string>(d, "csv"), Required<std::string>(d, "schema"));
  } else if (source == "idx") {
    ds = data::LoadIdx(Required<std::string>(d, "images"), Required<std::string>(d, "labels"),
                       Value<int64_t>(d, "num_classes", 10));
  } else {
    throw ConfigError{absl::InvalidArgumentError(
        absl::StrCat("unknown data source '", source, "' (synth_blobs, csv, idx)"))};
  }
  Check(ds.status());
  const double test = Value<double>(d, "test_fraction", 0.0);
  const double valid = Value<double>(d, "valid_fraction", 0.0);
  if (test > 0 || valid > 0) {
    ds = data::AssignSplits(*std::move(ds), valid, test, Value<uint64_t>(d, "split_seed", seed));
    Check(ds.status());
  }
  return *std::move(ds);
}

inline std::vector<Flag> TrainFlags() {
  return {{"--steps", "/train/steps", FlagKind::kInteger, "number of updates"},
          {"--batch", "/train/batch", FlagKind::kInteger, "batch size"},
          {"--learning-rate", "/train/learning_rate", FlagKind::kNumber, "step size"},
          {"--clip-norm", "/train/clip_norm", FlagKind::kNumber, "clipping norm C"},
          {"--sigma", "/train/sigma", FlagKind::kNumber, "noise multiplier"},
          {"--epsilon", "/train/epsilon", FlagKind::kNumber, "calibrate sigma to epsilon"},
          {"--delta", "/train/delta", FlagKind::kNumber, "delta (default 1/N)"},
          {"--non-private", "/train/non_private", FlagKind::kBool, "plain SGD"},
          {"--arch", "/model/arch", FlagKind::kString, "linear, mlp or conv"}};
}

inline std::string ParamsBlob(const train::Checkpoint& c) {
  std::string blob;
  for (const auto* p : {&c.params.flat, &c.ema_params.flat}) {
    const size_t bytes = p->size() * sizeof(double);
    const size_t at = blob.size();
    blob.resize(at + bytes);
    std::memcpy(blob.data() + at, p->data(), bytes);
  }
  return blob;
}

inline absl::StatusOr<Outcome> RunTrain(const json& c, uint64_t seed, Outputs& out) {
  const data::Dataset ds = LoadData(Section(c, "data"), seed);
  const json& m = Section(c, "model");
  const json& t = Section(c, "train");
  models::ModelSpec spec;
  spec.arch = ParseArch(Value<std::string>(m, "arch", "linear"));
  spec.head = ParseHead(Value<std::string>(
      m, "head", ds.task == data::Task::kMultilabel ? "sigmoid" : "softmax"));
  spec.input_dim = ds.dim();
  spec.num_outputs = ds.num_classes;
  spec.hidden = Value<int64_t>(m, "hidden", 16);
  spec.filters = Value<int64_t>(m, "filters", 4);
  spec.channels = Value<int64_t>(m, "channels", 1);
  spec.height = Value<int64_t>(m, "height", ds.image_dims.size() == 2 ? ds.image_dims[0] : 0);
  spec.width = Value<int64_t>(m, "width", ds.image_dims.size() == 2 ? ds.image_dims[1] : 0);
  Check(spec.Validate());

  train::TrainConfig tc;
  tc.learning_rate = Value<double>(t, "learning_rate", tc.learning_rate);
  tc.batch = Value<int64_t>(t, "batch", tc.batch);
  tc.steps = Value<int64_t>(t, "steps", tc.steps);
  tc.clip_norm = Value<double>(t, "clip_norm", tc.clip_norm);
  tc.sigma = Value<double>(t, "sigma", 0.0);
  tc.label_smoothing = Value<double>(t, "label_smoothing", 0.0);
  tc.uncertain_to = Value<std::vector<int32_t>>(t, "uncertain_to", {});
  tc.uncertain_smoothing = Value<double>(t, "uncertain_smoothing", tc.uncertain_smoothing);
  tc.ema_rate = Value<double>(t, "ema_rate", 0.0);
  tc.num_checkpoints = Value<int64_t>(t, "num_checkpoints", 5);
  tc.k_aug = Value<int64_t>(t, "k_aug", 1);
  tc.workers = Value<int>(t, "workers", 1);
  tc.private_sgd = !Value<bool>(t, "non_private", false);
  tc.seed = seed;
  const auto train_n = static_cast<double>(ds.IndicesOf(data::Split::kTrain).size());
  const double delta = Value<double>(t, "delta", 1.0 / std::max(1.0, train_n));
  tc.report_delta = delta;
  Outcome o;
  if (t.contains("epsilon") && tc.private_sgd) {
    tc.budget = accountant::PrivacyBudget{Required<double>(t, "epsilon"), delta};
    o.nominal_budget = {{"epsilon", tc.budget->epsilon}, {"delta", delta}};
  }
  Check(tc.Validate());

  auto run = train::Train(ds, spec, tc, std::nullopt,
                          models::InitParams(spec, DeriveKey(seed, {0x1A17})));
  if (!run.ok()) return run.status();
  auto eval_rows = ds.IndicesOf(data::Split::kTest);
  if (eval_rows.empty()) eval_rows = ds.IndicesOf(data::Split::kTrain);
  const data::Dataset eval = ds.Subset(eval_rows);

  std::string trace = "step,loss\n";
  for (size_t s = 0; s < run->loss_trace.size(); ++s) {
    absl::StrAppend(&trace, s, ",", Num(run->loss_trace[s]), "\n");
  }
  std::string acc = "step,accuracy,ema_accuracy\n";
  json ckpts = json::array();
  double final_acc = 0.0;
  for (const auto& ck : run->checkpoints) {
    auto s1 = train::Predict(spec, ck.params, eval.features);
    auto s2 = train::Predict(spec, ck.ema_params, eval.features);
    if (!s1.ok()) return s1.status();
    if (!s2.ok()) return s2.status();
    const bool multiclass = ds.task == data::Task::kMulticlass;
    const double a1 = multiclass ? train::Accuracy(*s1, eval.labels) : std::nan("");
    const double a2 = multiclass ? train::Accuracy(*s2, eval.labels) : std::nan("");
    final_acc = a2;
    absl::StrAppend(&acc, ck.step, ",", Num(a1), ",", Num(a2), "\n");
    const std::string blob = ParamsBlob(ck);
    const std::string name = absl::StrCat("checkpoint_", ck.step);
    if (auto st = out.Write(name + ".bin", blob); !st.ok()) return st;
    json side{{"step", ck.step},
              {"num_params", spec.NumParams()},
              {"layout", "params then ema_params, float64 little-endian"},
              {"sha256", Sha256Hex(blob)}};
    json shapes = json::array();
    for (const auto& sh : ck.params.shapes) shapes.push_back({{"name", sh.name}, {"dims", sh.dims}});
    side["shapes"] = shapes;
    if (auto st = out.WriteJson(name + ".json", side); !st.ok()) return st;
    ckpts.push_back(name + ".bin");
  }
  if (auto st = out.Write("train_trace.csv", trace); !st.ok()) return st;
  if (auto st = out.Write("train_accuracy.csv", acc); !st.ok()) return st;
  json r{{"sigma", run->sigma},
         {"epsilon", JsonNumber(run->epsilon)},
         {"delta", run->delta},
         {"steps", tc.steps},
         {"final_ema_accuracy", JsonNumber(final_acc)},
         {"checkpoints", ckpts}};
  if (auto st = out.WriteJson("train.json", r); !st.ok()) return st;
  o.result = r;
  return o;
}

// ------------------------------------------------------------- audit

inline audit::CanaryKind ParseCanary(const std::string& s) {
  if (s == "blank") return audit::CanaryKind::kBlank;
  if (s == "uniform_noise") return audit::CanaryKind::kUniformNoise;
  if (s == "mislabeled") return audit::CanaryKind::kMislabeled;
  throw ConfigError{absl::InvalidArgumentError(
      absl::StrCat("unknown canary '", s, "' (blank, uniform_noise, mislabeled)"))};
}

inline std::vector<Flag> AuditFlags() {
  return {{"--epsilon", "/nominal_budget/epsilon", FlagKind::kNumber, "nominal epsilon"},
          {"--delta", "/nominal_budget/delta", FlagKind::kNumber, "nominal delta"},
          {"--dataset-size", "/dataset_size", FlagKind::kInteger, "|D|"},
          {"--models", "/models_phase2", FlagKind::kInteger, "Phase II models per arm"},
          {"--holdout", "/holdout_models", FlagKind::kInteger, "holdout models per arm"},
          {"--workers", "/workers", FlagKind::kInteger, "training threads"},
          {"--non-private", "/non_private", FlagKind::kBool, "audit plain SGD"}};
}

inline absl::StatusOr<Outcome> RunAuditCommand(const json& c, uint64_t seed, Outputs& out) {
  audit::AuditConfig ac;
  const json& nb = Section(c, "nominal_budget");
  ac.nominal_budget = {Required<double>(nb, "epsilon"), Value<double>(nb, "delta", 1e-5)};
  ac.dataset_size = Value<int64_t>(c, "dataset_size", 100);
  ac.models_phase1 = Value<int64_t>(c, "models_phase1", 50);
  ac.models_phase2 = Value<int64_t>(c, "models_phase2", 4000);
  ac.holdout_models = Value<int64_t>(c, "holdout_models", ac.models_phase2 / 4);
  ac.confidence = Value<double>(c, "confidence", 0.999);
  ac.workers = Value<int>(c, "workers", 1);
  ac.seed = seed;
  if (c.contains("hyper_grid")) {
    if (!c.at("hyper_grid").is_array()) {
      throw ConfigError{absl::InvalidArgumentError("hyper_grid must be an array")};
    }
    for (const auto& h : c.at("hyper_grid")) {
      audit::HyperPoint p = audit::DeskPoint();
      p.learning_rate = Value<double>(h, "learning_rate", p.learning_rate);
      p.clip_norm = Value<double>(h, "clip_norm", p.clip_norm);
      p.steps = Value<int64_t>(h, "steps", p.steps);
      const json& cn = Section(h, "canary");
      p.canary.kind = ParseCanary(Value<std::string>(cn, "kind", "blank"));
      p.canary.original_class = Value<int32_t>(cn, "original_class", p.canary.original_class);
      p.canary.assigned_class = Value<int32_t>(cn, "assigned_class", p.canary.assigned_class);
      p.canary.payload_seed = Value<uint64_t>(cn, "payload_seed", p.canary.payload_seed);
      ac.hyper_grid.push_back(p);
    }
  } else {
    ac.hyper_grid = {audit::DeskPoint()};
  }
  Check(ac.Validate());
  const bool non_private = Value<bool>(c, "non_private", false);
  auto setup = audit::MakeDeskSetup(
      ac.dataset_size,
      non_private ? std::nullopt : std::optional<accountant::PrivacyBudget>(ac.nominal_budget));
  Check(setup.status());
  const audit::DeskTrainer trainer(*std::move(setup));
  size_t best = 0;
  json phase1 = nullptr;
  if (ac.hyper_grid.size() > 1) {
    auto p1 = audit::Phase1Select(ac, trainer.AsTrainer());
    if (!p1.ok()) return p1.status();
    best = p1->best_index;
    phase1 = {{"tv", p1->tv}, {"best_index", best}};
    json deg = json::array();
    for (bool d : p1->degenerate) deg.push_back(d);
    phase1["degenerate"] = deg;
  }
  auto r = audit::RunAudit(ac, ac.hyper_grid[best], trainer.AsTrainer());
  if (!r.ok()) return r.status();
  std::string losses = "model,arm,canary_loss\n";
  for (size_t i = 0; i < r->losses_out.size(); ++i) {
    absl::StrAppend(&losses, i, ",out,", Num(r->losses_out[i]), "\n");
  }
  for (size_t i = 0; i < r->losses_in.size(); ++i) {
    absl::StrAppend(&losses, i, ",in,", Num(r->losses_in[i]), "\n");
  }
  const auto& h = ac.hyper_grid[best];
  json res{{"epsilon_lower", r->epsilon_lower},
           {"tpr_lower", r->tpr_lower},
           {"fpr_upper", r->fpr_upper},
           {"attack_auc", r->attack_auc},
           {"advantage", r->advantage},
           {"tpr", r->tpr},
           {"fpr", r->fpr},
           {"threshold", r->threshold},
           {"per_side_confidence", r->per_side_confidence},
           {"eval_models", r->eval_models},
           {"inconclusive", r->inconclusive},
           {"nominal_epsilon", ac.nominal_budget.epsilon},
           {"non_private", non_private},
           {"selected", {{"index", best},
                         {"learning_rate", h.learning_rate},
                         {"clip_norm", h.clip_norm},
                         {"steps", h.steps},
                         {"canary", audit::CanaryName(h.canary.kind)}}},
           {"phase1", phase1}};
  if (auto st = out.Write("audit_losses.csv", losses); !st.ok()) return st;
  if (auto st = out.WriteJson("audit.json", res); !st.ok()) return st;
  Outcome o;
  o.result = res;
  o.inconclusive = r->inconclusive;
  o.nominal_budget = {{"epsilon", ac.nominal_budget.epsilon},
                      {"delta", ac.nominal_budget.delta}};
  return o;
}

// ------------------------------------------------------------- attack

inline std::vector<Flag> AttackFlags() {
  return {{"--iterations", "/iterations", FlagKind::kInteger, "descent iterations"},
          {"--step-size", "/step_size", FlagKind::kNumber, "initial step size"},
          {"--sigma", "/sigma", FlagKind::kNumber, "noise multiplier on the update"},
          {"--clip-norm", "/clip_norm", FlagKind::kNumber, "clipping norm C"},
          {"--privatized", "/privatized", FlagKind::kBool, "attack a DP update"}};
}

inline absl::StatusOr<Outcome> RunAttack(const json& c, uint64_t seed, Outputs& out) {
  const json& m = Section(c, "model");
  models::ModelSpec spec;
  spec.arch = ParseArch(Value<std::string>(m, "arch", "linear"));
  spec.head = models::Head::kSoftmax;
  spec.input_dim = Value<int64_t>(m, "dim", 5);
  spec.num_outputs = Value<int64_t>(m, "classes", 3);
  spec.hidden = Value<int64_t>(m, "hidden", 8);
  Check(spec.Validate());
  const auto params = models::InitParams(spec, Value<uint64_t>(m, "init_seed", seed));
  Vector x = Value<Vector>(c, "input", {});
  if (x.empty()) x = attacks::RandomInit(spec.input_dim, DeriveKey(seed, {1}), 1.0);
  if (static_cast<int64_t>(x.size()) != spec.input_dim) {
    throw ConfigError{absl::InvalidArgumentError("input length does not match model dim")};
  }
  const auto label = Value<int64_t>(c, "label", 0);
  if (label < 0 || label >= spec.num_outputs) {
    throw ConfigError{absl::InvalidArgumentError("label out of range")};
  }
  attacks::ReconstructionConfig rc;
  rc.iterations = Value<int64_t>(c, "iterations", 3000);
  rc.step_size = Value<double>(c, "step_size", 0.1);
  rc.tolerance = Value<double>(c, "tolerance", 1e-28);
  rc.init_seed = DeriveKey(seed, {3});
  rc.privatized = Value<bool>(c, "privatized", false);
  rc.clip_norm = Value<double>(c, "clip_norm", 1.0);
  const double sigma = Value<double>(c, "sigma", 0.0);
  auto lg = models::LossAndGrad(spec, params, x,
                                models::SmoothedOneHot(label, spec.num_outputs, 0.0));
  if (!lg.ok()) return lg.status();
  rc.target_gradient = lg->grad;
  if (rc.privatized) {
    privatizer::PerExampleGradients pg{Matrix(1, spec.NumParams()), {}};
    pg.rows.data = lg->grad;
    auto noisy = privatizer::PrivatizeFlat(pg, {rc.clip_norm}, {sigma, DeriveKey(seed, {2})}, 1);
    Check(noisy.status());
    rc.target_gradient = *noisy;
  }
  Check(rc.Validate());
  auto r = attacks::Reconstruct(spec, params, rc);
  if (!r.ok()) return r.status();
  std::string cand = "index,candidate,truth\n";
  for (size_t j = 0; j < x.size(); ++j) {
    absl::StrAppend(&cand, j, ",", Num(r->candidate[j]), ",", Num(x[j]), "\n");
  }
  std::string trace = "iteration,objective\n";
  for (size_t i = 0; i < r->trace.size(); ++i) {
    absl::StrAppend(&trace, i, ",", Num(r->trace[i]), "\n");
  }
  double guess = 0.0;
  for (uint64_t s = 0; s < 100; ++s) {
    guess += attacks::MeanSquaredError(
        attacks::RandomInit(spec.input_dim, DeriveKey(seed, {4, s}), 1.0), x);
  }
  json res{{"mse", attacks::MeanSquaredError(r->candidate, x)},
           {"random_guess_mse", guess / 100.0},
           {"final_objective", r->trace.back()},
           {"iterations_run", r->trace.size() - 1},
           {"diverged", r->diverged},
           {"converged", r->converged},
           {"privatized", rc.privatized},
           {"sigma", sigma}};
  if (spec.arch == models::Architecture::kLinear) {
    auto closed = attacks::InvertLinearFlat(spec, rc.target_gradient);
    res["closed_form_mse"] =
        closed.ok() ? json(attacks::MeanSquaredError(*closed, x)) : json(nullptr);
  }
  if (auto st = out.Write("attack_candidate.csv", cand); !st.ok()) return st;
  if (auto st = out.Write("attack_trace.csv", trace); !st.ok()) return st;
  if (auto st = out.WriteJson("attack.json", res); !st.ok()) return st;
  Outcome o;
  o.result = res;
  return o;
}

// ------------------------------------------------------------- fairness

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable ReadCsvTable(const std::string& path) {
  auto text = data::ReadFile(path);
  Check(text.status());
  CsvTable t;
  int64_t line_no = 0;
  for (absl::string_view line : absl::StrSplit(*text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string> cells = absl::StrSplit(line, ',');
    if (line_no++ == 0) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw ConfigError{absl::InvalidArgumentError(absl::StrCat(
          path, ": row ", line_no - 1, " has ", cells.size(), " cells, header has ",
          t.header.size()))};
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) {
    throw ConfigError{absl::InvalidArgumentError(absl::StrCat(path, " is empty"))};
  }
  return t;
}

inline double ParseCell(const std::string& path, const std::string& cell) {
  double v = 0;
  if (!absl::SimpleAtod(cell, &v)) {
    throw ConfigError{absl::InvalidArgumentError(
        absl::StrCat(path, ": '", cell, "' is not a number"))};
  }
  return v;
}

inline std::string DisparityCsv(std::span<const fairness::DisparityRecord> records) {
  std::string s =
      "seed,epsilon_tag,subgroup,group_size,group_auc,population_auc,disparity,small,undefined\n";
  for (const auto& r : records) {
    absl::StrAppend(&s, r.seed, ",", Num(r.epsilon_tag), ",", r.subgroup_key, ",",
                    r.group_size, ",", Num(r.group_auc), ",", Num(r.population_auc), ",",
                    Num(r.disparity), ",", r.small ? 1 : 0, ",", r.undefined ? 1 : 0, "\n");
  }
  return s;
}

inline json FitJson(const fairness::RegressionFit& f, const std::string& x, const std::string& y) {
  return {{"x", x},
          {"y", y},
          {"slope", f.slope},
          {"intercept", f.intercept},
          {"ci_low", f.ci_low},
          {"ci_high", f.ci_high},
          {"resamples", f.resamples},
          {"confidence", 0.95}};
}

inline std::vector<Flag> FairnessFlags() {
  return {{"--synthetic", "/synthetic", FlagKind::kBool, "run the synthetic multi-seed study"},
          {"--scores", "/scores", FlagKind::kString, "scores CSV (one column per class)"},
          {"--labels", "/labels", FlagKind::kString, "labels CSV"},
          {"--attributes", "/attributes", FlagKind::kString, "attributes CSV"},
          {"--seeds", "/seeds", FlagKind::kInteger, "synthetic: number of seeds"},
          {"--epsilon", "/epsilon", FlagKind::kNumber, "synthetic: private epsilon"},
          {"--epsilon-tag", "/epsilon_tag", FlagKind::kNumber, "csv: epsilon of the model"}};
}

inline absl::StatusOr<Outcome> RunFairnessSynthetic(const json& c, uint64_t seed,
                                                    Outputs& out) {
  study::SubgroupStudyOptions o;
  o.seeds = Value<int64_t>(c, "seeds", o.seeds);
  o.population = Value<int64_t>(c, "population", o.population);
  o.dim = Value<int64_t>(c, "dim", o.dim);
  o.epsilon = Value<double>(c, "epsilon", o.epsilon);
  o.delta = Value<double>(c, "delta", o.delta);
  o.batch = Value<int64_t>(c, "batch", o.batch);
  o.steps = Value<int64_t>(c, "steps", o.steps);
  o.learning_rate = Value<double>(c, "learning_rate", o.learning_rate);
  o.min_group_size = Value<int64_t>(c, "min_group_size", o.min_group_size);
  o.bootstrap = Value<int64_t>(c, "bootstrap", o.bootstrap);
  o.data_seed = seed;
  auto r = study::RunSubgroupStudy(o);
  if (!r.ok()) return r.status();
  std::string summary = "epsilon_tag,subgroup,seeds,mean_group_size,mean_group_auc,mean_disparity,std_disparity\n";
  for (const auto& s : r->summaries) {
    absl::StrAppend(&summary, Num(s.epsilon_tag), ",", s.subgroup_key, ",", s.seeds, ",",
                    Num(s.mean_group_size), ",", Num(s.mean_group_auc), ",",
                    Num(s.mean_disparity), ",", Num(s.std_disparity), "\n");
  }
  std::string scatter = "subgroup,group_size,nonprivate_disparity,private_disparity\n";
  std::string gap = "subgroup,group_size,gap,fit\n";
  for (const auto& g : r->gaps) {
    absl::StrAppend(&scatter, g.subgroup_key, ",", Num(g.group_size), ",",
                    Num(g.public_disparity), ",", Num(g.private_disparity), "\n");
    absl::StrAppend(&gap, g.subgroup_key, ",", Num(g.group_size), ",", Num(g.gap), ",",
                    Num(r->gap_fit.intercept + r->gap_fit.slope * g.group_size), "\n");
  }
  json reg = FitJson(r->gap_fit, "group_size", "private_minus_nonprivate_disparity");
  reg["private_accuracy"] = r->private_accuracy;
  reg["nonprivate_accuracy"] = r->public_accuracy;
  reg["sigma"] = r->sigma;
  for (const auto& [name, body] : std::vector<std::pair<std::string, std::string>>{
           {"disparity.csv", DisparityCsv(r->records)},
           {"disparity_summary.csv", summary},
           {"panel_scatter.csv", scatter},
           {"panel_gap.csv", gap}}) {
    if (auto st = out.Write(name, body); !st.ok()) return st;
  }
  if (auto st = out.WriteJson("regression.json", reg); !st.ok()) return st;
  Outcome oc;
  oc.result = reg;
  oc.nominal_budget = {{"epsilon", o.epsilon}, {"delta", o.delta > 0 ? json(o.delta) : json("1/N")}};
  return oc;
}

inline absl::StatusOr<Outcome> RunFairnessCsv(const json& c, uint64_t seed, Outputs& out) {
  const auto scores_path = Required<std::string>(c, "scores");
  const auto labels_path = Required<std::string>(c, "labels");
  const auto attr_path = Required<std::string>(c, "attributes");
  const CsvTable st = ReadCsvTable(scores_path);
  const CsvTable lt = ReadCsvTable(labels_path);
  const CsvTable at = ReadCsvTable(attr_path);
  const auto n = static_cast<int64_t>(st.rows.size());
  const auto k = static_cast<int64_t>(st.header.size());
  if (static_cast<int64_t>(lt.rows.size()) != n || static_cast<int64_t>(at.rows.size()) != n) {
    throw ConfigError{absl::InvalidArgumentError(absl::StrCat(
        "row counts differ: scores ", n, ", labels ", lt.rows.size(), ", attributes ",
        at.rows.size()))};
  }
  Matrix scores(n, k);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < k; ++j) scores(i, j) = ParseCell(scores_path, st.rows[i][j]);
  }
  std::vector<int32_t> labels;
  if (lt.header.size() == 1) {
    std::vector<int32_t> cls;
    for (const auto& row : lt.rows) {
      const double v = ParseCell(labels_path, row[0]);
      if (v < 0 || v >= k || v != std::floor(v)) {
        throw ConfigError{absl::InvalidArgumentError(
            absl::StrCat(labels_path, ": class id ", row[0], " out of range"))};
      }
      cls.push_back(static_cast<int32_t>(v));
    }
    labels = fairness::OneHotLabels(cls, k);
  } else if (static_cast<int64_t>(lt.header.size()) == k) {
    for (const auto& row : lt.rows) {
      for (const auto& cell : row) labels.push_back(ParseCell(labels_path, cell) > 0.5 ? 1 : 0);
    }
  } else {
    throw ConfigError{absl::InvalidArgumentError(
        "labels CSV needs one class-id column or one indicator column per score column")};
  }
  data::Dataset attrs;
  attrs.features = Matrix(n, 0);
  for (size_t a = 0; a < at.header.size(); ++a) {
    std::set<std::string> cats;
    for (const auto& row : at.rows) cats.insert(row[a]);
    attrs.attributes.push_back({at.header[a], {cats.begin(), cats.end()}});
  }
  for (const auto& row : at.rows) {
    for (size_t a = 0; a < row.size(); ++a) {
      const auto& cats = attrs.attributes[a].categories;
      attrs.attribute_codes.push_back(static_cast<int32_t>(
          std::lower_bound(cats.begin(), cats.end(), row[a]) - cats.begin()));
    }
  }
  fairness::DisparityOptions d;
  d.min_group_size = Value<int64_t>(c, "min_group_size", 10);
  d.seed = static_cast<int64_t>(seed);
  d.epsilon_tag = Value<double>(c, "epsilon_tag", kInf);
  for (const auto& inter : Value<std::vector<std::vector<std::string>>>(c, "intersections", {})) {
    std::vector<size_t> idx;
    for (const auto& name : inter) {
      auto it = std::find(at.header.begin(), at.header.end(), name);
      if (it == at.header.end()) {
        throw ConfigError{absl::InvalidArgumentError(
            absl::StrCat("intersection names unknown attribute '", name, "'"))};
      }
      idx.push_back(static_cast<size_t>(it - at.header.begin()));
    }
    d.intersections.push_back(idx);
  }
  auto table = fairness::DisparityTable(scores, labels, attrs, d);
  if (!table.ok()) return table.status();
  std::vector<double> x;
  std::vector<double> y;
  std::string scatter = "subgroup,group_size,group_auc,population_auc\n";
  for (const auto& r : *table) {
    absl::StrAppend(&scatter, r.subgroup_key, ",", r.group_size, ",", Num(r.group_auc), ",",
                    Num(r.population_auc), "\n");
    if (r.undefined) continue;
    x.push_back(static_cast<double>(r.group_size));
    y.push_back(r.disparity);
  }
  json reg = nullptr;
  std::string gap = "subgroup,group_size,disparity,fit\n";
  auto fit = fairness::OlsBootstrap(x, y, Value<int64_t>(c, "bootstrap", 1000), 0.95, seed);
  for (const auto& r : *table) {
    if (r.undefined) continue;
    absl::StrAppend(&gap, r.subgroup_key, ",", r.group_size, ",", Num(r.disparity), ",",
                    fit.ok() ? Num(fit->intercept + fit->slope * r.group_size) : "nan", "\n");
  }
  if (fit.ok()) reg = FitJson(*fit, "group_size", "disparity");
  json res{{"population_auc", table->empty() ? json(nullptr) : json(table->front().population_auc)},
           {"subgroups", table->size()},
           {"regression", reg}};
  if (!fit.ok()) res["regression_error"] = std::string(fit.status().message());
  for (const auto& [name, body] : std::vector<std::pair<std::string, std::string>>{
           {"disparity.csv", DisparityCsv(*table)},
           {"panel_scatter.csv", scatter},
           {"panel_gap.csv", gap}}) {
    if (auto s = out.Write(name, body); !s.ok()) return s;
  }
  if (auto s = out.WriteJson("regression.json", res); !s.ok()) return s;
  Outcome o;
  o.result = res;
  return o;
}

inline absl::StatusOr<Outcome> RunFairness(const json& c, uint64_t seed, Outputs& out) {
  if (Value<bool>(c, "synthetic", false)) return RunFairnessSynthetic(c, seed, out);
  return RunFairnessCsv(c, seed, out);
}

// ------------------------------------------------------------- report

inline json LoadManifest(const std::string& path) {
  auto text = data::ReadFile(path);
  Check(text.status());
  json m = json::parse(*text, nullptr, false);
  if (m.is_discarded() || !m.is_object() || !m.contains("outputs")) {
    throw ConfigError{absl::InvalidArgumentError(
        absl::StrCat(path, " is not a run manifest"))};
  }
  return m;
}

inline bool EndsWith(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline absl::StatusOr<Outcome> RunReport(const std::vector<std::string>& manifests,
                                         Outputs& out) {
  std::vector<fairness::DisparityRecord> records;
  std::vector<std::string> disparity_files;
  std::vector<std::string> header_of;
  std::vector<double> eps_lower;
  std::vector<std::string> audit_files;
  std::vector<double> nominal;
  for (const auto& mpath : manifests) {
    const json m = LoadManifest(mpath);
    for (const auto& o : m.at("outputs")) {
      const auto path = o.get<std::string>();
      if (EndsWith(path, "disparity.csv")) {
        auto text = data::ReadFile(path);
        if (!text.ok()) return text.status();
        std::vector<std::string> lines = absl::StrSplit(*text, '\n', absl::SkipEmpty());
        if (lines.empty()) return absl::DataLossError(absl::StrCat(path, " is empty"));
        disparity_files.push_back(path);
        header_of.push_back(lines[0]);
        if (lines[0] != header_of[0]) continue;  // reported below
        for (size_t i = 1; i < lines.size(); ++i) {
          std::vector<std::string> c = absl::StrSplit(lines[i], ',');
          if (c.size() != 9) {
            return absl::DataLossError(absl::StrCat(path, ": malformed row ", i));
          }
          fairness::DisparityRecord r;
          double v = 0;
          r.seed = absl::SimpleAtod(c[0], &v) ? static_cast<int64_t>(v) : 0;
          r.epsilon_tag = c[1] == "inf" ? kInf : (absl::SimpleAtod(c[1], &v) ? v : 0.0);
          r.subgroup_key = c[2];
          r.group_size = absl::SimpleAtod(c[3], &v) ? static_cast<int64_t>(v) : 0;
          absl::SimpleAtod(c[4], &r.group_auc);
          absl::SimpleAtod(c[5], &r.population_auc);
          absl::SimpleAtod(c[6], &r.disparity);
          r.small = c[7] == "1";
          r.undefined = c[8] == "1";
          records.push_back(r);
        }
      } else if (EndsWith(path, "audit.json")) {
        auto text = data::ReadFile(path);
        if (!text.ok()) return text.status();
        const json a = json::parse(*text, nullptr, false);
        if (a.is_discarded() || !a.contains("epsilon_lower")) {
          return absl::DataLossError(absl::StrCat(path, " is not an audit result"));
        }
        audit_files.push_back(path);
        eps_lower.push_back(a.at("epsilon_lower").get<double>());
        nominal.push_back(a.value("nominal_epsilon", 0.0));
      }
    }
  }
  std::vector<std::string> bad;
  for (size_t i = 0; i < header_of.size(); ++i) {
    if (header_of[i] != header_of[0]) bad.push_back(disparity_files[i]);
  }
  if (!bad.empty()) {
    return absl::FailedPreconditionError(absl::StrCat(
        "conflicting disparity schemas; expected the header of ", disparity_files[0],
        ", offending files: ", absl::StrJoin(bad, ", ")));
  }
  std::string text = absl::StrCat("dpforge report over ", manifests.size(), " manifest(s)\n");
  json res{{"manifests", manifests.size()}};
  if (!records.empty()) {
    const auto summary = study::SummarizeDisparities(records);
    std::string csv =
        "epsilon_tag,subgroup,seeds,mean_group_size,mean_group_auc,mean_disparity,std_disparity\n";
    absl::StrAppend(&text, "\nAUC disparity (population minus subgroup) from ",
                    disparity_files.size(), " file(s)\n");
    absl::StrAppend(&text, "epsilon   subgroup                        seeds  size      mean      std\n");
    for (const auto& s : summary) {
      absl::StrAppend(&csv, Num(s.epsilon_tag), ",", s.subgroup_key, ",", s.seeds, ",",
                      Num(s.mean_group_size), ",", Num(s.mean_group_auc), ",",
                      Num(s.mean_disparity), ",", Num(s.std_disparity), "\n");
      char line[160];
      std::snprintf(line, sizeof(line), "%-9s %-31s %5lld %6.0f %9.4f %8.4f\n",
                    std::isinf(s.epsilon_tag) ? "inf" : Num(s.epsilon_tag).c_str(),
                    s.subgroup_key.c_str(), static_cast<long long>(s.seeds),
                    s.mean_group_size, s.mean_disparity, s.std_disparity);
      text += line;
    }
    if (auto st = out.Write("report_disparity_summary.csv", csv); !st.ok()) return st;
    res["disparity_groups"] = summary.size();
  }
  if (!eps_lower.empty()) {
    std::string csv = "file,nominal_epsilon,epsilon_lower\n";
    double mean = 0.0;
    for (size_t i = 0; i < eps_lower.size(); ++i) {
      absl::StrAppend(&csv, audit_files[i], ",", Num(nominal[i]), ",", Num(eps_lower[i]), "\n");
      mean += eps_lower[i] / static_cast<double>(eps_lower.size());
    }
    double ss = 0.0;
    for (double e : eps_lower) ss += (e - mean) * (e - mean);
    const double sd = eps_lower.size() > 1 ? std::sqrt(ss / (eps_lower.size() - 1.0)) : 0.0;
    absl::StrAppend(&text, "\nAudits: ", eps_lower.size(), ", epsilon_lower mean ", Num(mean),
                    ", std ", Num(sd), "\n");
    if (auto st = out.Write("report_audit_summary.csv", csv); !st.ok()) return st;
    res["audits"] = eps_lower.size();
    res["epsilon_lower_mean"] = mean;
    res["epsilon_lower_std"] = sd;
  }
  if (records.empty() && eps_lower.empty()) {
    absl::StrAppend(&text, "\nNo fairness or audit outputs found; nothing to merge.\n");
  }
  if (auto st = out.Write("report.txt", text); !st.ok()) return st;
  Outcome o;
  o.result = res;
  return o;
}

// ------------------------------------------------------------- driver

struct Command {
  std::string name;
  std::string help;
  std::vector<Flag> flags;
  std::function<absl::StatusOr<Outcome>(const json&, uint64_t, Outputs&)> run;
};

inline std::vector<Command> Commands() {
  return {
      {"calibrate", "noise multiplier for a privacy budget (or epsilon for a sigma)",
       CalibrateFlags(), RunCalibrate},
      {"train", "DP-SGD training with checkpoints and traces", TrainFlags(), RunTrain},
      {"audit", "empirical epsilon lower bound by canary membership inference",
       AuditFlags(), RunAuditCommand},
      {"interpret", "MIA region, advantage bound and crowd threshold", InterpretFlags(),
       RunInterpret},
      {"attack", "gradient-inversion reconstruction of one example", AttackFlags(), RunAttack},
      {"fairness", "subgroup AUC disparity tables and regression", FairnessFlags(),
       RunFairness},
  };
}

inline int Run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"dpforge: differentially private training and analysis toolkit", "dpforge"};
  app.require_subcommand(1);
  std::vector<Command> commands = Commands();
  std::map<std::string, Invocation> inv;
  std::map<std::string, CLI::App*> subs;
  auto add_common = [&](CLI::App* sub, Invocation& i) {
    sub->add_option("--config", i.config_path, "JSON config file");
    sub->add_option("--seed", i.seed_text, "master seed (default: $DPFORGE_SEED or 0)");
    sub->add_option("--out", i.out_dir, "output directory")->capture_default_str();
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    Invocation& i = inv[c.name];
    add_common(sub, i);
    for (const auto& f : c.flags) {
      if (f.kind == FlagKind::kBool) {
        sub->add_flag_callback(f.name, [&i, p = f.pointer] { i.switches[p] = true; }, f.help);
      } else {
        sub->add_option_function<std::string>(
            f.name, [&i, p = f.pointer](const std::string& v) { i.values[p] = v; }, f.help);
      }
    }
    subs[c.name] = sub;
  }
  CLI::App* report = app.add_subcommand("report", "merge per-seed outputs of earlier runs");
  add_common(report, inv["report"]);
  report->add_option("manifests", inv["report"].positional, "run manifest files");
  subs["report"] = report;

  if (argc <= 1) {
    err << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    for (auto* s : app.get_subcommands()) out << s->help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    auto parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitUsage;
  }
  const std::string name = app.get_subcommands().front()->get_name();
  Invocation& i = inv[name];
  const auto start = std::chrono::steady_clock::now();
  std::vector<Flag> flags;
  for (const auto& c : commands) {
    if (c.name == name) flags = c.flags;
  }
  json config;
  uint64_t seed = 0;
  try {
    config = MergeConfig(i, flags);
    seed = ResolveSeed(i);
    if (name == "report" && i.positional.empty()) {
      throw ConfigError{absl::InvalidArgumentError("report needs at least one manifest")};
    }
    std::error_code ec;
    std::filesystem::create_directories(i.out_dir, ec);
    if (ec) {
      throw ConfigError{absl::InvalidArgumentError(
          absl::StrCat("cannot create output directory ", i.out_dir, ": ", ec.message()))};
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.status.message() << "\n" << subs[name]->help();
    return kExitUsage;
  }
  Outputs outputs(i.out_dir);
  absl::StatusOr<Outcome> result;
  try {
    if (name == "report") {
      config["manifests"] = i.positional;
      result = RunReport(i.positional, outputs);
    } else {
      for (const auto& c : commands) {
        if (c.name == name) result = c.run(config, seed, outputs);
      }
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.status.message() << "\n";
    return kExitUsage;
  }
  if (!result.ok()) {
    err << "error: " << result.status().message() << "\n";
    return kExitCompute;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json manifest{{"subcommand", name},
                {"schema_version", kSchemaVersion},
                {"config", config},
                {"config_hash", Sha256Hex(CanonicalJson(config))},
                {"seed", seed},
                {"outputs", outputs.paths()},
                {"nominal_budget", result->nominal_budget},
                {"wall_time", wall}};
  if (auto st = data::WriteFile(
          (std::filesystem::path(i.out_dir) / ("manifest_" + name + ".json")).string(),
          manifest.dump(2) + "\n");
      !st.ok()) {
    err << "error: " << st.message() << "\n";
    return kExitCompute;
  }
  out << result->result.dump(2) << "\n";
  if (result->inconclusive) {
    err << "audit inconclusive: no evidence that epsilon exceeds 0 at this confidence\n";
    return kExitInconclusive;
  }
  return kExitOk;
}

}  // namespace dpforge::cli

#endif  // DPFORGE_TOOLS_CLI_HPP_
