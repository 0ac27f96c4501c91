#pragma once

// Run configuration: one JSON document with nested sections. Every field is
// validated before any compute, unknown keys are rejected, and all problems
// are reported together.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsnaco/eval.hpp"

namespace gsnaco {

class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : std::invalid_argument(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "invalid configuration:";
    for (const auto& m : p) s += "\n  - " + m;
    return s;
  }
  std::vector<std::string> problems_;
};

struct StageConfig {
  std::size_t epochs = 60;
  double base_lr = 0.01;
  std::size_t warmup = 10;
};

struct RunConfig {
  std::string family = "gsn";  // gsn | egoaco | gsn+egoaco
  std::uint64_t seed = 0;
  bool float64 = false;

  BackboneConfig backbone;
  VocabSizes vocab{5, 3, 15};
  double dropout = 0.5;
  std::size_t memory_size = 16;
  std::size_t pooling_classes = 8;
  double attention_recurrence = 1.0;

  std::size_t train_frames = 16;
  std::size_t test_frames = 16;

  std::size_t batch_size = 8;
  bool augment = true;
  SgdConfig sgd;
  std::vector<StageConfig> stages{{60, 0.01, 10}};

  bool two_clip = true;
  bool fully_conv = false;
  std::size_t short_side = 0;

  std::string data_dir;
};

/// Recipe defaults per family: GSN 16 frames, one 60-epoch stage; EgoACO 20
/// frames, stages of 60/60/30 epochs at 0.01/0.01/1e-4.
inline RunConfig default_config(const std::string& family) {
  RunConfig c;
  c.family = family;
  if (family == "egoaco" || family == "gsn+egoaco") {
    c.backbone.use_gsm = family == "gsn+egoaco";
    c.train_frames = c.test_frames = 20;
    c.stages = {{60, 0.01, default_warmup(60)}, {60, 0.01, default_warmup(60)}, {30, 1e-4, default_warmup(30)}};
  }
  return c;
}

namespace config_detail {

using nlohmann::json;

class Reader {
 public:
  std::vector<std::string> problems;

  // Flags keys of `obj` outside `allowed`.
  void keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
      problems.push_back(where + ": expected an object");
      return;
    }
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : obj.items())
      if (!ok.count(k)) problems.push_back(where + ": unknown key '" + k + "'");
  }

  template <class V>
  void get(const json& obj, const char* key, const std::string& where, V& out) {
    if (!obj.is_object() || !obj.contains(key)) return;
    const auto& v = obj.at(key);
    const std::string path = where + "." + key;
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) return fail(path, "expected true/false");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
        return fail(path, "expected a non-negative integer");
      }
      out = v.get<V>();
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) return fail(path, "expected a number");
      out = v.get<V>();
    } else {
      if (!v.is_string()) return fail(path, "expected a string");
      out = v.get<std::string>();
    }
  }

  void check(bool ok, const std::string& msg) {
    if (!ok) problems.push_back(msg);
  }

 private:
  void fail(const std::string& path, const std::string& what) { problems.push_back(path + ": " + what); }
};

}  // namespace config_detail

/// Parses and validates a run configuration. Missing fields take the
/// family's recipe defaults.
inline RunConfig parse_config(const nlohmann::json& j) {
  using nlohmann::json;
  config_detail::Reader rd;
  if (!j.is_object()) throw ConfigError({"top level: expected an object"});
  rd.keys(j, "config", {"family", "seed", "dtype", "backbone", "model", "sampler", "training", "inference", "data"});

  std::string family = "gsn";
  rd.get(j, "family", "config", family);
  const bool family_ok = family == "gsn" || family == "egoaco" || family == "gsn+egoaco";
  rd.check(family_ok, "config.family: must be one of gsn, egoaco, gsn+egoaco (got '" + family + "')");
  RunConfig c = default_config(family_ok ? family : "gsn");
  c.family = family;

  rd.get(j, "seed", "config", c.seed);
  std::string dtype = "float32";
  rd.get(j, "dtype", "config", dtype);
  rd.check(dtype == "float32" || dtype == "float64", "config.dtype: must be float32 or float64");
  c.float64 = dtype == "float64";
  rd.get(j, "data", "config", c.data_dir);

  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    rd.keys(b, "backbone", {"stem_channels", "stem_stride", "blocks"});
    rd.get(b, "stem_channels", "backbone", c.backbone.stem_channels);
    rd.get(b, "stem_stride", "backbone", c.backbone.stem_stride);
    if (b.is_object() && b.contains("blocks")) {
      if (!b["blocks"].is_array()) {
        rd.check(false, "backbone.blocks: expected an array");
      } else {
        c.backbone.blocks.clear();
        for (std::size_t i = 0; i < b["blocks"].size(); ++i) {
          const auto& e = b["blocks"][i];
          const std::string where = "backbone.blocks[" + std::to_string(i) + "]";
          rd.keys(e, where, {"channels", "stride"});
          BlockSpec s;
          rd.get(e, "channels", where, s.channels);
          rd.get(e, "stride", where, s.stride);
          c.backbone.blocks.push_back(s);
        }
      }
    }
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    rd.keys(m, "model", {"verbs", "nouns", "actions", "dropout", "memory_size", "pooling_classes",
                         "attention_recurrence"});
    rd.get(m, "verbs", "model", c.vocab.verbs);
    rd.get(m, "nouns", "model", c.vocab.nouns);
    rd.get(m, "actions", "model", c.vocab.actions);
    rd.get(m, "dropout", "model", c.dropout);
    rd.get(m, "memory_size", "model", c.memory_size);
    rd.get(m, "pooling_classes", "model", c.pooling_classes);
    rd.get(m, "attention_recurrence", "model", c.attention_recurrence);
  }
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    rd.keys(s, "sampler", {"train_frames", "test_frames"});
    rd.get(s, "train_frames", "sampler", c.train_frames);
    rd.get(s, "test_frames", "sampler", c.test_frames);
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    rd.keys(t, "training", {"batch_size", "augment", "momentum", "weight_decay", "stages"});
    rd.get(t, "batch_size", "training", c.batch_size);
    rd.get(t, "augment", "training", c.augment);
    rd.get(t, "momentum", "training", c.sgd.momentum);
    rd.get(t, "weight_decay", "training", c.sgd.weight_decay);
    if (t.is_object() && t.contains("stages")) {
      if (!t["stages"].is_array()) {
        rd.check(false, "training.stages: expected an array");
      } else {
        c.stages.clear();
        for (std::size_t i = 0; i < t["stages"].size(); ++i) {
          const auto& e = t["stages"][i];
          const std::string where = "training.stages[" + std::to_string(i) + "]";
          rd.keys(e, where, {"epochs", "base_lr", "warmup"});
          StageConfig s;
          rd.get(e, "epochs", where, s.epochs);
          rd.get(e, "base_lr", where, s.base_lr);
          s.warmup = default_warmup(s.epochs);
          rd.get(e, "warmup", where, s.warmup);
          c.stages.push_back(s);
        }
      }
    }
  }
  if (j.contains("inference")) {
    const auto& i = j["inference"];
    rd.keys(i, "inference", {"two_clip", "fully_conv", "short_side"});
    rd.get(i, "two_clip", "inference", c.two_clip);
    rd.get(i, "fully_conv", "inference", c.fully_conv);
    rd.get(i, "short_side", "inference", c.short_side);
  }

  // Cross-field constraints.
  const bool ego = c.family != "gsn";
  c.backbone.use_gsm = c.family != "egoaco";
  rd.check(c.backbone.stem_channels > 0 && c.backbone.stem_channels % 2 == 0,
           "backbone.stem_channels: must be a positive even number");
  rd.check(c.backbone.stem_stride >= 1, "backbone.stem_stride: must be >= 1");
  rd.check(!c.backbone.blocks.empty(), "backbone.blocks: at least one block is required");
  rd.check(!ego || c.backbone.blocks.size() >= 2, "backbone.blocks: EgoACO needs at least two blocks");
  for (std::size_t i = 0; i < c.backbone.blocks.size(); ++i) {
    const auto& b = c.backbone.blocks[i];
    rd.check(b.channels > 0 && b.channels % 2 == 0,
             "backbone.blocks[" + std::to_string(i) + "].channels: must be a positive even number");
    rd.check(b.stride >= 1, "backbone.blocks[" + std::to_string(i) + "].stride: must be >= 1");
  }
  rd.check(c.vocab.verbs >= 1 && c.vocab.nouns >= 1 && c.vocab.actions >= 1, "model: vocabulary sizes must be >= 1");
  rd.check(c.dropout >= 0.0 && c.dropout < 1.0, "model.dropout: must be in [0, 1)");
  rd.check(c.memory_size >= 1, "model.memory_size: must be >= 1");
  rd.check(c.pooling_classes >= 1, "model.pooling_classes: must be >= 1");
  rd.check(c.train_frames >= 1 && c.test_frames >= 1, "sampler: frame counts must be >= 1");
  rd.check(c.batch_size >= 1, "training.batch_size: must be >= 1");
  rd.check(c.sgd.momentum >= 0.0 && c.sgd.momentum < 1.0, "training.momentum: must be in [0, 1)");
  rd.check(c.sgd.weight_decay >= 0.0, "training.weight_decay: must be >= 0");
  const std::size_t want_stages = ego ? 3 : 1;
  rd.check(c.stages.size() == want_stages, "training.stages: family " + c.family + " needs exactly " +
                                               std::to_string(want_stages) + " stage(s), got " +
                                               std::to_string(c.stages.size()));
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    const auto& s = c.stages[i];
    const std::string where = "training.stages[" + std::to_string(i) + "]";
    rd.check(s.epochs >= 1, where + ".epochs: must be >= 1");
    rd.check(s.warmup < s.epochs, where + ".warmup: must be smaller than epochs");
    rd.check(s.base_lr > 0.0 && std::isfinite(s.base_lr), where + ".base_lr: must be positive");
  }
  if (!rd.problems.empty()) throw ConfigError(rd.problems);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError({"cannot open config file " + path});
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({path + ": " + e.what()});
  }
  return parse_config(j);
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : c.backbone.blocks) blocks.push_back({{"channels", b.channels}, {"stride", b.stride}});
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.stages) stages.push_back({{"epochs", s.epochs}, {"base_lr", s.base_lr}, {"warmup", s.warmup}});
  return {
      {"family", c.family},
      {"seed", c.seed},
      {"dtype", c.float64 ? "float64" : "float32"},
      {"data", c.data_dir},
      {"backbone", {{"stem_channels", c.backbone.stem_channels}, {"stem_stride", c.backbone.stem_stride}, {"blocks", blocks}}},
      {"model",
       {{"verbs", c.vocab.verbs},
        {"nouns", c.vocab.nouns},
        {"actions", c.vocab.actions},
        {"dropout", c.dropout},
        {"memory_size", c.memory_size},
        {"pooling_classes", c.pooling_classes},
        {"attention_recurrence", c.attention_recurrence}}},
      {"sampler", {{"train_frames", c.train_frames}, {"test_frames", c.test_frames}}},
      {"training",
       {{"batch_size", c.batch_size},
        {"augment", c.augment},
        {"momentum", c.sgd.momentum},
        {"weight_decay", c.sgd.weight_decay},
        {"stages", stages}}},
      {"inference", {{"two_clip", c.two_clip}, {"fully_conv", c.fully_conv}, {"short_side", c.short_side}}},
  };
}

inline GsnConfig gsn_config(const RunConfig& c) {
  return {c.backbone, c.vocab, c.dropout, c.seed};
}

inline EgoAcoConfig egoaco_config(const RunConfig& c) {
  EgoAcoConfig e;
  e.backbone = c.backbone;
  e.memory_size = c.memory_size;
  e.pooling_classes = c.pooling_classes;
  e.attention_recurrence = c.attention_recurrence;
  e.vocab = c.vocab;
  e.dropout = c.dropout;
  e.seed = c.seed;
  return e;
}

template <class T>
std::unique_ptr<VideoModel<T>> build_model(const RunConfig& c) {
  if (c.family == "gsn") return std::make_unique<GsnModel<T>>(gsn_config(c));
  return std::make_unique<EgoAcoModel<T>>(egoaco_config(c));
}

inline TrainOptions train_options(const RunConfig& c) {
  TrainOptions o;
  o.batch_size = c.batch_size;
  o.batch.sampler = {c.train_frames, SampleMode::random_per_segment};
  o.batch.augment = c.augment;
  o.sgd = c.sgd;
  return o;
}

inline InferOptions infer_options(const RunConfig& c) {
  InferOptions o;
  o.sampler = {c.test_frames, SampleMode::center_per_segment};
  o.two_clip = c.two_clip;
  o.fully_conv = c.fully_conv;
  o.short_side = c.short_side;
  return o;
}

}  // namespace gsnaco
