#pragma once

// Configuration schemas shared by every module, with strict JSON binding:
// unknown keys, wrong types and invalid values are all collected and
// reported together.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "coadain/errors.hpp"

namespace coadain {

using json = nlohmann::json;

/// Component index that holds vehicles in every dataset this project reads.
inline constexpr int kVehicleComponent = 0;

enum class Domain { rgb = 0, thermal = 1 };

inline Domain other(Domain d) { return d == Domain::rgb ? Domain::thermal : Domain::rgb; }
inline const char* domain_name(Domain d) { return d == Domain::rgb ? "a" : "b"; }

class ConfigError : public ValidationError {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : ValidationError(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "invalid configuration:";
    for (const auto& e : p) s += "\n  - " + e;
    return s;
  }
  std::vector<std::string> problems_;
};

struct ModelConfig {
  int num_components = 2;
  int style_dim = 8;
  int content_channels = 256;
  int base_filters = 64;
  int num_downsamples = 2;
  int num_res_blocks = 4;
  int image_height = 256;
  int image_width = 512;
  int rgb_channels = 3;
  int thermal_channels = 1;
  int discriminator_scales = 3;
  int discriminator_filters = 64;
  int mlp_hidden = 256;
  uint64_t seed = 1;

  int channels(Domain d) const { return d == Domain::rgb ? rgb_channels : thermal_channels; }
  int content_height() const { return image_height >> num_downsamples; }
  int content_width() const { return image_width >> num_downsamples; }

  /// Channel count after encoder stage j (0 = stem, j = 1..num_downsamples).
  int stage_channels(int j) const {
    if (j >= num_downsamples) return content_channels;
    return std::min(base_filters << j, content_channels);
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    auto at_least = [&](int v, int lo, const char* name) {
      if (v < lo) p.push_back(std::string("model.") + name + " must be >= " + std::to_string(lo));
    };
    at_least(num_components, 1, "num_components");
    if (num_components > 255) p.push_back("model.num_components must be <= 255");
    at_least(style_dim, 1, "style_dim");
    at_least(content_channels, 1, "content_channels");
    at_least(base_filters, 1, "base_filters");
    at_least(num_downsamples, 1, "num_downsamples");
    at_least(num_res_blocks, 0, "num_res_blocks");
    at_least(image_height, 1, "image_size[0]");
    at_least(image_width, 1, "image_size[1]");
    at_least(rgb_channels, 1, "rgb_channels");
    at_least(thermal_channels, 1, "thermal_channels");
    at_least(discriminator_scales, 1, "discriminator_scales");
    at_least(discriminator_filters, 1, "discriminator_filters");
    at_least(mlp_hidden, 1, "mlp_hidden");
    if (num_downsamples >= 1 && num_downsamples < 16 && image_height > 0 && image_width > 0) {
      const int f = 1 << num_downsamples;
      if (image_height % f != 0 || image_width % f != 0) {
        p.push_back("model.image_size must be divisible by 2^num_downsamples = " +
                    std::to_string(f));
      }
    }
    if (discriminator_scales >= 1 && discriminator_scales < 12 && image_height > 0 &&
        image_width > 0) {
      // three stride-2 convolutions per scale, one 2x pooling between scales
      const int f = 8 << (discriminator_scales - 1);
      if (image_height % f != 0 || image_width % f != 0) {
        p.push_back("model.image_size must be divisible by " + std::to_string(f) + " for " +
                    std::to_string(discriminator_scales) + " discriminator scales");
      }
    }
    return p;
  }

  void validate() const {
    auto p = problems();
    if (!p.empty()) throw ConfigError(std::move(p));
  }
};

struct LossWeights {
  double image_recon = 10.0;
  double content_recon = 1.0;
  double style_recon = 1.0;
  double adversarial = 1.0;
  double ocdp = 1.0;

  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    const std::pair<const char*, double> all[] = {{"w_image_recon", image_recon},
                                                  {"w_content_recon", content_recon},
                                                  {"w_style_recon", style_recon},
                                                  {"w_adv", adversarial},
                                                  {"w_ocdp", ocdp}};
    for (const auto& [name, v] : all) {
      if (!(v >= 0.0) || !std::isfinite(v)) p.push_back(std::string("loss.") + name + " must be >= 0");
    }
    return p;
  }
};

struct TrainConfig {
  int64_t iterations = 1000;
  int batch_size = 1;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double weight_decay = 1e-4;
  uint64_t seed = 1;
  int64_t checkpoint_every = 1000;
  int64_t log_every = 10;
  LossWeights loss_weights;

  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    if (iterations < 1) p.push_back("train.iterations must be >= 1");
    if (batch_size < 1) p.push_back("train.batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) p.push_back("train.learning_rate must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) p.push_back("train.adam_beta1 must be in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) p.push_back("train.adam_beta2 must be in [0, 1)");
    if (!(weight_decay >= 0.0)) p.push_back("train.weight_decay must be >= 0");
    if (checkpoint_every < 1) p.push_back("train.checkpoint_every must be >= 1");
    if (log_every < 1) p.push_back("train.log_every must be >= 1");
    auto lw = loss_weights.problems();
    p.insert(p.end(), lw.begin(), lw.end());
    return p;
  }

  void validate() const {
    auto p = problems();
    if (!p.empty()) throw ConfigError(std::move(p));
  }
};

struct DataConfig {
  std::string train_root;
  std::string test_root;
  /// segmentation label id -> component index
  std::map<int, int> label_map{{0, 0}, {1, 1}};
  double thermal_min = 0.0;
  double thermal_max = 65535.0;
  /// Geometry of the (already cropped) files on disk; resized to the model
  /// image size during preprocessing.
  int source_height = 0;
  int source_width = 0;
};

struct EvalConfig {
  int lpips_sources = 100;
  int lpips_pairs = 1000;
  int fid_samplings = 3;
  uint64_t seed = 0;
  std::string extractor;  // empty: built-in extractor
};

struct RunConfig {
  std::string run_dir = "runs/default";
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
};

// ---- JSON binding -----------------------------------------------------------

namespace detail {

class StrictObject {
 public:
  StrictObject(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) {
      errors_.push_back(path_ + " must be an object");
      ok_ = false;
    }
  }

  template <class V>
  void field(const char* key, V& out) {
    if (!ok_ || !j_.contains(key)) return;
    seen_.push_back(key);
    const json& v = j_.at(key);
    const std::string where = qualified(key);
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) return type_error(where, "a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer()) return type_error(where, "an integer");
      if constexpr (std::is_unsigned_v<V>) {
        if (v.is_number_unsigned() || v.get<int64_t>() >= 0) {
          out = v.get<V>();
        } else {
          errors_.push_back(where + " must be non-negative");
        }
      } else {
        out = v.get<V>();
      }
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) return type_error(where, "a number");
      out = v.get<V>();
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) return type_error(where, "a string");
      out = v.get<std::string>();
    } else {
      static_assert(sizeof(V) == 0, "unsupported field type");
    }
  }

  void size_pair(const char* key, int& h, int& w) {
    if (!ok_ || !j_.contains(key)) return;
    seen_.push_back(key);
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() ||
        !v[1].is_number_integer()) {
      return type_error(qualified(key), "a [height, width] integer pair");
    }
    h = v[0].get<int>();
    w = v[1].get<int>();
  }

  std::optional<StrictObject> object(const char* key) {
    if (!ok_ || !j_.contains(key)) return std::nullopt;
    seen_.push_back(key);
    return StrictObject(j_.at(key), qualified(key), errors_);
  }

  const json* raw(const char* key) {
    if (!ok_ || !j_.contains(key)) return nullptr;
    seen_.push_back(key);
    return &j_.at(key);
  }

  const std::string& path() const { return path_; }
  std::vector<std::string>& errors() { return errors_; }

  /// Reports every key that no field() call claimed.
  void finish() {
    if (!ok_) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        errors_.push_back("unknown key " + qualified(it.key().c_str()));
      }
    }
  }

 private:
  std::string qualified(const char* key) const {
    return path_.empty() ? std::string(key) : path_ + "." + key;
  }
  void type_error(const std::string& where, const char* expected) {
    errors_.push_back(where + " must be " + expected);
  }

  const json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::vector<std::string> seen_;
  bool ok_ = true;
};

inline void read_model(StrictObject& o, ModelConfig& m) {
  o.field("num_components", m.num_components);
  o.field("style_dim", m.style_dim);
  o.field("content_channels", m.content_channels);
  o.field("base_filters", m.base_filters);
  o.field("num_downsamples", m.num_downsamples);
  o.field("num_res_blocks", m.num_res_blocks);
  o.size_pair("image_size", m.image_height, m.image_width);
  o.field("rgb_channels", m.rgb_channels);
  o.field("thermal_channels", m.thermal_channels);
  o.field("discriminator_scales", m.discriminator_scales);
  o.field("discriminator_filters", m.discriminator_filters);
  o.field("mlp_hidden", m.mlp_hidden);
  o.field("seed", m.seed);
  o.finish();
}

inline void read_loss(StrictObject& o, LossWeights& w) {
  o.field("w_image_recon", w.image_recon);
  o.field("w_content_recon", w.content_recon);
  o.field("w_style_recon", w.style_recon);
  o.field("w_adv", w.adversarial);
  o.field("w_ocdp", w.ocdp);
  o.finish();
}

inline void read_train(StrictObject& o, TrainConfig& t) {
  o.field("iterations", t.iterations);
  o.field("batch_size", t.batch_size);
  o.field("learning_rate", t.learning_rate);
  o.field("adam_beta1", t.adam_beta1);
  o.field("adam_beta2", t.adam_beta2);
  o.field("weight_decay", t.weight_decay);
  o.field("seed", t.seed);
  o.field("checkpoint_every", t.checkpoint_every);
  o.field("log_every", t.log_every);
  o.finish();
}

inline void read_data(StrictObject& o, DataConfig& d) {
  o.field("train_root", d.train_root);
  o.field("test_root", d.test_root);
  if (const json* lm = o.raw("label_map")) {
    if (!lm->is_object()) {
      o.errors().push_back(o.path() + ".label_map must be an object of label -> component");
    } else {
      d.label_map.clear();
      for (auto it = lm->begin(); it != lm->end(); ++it) {
        int label = -1;
        try {
          size_t used = 0;
          label = std::stoi(it.key(), &used);
          if (used != it.key().size()) label = -1;
        } catch (const std::exception&) {
          label = -1;
        }
        if (label < 0 || label > 65535) {
          o.errors().push_back(o.path() + ".label_map key '" + it.key() +
                               "' is not a label id");
          continue;
        }
        if (!it.value().is_number_integer() || it.value().get<int>() < 0) {
          o.errors().push_back(o.path() + ".label_map[" + it.key() +
                               "] must be a non-negative component index");
          continue;
        }
        d.label_map[label] = it.value().get<int>();
      }
    }
  }
  o.field("thermal_min", d.thermal_min);
  o.field("thermal_max", d.thermal_max);
  o.size_pair("source_size", d.source_height, d.source_width);
  o.finish();
}

inline void read_eval(StrictObject& o, EvalConfig& e) {
  o.field("lpips_sources", e.lpips_sources);
  o.field("lpips_pairs", e.lpips_pairs);
  o.field("fid_samplings", e.fid_samplings);
  o.field("seed", e.seed);
  o.field("extractor", e.extractor);
  o.finish();
}

}  // namespace detail

inline json to_json(const ModelConfig& m) {
  return json{{"num_components", m.num_components},
              {"style_dim", m.style_dim},
              {"content_channels", m.content_channels},
              {"base_filters", m.base_filters},
              {"num_downsamples", m.num_downsamples},
              {"num_res_blocks", m.num_res_blocks},
              {"image_size", {m.image_height, m.image_width}},
              {"rgb_channels", m.rgb_channels},
              {"thermal_channels", m.thermal_channels},
              {"discriminator_scales", m.discriminator_scales},
              {"discriminator_filters", m.discriminator_filters},
              {"mlp_hidden", m.mlp_hidden},
              {"seed", m.seed}};
}

inline json to_json(const LossWeights& w) {
  return json{{"w_image_recon", w.image_recon},
              {"w_content_recon", w.content_recon},
              {"w_style_recon", w.style_recon},
              {"w_adv", w.adversarial},
              {"w_ocdp", w.ocdp}};
}

inline json to_json(const TrainConfig& t) {
  return json{{"iterations", t.iterations},     {"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate}, {"adam_beta1", t.adam_beta1},
              {"adam_beta2", t.adam_beta2},     {"weight_decay", t.weight_decay},
              {"seed", t.seed},                 {"checkpoint_every", t.checkpoint_every},
              {"log_every", t.log_every}};
}

inline json to_json(const DataConfig& d) {
  json lm = json::object();
  for (const auto& [label, comp] : d.label_map) lm[std::to_string(label)] = comp;
  json j{{"train_root", d.train_root}, {"test_root", d.test_root},
         {"label_map", lm},            {"thermal_min", d.thermal_min},
         {"thermal_max", d.thermal_max}};
  if (d.source_height > 0) j["source_size"] = {d.source_height, d.source_width};
  return j;
}

inline json to_json(const EvalConfig& e) {
  return json{{"lpips_sources", e.lpips_sources},
              {"lpips_pairs", e.lpips_pairs},
              {"fid_samplings", e.fid_samplings},
              {"seed", e.seed},
              {"extractor", e.extractor}};
}

inline json to_json(const RunConfig& r) {
  return json{{"run_dir", r.run_dir},
              {"model", to_json(r.model)},
              {"train", to_json(r.train)},
              {"loss", to_json(r.train.loss_weights)},
              {"data", to_json(r.data)},
              {"eval", to_json(r.eval)}};
}

inline ModelConfig model_config_from_json(const json& j) {
  std::vector<std::string> errors;
  ModelConfig m;
  detail::StrictObject o(j, "model", errors);
  detail::read_model(o, m);
  auto p = m.problems();
  errors.insert(errors.end(), p.begin(), p.end());
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return m;
}

/// Parses a full run configuration; every problem is reported at once.
inline RunConfig run_config_from_json(const json& j) {
  std::vector<std::string> errors;
  RunConfig r;
  detail::StrictObject root(j, "", errors);
  root.field("run_dir", r.run_dir);
  if (auto o = root.object("model")) detail::read_model(*o, r.model);
  if (auto o = root.object("train")) detail::read_train(*o, r.train);
  if (auto o = root.object("loss")) detail::read_loss(*o, r.train.loss_weights);
  if (auto o = root.object("data")) detail::read_data(*o, r.data);
  if (auto o = root.object("eval")) detail::read_eval(*o, r.eval);
  root.finish();

  auto add = [&](std::vector<std::string> p) { errors.insert(errors.end(), p.begin(), p.end()); };
  add(r.model.problems());
  add(r.train.problems());
  for (const auto& [label, comp] : r.data.label_map) {
    if (comp >= r.model.num_components) {
      errors.push_back("data.label_map[" + std::to_string(label) + "] = " + std::to_string(comp) +
                       " exceeds model.num_components");
    }
  }
  if (!(r.data.thermal_max > r.data.thermal_min)) {
    errors.push_back("data.thermal_max must exceed data.thermal_min");
  }
  if (r.eval.lpips_sources < 1) errors.push_back("eval.lpips_sources must be >= 1");
  if (r.eval.lpips_pairs < 1) errors.push_back("eval.lpips_pairs must be >= 1");
  if (r.eval.fid_samplings < 1) errors.push_back("eval.fid_samplings must be >= 1");
  if (r.run_dir.empty()) errors.push_back("run_dir must not be empty");
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return r;
}

}  // namespace coadain
