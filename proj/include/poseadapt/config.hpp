// Experiment configuration: one JSON document covering model, losses,
// training schedules, data generation, and evaluation.
//
// Parsing is strict: unknown keys anywhere in the document (or in a dotted
// CLI override path) raise an Error naming the offending key path, and type
// mismatches do the same. A partial document merges over the defaults, and
// the fully-resolved document can be serialized back out as a snapshot.
#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poseadapt/discrepancy.hpp"
#include "poseadapt/model.hpp"
#include "poseadapt/synth.hpp"

namespace poseadapt {

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

struct PretrainConfig {
  int epochs = 12;
  real lr = 1e-3;
  std::vector<int> decay_epochs = {8, 10};  // x decay_factor at each
  real decay_factor = 0.1;
};

struct AdaptConfig {
  int epochs = 4;
  real extractor_lr = 1e-3;
  real head_lr = 1e-2;
  real momentum = 0.9;
  real weight_decay = 1e-4;
  real poly_gamma = 1e-4;   // lr_i = lr0 * (1 + poly_gamma * i)^(-poly_power)
  real poly_power = 0.75;
  bool ground_false = true;  // false: realize the B-stage max by pure negation
};

struct DataConfig {
  int source_count = 2000;
  int target_count = 2000;
  int eval_count = 500;
  SkeletonSpec skeleton = default_skeleton();
  DomainShift source = source_shift();
  DomainShift target = target_shift();
  RenderConfig render;
};

struct EvalConfig {
  real threshold_ratio = 0.05;
  real norm_size = 64.0;  // image pixels; the PCK normalizer
  std::map<std::string, std::vector<int>> groups = {
      {"head", {0, 1}}, {"arms", {2, 3, 4, 5}}, {"torso_legs", {6, 7}}};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  VariantTag variant = VariantTag::idf;
  DlVariant dl_variant = DlVariant::mmd;
  std::string dl_terms = "both";  // none | inter | spec | both
  RelationMask relation_mask{true, true, true};
  bool symmetrize_r2 = false;
  real alpha1 = 0.5;
  real alpha2 = 0.5;
  real beta = 0.2;
  real gamma = 0.55;
  int batch_size = 8;
  PretrainConfig pretrain;
  AdaptConfig adapt;
  BackboneSpec backbone;  // input shape is derived from data.render
  CodecConfig codec;
  KernelConfig kernel;
  OksConfig oks;
  DataConfig data;
  EvalConfig eval;

  ExperimentConfig() {
    codec.soft_argmax_temperature = 0.05;  // experiment default; type default 1
    backbone.feature_channels = 48;
    backbone.depth = 4;
  }

  bool dl_enabled() const { return dl_terms != "none" && relation_mask.any(); }

  DiscrepancyConfig discrepancy() const {
    DiscrepancyConfig d;
    d.kernel = kernel;
    d.variant = dl_variant;
    d.mask = relation_mask;
    d.use_inter = dl_terms == "both" || dl_terms == "inter";
    d.use_spec = dl_terms == "both" || dl_terms == "spec";
    d.symmetrize_r2 = symmetrize_r2;
    return d;
  }

  // Fills the derived backbone input shape and checks cross-section
  // consistency. Called by the JSON loader; call it after programmatic edits.
  void finalize() {
    backbone.in_channels = 1;
    backbone.in_height = data.render.image_size;
    backbone.in_width = data.render.image_size;
    validate();
  }

  void validate() const {
    POSEADAPT_CHECK(alpha1 >= 0 && alpha2 >= 0 && beta >= 0 && gamma >= 0,
                    "stage-loss weights must be non-negative");
    POSEADAPT_CHECK(batch_size > 0, "batch_size must be positive");
    POSEADAPT_CHECK(dl_terms == "none" || dl_terms == "inter" ||
                        dl_terms == "spec" || dl_terms == "both",
                    "dl_terms must be none|inter|spec|both");
    POSEADAPT_CHECK(pretrain.epochs >= 0 && adapt.epochs >= 0,
                    "epoch counts must be non-negative");
    if (dl_terms != "none" && (beta > 0 || gamma > 0))
      POSEADAPT_CHECK(relation_mask.any(),
                      "relation_mask must be non-empty when the "
                      "discrepancy loss is enabled");
    POSEADAPT_CHECK(data.source_count > 0 && data.target_count > 0 &&
                        data.eval_count > 0,
                    "dataset counts must be positive");
    const int feat = data.render.image_size >> backbone.depth;
    POSEADAPT_CHECK(feat > 0 && feat * 4 == codec.heatmap_height &&
                        feat * 4 == codec.heatmap_width,
                    "image_size / 2^depth * 4 must equal the heatmap size");
    POSEADAPT_CHECK(real(data.render.image_size) ==
                        data.render.label_downscale * real(codec.heatmap_width),
                    "label_downscale must map the image onto the heatmap grid");
    for (const auto& [name, joints] : eval.groups)
      for (int j : joints)
        POSEADAPT_CHECK(j >= 0 && j < data.skeleton.joint_count,
                        "eval group '" + name + "' references joint " +
                            std::to_string(j) + " outside the skeleton");
  }
};

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"lr", c.lr},
       {"decay_epochs", c.decay_epochs},
       {"decay_factor", c.decay_factor}};
}
inline void from_json(const nlohmann::json& j, PretrainConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("lr").get_to(c.lr);
  j.at("decay_epochs").get_to(c.decay_epochs);
  j.at("decay_factor").get_to(c.decay_factor);
}

inline void to_json(nlohmann::json& j, const AdaptConfig& c) {
  j = {{"epochs", c.epochs},
       {"extractor_lr", c.extractor_lr},
       {"head_lr", c.head_lr},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"poly_gamma", c.poly_gamma},
       {"poly_power", c.poly_power},
       {"ground_false", c.ground_false}};
}
inline void from_json(const nlohmann::json& j, AdaptConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("extractor_lr").get_to(c.extractor_lr);
  j.at("head_lr").get_to(c.head_lr);
  j.at("momentum").get_to(c.momentum);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("poly_gamma").get_to(c.poly_gamma);
  j.at("poly_power").get_to(c.poly_power);
  j.at("ground_false").get_to(c.ground_false);
}

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"source_count", c.source_count},
       {"target_count", c.target_count},
       {"eval_count", c.eval_count},
       {"skeleton", c.skeleton},
       {"source_shift", c.source},
       {"target_shift", c.target},
       {"render", c.render}};
}
inline void from_json(const nlohmann::json& j, DataConfig& c) {
  j.at("source_count").get_to(c.source_count);
  j.at("target_count").get_to(c.target_count);
  j.at("eval_count").get_to(c.eval_count);
  j.at("skeleton").get_to(c.skeleton);
  j.at("source_shift").get_to(c.source);
  j.at("target_shift").get_to(c.target);
  j.at("render").get_to(c.render);
}

inline void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"threshold_ratio", c.threshold_ratio},
       {"norm_size", c.norm_size},
       {"groups", c.groups}};
}
inline void from_json(const nlohmann::json& j, EvalConfig& c) {
  j.at("threshold_ratio").get_to(c.threshold_ratio);
  j.at("norm_size").get_to(c.norm_size);
  j.at("groups").get_to(c.groups);
}

inline void to_json(nlohmann::json& j, const KernelConfig& c) {
  j = {{"kernel_count", c.kernel_count},
       {"bandwidth_multiplier", c.bandwidth_multiplier},
       {"median_bandwidth", c.median_bandwidth},
       {"fixed_base_bandwidth", c.fixed_base_bandwidth},
       {"unbiased", c.unbiased}};
}
inline void from_json(const nlohmann::json& j, KernelConfig& c) {
  j.at("kernel_count").get_to(c.kernel_count);
  j.at("bandwidth_multiplier").get_to(c.bandwidth_multiplier);
  j.at("median_bandwidth").get_to(c.median_bandwidth);
  j.at("fixed_base_bandwidth").get_to(c.fixed_base_bandwidth);
  j.at("unbiased").get_to(c.unbiased);
}

inline void to_json(nlohmann::json& j, const OksConfig& c) {
  j = {{"falloff", c.falloff},
       {"default_falloff", c.default_falloff},
       {"area", c.area},
       {"squared_distance", c.squared_distance}};
}
inline void from_json(const nlohmann::json& j, OksConfig& c) {
  j.at("falloff").get_to(c.falloff);
  j.at("default_falloff").get_to(c.default_falloff);
  j.at("area").get_to(c.area);
  j.at("squared_distance").get_to(c.squared_distance);
}

inline void to_json(nlohmann::json& j, const CodecConfig& c) {
  j = {{"sigma", c.sigma},
       {"temperature", c.soft_argmax_temperature},
       {"heatmap_height", c.heatmap_height},
       {"heatmap_width", c.heatmap_width}};
}
inline void from_json(const nlohmann::json& j, CodecConfig& c) {
  j.at("sigma").get_to(c.sigma);
  j.at("temperature").get_to(c.soft_argmax_temperature);
  j.at("heatmap_height").get_to(c.heatmap_height);
  j.at("heatmap_width").get_to(c.heatmap_width);
}

inline void to_json(nlohmann::json& j, const BackboneSpec& c) {
  j = {{"feature_channels", c.feature_channels}, {"depth", c.depth}};
}
inline void from_json(const nlohmann::json& j, BackboneSpec& c) {
  j.at("feature_channels").get_to(c.feature_channels);
  j.at("depth").get_to(c.depth);
}

namespace detail {

inline std::string variant_name(VariantTag v) { return to_string(v); }

inline VariantTag variant_from_name(const std::string& s) {
  if (s == "baseline") return VariantTag::baseline;
  if (s == "aidf") return VariantTag::aidf;
  if (s == "idf") return VariantTag::idf;
  throw Error("unknown variant: " + s);
}

inline std::string dl_variant_name(DlVariant v) {
  switch (v) {
    case DlVariant::mmd: return "mmd";
    case DlVariant::mse: return "mse";
    case DlVariant::kl: return "kl";
  }
  throw Error("unknown dl_variant");
}

inline DlVariant dl_variant_from_name(const std::string& s) {
  if (s == "mmd") return DlVariant::mmd;
  if (s == "mse") return DlVariant::mse;
  if (s == "kl") return DlVariant::kl;
  throw Error("unknown dl_variant: " + s);
}

inline std::vector<std::string> mask_names(const RelationMask& m) {
  std::vector<std::string> out;
  if (m.r1) out.push_back("r1");
  if (m.r2) out.push_back("r2");
  if (m.r3) out.push_back("r3");
  return out;
}

inline RelationMask mask_from_names(const std::vector<std::string>& names) {
  RelationMask m{false, false, false};
  for (const std::string& s : names) {
    if (s == "r1")
      m.r1 = true;
    else if (s == "r2")
      m.r2 = true;
    else if (s == "r3")
      m.r3 = true;
    else
      throw Error("unknown relation name: " + s);
  }
  return m;
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"seed", c.seed},
       {"variant", detail::variant_name(c.variant)},
       {"dl_variant", detail::dl_variant_name(c.dl_variant)},
       {"dl_terms", c.dl_terms},
       {"relation_mask", detail::mask_names(c.relation_mask)},
       {"symmetrize_r2", c.symmetrize_r2},
       {"alpha1", c.alpha1},
       {"alpha2", c.alpha2},
       {"beta", c.beta},
       {"gamma", c.gamma},
       {"batch_size", c.batch_size},
       {"pretrain", c.pretrain},
       {"adapt", c.adapt},
       {"backbone", c.backbone},
       {"codec", c.codec},
       {"kernel", c.kernel},
       {"oks", c.oks},
       {"data", c.data},
       {"eval", c.eval}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  j.at("seed").get_to(c.seed);
  c.variant = detail::variant_from_name(j.at("variant").get<std::string>());
  c.dl_variant =
      detail::dl_variant_from_name(j.at("dl_variant").get<std::string>());
  j.at("dl_terms").get_to(c.dl_terms);
  c.relation_mask = detail::mask_from_names(
      j.at("relation_mask").get<std::vector<std::string>>());
  j.at("symmetrize_r2").get_to(c.symmetrize_r2);
  j.at("alpha1").get_to(c.alpha1);
  j.at("alpha2").get_to(c.alpha2);
  j.at("beta").get_to(c.beta);
  j.at("gamma").get_to(c.gamma);
  j.at("batch_size").get_to(c.batch_size);
  j.at("pretrain").get_to(c.pretrain);
  j.at("adapt").get_to(c.adapt);
  j.at("backbone").get_to(c.backbone);
  j.at("codec").get_to(c.codec);
  j.at("kernel").get_to(c.kernel);
  j.at("oks").get_to(c.oks);
  j.at("data").get_to(c.data);
  j.at("eval").get_to(c.eval);
  c.finalize();
}

// ---------------------------------------------------------------------------
// Strict resolution: defaults <- file <- dotted overrides
// ---------------------------------------------------------------------------

namespace detail {

// Paths whose objects accept arbitrary keys (free-form maps).
inline bool free_form_path(const std::string& path) {
  return path == "eval.groups";
}

inline std::string type_name(const nlohmann::json& v) {
  if (v.is_object()) return "object";
  if (v.is_array()) return "array";
  if (v.is_string()) return "string";
  if (v.is_boolean()) return "bool";
  if (v.is_number()) return "number";
  return "null";
}

inline void check_schema(const nlohmann::json& defaults,
                         const nlohmann::json& input, const std::string& path) {
  POSEADAPT_CHECK(input.is_object(),
                  "config node must be an object: " +
                      (path.empty() ? std::string("<root>") : path));
  for (const auto& [key, value] : input.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key))
      throw Error("unknown config key: " + here);
    const nlohmann::json& dv = defaults.at(key);
    if (dv.is_object()) {
      if (free_form_path(here)) {
        POSEADAPT_CHECK(value.is_object(),
                        "config key must be an object: " + here);
        continue;
      }
      check_schema(dv, value, here);
    } else if (dv.is_array()) {
      POSEADAPT_CHECK(value.is_array(), "config key must be an array: " + here);
    } else if (dv.is_string()) {
      POSEADAPT_CHECK(value.is_string(),
                      "config key must be a string: " + here);
    } else if (dv.is_boolean()) {
      POSEADAPT_CHECK(value.is_boolean(), "config key must be a bool: " + here);
    } else if (dv.is_number()) {
      POSEADAPT_CHECK(value.is_number(), "config key must be a number: " + here);
    }
  }
}

// Merge `input` into `base`: structured objects merge key-by-key, while
// free-form maps, arrays, and scalars replace the previous value outright.
// Key validity is check_schema's job; this assumes it already passed.
inline void merge_config(nlohmann::json& base, const nlohmann::json& input,
                         const std::string& path) {
  for (const auto& [key, value] : input.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    nlohmann::json& slot = base[key];
    if (slot.is_object() && value.is_object() && !free_form_path(here))
      merge_config(slot, value, here);
    else
      slot = value;
  }
}

inline std::vector<std::string> split_path(const std::string& dotted) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    if (dot == std::string::npos) {
      parts.push_back(dotted.substr(start));
      break;
    }
    parts.push_back(dotted.substr(start, dot - start));
    start = dot + 1;
  }
  for (const std::string& p : parts)
    POSEADAPT_CHECK(!p.empty(), "malformed override key: " + dotted);
  return parts;
}

}  // namespace detail

inline nlohmann::json default_config_json() {
  return nlohmann::json(ExperimentConfig{});
}

// Applies one `key.path=value` override in place; the key must already exist
// (or live under a free-form map) and the value must match its type.
inline void apply_override(nlohmann::json& config, const std::string& spec) {
  const std::size_t eq = spec.find('=');
  POSEADAPT_CHECK(eq != std::string::npos && eq > 0,
                  "override must look like key.path=value: " + spec);
  const std::string dotted = spec.substr(0, eq);
  const std::string value_text = spec.substr(eq + 1);

  nlohmann::json value;
  try {
    value = nlohmann::json::parse(value_text);
  } catch (const nlohmann::json::exception&) {
    value = value_text;  // bare strings need no quotes
  }

  const std::vector<std::string> parts = detail::split_path(dotted);
  nlohmann::json* node = &config;
  std::string path;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string here = path.empty() ? parts[i] : path + "." + parts[i];
    const bool last = i + 1 == parts.size();
    if (detail::free_form_path(path)) {
      // Inside a free-form map any key is accepted as given.
      if (last) {
        (*node)[parts[i]] = value;
        return;
      }
      node = &(*node)[parts[i]];
    } else {
      if (!node->contains(parts[i])) throw Error("unknown config key: " + here);
      if (last) {
        nlohmann::json probe = nlohmann::json::object();
        probe[parts[i]] = value;
        detail::check_schema(*node, probe, path);
        detail::merge_config(*node, probe, path);
        return;
      }
      node = &(*node)[parts[i]];
      POSEADAPT_CHECK(node->is_object(),
                      "config key is not an object: " + here);
    }
    path = here;
  }
}

// defaults <- file (optional JSON text) <- overrides, strictly validated;
// returns the typed config plus the resolved snapshot document.
inline ExperimentConfig resolve_config(const std::string& file_text,
                                       const std::vector<std::string>& overrides,
                                       nlohmann::json* snapshot_out = nullptr) {
  nlohmann::json merged = default_config_json();
  if (!file_text.empty()) {
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(file_text);
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("config is not valid JSON: ") + e.what());
    }
    detail::check_schema(merged, file, "");
    detail::merge_config(merged, file, "");
  }
  for (const std::string& o : overrides) apply_override(merged, o);
  ExperimentConfig cfg = merged.get<ExperimentConfig>();
  if (snapshot_out) *snapshot_out = nlohmann::json(cfg);
  return cfg;
}

}  // namespace poseadapt
