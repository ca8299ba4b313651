// Checkpoint archives: one JSON document holding the resolved experiment
// config plus every parameter tensor, keyed by "group/layer/param" name with
// base64-encoded little-endian doubles.
#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poseadapt/model.hpp"

namespace poseadapt {

namespace detail {

inline const char* kBase64Chars =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const unsigned char* data, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    const unsigned b0 = data[i];
    const unsigned b1 = i + 1 < n ? data[i + 1] : 0;
    const unsigned b2 = i + 2 < n ? data[i + 2] : 0;
    out.push_back(kBase64Chars[b0 >> 2]);
    out.push_back(kBase64Chars[((b0 & 0x3) << 4) | (b1 >> 4)]);
    out.push_back(i + 1 < n ? kBase64Chars[((b1 & 0xf) << 2) | (b2 >> 6)] : '=');
    out.push_back(i + 2 < n ? kBase64Chars[b2 & 0x3f] : '=');
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 64; ++i)
    lut[std::size_t(static_cast<unsigned char>(kBase64Chars[i]))] = i;
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  int acc = 0, bits = 0;
  for (char ch : text) {
    if (ch == '=') break;
    const int v = lut[std::size_t(static_cast<unsigned char>(ch))];
    POSEADAPT_CHECK(v >= 0, "invalid base64 character in checkpoint");
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((acc >> bits) & 0xff));
    }
  }
  return out;
}

inline std::string encode_reals(const std::vector<real>& values) {
  static_assert(sizeof(real) == 8);
  std::vector<unsigned char> bytes(values.size() * 8);
  if (!values.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
  return base64_encode(bytes.data(), bytes.size());
}

inline std::vector<real> decode_reals(const std::string& text) {
  const std::vector<unsigned char> bytes = base64_decode(text);
  POSEADAPT_CHECK(bytes.size() % 8 == 0, "checkpoint tensor data truncated");
  std::vector<real> out(bytes.size() / 8);
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

}  // namespace detail

inline constexpr const char* kCheckpointFormat = "poseadapt-checkpoint-v1";

struct CheckpointData {
  nlohmann::json config;
  // name -> (shape, flat values)
  std::map<std::string, std::pair<std::vector<int>, std::vector<real>>> params;
};

inline void save_checkpoint(PoseModel& model,
                            const nlohmann::json& config_snapshot,
                            const std::string& path) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, p] : model.all_named_params()) {
    std::vector<real> flat(p->value.data(), p->value.data() + p->value.numel());
    params[name] = {{"shape", p->value.shape()},
                    {"data", detail::encode_reals(flat)}};
  }
  nlohmann::json doc = {{"format", kCheckpointFormat},
                        {"config", config_snapshot},
                        {"params", params}};
  std::ofstream out(path, std::ios::binary);
  POSEADAPT_CHECK(out.good(), "cannot write checkpoint: " + path);
  out << doc.dump() << '\n';
  POSEADAPT_CHECK(out.good(), "checkpoint write failed: " + path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  POSEADAPT_CHECK(in.good(), "cannot read checkpoint: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint is not valid JSON: " + path + ": " + e.what());
  }
  POSEADAPT_CHECK(doc.value("format", "") == kCheckpointFormat,
                  "unrecognized checkpoint format in " + path);
  CheckpointData data;
  data.config = doc.at("config");
  for (const auto& [name, entry] : doc.at("params").items()) {
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    std::vector<real> values =
        detail::decode_reals(entry.at("data").get<std::string>());
    POSEADAPT_CHECK(values.size() == Tensor::numel_of(shape),
                    "checkpoint tensor size mismatch for " + name);
    data.params[name] = {std::move(shape), std::move(values)};
  }
  return data;
}

// Copies every archived tensor whose name the model also has into the model
// (shape-checked). Returns the loaded names; names present on only one side
// are skipped, so a pretrain archive can seed a fresh adaptation model.
inline std::vector<std::string> load_into_model(PoseModel& model,
                                                const CheckpointData& data) {
  std::vector<std::string> loaded;
  for (const auto& [name, p] : model.all_named_params()) {
    const auto it = data.params.find(name);
    if (it == data.params.end()) continue;
    const auto& [shape, values] = it->second;
    POSEADAPT_CHECK(shape == p->value.shape(),
                    "checkpoint shape mismatch for " + name);
    std::copy(values.begin(), values.end(), p->value.data());
    loaded.push_back(name);
  }
  return loaded;
}

}  // namespace poseadapt
