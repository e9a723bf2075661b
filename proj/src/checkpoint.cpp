#include "bufd/checkpoint.hpp"

#include <cstring>
#include <json.hpp>

#include "bufd/image_io.hpp"

namespace bufd {

namespace {

using nlohmann::json;

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(
             static_cast<unsigned char>(s[at + static_cast<std::size_t>(i)]))
         << (8 * i);
  return v;
}

std::uint64_t read_u64(const std::string& s, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(
             static_cast<unsigned char>(s[at + static_cast<std::size_t>(i)]))
         << (8 * i);
  return v;
}

json model_to_json(const ModelConfig& m) {
  return json{{"variant", to_string(m.variant)},
              {"backbone_depth", m.backbone_depth},
              {"noise_head_depth", m.noise_head_depth},
              {"width", m.width},
              {"fusion_channels", m.fusion_channels},
              {"fusion_layers", m.fusion_layers},
              {"channels", m.channels},
              {"sigma_max_train", m.sigma_max_train},
              {"alpha", m.alpha}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.variant = variant_from_string(j.at("variant").get<std::string>());
  m.backbone_depth = j.at("backbone_depth").get<int>();
  m.noise_head_depth = j.at("noise_head_depth").get<int>();
  m.width = j.at("width").get<int>();
  m.fusion_channels = j.at("fusion_channels").get<int>();
  m.fusion_layers = j.at("fusion_layers").get<int>();
  m.channels = j.at("channels").get<int>();
  m.sigma_max_train = j.at("sigma_max_train").get<double>();
  m.alpha = j.at("alpha").get<double>();
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterSet<float>& params,
                     const CheckpointMeta& meta) {
  json tensors = json::array();
  std::string payload;
  for (const Param<float>& p : params.all()) {
    const std::uint64_t offset = payload.size();
    const std::uint64_t length =
        static_cast<std::uint64_t>(p.value.size()) * 4;
    json shape = json::array();
    for (std::int64_t d : p.value.shape()) shape.push_back(d);
    tensors.push_back(json{{"name", p.name},
                           {"shape", shape},
                           {"trainable", p.trainable},
                           {"offset", offset},
                           {"length", length}});
    std::size_t base = payload.size();
    payload.resize(base + length);
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, &p.value[i], 4);
      for (int b = 0; b < 4; ++b)
        payload[base + static_cast<std::size_t>(i) * 4 +
                static_cast<std::size_t>(b)] =
            static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  }

  const json manifest{{"model", model_to_json(meta.model)},
                      {"train_seed", meta.train_seed},
                      {"epoch", meta.epoch},
                      {"tensors", tensors}};
  const std::string manifest_str = manifest.dump();

  std::string out;
  out.append(kCheckpointMagic, 4);
  append_u32(out, kCheckpointVersion);
  append_u64(out, manifest_str.size());
  out += manifest_str;
  out += payload;
  atomic_write(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string s = read_file(path);
  if (s.size() < 16)
    throw IoError(IoError::Kind::truncated, "checkpoint: file too short");
  if (std::memcmp(s.data(), kCheckpointMagic, 4) != 0)
    throw IoError(IoError::Kind::bad_magic, "checkpoint: bad magic");
  const std::uint32_t version = read_u32(s, 4);
  if (version != kCheckpointVersion)
    throw IoError(IoError::Kind::version_mismatch,
                  "checkpoint: format version " + std::to_string(version) +
                      ", expected " + std::to_string(kCheckpointVersion));
  const std::uint64_t manifest_len = read_u64(s, 8);
  if (16 + manifest_len > s.size())
    throw IoError(IoError::Kind::truncated, "checkpoint: truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(
        s.substr(16, static_cast<std::size_t>(manifest_len)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::bad_header,
                  std::string("checkpoint: manifest parse: ") + e.what());
  }

  const std::size_t payload_at = 16 + static_cast<std::size_t>(manifest_len);
  const std::size_t payload_size = s.size() - payload_at;

  Checkpoint ck;
  try {
    ck.meta.model = model_from_json(manifest.at("model"));
    ck.meta.train_seed = manifest.at("train_seed").get<std::uint64_t>();
    ck.meta.epoch = manifest.at("epoch").get<int>();
    for (const auto& t : manifest.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      Shape shape;
      for (const auto& d : t.at("shape")) shape.push_back(d.get<std::int64_t>());
      const bool trainable = t.at("trainable").get<bool>();
      const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
      const std::uint64_t length = t.at("length").get<std::uint64_t>();
      if (offset + length > payload_size)
        throw IoError(IoError::Kind::bad_layout,
                      "checkpoint: tensor '" + name + "' exceeds payload");
      if (static_cast<std::uint64_t>(numel(shape)) * 4 != length)
        throw IoError(IoError::Kind::bad_layout,
                      "checkpoint: tensor '" + name +
                          "' shape does not match its byte length");
      Tensor<float> value(shape);
      const char* src = s.data() + payload_at + offset;
      for (std::int64_t i = 0; i < value.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
          bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(
                      src[i * 4 + b]))
                  << (8 * b);
        std::memcpy(&value[i], &bits, 4);
      }
      ck.params.add(name, std::move(value), trainable);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::bad_header,
                  std::string("checkpoint: manifest field: ") + e.what());
  }
  return ck;
}

}  // namespace bufd
