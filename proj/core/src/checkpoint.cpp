#include "martvae/checkpoint.hpp"

#include "martvae/errors.hpp"
#include "martvae/sequence_io.hpp"

#include <json.hpp>

#include <map>

namespace martvae {
namespace {

using nlohmann::json;

json attention_to_json(const AttentionConfig& a) {
  return {{"model_dim", a.model_dim}, {"heads", a.heads}, {"ffn_dim", a.ffn_dim}, {"epsilon", a.epsilon}};
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ParseError(std::string("config field '") + key + "' has the wrong type");
  }
}

AttentionConfig attention_from_json(const json& obj, AttentionConfig a) {
  read_field(obj, "model_dim", a.model_dim);
  read_field(obj, "heads", a.heads);
  read_field(obj, "ffn_dim", a.ffn_dim);
  read_field(obj, "epsilon", a.epsilon);
  return a;
}

json config_json(const ModelConfig& cfg) {
  return {{"latent_dim", cfg.latent_dim},
          {"num_actions", cfg.num_actions},
          {"pose_dim", cfg.pose_dim},
          {"joints", cfg.joints},
          {"fps", cfg.fps},
          {"action_embed_dim", cfg.action_embed_dim},
          {"encoder", attention_to_json(cfg.encoder)},
          {"decoder", attention_to_json(cfg.decoder)},
          {"encoder_layers", cfg.encoder_layers},
          {"decoder_layers", cfg.decoder_layers},
          {"max_position", cfg.max_position},
          {"variant", variant_name(cfg.variant, cfg.baseline_slots)}};
}

ModelConfig config_from(const json& obj, ModelConfig cfg) {
  if (!obj.is_object()) throw ParseError("model config must be a JSON object");
  read_field(obj, "latent_dim", cfg.latent_dim);
  read_field(obj, "num_actions", cfg.num_actions);
  read_field(obj, "pose_dim", cfg.pose_dim);
  read_field(obj, "joints", cfg.joints);
  read_field(obj, "fps", cfg.fps);
  read_field(obj, "action_embed_dim", cfg.action_embed_dim);
  if (obj.contains("encoder")) cfg.encoder = attention_from_json(obj["encoder"], cfg.encoder);
  if (obj.contains("decoder")) cfg.decoder = attention_from_json(obj["decoder"], cfg.decoder);
  read_field(obj, "encoder_layers", cfg.encoder_layers);
  read_field(obj, "decoder_layers", cfg.decoder_layers);
  read_field(obj, "max_position", cfg.max_position);
  if (obj.contains("variant")) {
    std::string v;
    read_field(obj, "variant", v);
    std::tie(cfg.variant, cfg.baseline_slots) = parse_variant(v);
  }
  return cfg;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(2); }

ModelConfig model_config_from_json(const std::string& text, ModelConfig defaults) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  return config_from(doc, std::move(defaults));
}

void save_checkpoint(const ModelConfig& cfg, ModelParams& params, const std::filesystem::path& path) {
  json doc;
  doc["format"] = "martvae-checkpoint";
  doc["version"] = kCheckpointFormatVersion;
  doc["config"] = config_json(cfg);
  json tensors = json::array();
  params.visit([&](const std::string& name, Matrix& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}});
  });
  doc["tensors"] = std::move(tensors);
  write_file_atomic(path, doc.dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": invalid JSON: " + e.what());
  }
  if (doc.value("format", std::string()) != "martvae-checkpoint")
    throw ParseError(path.string() + ": field 'format' is not martvae-checkpoint");
  if (doc.value("version", -1) != kCheckpointFormatVersion)
    throw ParseError(path.string() + ": unsupported field 'version'");
  if (!doc.contains("config")) throw ParseError(path.string() + ": missing field 'config'");
  Checkpoint ck;
  ck.config = config_from(doc["config"], ModelConfig{});
  ck.config.validate();
  ck.params = ModelParams::init(ck.config, 0);

  std::map<std::string, const json*> by_name;
  if (!doc.contains("tensors") || !doc["tensors"].is_array())
    throw ParseError(path.string() + ": missing field 'tensors'");
  for (const auto& t : doc["tensors"]) by_name[t.value("name", std::string())] = &t;

  std::size_t used = 0;
  ck.params.visit([&](const std::string& name, Matrix& m) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError(path.string() + ": missing tensor '" + name + "'");
    const json& t = *it->second;
    const auto shape = t.at("shape").get<std::vector<long>>();
    if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
      throw ParseError(path.string() + ": tensor '" + name + "' has wrong shape");
    const auto& data = t.at("data");
    if (static_cast<Eigen::Index>(data.size()) != m.size())
      throw ParseError(path.string() + ": tensor '" + name + "' has wrong element count");
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = data[i++].get<double>();
    ++used;
  });
  if (used != by_name.size()) throw ParseError(path.string() + ": unexpected extra tensors");
  return ck;
}

}  // namespace martvae
