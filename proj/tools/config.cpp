#include "config.hpp"

#include "martvae/checkpoint.hpp"
#include "martvae/errors.hpp"
#include "martvae/sequence_io.hpp"

#include <set>
#include <string>

namespace martvae::cli {

json load_config(const std::filesystem::path& path) {
  try {
    json doc = json::parse(read_file(path));
    if (!doc.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
    return doc;
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

namespace {

class Reader {
 public:
  Reader(const json& section, const char* name) : section_(section), name_(name) {
    if (!section_.is_null() && !section_.is_object()) throw ConfigError(std::string("config.") + name + " must be an object");
  }
  void finish() const {
    if (section_.is_object())
      for (const auto& [key, value] : section_.items())
        if (!seen_.count(key)) throw ConfigError(std::string("config.") + name_ + ": unknown key '" + key + "'");
  }

  template <typename T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    if (!section_.is_object() || !section_.contains(key)) return;
    try {
      field = section_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config.") + name_ + "." + key + ": wrong type");
    }
  }

 private:
  const json& section_;
  const char* name_;
  std::set<std::string> seen_;
};

}  // namespace

void apply(const json& s, SyntheticDatasetConfig& c) {
  Reader r(s, "synthetic");
  r.get("num_classes", c.num_classes);
  r.get("joints", c.joints);
  r.get("pose_dim", c.pose_dim);
  r.get("min_segment_frames", c.min_segment_frames);
  r.get("max_segment_frames", c.max_segment_frames);
  r.get("max_actions", c.max_actions);
  r.get("num_sequences", c.num_sequences);
  r.get("crossfade_frames", c.crossfade_frames);
  r.get("noise", c.noise);
  r.get("fps", c.fps);
  r.get("seed", c.seed);
  r.finish();
}

void apply(const json& s, TrainConfig& c) {
  Reader r(s, "train");
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.learning_rate);
  r.get("clip_norm", c.clip_norm);
  r.get("seed", c.seed);
  r.get("balanced_sampling", c.balanced_sampling);
  r.finish();
}

void apply(const json& s, LossWeights& c) {
  Reader r(s, "loss");
  r.get("kl_weight", c.kl_weight);
  r.get("reconstruction_weight", c.reconstruction_weight);
  r.finish();
}

void apply(const json& s, ClassifierConfig& c) {
  Reader r(s, "classifier");
  r.get("crop_frames", c.crop_frames);
  r.get("kernel", c.kernel);
  r.get("channels", c.channels);
  r.get("feature_dim", c.feature_dim);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.learning_rate);
  r.get("holdout_fraction", c.holdout_fraction);
  r.get("crops_per_segment", c.crops_per_segment);
  r.get("seed", c.seed);
  r.finish();
}

void apply(const json& s, FilterParams& c) {
  Reader r(s, "filter");
  r.get("tau", c.tau);
  r.get("max_bad_joints", c.max_bad_joints);
  r.get("min_confidence", c.min_confidence);
  r.get("min_subsequence_len", c.min_subsequence_len);
  r.finish();
}

void apply(const json& s, EvalConfig& c) {
  Reader r(s, "eval");
  r.get("num_samples", c.num_samples);
  r.get("lengths", c.lengths);
  r.get("actions_per_sequence", c.actions_per_sequence);
  r.get("repeats", c.repeats);
  r.get("pairs", c.pairs);
  r.get("seed", c.seed);
  r.finish();
}

void apply(const json& s, ModelConfig& c) {
  if (s.is_null()) return;
  if (!s.is_object()) throw ConfigError("config.model must be an object");
  const json known = to_json(c);
  for (const auto& [key, value] : s.items()) {
    if (!known.contains(key)) throw ConfigError("config.model: unknown key '" + key + "'");
    if (value.is_object() && known[key].is_object())
      for (const auto& [sub, unused] : value.items())
        if (!known[key].contains(sub)) throw ConfigError("config.model." + key + ": unknown key '" + sub + "'");
  }
  try {
    c = model_config_from_json(s.dump(), c);
  } catch (const ParseError& e) {
    throw ConfigError(std::string("config.model: ") + e.what());
  }
}

json to_json(const SyntheticDatasetConfig& c) {
  return {{"num_classes", c.num_classes},   {"joints", c.joints},
          {"pose_dim", c.pose_dim},         {"min_segment_frames", c.min_segment_frames},
          {"max_segment_frames", c.max_segment_frames}, {"max_actions", c.max_actions},
          {"num_sequences", c.num_sequences}, {"crossfade_frames", c.crossfade_frames},
          {"noise", c.noise},               {"fps", c.fps},
          {"seed", c.seed}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"clip_norm", c.clip_norm}, {"seed", c.seed},             {"balanced_sampling", c.balanced_sampling}};
}

json to_json(const LossWeights& c) {
  return {{"kl_weight", c.kl_weight}, {"reconstruction_weight", c.reconstruction_weight}};
}

json to_json(const ClassifierConfig& c) {
  return {{"crop_frames", c.crop_frames},     {"kernel", c.kernel},
          {"channels", c.channels},           {"feature_dim", c.feature_dim},
          {"epochs", c.epochs},               {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate}, {"holdout_fraction", c.holdout_fraction},
          {"crops_per_segment", c.crops_per_segment}, {"seed", c.seed}};
}

json to_json(const FilterParams& c) {
  return {{"tau", c.tau},
          {"max_bad_joints", c.max_bad_joints},
          {"min_confidence", c.min_confidence},
          {"min_subsequence_len", c.min_subsequence_len}};
}

json to_json(const EvalConfig& c) {
  return {{"num_samples", c.num_samples}, {"lengths", c.lengths}, {"actions_per_sequence", c.actions_per_sequence},
          {"repeats", c.repeats},         {"pairs", c.pairs},     {"seed", c.seed}};
}

json to_json(const ModelConfig& c) { return json::parse(model_config_to_json(c)); }

}  // namespace martvae::cli
