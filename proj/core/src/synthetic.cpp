#include "martvae/synthetic.hpp"

#include "martvae/errors.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace martvae {
namespace {

constexpr std::uint64_t kPrimitiveKey = 0x6d6f74696f6e31ULL;

std::mt19937_64 derived_engine(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

void SyntheticDatasetConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("synthetic dataset: " + what); };
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (joints < 1) fail("joints must be >= 1");
  if (pose_dim < 1) fail("pose_dim must be >= 1");
  if (max_actions < 1) fail("max_actions must be >= 1");
  if (min_segment_frames < 2) fail("min_segment_frames must be >= 2");
  if (max_segment_frames < min_segment_frames) fail("max_segment_frames < min_segment_frames");
  if (crossfade_frames < 0 || crossfade_frames >= min_segment_frames)
    fail("crossfade_frames must lie in [0, min_segment_frames)");
  if (num_sequences < 0) fail("num_sequences must be >= 0");
  if (!(noise >= 0.0) || !std::isfinite(noise)) fail("noise must be finite and >= 0");
  if (!(fps > 0.0)) fail("fps must be > 0");
}

Vector MotionPrimitive::evaluate(double t, double fps, double amplitude_scale,
                                 double phase_shift) const {
  const double w = 2.0 * std::numbers::pi * t / fps;
  Vector out(offset.size());
  for (Eigen::Index j = 0; j < offset.size(); ++j) {
    out[j] = offset[j] + amplitude_scale * amplitude[j] * std::sin(w * frequency[j] + phase[j] + phase_shift);
  }
  return out;
}

MotionPrimitive class_primitive(int label, int pose_dim) {
  auto rng = derived_engine(kPrimitiveKey, static_cast<std::uint64_t>(label));
  std::uniform_real_distribution<double> offset(-1.0, 1.0);
  std::uniform_real_distribution<double> amp(0.2, 0.5);
  std::uniform_real_distribution<double> freq(0.5, 2.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  MotionPrimitive p;
  p.offset.resize(pose_dim);
  p.amplitude.resize(pose_dim);
  p.frequency.resize(pose_dim);
  p.phase.resize(pose_dim);
  for (int j = 0; j < pose_dim; ++j) {
    p.offset[j] = offset(rng);
    p.amplitude[j] = amp(rng);
    p.frequency[j] = freq(rng);
    p.phase[j] = phase(rng);
  }
  return p;
}

PoseSequence make_synthetic_sequence(const SyntheticDatasetConfig& config,
                                     const std::vector<int>& labels,
                                     std::uint64_t sequence_seed,
                                     const std::vector<int>* lengths) {
  config.validate();
  if (labels.empty()) throw InputError("synthetic sequence needs at least one label");
  for (int l : labels)
    if (l < 0 || l >= config.num_classes)
      throw InputError("synthetic sequence label " + std::to_string(l) + " outside vocabulary");
  if (lengths) {
    if (lengths->size() != labels.size()) throw InputError("synthetic sequence: one length per label required");
    for (int len : *lengths)
      if (len <= config.crossfade_frames) throw InputError("synthetic sequence: segment shorter than the crossfade");
  }

  auto rng = derived_engine(config.seed, sequence_seed);
  std::uniform_int_distribution<int> length(config.min_segment_frames, config.max_segment_frames);
  std::uniform_real_distribution<double> amp_scale(0.8, 1.2);
  std::uniform_real_distribution<double> phase_shift(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);

  struct Part {
    MotionPrimitive primitive;
    double amp_scale;
    double phase_shift;
  };
  std::vector<Part> parts;
  PoseSequence seq;
  int start = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    const int len = lengths ? (*lengths)[i] : length(rng);
    seq.script.segments.push_back({l, start, start + len - 1});
    parts.push_back({class_primitive(l, config.pose_dim), amp_scale(rng), phase_shift(rng)});
    start += len;
  }
  const int T = start;
  seq.skeleton = {config.joints, config.pose_dim, config.fps};
  seq.frames.resize(T, config.pose_dim);

  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& seg = seq.script.segments[i];
    for (int t = seg.start; t <= seg.end; ++t) {
      Vector pose = parts[i].primitive.evaluate(t - seg.start, config.fps, parts[i].amp_scale,
                                                parts[i].phase_shift);
      const int into = t - seg.start;
      if (i > 0 && into < config.crossfade_frames) {
        // Blend from the previous primitive, continued past its own end.
        const auto& prev_seg = seq.script.segments[i - 1];
        const Vector prev = parts[i - 1].primitive.evaluate(t - prev_seg.start, config.fps,
                                                            parts[i - 1].amp_scale,
                                                            parts[i - 1].phase_shift);
        const double w = static_cast<double>(into + 1) / (config.crossfade_frames + 1);
        pose = (1.0 - w) * prev + w * pose;
      }
      seq.frames.row(t) = pose.transpose();
    }
  }
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < config.pose_dim; ++j) seq.frames(t, j) += config.noise * noise(rng);
  return seq;
}

std::vector<int> random_label_list(int k, int num_classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> label(0, num_classes - 1);
  std::vector<int> labels;
  for (int i = 0; i < k; ++i) {
    int l = label(rng);
    // Adjacent segments carry distinct labels.
    while (!labels.empty() && l == labels.back()) l = label(rng);
    labels.push_back(l);
  }
  return labels;
}

std::vector<PoseSequence> make_synthetic_dataset(const SyntheticDatasetConfig& config) {
  config.validate();
  std::vector<PoseSequence> out;
  out.reserve(static_cast<std::size_t>(config.num_sequences));
  for (int n = 0; n < config.num_sequences; ++n) {
    auto rng = derived_engine(config.seed ^ 0x9e3779b97f4a7c15ULL, static_cast<std::uint64_t>(n));
    std::uniform_int_distribution<int> count(1, config.max_actions);
    const int k = count(rng);
    out.push_back(make_synthetic_sequence(config, random_label_list(k, config.num_classes, rng),
                                          static_cast<std::uint64_t>(n)));
  }
  return out;
}

std::vector<PoseSequence> make_fixed_length_dataset(const SyntheticDatasetConfig& config, int actions, int frames) {
  config.validate();
  if (actions < 1 || frames < actions) throw ConfigError("fixed-length dataset: need 1 <= actions <= frames");
  std::vector<int> lengths;
  for (long i = 0; i < actions; ++i) lengths.push_back(static_cast<int>((i + 1) * frames / actions - i * frames / actions));
  std::vector<PoseSequence> out;
  out.reserve(static_cast<std::size_t>(config.num_sequences));
  for (int n = 0; n < config.num_sequences; ++n) {
    auto rng = derived_engine(config.seed ^ 0x5bd1e9955bd1e995ULL, static_cast<std::uint64_t>(n));
    out.push_back(make_synthetic_sequence(config, random_label_list(actions, config.num_classes, rng),
                                          static_cast<std::uint64_t>(n) | (1ULL << 63), &lengths));
  }
  return out;
}

}  // namespace martvae
