#pragma once

#include "martvae/motion.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace martvae {

/// Parameters of the sinusoidal toy-motion generator.
struct SyntheticDatasetConfig {
  int num_classes = 4;
  int joints = 8;
  int pose_dim = 24;
  int min_segment_frames = 15;
  int max_segment_frames = 30;
  int max_actions = 3;
  int num_sequences = 256;
  int crossfade_frames = 4;
  double noise = 0.01;
  double fps = 30.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError on any invalid value.
  void validate() const;
};

/// Class-keyed kinematic primitive: per dimension offset + amplitude * sin(2*pi*freq*t/fps + phase).
/// Independent of the dataset seed, so datasets drawn with different seeds share classes.
struct MotionPrimitive {
  Vector offset;
  Vector amplitude;
  Vector frequency;  // Hz
  Vector phase;

  /// Noise-free pose at local time `t` (frames since segment start).
  Vector evaluate(double t, double fps, double amplitude_scale = 1.0, double phase_shift = 0.0) const;
};

MotionPrimitive class_primitive(int label, int pose_dim);

/// Generates `num_sequences` sequences. Each is seeded from (seed, index) so the result
/// is independent of generation order.
std::vector<PoseSequence> make_synthetic_dataset(const SyntheticDatasetConfig& config);

/// Generates a single sequence for a caller-chosen label list. Segment lengths are drawn
/// from the configured range unless `lengths` (one per label) is given.
PoseSequence make_synthetic_sequence(const SyntheticDatasetConfig& config,
                                     const std::vector<int>& labels,
                                     std::uint64_t sequence_seed,
                                     const std::vector<int>* lengths = nullptr);

/// k labels drawn uniformly with adjacent labels distinct.
std::vector<int> random_label_list(int k, int num_classes, std::mt19937_64& rng);

/// `num_sequences` sequences of exactly `actions` segments and `frames` frames, spans laid out
/// as an equal partition (the same spans `generate` records). Reference sets for evaluation.
std::vector<PoseSequence> make_fixed_length_dataset(const SyntheticDatasetConfig& config, int actions, int frames);

}  // namespace martvae
