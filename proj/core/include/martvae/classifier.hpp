#pragma once

#include "martvae/linear_attention.hpp"
#include "martvae/motion.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace martvae {

/// Anything that can label a span of pose frames.
class SpanClassifier {
 public:
  virtual ~SpanClassifier() = default;
  /// Spans shorter than this are skipped by evaluation.
  virtual int min_frames() const = 0;
  virtual int predict(const Matrix& span_frames) const = 0;
};

struct ClassifierConfig {
  int crop_frames = 12;
  int kernel = 5;
  int channels = 32;
  int feature_dim = 16;
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 3e-3;
  double holdout_fraction = 0.2;
  int crops_per_segment = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Temporal-convolution action classifier over fixed-length crops:
/// conv(kernel) -> GELU -> mean over time -> linear -> GELU (features, width F) -> logits.
class SequenceClassifier : public SpanClassifier {
 public:
  SequenceClassifier() = default;
  SequenceClassifier(const ClassifierConfig& cfg, int num_classes, int pose_dim);

  int min_frames() const override { return config_.crop_frames; }
  int predict(const Matrix& span_frames) const override;

  /// Penultimate-layer features (1 x F) of the centre crop of `span_frames`.
  RowVector features(const Matrix& span_frames) const;
  RowVector logits(const Matrix& span_frames) const;

  /// Centre crop of `crop_frames` rows, or nullopt if the span is shorter.
  std::optional<Matrix> center_crop(const Matrix& span_frames) const;

  const ClassifierConfig& config() const { return config_; }
  int num_classes() const { return num_classes_; }
  int pose_dim() const { return pose_dim_; }
  int feature_dim() const { return config_.feature_dim; }

  void visit(const ParamVisitor& f);
  std::vector<Matrix*> tensors();

  // Differentiable forward for one crop batch (rows are flattened im2col windows).
  Linear conv;
  Linear feature;
  Linear head;

  void save(const std::filesystem::path& path);
  static SequenceClassifier load(const std::filesystem::path& path);

 private:
  ClassifierConfig config_{};
  int num_classes_ = 0;
  int pose_dim_ = 0;
};

/// Sliding windows of `kernel` frames, flattened: (L - kernel + 1) x (kernel * D).
Matrix im2col(const Matrix& crop, int kernel);

struct ClassifierReport {
  double holdout_accuracy = 0.0;
  int train_segments = 0;
  int holdout_segments = 0;
};

/// Trains on the segments of `dataset`; holds out a fraction of sequences for accuracy.
/// Throws ConfigError if fewer than two classes are present.
SequenceClassifier train_classifier(const std::vector<PoseSequence>& dataset, int num_classes,
                                    const ClassifierConfig& cfg, ClassifierReport* report = nullptr);

/// Segment-level accuracy of `clf` on every segment of `data` (centre crops; short spans skipped).
double segment_accuracy(const SpanClassifier& clf, const std::vector<PoseSequence>& data);

}  // namespace martvae
