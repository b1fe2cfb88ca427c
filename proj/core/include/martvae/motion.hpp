#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace martvae {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Skeleton {
  int joints = 0;     // J
  int pose_dim = 0;   // D
  double fps = 30.0;

  bool operator==(const Skeleton&) const = default;
};

/// A labelled span of frames; `end` is inclusive.
struct ActionSegment {
  int label = 0;
  int start = 0;
  int end = 0;

  int length() const { return end - start + 1; }
  bool contains(int t) const { return start <= t && t <= end; }
  bool operator==(const ActionSegment&) const = default;
};

/// Ordered (by start) list of possibly overlapping segments.
struct ActionScript {
  std::vector<ActionSegment> segments;

  std::size_t size() const { return segments.size(); }
  bool empty() const { return segments.empty(); }
  std::vector<int> labels() const;
  bool operator==(const ActionScript&) const = default;
};

/// T x D pose matrix (one frame per row) plus its action script.
struct PoseSequence {
  Matrix frames;
  ActionScript script;
  Skeleton skeleton;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  int pose_dim() const { return static_cast<int>(frames.cols()); }

  bool operator==(const PoseSequence& other) const;
};

struct Violation {
  std::string field;
  std::string message;
  std::optional<int> frame;
};

/// Checks every PoseSequence invariant. Returns one entry per violation.
/// `vocabulary_size` <= 0 skips the label-range check.
std::vector<Violation> validate_sequence(const PoseSequence& seq, int vocabulary_size = 0);

/// Labels of all segments covering frame t.
std::vector<int> active_labels(const ActionScript& script, int t);

/// Index of the first segment (in script order) covering t, if any.
std::optional<std::size_t> active_segment(const ActionScript& script, int t);

}  // namespace martvae
