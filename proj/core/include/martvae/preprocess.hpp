#pragma once

#include "martvae/motion.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <random>
#include <vector>

namespace martvae {

/// Pinhole intrinsics in pixels.
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// N detected 2D keypoints with per-point confidence in [0, 1].
struct Keypoints2D {
  Eigen::MatrixX2d points;
  Vector confidence;
};

struct FilterParams {
  double tau = 1.0;
  int max_bad_joints = 10;
  double min_confidence = 0.3;
  int min_subsequence_len = 30;

  void validate() const;
};

/// Pixel scale proportional to head size; deviations are divided by it.
struct HeadScale {
  double pixels = 1.0;
};

struct FrameVerdict {
  bool is_bad = false;
  std::vector<int> bad_joints;
};

/// Projects N x 3 camera-frame joints (meters) to N x 2 pixels.
/// Throws ProjectionError naming the first joint with z <= 0.
Eigen::MatrixX2d project_joints(const Eigen::MatrixX3d& joints3d, const Camera& camera);

/// A joint deviates when it is confidently detected and its reprojection misses the
/// detection by more than tau head-scales. The frame is bad when more than
/// max_bad_joints joints deviate.
FrameVerdict flag_bad_frame(const Eigen::MatrixX3d& joints3d, const Keypoints2D& keypoints,
                            const Camera& camera, HeadScale head_scale, const FilterParams& params);

/// Head scale as the 2D distance between two designated keypoints (e.g. head and neck).
HeadScale head_scale_from_keypoints(const Keypoints2D& keypoints, int head_index, int neck_index);

struct SplitResult {
  std::vector<PoseSequence> kept;
  int discarded_frames = 0;  // good frames in runs shorter than min_len
};

/// Cuts the sequence at bad frames. Every maximal good run of at least min_len frames
/// becomes a subsequence; segments are clipped to the run and re-indexed, vanished
/// segments dropped.
SplitResult split_on_mask_detailed(const PoseSequence& seq, const std::vector<bool>& bad, int min_len);
std::vector<PoseSequence> split_on_mask(const PoseSequence& seq, const std::vector<bool>& bad, int min_len);

/// Per-sequence sampling probability proportional to 1 / mean(global count of its labels).
std::vector<double> balanced_weights(const std::vector<PoseSequence>& dataset);

/// Draws sequence indices according to a weight vector.
class WeightedSampler {
 public:
  explicit WeightedSampler(const std::vector<double>& weights);
  std::size_t operator()(std::mt19937_64& rng) { return dist_(rng); }

 private:
  std::discrete_distribution<std::size_t> dist_;
};

/// Interprets each pose frame as J x 3 camera-frame joint positions (requires D == 3J).
Eigen::MatrixX3d frame_as_joints(const PoseSequence& seq, int t);

Camera read_camera(const std::filesystem::path& path);
/// Keypoint file: {"frames": [{"points": [[x,y],...], "confidence": [...]}, ...]}.
std::vector<Keypoints2D> read_keypoints(const std::filesystem::path& path);
void write_keypoints(const std::vector<Keypoints2D>& frames, const std::filesystem::path& path);

}  // namespace martvae
