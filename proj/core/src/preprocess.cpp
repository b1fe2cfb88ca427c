#include "martvae/preprocess.hpp"

#include "martvae/errors.hpp"
#include "martvae/sequence_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace martvae {

void FilterParams::validate() const {
  if (!(tau > 0.0)) throw ConfigError("filter: tau must be > 0");
  if (max_bad_joints < 0) throw ConfigError("filter: max_bad_joints must be >= 0");
  if (!(min_confidence >= 0.0 && min_confidence <= 1.0))
    throw ConfigError("filter: min_confidence must lie in [0, 1]");
  if (min_subsequence_len < 1) throw ConfigError("filter: min_subsequence_len must be >= 1");
}

Eigen::MatrixX2d project_joints(const Eigen::MatrixX3d& joints3d, const Camera& camera) {
  Eigen::MatrixX2d out(joints3d.rows(), 2);
  for (Eigen::Index i = 0; i < joints3d.rows(); ++i) {
    const double z = joints3d(i, 2);
    if (!(z > 0.0))
      throw ProjectionError("joint " + std::to_string(i) + " has non-positive depth " + std::to_string(z));
    out(i, 0) = camera.fx * joints3d(i, 0) / z + camera.cx;
    out(i, 1) = camera.fy * joints3d(i, 1) / z + camera.cy;
  }
  return out;
}

FrameVerdict flag_bad_frame(const Eigen::MatrixX3d& joints3d, const Keypoints2D& keypoints,
                            const Camera& camera, HeadScale head_scale, const FilterParams& params) {
  params.validate();
  if (keypoints.points.rows() != joints3d.rows() || keypoints.confidence.size() != joints3d.rows())
    throw InputError("flag_bad_frame: " + std::to_string(joints3d.rows()) + " 3D joints vs " +
                     std::to_string(keypoints.points.rows()) + " keypoints");
  if (!(head_scale.pixels > 0.0)) throw InputError("flag_bad_frame: head scale must be > 0");

  const Eigen::MatrixX2d projected = project_joints(joints3d, camera);
  FrameVerdict verdict;
  for (Eigen::Index i = 0; i < joints3d.rows(); ++i) {
    if (keypoints.confidence[i] < params.min_confidence) continue;
    const double dev = (projected.row(i) - keypoints.points.row(i)).norm() / head_scale.pixels;
    if (dev > params.tau) verdict.bad_joints.push_back(static_cast<int>(i));
  }
  verdict.is_bad = static_cast<int>(verdict.bad_joints.size()) > params.max_bad_joints;
  return verdict;
}

HeadScale head_scale_from_keypoints(const Keypoints2D& keypoints, int head_index, int neck_index) {
  const auto n = keypoints.points.rows();
  if (head_index < 0 || head_index >= n || neck_index < 0 || neck_index >= n)
    throw InputError("head scale: keypoint index out of range");
  const double s = (keypoints.points.row(head_index) - keypoints.points.row(neck_index)).norm();
  if (!(s > 0.0)) throw InputError("head scale: head and neck keypoints coincide");
  return {s};
}

SplitResult split_on_mask_detailed(const PoseSequence& seq, const std::vector<bool>& bad, int min_len) {
  const int T = seq.num_frames();
  if (static_cast<int>(bad.size()) != T)
    throw InputError("split_on_mask: mask length " + std::to_string(bad.size()) + " != T " + std::to_string(T));
  SplitResult result;
  int t = 0;
  while (t < T) {
    if (bad[static_cast<std::size_t>(t)]) {
      ++t;
      continue;
    }
    const int begin = t;
    while (t < T && !bad[static_cast<std::size_t>(t)]) ++t;
    const int end = t - 1;  // inclusive
    const int len = end - begin + 1;
    if (len < min_len) {
      result.discarded_frames += len;
      continue;
    }
    PoseSequence sub;
    sub.skeleton = seq.skeleton;
    sub.frames = seq.frames.middleRows(begin, len);
    for (const auto& s : seq.script.segments) {
      const int a = std::max(s.start, begin);
      const int b = std::min(s.end, end);
      if (a > b) continue;
      sub.script.segments.push_back({s.label, a - begin, b - begin});
    }
    result.kept.push_back(std::move(sub));
  }
  return result;
}

std::vector<PoseSequence> split_on_mask(const PoseSequence& seq, const std::vector<bool>& bad, int min_len) {
  return split_on_mask_detailed(seq, bad, min_len).kept;
}

std::vector<double> balanced_weights(const std::vector<PoseSequence>& dataset) {
  if (dataset.empty()) throw InputError("balanced_weights: empty dataset");
  std::map<int, long> occurrences;
  for (const auto& seq : dataset)
    for (const auto& s : seq.script.segments) ++occurrences[s.label];

  std::vector<double> w(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& segs = dataset[i].script.segments;
    if (segs.empty()) throw InputError("balanced_weights: sequence " + std::to_string(i) + " has no labels");
    double mean = 0.0;
    for (const auto& s : segs) mean += static_cast<double>(occurrences[s.label]);
    mean /= static_cast<double>(segs.size());
    w[i] = 1.0 / mean;
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= total;
  return w;
}

WeightedSampler::WeightedSampler(const std::vector<double>& weights) : dist_(weights.begin(), weights.end()) {
  if (weights.empty()) throw InputError("WeightedSampler: no weights");
}

Eigen::MatrixX3d frame_as_joints(const PoseSequence& seq, int t) {
  const int D = seq.pose_dim();
  if (D % 3 != 0 || (seq.skeleton.joints > 0 && seq.skeleton.joints * 3 != D))
    throw InputError("pose frames are not J x 3 joint positions (D = " + std::to_string(D) + ")");
  Eigen::MatrixX3d joints(D / 3, 3);
  for (int j = 0; j < D / 3; ++j) joints.row(j) = seq.frames.row(t).segment<3>(3 * j);
  return joints;
}

Camera read_camera(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": invalid JSON: " + e.what());
  }
  Camera cam;
  for (auto [key, field] : {std::pair{"fx", &cam.fx}, {"fy", &cam.fy}, {"cx", &cam.cx}, {"cy", &cam.cy}}) {
    if (!doc.contains(key) || !doc[key].is_number())
      throw ParseError(path.string() + ": missing numeric field '" + key + "'");
    *field = doc[key].get<double>();
  }
  if (!(cam.fx > 0.0) || !(cam.fy > 0.0)) throw ParseError(path.string() + ": fx and fy must be > 0");
  return cam;
}

std::vector<Keypoints2D> read_keypoints(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": invalid JSON: " + e.what());
  }
  if (!doc.contains("frames") || !doc["frames"].is_array())
    throw ParseError(path.string() + ": missing array field 'frames'");
  std::vector<Keypoints2D> out;
  const auto& frames = doc["frames"];
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const std::string where = path.string() + ": frames[" + std::to_string(t) + "]";
    const auto& f = frames[t];
    if (!f.contains("points") || !f["points"].is_array()) throw ParseError(where + ".points missing");
    if (!f.contains("confidence") || !f["confidence"].is_array())
      throw ParseError(where + ".confidence missing");
    const auto& pts = f["points"];
    const auto& conf = f["confidence"];
    if (pts.size() != conf.size()) throw ParseError(where + ": points and confidence lengths differ");
    Keypoints2D kp;
    kp.points.resize(static_cast<Eigen::Index>(pts.size()), 2);
    kp.confidence.resize(static_cast<Eigen::Index>(conf.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (!pts[i].is_array() || pts[i].size() != 2) throw ParseError(where + ".points[" + std::to_string(i) + "]");
      kp.points(static_cast<Eigen::Index>(i), 0) = pts[i][0].get<double>();
      kp.points(static_cast<Eigen::Index>(i), 1) = pts[i][1].get<double>();
      kp.confidence[static_cast<Eigen::Index>(i)] = conf[i].get<double>();
    }
    out.push_back(std::move(kp));
  }
  return out;
}

void write_keypoints(const std::vector<Keypoints2D>& frames, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["frames"] = nlohmann::json::array();
  for (const auto& kp : frames) {
    nlohmann::json f;
    f["points"] = nlohmann::json::array();
    for (Eigen::Index i = 0; i < kp.points.rows(); ++i) f["points"].push_back({kp.points(i, 0), kp.points(i, 1)});
    f["confidence"] = std::vector<double>(kp.confidence.data(), kp.confidence.data() + kp.confidence.size());
    doc["frames"].push_back(std::move(f));
  }
  write_file_atomic(path, doc.dump() + "\n");
}

}  // namespace martvae
