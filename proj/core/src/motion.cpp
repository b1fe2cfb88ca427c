#include "martvae/motion.hpp"

#include <cmath>

namespace martvae {

std::vector<int> ActionScript::labels() const {
  std::vector<int> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(s.label);
  return out;
}

bool PoseSequence::operator==(const PoseSequence& other) const {
  if (skeleton != other.skeleton || script != other.script) return false;
  if (frames.rows() != other.frames.rows() || frames.cols() != other.frames.cols()) return false;
  // Bitwise-equal semantics: identical values compare equal, NaN never does.
  return (frames.array() == other.frames.array()).all();
}

std::vector<Violation> validate_sequence(const PoseSequence& seq, int vocabulary_size) {
  std::vector<Violation> out;
  const int T = seq.num_frames();
  if (T < 1) out.push_back({"frames", "sequence has no frames", std::nullopt});
  if (seq.skeleton.pose_dim != seq.pose_dim()) {
    out.push_back({"skeleton.D",
                   "declared pose dimension " + std::to_string(seq.skeleton.pose_dim) +
                       " differs from frame width " + std::to_string(seq.pose_dim()),
                   std::nullopt});
  }
  for (int t = 0; t < T; ++t) {
    if (!seq.frames.row(t).allFinite()) {
      out.push_back({"frames", "non-finite value in frame " + std::to_string(t), t});
    }
  }
  if (seq.script.empty()) out.push_back({"segments", "script has no segments", std::nullopt});
  for (std::size_t i = 0; i < seq.script.size(); ++i) {
    const auto& s = seq.script.segments[i];
    const std::string where = "segments[" + std::to_string(i) + "]";
    if (s.start > s.end) {
      out.push_back({where, "start " + std::to_string(s.start) + " > end " + std::to_string(s.end),
                     std::nullopt});
    }
    if (s.start < 0 || s.end >= T || s.start >= T || s.end < 0) {
      out.push_back({where, "span [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                                "] outside [0, " + std::to_string(T) + ")",
                     std::nullopt});
    }
    if (s.label < 0 || (vocabulary_size > 0 && s.label >= vocabulary_size)) {
      out.push_back({where, "label " + std::to_string(s.label) + " outside vocabulary", std::nullopt});
    }
    if (i > 0 && seq.script.segments[i - 1].start > s.start) {
      out.push_back({where, "segments not ordered by start", std::nullopt});
    }
  }
  return out;
}

std::vector<int> active_labels(const ActionScript& script, int t) {
  std::vector<int> out;
  for (const auto& s : script.segments)
    if (s.contains(t)) out.push_back(s.label);
  return out;
}

std::optional<std::size_t> active_segment(const ActionScript& script, int t) {
  for (std::size_t i = 0; i < script.size(); ++i)
    if (script.segments[i].contains(t)) return i;
  return std::nullopt;
}

}  // namespace martvae
