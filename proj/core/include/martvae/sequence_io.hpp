#pragma once

#include "martvae/motion.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace martvae {

inline constexpr int kSequenceFormatVersion = 1;

/// JSON document: {version, skeleton{J,D,fps}, frames[[...]], segments[{label,start,end}]}.
/// Doubles are written with shortest round-trip formatting.
std::string sequence_to_json(const PoseSequence& seq);

/// Throws ParseError naming the offending field.
PoseSequence sequence_from_json(const std::string& text);

void write_sequence(const PoseSequence& seq, const std::filesystem::path& path);
PoseSequence read_sequence(const std::filesystem::path& path);

/// Writes seq_00000.json, seq_00001.json, ... into `dir` (created if missing).
void write_dataset(const std::vector<PoseSequence>& data, const std::filesystem::path& dir);

/// Reads every *.json in `dir` in lexicographic filename order.
std::vector<PoseSequence> read_dataset(const std::filesystem::path& dir);

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace martvae
