#include "martvae/sequence_io.hpp"

#include "martvae/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace martvae {
namespace {

using nlohmann::json;

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw ParseError("missing field '" + where + key + "'");
  return obj.at(key);
}

int require_int(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer()) throw ParseError("field '" + where + key + "' must be an integer");
  return v.get<int>();
}

double require_number(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number()) throw ParseError("field '" + where + key + "' must be a number");
  return v.get<double>();
}

}  // namespace

std::string sequence_to_json(const PoseSequence& seq) {
  json doc;
  doc["version"] = kSequenceFormatVersion;
  doc["skeleton"] = {{"J", seq.skeleton.joints}, {"D", seq.skeleton.pose_dim}, {"fps", seq.skeleton.fps}};
  json frames = json::array();
  for (Eigen::Index t = 0; t < seq.frames.rows(); ++t) {
    json row = json::array();
    for (Eigen::Index j = 0; j < seq.frames.cols(); ++j) row.push_back(seq.frames(t, j));
    frames.push_back(std::move(row));
  }
  doc["frames"] = std::move(frames);
  json segments = json::array();
  for (const auto& s : seq.script.segments)
    segments.push_back({{"label", s.label}, {"start", s.start}, {"end", s.end}});
  doc["segments"] = std::move(segments);
  return doc.dump() + "\n";
}

PoseSequence sequence_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  const int version = require_int(doc, "version", "");
  if (version != kSequenceFormatVersion)
    throw ParseError("field 'version': unsupported version " + std::to_string(version));

  PoseSequence seq;
  const json& sk = require(doc, "skeleton", "");
  seq.skeleton.joints = require_int(sk, "J", "skeleton.");
  seq.skeleton.pose_dim = require_int(sk, "D", "skeleton.");
  seq.skeleton.fps = require_number(sk, "fps", "skeleton.");
  if (seq.skeleton.pose_dim < 1) throw ParseError("field 'skeleton.D' must be >= 1");

  const json& frames = require(doc, "frames", "");
  if (!frames.is_array() || frames.empty()) throw ParseError("field 'frames' must be a non-empty array");
  const int T = static_cast<int>(frames.size());
  const int D = seq.skeleton.pose_dim;
  seq.frames.resize(T, D);
  for (int t = 0; t < T; ++t) {
    const json& row = frames[static_cast<std::size_t>(t)];
    const std::string where = "frames[" + std::to_string(t) + "]";
    if (!row.is_array()) throw ParseError("field '" + where + "' must be an array");
    if (static_cast<int>(row.size()) != D)
      throw ParseError("field '" + where + "' has " + std::to_string(row.size()) +
                       " values, skeleton.D is " + std::to_string(D));
    for (int j = 0; j < D; ++j) {
      const json& v = row[static_cast<std::size_t>(j)];
      if (!v.is_number()) throw ParseError("field '" + where + "[" + std::to_string(j) + "]' must be a number");
      seq.frames(t, j) = v.get<double>();
    }
  }

  const json& segments = require(doc, "segments", "");
  if (!segments.is_array()) throw ParseError("field 'segments' must be an array");
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const std::string where = "segments[" + std::to_string(i) + "].";
    ActionSegment s{require_int(segments[i], "label", where), require_int(segments[i], "start", where),
                    require_int(segments[i], "end", where)};
    if (s.label < 0) throw ParseError("field '" + where + "label' must be >= 0");
    if (s.start < 0 || s.start >= T) throw ParseError("field '" + where + "start' outside [0, T)");
    if (s.end < s.start || s.end >= T) throw ParseError("field '" + where + "end' outside [start, T)");
    seq.script.segments.push_back(s);
  }
  return seq;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << contents;
    if (!out.flush()) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_sequence(const PoseSequence& seq, const std::filesystem::path& path) {
  write_file_atomic(path, sequence_to_json(seq));
}

PoseSequence read_sequence(const std::filesystem::path& path) {
  try {
    return sequence_from_json(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_dataset(const std::vector<PoseSequence>& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "seq_%05zu.json", i);
    write_sequence(data[i], dir / name);
  }
}

std::vector<PoseSequence> read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto& p = entry.path();
    if (entry.is_regular_file() && p.extension() == ".json" &&
        p.filename().string().find(".manifest") == std::string::npos)
      files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  std::vector<PoseSequence> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_sequence(f));
  return out;
}

}  // namespace martvae
