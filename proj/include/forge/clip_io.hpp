#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/error.hpp"
#include "forge/motion.hpp"

namespace forge {

using json = nlohmann::json;

namespace detail {

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << text;
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": " + e.what());
  }
}

template <typename T>
T get_field(const json& j, const char* key) {
  if (!j.contains(key)) {
    throw ParseError(std::string(key) + ": missing field");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(std::string(key) + ": " + e.what());
  }
}

// JSON has no NaN literal; null stands in for a non-finite coordinate.
inline double coordinate(const json& v) {
  if (v.is_null()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  if (!v.is_number()) {
    throw ParseError("frames: coordinate is not a number");
  }
  return v.get<double>();
}

} // namespace detail

inline json clip_to_json(const MotionClip& c) {
  json j;
  j["fps"] = c.fps;
  j["ground_height"] = c.ground_height;
  j["label"] = c.label;
  j["tags"] = c.tags;
  j["joints"] = c.skeleton.joint_names;
  j["parents"] = c.skeleton.parent_index;
  j["bone_lengths"] = c.skeleton.bone_lengths;
  j["foot_joints"] = c.skeleton.foot_joints;
  j["keypoint_joints"] = c.skeleton.keypoint_joints;
  json frames = json::array();
  for (std::size_t t = 0; t < c.num_frames(); ++t) {
    json frame = json::array();
    for (std::size_t k = 0; k < c.num_joints(); ++k) {
      const auto p = c.at(t, k);
      frame.push_back({p.x(), p.y(), p.z()});
    }
    frames.push_back(std::move(frame));
  }
  j["frames"] = std::move(frames);
  return j;
}

/// Parses and validates a clip. When "bone_lengths" is absent, rest lengths
/// are taken from frame 0.
inline MotionClip clip_from_json(const json& j) {
  if (!j.is_object()) {
    throw ParseError("clip: expected a JSON object");
  }
  MotionClip c;
  c.fps = detail::get_field<double>(j, "fps");
  c.ground_height = detail::get_field<double>(j, "ground_height");
  c.label = detail::get_field<std::string>(j, "label");
  if (j.contains("tags")) {
    c.tags = detail::get_field<std::vector<std::string>>(j, "tags");
  }
  c.skeleton.joint_names = detail::get_field<std::vector<std::string>>(j, "joints");
  c.skeleton.parent_index = detail::get_field<std::vector<int>>(j, "parents");
  const auto feet = detail::get_field<std::vector<int>>(j, "foot_joints");
  if (feet.size() != 2) {
    throw ValidationError("foot_joints: exactly 2 foot joints required");
  }
  c.skeleton.foot_joints = {feet[0], feet[1]};
  c.skeleton.keypoint_joints = detail::get_field<std::vector<int>>(j, "keypoint_joints");

  const std::size_t nj = c.skeleton.joint_names.size();
  if (!j.contains("frames") || !j["frames"].is_array()) {
    throw ParseError("frames: missing or not an array");
  }
  const json& frames = j["frames"];
  c.positions.reserve(frames.size() * nj * 3);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const json& frame = frames[t];
    if (!frame.is_array() || frame.size() != nj) {
      throw ValidationError("frames[" + std::to_string(t) + "]: expected " + std::to_string(nj) + " joints");
    }
    for (std::size_t k = 0; k < nj; ++k) {
      const json& p = frame[k];
      if (!p.is_array() || p.size() != 3) {
        throw ParseError("frames[" + std::to_string(t) + "][" + std::to_string(k) + "]: expected [x,y,z]");
      }
      for (std::size_t a = 0; a < 3; ++a) {
        c.positions.push_back(detail::coordinate(p[a]));
      }
    }
  }

  if (j.contains("bone_lengths")) {
    c.skeleton.bone_lengths = detail::get_field<std::vector<double>>(j, "bone_lengths");
  } else {
    c.skeleton.bone_lengths.assign(nj, 0.0);
    if (c.skeleton.parent_index.size() == nj && !c.positions.empty()) {
      for (std::size_t k = 1; k < nj; ++k) {
        const int p = c.skeleton.parent_index[k];
        if (p >= 0 && static_cast<std::size_t>(p) < nj) {
          c.skeleton.bone_lengths[k] = bone_length(c, 0, k);
        }
      }
    }
  }
  validate(c);
  return c;
}

inline MotionClip load_clip(const std::filesystem::path& path) {
  return clip_from_json(detail::parse_json(detail::read_text(path), path.string()));
}

inline void save_clip(const std::filesystem::path& path, const MotionClip& clip) {
  detail::write_text(path, clip_to_json(clip).dump());
}

// ---------------------------------------------------------------------------
// Corpus: a directory of clip files plus manifest.json listing file names and
// split assignment. The clip id is the file stem.

struct CorpusEntry {
  std::string id;
  std::string split = "train";
  MotionClip clip;
};

using Corpus = std::vector<CorpusEntry>;

inline void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  json manifest;
  manifest["version"] = 1;
  json clips = json::array();
  for (const auto& e : corpus) {
    const std::string file = e.id + ".json";
    save_clip(dir / file, e.clip);
    clips.push_back({{"file", file}, {"split", e.split}});
  }
  manifest["clips"] = std::move(clips);
  detail::write_text(dir / "manifest.json", manifest.dump(2));
}

/// Loads every clip listed in the manifest, optionally restricted to a split.
inline Corpus load_corpus(const std::filesystem::path& dir, const std::string& split = "") {
  const auto manifest_path = dir / "manifest.json";
  const json manifest = detail::parse_json(detail::read_text(manifest_path), manifest_path.string());
  if (!manifest.contains("clips") || !manifest["clips"].is_array()) {
    throw ParseError(manifest_path.string() + ": clips: missing or not an array");
  }
  Corpus corpus;
  for (const auto& item : manifest["clips"]) {
    CorpusEntry e;
    const auto file = detail::get_field<std::string>(item, "file");
    e.split = item.contains("split") ? detail::get_field<std::string>(item, "split") : "train";
    if (!split.empty() && e.split != split) {
      continue;
    }
    e.id = std::filesystem::path(file).stem().string();
    try {
      e.clip = load_clip(dir / file);
    } catch (const ValidationError& err) {
      throw ValidationError(file + ": " + err.what());
    } catch (const ParseError& err) {
      throw ParseError(file + ": " + err.what());
    }
    corpus.push_back(std::move(e));
  }
  return corpus;
}

} // namespace forge
