#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "forge/clip_io.hpp"
#include "forge/error.hpp"
#include "forge/motion.hpp"

namespace forge {

struct QcParams {
  double eta = 0.5; // meters
  std::vector<std::string> excluded_tags{"object-interaction", "non-grounded"};
};

inline void validate(const QcParams& p) { detail::require(p.eta > 0.0, "qc.eta", "must be > 0"); }

enum class QcReason { kOk, kOverThreshold, kExcludedTag };

inline std::string_view to_string(QcReason r) {
  switch (r) {
    case QcReason::kOk: return "ok";
    case QcReason::kOverThreshold: return "over_threshold";
    case QcReason::kExcludedTag: return "excluded_tag";
  }
  return "ok";
}

struct QcVerdict {
  bool accepted = false;
  double mpjpe = 0.0;
  QcReason reason = QcReason::kOk;
};

/// Accepts a refinement when MPJPE(original, refined) < eta and the clip has
/// no excluded tag. A tie at eta rejects.
inline QcVerdict gate_clip(const MotionClip& original, const MotionClip& refined, const QcParams& params) {
  validate(params);
  QcVerdict v;
  v.mpjpe = compute_clip_error(original, refined).mpjpe;
  for (const auto& tag : params.excluded_tags) {
    if (original.has_tag(tag) || refined.has_tag(tag)) {
      v.reason = QcReason::kExcludedTag;
      return v;
    }
  }
  if (v.mpjpe < params.eta) {
    v.accepted = true;
    v.reason = QcReason::kOk;
  } else {
    v.reason = QcReason::kOverThreshold;
  }
  return v;
}

struct RefinedPair {
  std::string id;
  MotionClip original;
  MotionClip refined;
};

struct Rejection {
  std::string id;
  QcReason reason = QcReason::kOk;
  double mpjpe = 0.0;
};

struct FinetuneSet {
  Corpus accepted; // refined clips
  std::vector<Rejection> rejections;
};

inline FinetuneSet build_finetune_set(const std::vector<RefinedPair>& pairs, const QcParams& params) {
  FinetuneSet out;
  for (const auto& p : pairs) {
    const QcVerdict v = gate_clip(p.original, p.refined, params);
    if (v.accepted) {
      out.accepted.push_back({p.id, "train", p.refined});
    } else {
      out.rejections.push_back({p.id, v.reason, v.mpjpe});
    }
  }
  return out;
}

namespace detail {

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) {
      break;
    }
  }
  return buf;
}

} // namespace detail

inline std::string rejection_csv(const std::vector<Rejection>& rejections) {
  std::string out = "clip_id,reason,mpjpe\n";
  for (const auto& r : rejections) {
    out += r.id + "," + std::string(to_string(r.reason)) + "," + detail::format_double(r.mpjpe) + "\n";
  }
  return out;
}

inline void write_finetune_set(const std::filesystem::path& dir, const FinetuneSet& set) {
  save_corpus(dir / "accepted", set.accepted);
  detail::write_text(dir / "rejections.csv", rejection_csv(set.rejections));
}

} // namespace forge
