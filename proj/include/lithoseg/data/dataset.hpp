#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "lithoseg/data/image.hpp"

namespace lithoseg {

inline constexpr int kFramesPerClip = 5;

// A clip is five consecutive RGB frames plus the ground-truth mask of the
// final (most recent) frame.
struct ClipSequence {
  std::string clip_id;
  std::array<ImageF, kFramesPerClip> frames;
  MaskI mask;
};

inline std::string frame_filename(int index1) {
  return "frame_" + std::to_string(index1) + ".png";
}

// Layout on disk:
//   root/<split>/<clip_id>/frame_1.png .. frame_5.png, mask.png
inline ClipSequence load_clip(const std::filesystem::path& dir) {
  ClipSequence clip;
  clip.clip_id = dir.filename().string();
  for (int k = 0; k < kFramesPerClip; ++k) {
    auto path = dir / frame_filename(k + 1);
    if (!std::filesystem::exists(path))
      throw std::runtime_error("clip " + clip.clip_id + ": missing " + frame_filename(k + 1));
    RawImage raw = read_png(path.string());
    if (raw.channels != 3)
      throw std::runtime_error("clip " + clip.clip_id + ": " + frame_filename(k + 1) +
                               " must be RGB");
    clip.frames[size_t(k)] = image_from_raw(raw);
    if (k > 0 && (clip.frames[size_t(k)].h != clip.frames[0].h ||
                  clip.frames[size_t(k)].w != clip.frames[0].w))
      throw std::runtime_error("clip " + clip.clip_id + ": frame sizes differ");
  }
  auto mask_path = dir / "mask.png";
  if (!std::filesystem::exists(mask_path))
    throw std::runtime_error("clip " + clip.clip_id + ": missing mask.png");
  clip.mask = mask_from_raw(read_png(mask_path.string()), "clip " + clip.clip_id);
  if (clip.mask.h != clip.frames[0].h || clip.mask.w != clip.frames[0].w)
    throw std::runtime_error("clip " + clip.clip_id + ": mask size differs from frames");
  return clip;
}

inline std::vector<ClipSequence> load_clip_dataset(const std::string& root,
                                                   const std::string& split) {
  namespace fs = std::filesystem;
  fs::path dir = fs::path(root) / split;
  if (!fs::is_directory(dir))
    throw std::runtime_error("dataset split directory not found: " + dir.string());
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<ClipSequence> clips;
  clips.reserve(subdirs.size());
  for (const auto& d : subdirs) clips.push_back(load_clip(d));
  if (clips.empty())
    throw std::runtime_error("dataset split is empty: " + dir.string());
  return clips;
}

inline void save_clip(const std::string& root, const std::string& split,
                      const ClipSequence& clip) {
  namespace fs = std::filesystem;
  fs::path dir = fs::path(root) / split / clip.clip_id;
  fs::create_directories(dir);
  for (int k = 0; k < kFramesPerClip; ++k)
    write_png((dir / frame_filename(k + 1)).string(), raw_from_image(clip.frames[size_t(k)]));
  write_png((dir / "mask.png").string(), raw_from_mask(clip.mask));
}

// Fraction of mask pixels carrying a given label.
inline double label_fraction(const MaskI& m, int label) {
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < m.size(); ++i) hits += (m.data[i] == label);
  return double(hits) / double(m.size());
}

struct SplitStats {
  int count = 0;
  double stone_mean = 0, stone_sd = 0;
  double laser_mean = 0, laser_sd = 0;
};

// Population (biased) standard deviation over per-clip label fractions.
inline SplitStats split_stats(const std::vector<ClipSequence>& clips) {
  SplitStats s;
  s.count = int(clips.size());
  if (clips.empty()) return s;
  auto accumulate = [&](int label, double& mean, double& sd) {
    double sum = 0, sum2 = 0;
    for (const auto& c : clips) {
      double f = label_fraction(c.mask, label);
      sum += f;
      sum2 += f * f;
    }
    mean = sum / double(clips.size());
    sd = std::sqrt(std::max(0.0, sum2 / double(clips.size()) - mean * mean));
  };
  accumulate(1, s.stone_mean, s.stone_sd);
  accumulate(2, s.laser_mean, s.laser_sd);
  return s;
}

}  // namespace lithoseg
