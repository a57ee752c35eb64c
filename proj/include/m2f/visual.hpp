#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace m2f::visual {

inline constexpr std::size_t kFramesPerUtterance = 15;

struct FaceObservation {
  std::vector<double> feature;  // extractor output for the face crop
  double bbox_area = 0.0;       // pixels^2, > 0
  double confidence = 1.0;      // detector confidence in [0, 1]
};

struct FrameObservation {
  std::vector<double> scene_feature;
  std::vector<FaceObservation> faces;  // may be empty
};

struct UtteranceFrames {
  std::vector<FrameObservation> frames;  // exactly kFramesPerUtterance
};

struct FaceModelConfig {
  double min_confidence = 0.0;  // detections below this are ignored
};

// area_i / sum(areas). Throws on an empty list or a non-positive area.
std::vector<double> normalize_face_weights(std::span<const double> areas);

// Area-weighted sum of face features; a frame without faces yields zeros(dim).
std::vector<double> frame_face_feature(const std::vector<FaceObservation>& faces, std::size_t dim,
                                       const FaceModelConfig& cfg = {});

// Feature dimension shared by every scene and face vector of the utterance.
std::size_t feature_dim(const UtteranceFrames& u);

std::vector<double> utterance_face_embedding(const UtteranceFrames& u, const FaceModelConfig& cfg = {});
std::vector<double> utterance_scene_embedding(const UtteranceFrames& u);

// [scene || face], length 2 * feature_dim(u).
std::vector<double> visual_utterance_embedding(const UtteranceFrames& u, const FaceModelConfig& cfg = {});

}  // namespace m2f::visual
