#include "m2f/visual.hpp"

#include <stdexcept>
#include <string>

#include "m2f/tensor.hpp"

namespace m2f::visual {

std::vector<double> normalize_face_weights(std::span<const double> areas) {
  if (areas.empty()) throw std::invalid_argument("normalize_face_weights: no faces");
  double total = 0.0;
  for (double a : areas) {
    if (!(a > 0.0)) throw std::invalid_argument("face bounding-box area must be positive, got " + std::to_string(a));
    total += a;
  }
  std::vector<double> w(areas.size());
  for (std::size_t i = 0; i < areas.size(); ++i) w[i] = areas[i] / total;
  return w;
}

std::vector<double> frame_face_feature(const std::vector<FaceObservation>& faces, std::size_t dim,
                                       const FaceModelConfig& cfg) {
  std::vector<double> areas;
  std::vector<const FaceObservation*> kept;
  for (const auto& f : faces) {
    if (f.feature.size() != dim) {
      throw std::invalid_argument("face feature of length " + std::to_string(f.feature.size()) +
                                  " in a frame of dimension " + std::to_string(dim));
    }
    if (f.confidence < cfg.min_confidence) continue;
    areas.push_back(f.bbox_area);
    kept.push_back(&f);
  }
  std::vector<double> out(dim, 0.0);
  if (kept.empty()) return out;
  const auto weights = normalize_face_weights(areas);
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j) out[j] += weights[i] * kept[i]->feature[j];
  return out;
}

std::size_t feature_dim(const UtteranceFrames& u) {
  if (u.frames.size() != kFramesPerUtterance) {
    throw std::invalid_argument("utterance needs exactly " + std::to_string(kFramesPerUtterance) +
                                " frames, got " + std::to_string(u.frames.size()));
  }
  const std::size_t d = u.frames.front().scene_feature.size();
  if (d == 0) throw std::invalid_argument("empty scene feature");
  for (const auto& f : u.frames) {
    if (f.scene_feature.size() != d) throw std::invalid_argument("scene features differ in dimension");
  }
  return d;
}

namespace {

std::vector<double> pool_frames(const std::vector<std::vector<double>>& rows) {
  const std::size_t d = rows.front().size();
  std::vector<double> flat;
  flat.reserve(rows.size() * d);
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  const Tensor pooled = max_pool_over_axis(Tensor({rows.size(), d}, std::move(flat)), 0);
  return pooled.values();
}

}  // namespace

std::vector<double> utterance_face_embedding(const UtteranceFrames& u, const FaceModelConfig& cfg) {
  const std::size_t d = feature_dim(u);
  std::vector<std::vector<double>> rows;
  for (const auto& f : u.frames) rows.push_back(frame_face_feature(f.faces, d, cfg));
  return pool_frames(rows);
}

std::vector<double> utterance_scene_embedding(const UtteranceFrames& u) {
  feature_dim(u);
  std::vector<std::vector<double>> rows;
  for (const auto& f : u.frames) rows.push_back(f.scene_feature);
  return pool_frames(rows);
}

std::vector<double> visual_utterance_embedding(const UtteranceFrames& u, const FaceModelConfig& cfg) {
  auto out = utterance_scene_embedding(u);
  const auto face = utterance_face_embedding(u, cfg);
  out.insert(out.end(), face.begin(), face.end());
  return out;
}

}  // namespace m2f::visual
