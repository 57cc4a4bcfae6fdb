#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "s3mot/kitti.hpp"

namespace s3mot {

// Desk-scale stand-in for a KITTI sequence: boxes moving in a flat z-up
// world, detections as ground truth plus Gaussian noise and dropout, and
// per-object appearance anchors on the embedding sphere.
struct SyntheticSceneSpec {
  std::uint64_t seed = 1;
  std::size_t objects = 4;
  std::size_t frames = 20;
  // per-object motion model, cycled; "constant-velocity" or "turning"
  std::vector<std::string> motions;
  double pos_noise = 0.0;       // sigma, meters
  double yaw_noise = 0.0;       // sigma, radians
  double dropout = 0.0;         // detection dropout probability
  double embed_separation = 0.9;  // 1 = noiseless anchors
  std::size_t embed_dim = 16;
  bool crossing = false;  // start on a ring, drive through the center
};

struct SyntheticScene {
  FrameRows gt;
  FrameRows detections;  // track_id -1, score set
  std::vector<std::vector<Eigen::VectorXd>> det_embeddings;  // parallel to detections
  std::vector<std::vector<int>> det_object;  // true object index per detection
};

// Pure function of the spec. Throws InvalidSpec on out-of-range fields.
SyntheticScene synth_scene_generate(const SyntheticSceneSpec& spec);

// Embedding sidecar: one text line per detection row,
// "frame row_index dim v0 ... v{dim-1}".
void write_embeddings_sidecar(
    const std::vector<std::vector<Eigen::VectorXd>>& embeddings,
    const std::string& path);
std::vector<std::vector<Eigen::VectorXd>> read_embeddings_sidecar(
    const std::string& path);

}  // namespace s3mot
