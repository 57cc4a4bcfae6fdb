#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "s3mot/geometry.hpp"
#include "s3mot/tensor.hpp"

namespace s3mot {

// A complete partition of both index sets: every track/detection index is
// either in exactly one match or in the corresponding unmatched list.
struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> matches;
  std::vector<std::size_t> unmatched_tracks;
  std::vector<std::size_t> unmatched_detections;

  double total_cost(const Eigen::MatrixXd& cost) const {
    double acc = 0.0;
    for (const auto& [r, c] : matches) acc += cost(static_cast<Eigen::Index>(r),
                                                   static_cast<Eigen::Index>(c));
    return acc;
  }
};

// Bi-directional softmax similarity over row-wise L2-normalized embeddings:
// (softmax over rows + softmax over columns of f_T f_D^T) / 2.
Eigen::MatrixXd appearance_similarity(const Eigen::MatrixXd& track_embeds,
                                      const Eigen::MatrixXd& det_embeds);

// exp(-|p_T - p_D| / 10)
double centroid_similarity(const Eigen::Vector3d& p_track,
                           const Eigen::Vector3d& p_det);

// exp(-|v_T - v_D| / 5)
double pseudo_motion_similarity(const Eigen::Vector3d& v_track,
                                const Eigen::Vector3d& v_det);

// w_cos-blended centroid/pseudo-motion similarity; w_cos = (1 + cos)/2 and
// defaults to 0.5 when either velocity is numerically zero.
double motion_similarity(const Eigen::Vector3d& v_track,
                         const Eigen::Vector3d& v_det,
                         const Eigen::Vector3d& p_track,
                         const Eigen::Vector3d& p_det);

// 1.0 on class match, 0.0 otherwise.
double category_consistency(int class_track, int class_det);

// Inputs to one side of the association problem.
struct TrackAssocInfo {
  Pose predicted;             // current-frame predicted pose
  Eigen::Vector3d prev_pos;   // position one frame back (pseudo-motion base)
  Eigen::Vector3d velocity;   // linear velocity estimate, m/frame
  Eigen::VectorXd embedding;  // L2-normalized appearance
  int class_id = 0;
};

struct DetAssocInfo {
  Pose pose;
  Eigen::VectorXd embedding;
  int class_id = 0;
};

// Stacks the four cue channels [App, IoU, Mot, Cls] into a [4,H,W] tensor,
// all entries in [0,1]. The detection's pseudo-motion vector against track i
// is p_det - prev_pos_i. Throws EmptyProblem when either side is empty.
Tensor build_distance_tensor(const std::vector<TrackAssocInfo>& tracks,
                             const std::vector<DetAssocInfo>& dets);

// Kuhn-Munkres minimum-cost complete matching over min(H,W) pairs.
// Rectangular inputs are padded internally with a large constant; ties break
// deterministically toward low row then low column indices. NonFiniteCost on
// NaN/Inf entries.
Assignment hungarian_solve(const Eigen::MatrixXd& cost);

// Repeatedly picks the globally cheapest unassigned (row, col) pair.
Assignment greedy_solve(const Eigen::MatrixXd& cost);

// Hungarian on (1 - soft), then drops matched pairs with soft < tau into the
// unmatched sets.
Assignment extract_assignment(const Eigen::MatrixXd& soft, double tau = 0.5);

// [H,W] tensor -> Eigen matrix.
Eigen::MatrixXd to_matrix(const Tensor& t);

}  // namespace s3mot
