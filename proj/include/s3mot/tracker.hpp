#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "s3mot/assoc.hpp"
#include "s3mot/geometry.hpp"
#include "s3mot/hssm.hpp"
#include "s3mot/velossm.hpp"

namespace s3mot {

enum class AssocBackend { Hssm, Hungarian, Greedy };

struct TrackerConfig {
  std::size_t max_age = 3;
  std::size_t min_hits = 2;
  double tau_assoc = 0.5;
  std::size_t history = 10;
  AssocBackend backend = AssocBackend::Hungarian;
  double nms_iou2d = 0.75;
  double nms_confidence = 0.5;
  double nms_bev_iou = 0.01;
  double ema_momentum = 0.9;
};

struct DetectionState {
  Pose pose;
  double confidence = 1.0;
  int class_id = 0;
  Eigen::VectorXd embedding;            // L2-normalized; may be empty
  std::array<double, 4> bbox2d{0, 0, 0, 0};  // image box for the 2-D NMS pass
};

struct TrackSnapshot {
  long long id = 0;
  Pose pose;
  int class_id = 0;
  double confidence = 1.0;
};

// Confidence gate, greedy 2-D NMS, then BEV IoU near-duplicate suppression.
std::vector<DetectionState> nms_filter(const std::vector<DetectionState>& dets,
                                       const TrackerConfig& cfg);

// Per-frame online pipeline: predict, associate, update, manage lifecycle.
// One Tracker instance drives one scene and is strictly sequential.
class Tracker {
 public:
  Tracker(const TrackerConfig& cfg, const VeloSsmParams& velo,
          const HssmParams* hssm = nullptr);

  // Runs one frame and returns the confirmed tracks.
  std::vector<TrackSnapshot> step(const std::vector<DetectionState>& detections);

  std::size_t live_tracks() const { return tracks_.size(); }
  std::size_t frame_index() const { return frame_index_; }

 private:
  struct Track {
    long long id = 0;
    std::vector<Pose> history;  // oldest to newest, capped at history+1
    Eigen::VectorXd embedding;
    Tensor flow;                // [d]
    VelocityVec velocity;       // last accepted per-frame delta
    Pose predicted;             // current-frame prediction
    VelocityVec pred_velocity;
    std::size_t age_since_update = 0;
    std::size_t hits = 1;
    bool confirmed = false;
    int class_id = 0;
    double confidence = 1.0;
  };

  void spawn(const DetectionState& det);
  void push_history(Track& t, const Pose& pose);

  TrackerConfig cfg_;
  const VeloSsmParams& velo_;
  const HssmParams* hssm_;
  std::vector<Track> tracks_;
  long long next_id_ = 1;
  std::size_t frame_index_ = 0;
};

}  // namespace s3mot
