#include "s3mot/tracker.hpp"

#include <algorithm>
#include <numeric>

#include "s3mot/errors.hpp"

namespace s3mot {

std::vector<DetectionState> nms_filter(const std::vector<DetectionState>& dets,
                                       const TrackerConfig& cfg) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].confidence >= cfg.nms_confidence) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });

  std::vector<DetectionState> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (iou_2d(dets[idx].bbox2d, k.bbox2d) > cfg.nms_iou2d ||
          bev_iou(dets[idx].pose, k.pose) > cfg.nms_bev_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[idx]);
  }
  return kept;
}

Tracker::Tracker(const TrackerConfig& cfg, const VeloSsmParams& velo,
                 const HssmParams* hssm)
    : cfg_(cfg), velo_(velo), hssm_(hssm) {
  if (cfg_.backend == AssocBackend::Hssm && hssm_ == nullptr)
    throw InvalidSpec("tracker: hssm backend requires hssm weights");
}

void Tracker::push_history(Track& t, const Pose& pose) {
  t.history.push_back(pose);
  const std::size_t cap = cfg_.history + 1;
  if (t.history.size() > cap)
    t.history.erase(t.history.begin(),
                    t.history.begin() +
                        static_cast<std::ptrdiff_t>(t.history.size() - cap));
}

void Tracker::spawn(const DetectionState& det) {
  Track t;
  t.id = next_id_++;
  t.history = {det.pose};
  t.embedding = det.embedding;
  if (t.embedding.size() > 0) t.embedding.normalize();
  t.flow = Tensor::zeros({velo_.cfg.model_dim});
  t.velocity = VelocityVec{};
  t.predicted = det.pose;
  t.class_id = det.class_id;
  t.confidence = det.confidence;
  t.hits = 1;
  // cold-start rule: the first min_hits frames of a scene emit immediately
  t.confirmed = cfg_.min_hits <= 1 || frame_index_ < cfg_.min_hits;
  tracks_.push_back(std::move(t));
}

std::vector<TrackSnapshot> Tracker::step(
    const std::vector<DetectionState>& detections) {
  const std::vector<DetectionState> dets = nms_filter(detections, cfg_);

  // 1. predict every live track
  for (auto& t : tracks_) {
    const auto pred = velossm_predict(t.history, velo_);
    t.predicted = pred.pose;
    t.pred_velocity = pred.velocity;
    t.flow = pred.flow;
  }

  // 2-3. heterogeneous cues + backend assignment
  Assignment assign;
  if (!tracks_.empty() && !dets.empty()) {
    std::vector<TrackAssocInfo> tinfo(tracks_.size());
    for (std::size_t i = 0; i < tracks_.size(); ++i) {
      tinfo[i].predicted = tracks_[i].predicted;
      tinfo[i].prev_pos = tracks_[i].history.back().p;
      tinfo[i].velocity = tracks_[i].pred_velocity.dp;
      tinfo[i].embedding = tracks_[i].embedding;
      tinfo[i].class_id = tracks_[i].class_id;
    }
    std::vector<DetAssocInfo> dinfo(dets.size());
    for (std::size_t j = 0; j < dets.size(); ++j) {
      dinfo[j].pose = dets[j].pose;
      dinfo[j].embedding = dets[j].embedding;
      dinfo[j].class_id = dets[j].class_id;
    }
    const Tensor distance = build_distance_tensor(tinfo, dinfo);

    if (cfg_.backend == AssocBackend::Hssm) {
      NoTapeScope quiet;
      const Tensor soft = hssm_forward(distance, *hssm_);
      assign = extract_assignment(to_matrix(soft), cfg_.tau_assoc);
    } else {
      const std::size_t H = tracks_.size(), W = dets.size();
      Eigen::MatrixXd mean_sim(H, W);
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < 4; ++c)
            acc += distance.at((c * H + i) * W + j);
          mean_sim(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
              acc / 4.0;
        }
      const Eigen::MatrixXd cost = Eigen::MatrixXd::Ones(H, W) - mean_sim;
      Assignment raw = cfg_.backend == AssocBackend::Hungarian
                           ? hungarian_solve(cost)
                           : greedy_solve(cost);
      for (const auto& [r, c] : raw.matches) {
        if (mean_sim(static_cast<Eigen::Index>(r),
                     static_cast<Eigen::Index>(c)) >= cfg_.tau_assoc)
          assign.matches.emplace_back(r, c);
      }
      std::vector<char> ru(H, 0), cu(W, 0);
      for (const auto& [r, c] : assign.matches) {
        ru[r] = 1;
        cu[c] = 1;
      }
      for (std::size_t r = 0; r < H; ++r)
        if (!ru[r]) assign.unmatched_tracks.push_back(r);
      for (std::size_t c = 0; c < W; ++c)
        if (!cu[c]) assign.unmatched_detections.push_back(c);
    }
  } else {
    for (std::size_t i = 0; i < tracks_.size(); ++i)
      assign.unmatched_tracks.push_back(i);
    for (std::size_t j = 0; j < dets.size(); ++j)
      assign.unmatched_detections.push_back(j);
  }

  // 4-5. matched refinement
  for (const auto& [ti, dj] : assign.matches) {
    Track& t = tracks_[ti];
    const DetectionState& det = dets[dj];
    const Pose prev = t.history.back();
    const VelocityVec obs_vel = state_difference(prev, det.pose);
    const Pose refined = velossm_update(t.pred_velocity, obs_vel, prev,
                                        det.confidence, t.flow, velo_);
    push_history(t, refined);
    t.velocity = state_difference(prev, refined);
    t.age_since_update = 0;
    t.hits += 1;
    if (t.hits >= cfg_.min_hits) t.confirmed = true;
    t.confidence = det.confidence;
    if (det.embedding.size() > 0) {
      if (t.embedding.size() == det.embedding.size()) {
        t.embedding = cfg_.ema_momentum * t.embedding +
                      (1.0 - cfg_.ema_momentum) * det.embedding;
        const double n = t.embedding.norm();
        if (n > 1e-12) t.embedding /= n;
      } else {
        t.embedding = det.embedding;
      }
    }
  }

  // 6. unmatched tracks coast on their prediction
  for (std::size_t ti : assign.unmatched_tracks) {
    Track& t = tracks_[ti];
    const Pose prev = t.history.back();
    push_history(t, t.predicted);
    t.velocity = state_difference(prev, t.predicted);
    t.age_since_update += 1;
  }
  tracks_.erase(std::remove_if(tracks_.begin(), tracks_.end(),
                               [&](const Track& t) {
                                 return t.age_since_update > cfg_.max_age;
                               }),
                tracks_.end());

  // 7. spawn the leftovers
  for (std::size_t dj : assign.unmatched_detections) spawn(dets[dj]);

  // 8. emit active confirmed tracks (coasting ones report their prediction)
  std::vector<TrackSnapshot> out;
  for (const auto& t : tracks_) {
    if (!t.confirmed) continue;
    out.push_back(TrackSnapshot{t.id, t.history.back(), t.class_id, t.confidence});
  }
  std::sort(out.begin(), out.end(),
            [](const TrackSnapshot& a, const TrackSnapshot& b) {
              return a.id < b.id;
            });
  frame_index_ += 1;
  return out;
}

}  // namespace s3mot
