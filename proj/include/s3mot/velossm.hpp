#pragma once

#include <random>
#include <vector>

#include "s3mot/geometry.hpp"
#include "s3mot/ssm.hpp"
#include "s3mot/tensor.hpp"
#include "s3mot/weights.hpp"

namespace s3mot {

// Pose and velocity tensors are packed rows of 10:
// [qw qx qy qz | px py pz | sw sh sl].
inline constexpr std::size_t kPoseDim = 10;

Tensor pose_to_tensor(const Pose& pose);                  // [1,10]
Tensor poses_to_tensor(const std::vector<Pose>& poses);   // [n,10]
Pose pose_from_row(const Tensor& t, std::size_t row);     // hemisphere-normalized
Tensor velocity_to_tensor(const VelocityVec& v);          // [1,10]
VelocityVec velocity_from_row(const Tensor& t, std::size_t row);

struct VeloSsmConfig {
  std::size_t model_dim = 320;   // d
  std::size_t inner_dim = 640;   // D = 2d
  std::size_t state_dim = 16;    // N
  std::size_t layers = 4;
  std::size_t conv_width = 3;
  std::size_t history = 10;      // n
  Discretization mode = Discretization::Euler;
};

struct VeloSsmParams {
  VeloSsmConfig cfg;

  struct Predict {
    Tensor w_embed;  // [10,d]
    std::vector<MambaBlockParams> layers;
    Tensor w_head;   // [d,10]; softmax-over-time weights per channel
  } predict;

  struct Update {
    Tensor w_embed;  // [20,d]
    Tensor w_gate;   // [1,d]
    Tensor b_gate;   // [d]
    std::vector<MambaBlockParams> layers;  // cross-conditioned on flow
    Tensor w_head;   // [d,10]; sigmoid blend weights
  } update;

  static VeloSsmParams init(const VeloSsmConfig& cfg, std::mt19937_64& rng);
  std::vector<Tensor> predict_params() const;
  std::vector<Tensor> update_params() const;
  void to_weights(WeightMap& w) const;
  static VeloSsmParams from_weights(const WeightMap& w, const VeloSsmConfig& cfg);
};

// ---------------------------------------------------------------------------
// Differentiable pose arithmetic on packed rows
// ---------------------------------------------------------------------------

// Row-wise quaternion product, both [B,4].
Tensor quat_mul_graph(const Tensor& a, const Tensor& b);

// Row-wise q / |q|, [B,4].
Tensor quat_normalize_graph(const Tensor& q);

// prev [B,10] boxplus vel [B,10] -> [B,10]. The rotation slice of vel is
// normalized before composition; the size slice is floored at 0.01.
// Hemisphere normalization is left to pose extraction (corner geometry is
// sign-invariant).
Tensor boxplus_graph(const Tensor& prev_pose, const Tensor& vel);

// Eight box vertices per row: pose [B,10] -> [B,8,3], same corner order as
// box_corners().
Tensor pose_corners_graph(const Tensor& pose);

// Sum of three single-component corner passes, averaged over the batch:
// orientation, position and dimensions each swapped into the ground-truth
// pose while the other two stay at ground truth.
Tensor disentangled_l1_loss_graph(const Tensor& gt_pose, const Tensor& pred_pose);
double disentangled_l1_loss(const Pose& gt, const Pose& pred);

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

struct VeloPredictGraph {
  Tensor pose;      // [B,10]
  Tensor velocity;  // [B,10] aggregated
  Tensor flow;      // [B,d]
};

// velocities: [B,n,10] (oldest to newest), last_pose: [B,10].
VeloPredictGraph velossm_predict_graph(const Tensor& velocities,
                                       const Tensor& last_pose,
                                       const VeloSsmParams& p);

// pred_vel/obs_vel: [B,10], prev_pose: [B,10], confidence: [B,1],
// flow: [B,d]; returns the refined pose [B,10].
Tensor velossm_update_graph(const Tensor& pred_vel, const Tensor& obs_vel,
                            const Tensor& prev_pose, const Tensor& confidence,
                            const Tensor& flow, const VeloSsmParams& p);

struct VeloPredictResult {
  Pose pose;
  VelocityVec velocity;
  Tensor flow;  // [d]
};

// History is oldest to newest and must be non-empty (EmptyHistory otherwise);
// shorter histories are left-padded by repeating the oldest pose.
VeloPredictResult velossm_predict(const std::vector<Pose>& history,
                                  const VeloSsmParams& p);

Pose velossm_update(const VelocityVec& pred_vel, const VelocityVec& obs_vel,
                    const Pose& prev, double confidence, const Tensor& flow,
                    const VeloSsmParams& p);

// Repeat-last-velocity baseline: last boxplus (last - second_last).
Pose constant_velocity_predict(const std::vector<Pose>& history);

}  // namespace s3mot
