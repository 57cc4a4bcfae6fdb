#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "s3mot/assoc.hpp"
#include "s3mot/fcoe.hpp"
#include "s3mot/hssm.hpp"
#include "s3mot/velossm.hpp"

namespace s3mot {

// ---------------------------------------------------------------------------
// Association problems (HSSM supervision)
// ---------------------------------------------------------------------------

// Hidden linear cue combination defining association labels. HSSM never sees
// these weights; it has to reproduce the Hungarian solution of the combined
// cost from the raw cue stack. Order: [App, IoU, Mot, Cls].
inline constexpr std::array<double, 4> kHiddenCueWeights{0.45, 0.20, 0.25, 0.10};

// 1 - sum_c w_c * D_c as an [H,W] cost matrix.
Eigen::MatrixXd hidden_cue_cost(const Tensor& distance);

struct AssocProblem {
  Tensor distance;    // [4,H,W]
  Tensor gt;          // [H,W] binary
  Assignment oracle;  // Hungarian on the hidden combination
};

// Mini tracking-frame problems (H,W <= 8) whose cues come from the real
// build_distance_tensor pipeline over simulated tracks and noisy detections.
std::vector<AssocProblem> make_assoc_problems(std::size_t count,
                                              std::uint64_t seed);

// Fraction of oracle matched pairs reproduced by
// extract_assignment(hssm_forward(D), tau).
double assoc_agreement(const HssmParams& params,
                       const std::vector<AssocProblem>& problems, double tau);

struct HssmTrainConfig {
  std::size_t train_problems = 2000;
  std::size_t heldout_problems = 500;
  std::size_t epochs = 3;
  double lr = 1e-3;
  double gamma = 2.0;
  double tau = 0.5;
  std::uint64_t seed = 7;
  std::size_t log_every = 200;  // steps between curve samples
};

struct HssmTrainResult {
  std::vector<std::pair<std::size_t, double>> loss_curve;
  std::vector<std::pair<std::size_t, double>> agreement_curve;
  double heldout_agreement = 0.0;
  double seconds = 0.0;
};

HssmTrainResult train_hssm_toy(HssmParams& params, const HssmTrainConfig& cfg);

// ---------------------------------------------------------------------------
// VeloSSM toy training
// ---------------------------------------------------------------------------

struct VeloTrainConfig {
  std::size_t steps = 400;
  std::size_t batch = 8;
  double lr = 3e-3;
  double pos_noise = 0.05;  // sigma, meters
  std::uint64_t seed = 7;
  std::size_t update_steps = 200;  // decoder phase after the encoder phase
  std::size_t eval_windows = 200;
  std::size_t log_every = 25;
};

struct VeloTrainResult {
  std::vector<std::pair<std::size_t, double>> loss_curve;
  double model_corner_l1 = 0.0;
  double baseline_corner_l1 = 0.0;  // repeat-last-velocity
  double seconds = 0.0;
};

VeloTrainResult train_velossm_toy(VeloSsmParams& params,
                                  const VeloTrainConfig& cfg);

// Mean over the 8 corners of the L1 corner distance between two poses.
double mean_corner_l1(const Pose& a, const Pose& b);

// ---------------------------------------------------------------------------
// FCOE toy training
// ---------------------------------------------------------------------------

struct FcoeTrainConfig {
  std::size_t steps = 500;
  double lr = 0.05;
  std::uint64_t seed = 7;
  EmbeddingMapSpec map;
  std::size_t negatives = 16;
  std::size_t log_every = 25;
};

struct FcoeTrainResult {
  std::vector<std::pair<std::size_t, double>> loss_curve;
  double intra_cos = 0.0;  // mean cosine within instances
  double inter_cos = 1.0;  // mean cosine across instances
  double seconds = 0.0;
  Tensor key_embeddings;
  Tensor ref_embeddings;
};

// Optimizes randomly initialized embeddings against the synthetic map's
// labels/center-ness.
FcoeTrainResult train_fcoe_toy(const FcoeTrainConfig& cfg);

}  // namespace s3mot
