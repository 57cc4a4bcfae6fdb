#pragma once

#include <array>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "s3mot/ssm.hpp"
#include "s3mot/tensor.hpp"
#include "s3mot/weights.hpp"

namespace s3mot {

// Four directed flattenings of a [C,H,W] grid, each [C,H*W]:
// 0 row-major, 1 its reverse, 2 column-major, 3 its reverse.
std::array<Tensor, 4> bi_scan(const Tensor& x);

// Realigns the four processed sequences back onto the grid and sums them.
// With identity path processing this is exactly 4x the scanned input.
Tensor bi_merge(const std::array<Tensor, 4>& ys, std::size_t height,
                std::size_t width);

struct HssmConfig {
  std::size_t in_channels = 4;   // distance cue count
  std::size_t base_dim = 16;     // stage-0 channel width
  std::size_t stages = 2;        // channel width doubles per stage
  std::size_t levels = 2;        // SS2D levels per stage
  std::size_t state_dim = 16;    // N
  std::size_t dw_kernel = 3;     // depthwise conv extent inside levels
  bool pos_encoding = true;      // fixed 2-D sinusoids after patch embed
  Discretization mode = Discretization::Euler;
};

// One SS2D level at channel width c: pointwise projection, depthwise conv,
// four path-independent scans, merge, pointwise output with residual, then a
// pre-norm residual FFN.
struct Ss2dLevelParams {
  Tensor ln1_g, ln1_b;
  Tensor in_w, in_b;    // 1x1 conv [c,c,1,1], [c]
  Tensor dw_k, dw_b;    // depthwise [c,k,k], [c]
  std::array<SsmCoreParams, 4> paths;
  Tensor ln2_g, ln2_b;
  Tensor out_w, out_b;  // 1x1 conv
  Tensor ffn_ln_g, ffn_ln_b;
  Tensor ffn_w1, ffn_b1;  // 1x1 conv c -> 2c
  Tensor ffn_w2, ffn_b2;  // 1x1 conv 2c -> c

  static Ss2dLevelParams init(std::size_t c, std::size_t state,
                              std::size_t dw_kernel, std::mt19937_64& rng);
  void collect(std::vector<Tensor>& out) const;
  void to_weights(const std::string& prefix, WeightMap& w) const;
  static Ss2dLevelParams from_weights(const std::string& prefix,
                                      const WeightMap& w);
};

struct HssmParams {
  HssmConfig cfg;
  Tensor patch_w, patch_b;        // 1x1 conv in_channels -> base_dim
  Tensor patch_ln_g, patch_ln_b;
  std::vector<std::vector<Ss2dLevelParams>> stage_levels;
  std::vector<Tensor> trans_w, trans_b, trans_ln_g, trans_ln_b;  // per stage
  Tensor head_ln_g, head_ln_b;
  Tensor head_w, head_b;          // 1x1 conv to one channel

  static HssmParams init(const HssmConfig& cfg, std::mt19937_64& rng);
  std::vector<Tensor> all_params() const;
  void to_weights(WeightMap& w) const;
  static HssmParams from_weights(const WeightMap& w,
                                 const HssmConfig& cfg_hint = {});
};

// Fixed 2-D sinusoidal positional encodings, [channels,H,W]; the first half
// of the channels encodes the row index, the second half the column index.
Tensor positional_encoding_2d(std::size_t channels, std::size_t height,
                              std::size_t width);

// One SS2D level over [c,H,W].
Tensor ss2d_level(const Tensor& x, const Ss2dLevelParams& p,
                  Discretization mode = Discretization::Euler);

// Distance tensor [C,H,W] -> soft association matrix [H,W] in (0,1).
Tensor hssm_forward(const Tensor& distance, const HssmParams& p);

// Balanced class weights (w1, w0) from a binary matrix; EmptyMatrix when the
// matrix has no entries. An all-ones or all-zeros matrix yields a zero
// weight for the populated class.
std::pair<double, double> class_weights(const Tensor& gt);

// Class-weighted focal loss over per-pair probabilities. `weights` overrides
// the class_weights default (w1, w0). Probabilities are clamped to
// [1e-7, 1 - 1e-7].
Tensor focal_assoc_loss(const Tensor& soft, const Tensor& gt, double gamma,
                        std::optional<std::pair<double, double>> weights = {});

}  // namespace s3mot
