#include "s3mot/hssm.hpp"

#include <cmath>

#include "s3mot/errors.hpp"
#include "s3mot/ops.hpp"

namespace s3mot {

std::array<Tensor, 4> bi_scan(const Tensor& x) {
  if (x.rank() != 3) throw ShapeMismatch("bi_scan: expects [C,H,W]");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Tensor rows = reshape(x, {C, H * W});
  const Tensor cols = reshape(permute(x, {0, 2, 1}), {C, H * W});
  return {rows, flip(rows, 1), cols, flip(cols, 1)};
}

Tensor bi_merge(const std::array<Tensor, 4>& ys, std::size_t height,
                std::size_t width) {
  const std::size_t C = ys[0].dim(0);
  for (const auto& y : ys)
    if (y.rank() != 2 || y.dim(0) != C || y.dim(1) != height * width)
      throw LengthMismatch("bi_merge: paths must be [C,H*W]");
  const Tensor g0 = reshape(ys[0], {C, height, width});
  const Tensor g1 = reshape(flip(ys[1], 1), {C, height, width});
  const Tensor g2 = permute(reshape(ys[2], {C, width, height}), {0, 2, 1});
  const Tensor g3 = permute(reshape(flip(ys[3], 1), {C, width, height}), {0, 2, 1});
  return add(add(g0, g1), add(g2, g3));
}

Tensor positional_encoding_2d(std::size_t channels, std::size_t height,
                              std::size_t width) {
  Tensor pe({channels, height, width});
  const std::size_t half = channels / 2;
  for (std::size_t c = 0; c < channels; ++c) {
    const bool row_part = c < half;
    const std::size_t k = row_part ? c : c - half;
    const std::size_t span = row_part ? half : channels - half;
    const double freq =
        std::pow(10000.0, -static_cast<double>(k - (k % 2)) /
                              std::max<double>(1.0, static_cast<double>(span)));
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double pos = static_cast<double>(row_part ? i : j);
        pe.at((c * height + i) * width + j) =
            (k % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
      }
  }
  return pe;
}

namespace {

// LayerNorm across channels at each spatial site of [B,C,H,W].
Tensor ln_channels(const Tensor& x, const Tensor& g, const Tensor& b) {
  const Tensor moved = permute(x, {0, 2, 3, 1});
  return permute(layernorm(moved, g, b), {0, 3, 1, 2});
}

Tensor conv1x1_bias_init(std::size_t out_c, std::mt19937_64& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(out_c));
  return rand_uniform<double>({out_c}, rng, -k, k);
}

Tensor conv_init(std::size_t out_c, std::size_t in_c, std::size_t kh,
                 std::size_t kw, std::mt19937_64& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(in_c * kh * kw));
  return rand_uniform<double>({out_c, in_c, kh, kw}, rng, -k, k);
}

}  // namespace

Ss2dLevelParams Ss2dLevelParams::init(std::size_t c, std::size_t state,
                                      std::size_t dw_kernel,
                                      std::mt19937_64& rng) {
  Ss2dLevelParams p;
  p.ln1_g = Tensor::ones({c});
  p.ln1_b = Tensor::zeros({c});
  p.in_w = conv_init(c, c, 1, 1, rng);
  p.in_b = conv1x1_bias_init(c, rng);
  const double kd = 1.0 / std::sqrt(static_cast<double>(dw_kernel * dw_kernel));
  p.dw_k = rand_uniform<double>({c, dw_kernel, dw_kernel}, rng, -kd, kd);
  p.dw_b = Tensor::zeros({c});
  for (auto& path : p.paths) path = SsmCoreParams::init(c, state, c, rng);
  p.ln2_g = Tensor::ones({c});
  p.ln2_b = Tensor::zeros({c});
  p.out_w = conv_init(c, c, 1, 1, rng);
  p.out_b = conv1x1_bias_init(c, rng);
  p.ffn_ln_g = Tensor::ones({c});
  p.ffn_ln_b = Tensor::zeros({c});
  p.ffn_w1 = conv_init(2 * c, c, 1, 1, rng);
  p.ffn_b1 = conv1x1_bias_init(2 * c, rng);
  p.ffn_w2 = conv_init(c, 2 * c, 1, 1, rng);
  p.ffn_b2 = conv1x1_bias_init(c, rng);
  return p;
}

void Ss2dLevelParams::collect(std::vector<Tensor>& out) const {
  out.push_back(ln1_g); out.push_back(ln1_b);
  out.push_back(in_w); out.push_back(in_b);
  out.push_back(dw_k); out.push_back(dw_b);
  for (const auto& path : paths) path.collect(out);
  out.push_back(ln2_g); out.push_back(ln2_b);
  out.push_back(out_w); out.push_back(out_b);
  out.push_back(ffn_ln_g); out.push_back(ffn_ln_b);
  out.push_back(ffn_w1); out.push_back(ffn_b1);
  out.push_back(ffn_w2); out.push_back(ffn_b2);
}

void Ss2dLevelParams::to_weights(const std::string& prefix, WeightMap& w) const {
  w.put(prefix + ".ln1_g", ln1_g); w.put(prefix + ".ln1_b", ln1_b);
  w.put(prefix + ".in_w", in_w); w.put(prefix + ".in_b", in_b);
  w.put(prefix + ".dw_k", dw_k); w.put(prefix + ".dw_b", dw_b);
  for (std::size_t i = 0; i < 4; ++i)
    paths[i].to_weights(prefix + ".paths." + std::to_string(i), w);
  w.put(prefix + ".ln2_g", ln2_g); w.put(prefix + ".ln2_b", ln2_b);
  w.put(prefix + ".out_w", out_w); w.put(prefix + ".out_b", out_b);
  w.put(prefix + ".ffn_ln_g", ffn_ln_g); w.put(prefix + ".ffn_ln_b", ffn_ln_b);
  w.put(prefix + ".ffn_w1", ffn_w1); w.put(prefix + ".ffn_b1", ffn_b1);
  w.put(prefix + ".ffn_w2", ffn_w2); w.put(prefix + ".ffn_b2", ffn_b2);
}

Ss2dLevelParams Ss2dLevelParams::from_weights(const std::string& prefix,
                                              const WeightMap& w) {
  Ss2dLevelParams p;
  p.ln1_g = w.at(prefix + ".ln1_g").clone(); p.ln1_b = w.at(prefix + ".ln1_b").clone();
  p.in_w = w.at(prefix + ".in_w").clone(); p.in_b = w.at(prefix + ".in_b").clone();
  p.dw_k = w.at(prefix + ".dw_k").clone(); p.dw_b = w.at(prefix + ".dw_b").clone();
  for (std::size_t i = 0; i < 4; ++i)
    p.paths[i] = SsmCoreParams::from_weights(prefix + ".paths." + std::to_string(i), w);
  p.ln2_g = w.at(prefix + ".ln2_g").clone(); p.ln2_b = w.at(prefix + ".ln2_b").clone();
  p.out_w = w.at(prefix + ".out_w").clone(); p.out_b = w.at(prefix + ".out_b").clone();
  p.ffn_ln_g = w.at(prefix + ".ffn_ln_g").clone();
  p.ffn_ln_b = w.at(prefix + ".ffn_ln_b").clone();
  p.ffn_w1 = w.at(prefix + ".ffn_w1").clone(); p.ffn_b1 = w.at(prefix + ".ffn_b1").clone();
  p.ffn_w2 = w.at(prefix + ".ffn_w2").clone(); p.ffn_b2 = w.at(prefix + ".ffn_b2").clone();
  return p;
}

HssmParams HssmParams::init(const HssmConfig& cfg, std::mt19937_64& rng) {
  HssmParams p;
  p.cfg = cfg;
  p.patch_w = conv_init(cfg.base_dim, cfg.in_channels, 1, 1, rng);
  p.patch_b = conv1x1_bias_init(cfg.base_dim, rng);
  p.patch_ln_g = Tensor::ones({cfg.base_dim});
  p.patch_ln_b = Tensor::zeros({cfg.base_dim});
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    const std::size_t c = cfg.base_dim << s;
    std::vector<Ss2dLevelParams> levels;
    for (std::size_t l = 0; l < cfg.levels; ++l)
      levels.push_back(Ss2dLevelParams::init(c, cfg.state_dim, cfg.dw_kernel, rng));
    p.stage_levels.push_back(std::move(levels));
    p.trans_w.push_back(conv_init(2 * c, c, 1, 1, rng));
    p.trans_b.push_back(conv1x1_bias_init(2 * c, rng));
    p.trans_ln_g.push_back(Tensor::ones({2 * c}));
    p.trans_ln_b.push_back(Tensor::zeros({2 * c}));
  }
  const std::size_t top = cfg.base_dim << cfg.stages;
  p.head_ln_g = Tensor::ones({top});
  p.head_ln_b = Tensor::zeros({top});
  p.head_w = conv_init(1, top, 1, 1, rng);
  p.head_b = Tensor::zeros({1});
  return p;
}

std::vector<Tensor> HssmParams::all_params() const {
  std::vector<Tensor> out{patch_w, patch_b, patch_ln_g, patch_ln_b};
  for (const auto& levels : stage_levels)
    for (const auto& l : levels) l.collect(out);
  for (std::size_t s = 0; s < trans_w.size(); ++s) {
    out.push_back(trans_w[s]);
    out.push_back(trans_b[s]);
    out.push_back(trans_ln_g[s]);
    out.push_back(trans_ln_b[s]);
  }
  out.push_back(head_ln_g);
  out.push_back(head_ln_b);
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

void HssmParams::to_weights(WeightMap& w) const {
  w.put("hssm.patch_w", patch_w);
  w.put("hssm.patch_b", patch_b);
  w.put("hssm.patch_ln_g", patch_ln_g);
  w.put("hssm.patch_ln_b", patch_ln_b);
  for (std::size_t s = 0; s < stage_levels.size(); ++s) {
    for (std::size_t l = 0; l < stage_levels[s].size(); ++l)
      stage_levels[s][l].to_weights(
          "hssm.stages." + std::to_string(s) + ".levels." + std::to_string(l), w);
    const std::string tp = "hssm.trans." + std::to_string(s);
    w.put(tp + ".w", trans_w[s]);
    w.put(tp + ".b", trans_b[s]);
    w.put(tp + ".ln_g", trans_ln_g[s]);
    w.put(tp + ".ln_b", trans_ln_b[s]);
  }
  w.put("hssm.head_ln_g", head_ln_g);
  w.put("hssm.head_ln_b", head_ln_b);
  w.put("hssm.head_w", head_w);
  w.put("hssm.head_b", head_b);
  w.put("hssm.cfg",
        Tensor({6}, {static_cast<double>(cfg.in_channels),
                     static_cast<double>(cfg.base_dim),
                     static_cast<double>(cfg.stages),
                     static_cast<double>(cfg.levels),
                     static_cast<double>(cfg.dw_kernel),
                     cfg.pos_encoding ? 1.0 : 0.0}));
}

HssmParams HssmParams::from_weights(const WeightMap& w, const HssmConfig& cfg_hint) {
  HssmParams p;
  p.cfg = cfg_hint;
  if (w.contains("hssm.cfg")) {
    const Tensor& c = w.at("hssm.cfg");
    p.cfg.in_channels = static_cast<std::size_t>(c.at(0));
    p.cfg.base_dim = static_cast<std::size_t>(c.at(1));
    p.cfg.stages = static_cast<std::size_t>(c.at(2));
    p.cfg.levels = static_cast<std::size_t>(c.at(3));
    p.cfg.dw_kernel = static_cast<std::size_t>(c.at(4));
    p.cfg.pos_encoding = c.at(5) != 0.0;
  }
  p.patch_w = w.at("hssm.patch_w").clone();
  p.patch_b = w.at("hssm.patch_b").clone();
  p.patch_ln_g = w.at("hssm.patch_ln_g").clone();
  p.patch_ln_b = w.at("hssm.patch_ln_b").clone();
  for (std::size_t s = 0; s < p.cfg.stages; ++s) {
    std::vector<Ss2dLevelParams> levels;
    for (std::size_t l = 0; l < p.cfg.levels; ++l)
      levels.push_back(Ss2dLevelParams::from_weights(
          "hssm.stages." + std::to_string(s) + ".levels." + std::to_string(l), w));
    p.stage_levels.push_back(std::move(levels));
    const std::string tp = "hssm.trans." + std::to_string(s);
    p.trans_w.push_back(w.at(tp + ".w").clone());
    p.trans_b.push_back(w.at(tp + ".b").clone());
    p.trans_ln_g.push_back(w.at(tp + ".ln_g").clone());
    p.trans_ln_b.push_back(w.at(tp + ".ln_b").clone());
  }
  p.head_ln_g = w.at("hssm.head_ln_g").clone();
  p.head_ln_b = w.at("hssm.head_ln_b").clone();
  p.head_w = w.at("hssm.head_w").clone();
  p.head_b = w.at("hssm.head_b").clone();
  // state_dim from any path
  p.cfg.state_dim = p.stage_levels.at(0).at(0).paths[0].a_log.dim(1);
  return p;
}

Tensor ss2d_level(const Tensor& x, const Ss2dLevelParams& p, Discretization mode) {
  if (x.rank() != 4 || x.dim(0) != 1)
    throw ShapeMismatch("ss2d_level: expects [1,c,H,W]");
  const std::size_t c = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t L = H * W;

  Tensor h = conv2d(ln_channels(x, p.ln1_g, p.ln1_b), p.in_w, &p.in_b);
  h = silu(conv2d_depthwise(h, p.dw_k, &p.dw_b));

  const auto paths = bi_scan(reshape(h, {c, H, W}));
  std::array<Tensor, 4> ys;
  for (std::size_t k = 0; k < 4; ++k) {
    const Tensor seq = unsqueeze(permute(paths[k], {1, 0}), 0);  // [1,L,c]
    const SsmCoreParams& core = p.paths[k];
    const Tensor Bmat = matmul(seq, core.w_b);
    const Tensor Cmat = matmul(seq, core.w_c);
    const Tensor dt = softplus(add(broadcast_to(matmul(seq, core.w_dt), {1, L, c}),
                                   broadcast_to(core.b_dt, {1, L, c})));
    auto [Abar, Bbar] = discretize(core.A(), Bmat, dt, mode);
    const Tensor y = selective_scan(Abar, Bbar, Cmat, seq);  // [1,L,c]
    ys[k] = permute(squeeze(y, 0), {1, 0});                  // [c,L]
  }
  const Tensor merged = unsqueeze(bi_merge(ys, H, W), 0);

  const Tensor o =
      add(conv2d(ln_channels(merged, p.ln2_g, p.ln2_b), p.out_w, &p.out_b), x);
  // Pre-norm residual FFN keeps the zero-weight level an exact identity.
  const Tensor f = conv2d(
      silu(conv2d(ln_channels(o, p.ffn_ln_g, p.ffn_ln_b), p.ffn_w1, &p.ffn_b1)),
      p.ffn_w2, &p.ffn_b2);
  return add(o, f);
}

Tensor hssm_forward(const Tensor& distance, const HssmParams& p) {
  if (distance.rank() != 3)
    throw ShapeMismatch("hssm_forward: expects [C,H,W]");
  if (distance.dim(0) != p.cfg.in_channels)
    throw ShapeMismatch("hssm_forward: channel count mismatch");
  const std::size_t H = distance.dim(1), W = distance.dim(2);

  Tensor e = ln_channels(conv2d(unsqueeze(distance, 0), p.patch_w, &p.patch_b),
                         p.patch_ln_g, p.patch_ln_b);
  if (p.cfg.pos_encoding)
    e = add(e, unsqueeze(positional_encoding_2d(p.cfg.base_dim, H, W), 0));

  for (std::size_t s = 0; s < p.cfg.stages; ++s) {
    for (const auto& level : p.stage_levels[s])
      e = ss2d_level(e, level, p.cfg.mode);
    e = ln_channels(conv2d(e, p.trans_w[s], &p.trans_b[s]), p.trans_ln_g[s],
                    p.trans_ln_b[s]);
  }
  const Tensor logits =
      conv2d(ln_channels(e, p.head_ln_g, p.head_ln_b), p.head_w, &p.head_b);
  return reshape(sigmoid(logits), {H, W});
}

std::pair<double, double> class_weights(const Tensor& gt) {
  if (gt.size() == 0) throw EmptyMatrix("class_weights: empty matrix");
  double n1 = 0, n0 = 0;
  for (std::size_t i = 0; i < gt.size(); ++i)
    (gt.at(i) > 0.5 ? n1 : n0) += 1.0;
  const double total = n1 + n0;
  return {n0 / total, n1 / total};
}

Tensor focal_assoc_loss(const Tensor& soft, const Tensor& gt, double gamma,
                        std::optional<std::pair<double, double>> weights) {
  if (soft.shape() != gt.shape())
    throw ShapeMismatch("focal_assoc_loss: shape mismatch");
  const auto [w1, w0] = weights ? *weights : class_weights(gt);
  constexpr double kEps = 1e-7;
  const Tensor p = clamp(soft, kEps, 1.0 - kEps);
  const Tensor ones = Tensor::ones(p.shape());
  const Tensor pos = mul(gt, mul(pow_scalar(sub(ones, p), gamma), log(p)));
  const Tensor negt =
      mul(sub(ones, gt), mul(pow_scalar(p, gamma), log(sub(ones, p))));
  return neg(add(mul_scalar(sum(pos), w1), mul_scalar(sum(negt), w0)));
}

}  // namespace s3mot
