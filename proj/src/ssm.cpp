#include "s3mot/ssm.hpp"

#include <cmath>

namespace s3mot {

Tensor linear_init(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rand_uniform<double>({fan_in, fan_out}, rng, -k, k);
}

Tensor dt_bias_init(std::size_t dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(std::log(1e-3), std::log(1e-1));
  Tensor b({dim});
  for (auto& v : b.data()) {
    const double target = std::exp(dist(rng));
    v = std::log(std::expm1(target));  // softplus inverse
  }
  return b;
}

SsmCoreParams SsmCoreParams::init(std::size_t inner, std::size_t state,
                                  std::size_t cond, std::mt19937_64& rng) {
  SsmCoreParams p;
  p.a_log = rand_uniform<double>({inner, state}, rng, std::log(0.5), std::log(8.0));
  p.w_b = linear_init(cond, state, rng);
  p.w_c = linear_init(cond, state, rng);
  p.w_dt = linear_init(cond, 1, rng);
  p.b_dt = dt_bias_init(inner, rng);
  return p;
}

void SsmCoreParams::collect(std::vector<Tensor>& out) const {
  out.push_back(a_log);
  out.push_back(w_b);
  out.push_back(w_c);
  out.push_back(w_dt);
  out.push_back(b_dt);
}

void SsmCoreParams::to_weights(const std::string& prefix, WeightMap& w) const {
  w.put(prefix + ".a_log", a_log);
  w.put(prefix + ".w_b", w_b);
  w.put(prefix + ".w_c", w_c);
  w.put(prefix + ".w_dt", w_dt);
  w.put(prefix + ".b_dt", b_dt);
}

SsmCoreParams SsmCoreParams::from_weights(const std::string& prefix,
                                          const WeightMap& w) {
  SsmCoreParams p;
  p.a_log = w.at(prefix + ".a_log").clone();
  p.w_b = w.at(prefix + ".w_b").clone();
  p.w_c = w.at(prefix + ".w_c").clone();
  p.w_dt = w.at(prefix + ".w_dt").clone();
  p.b_dt = w.at(prefix + ".b_dt").clone();
  return p;
}

MambaBlockParams MambaBlockParams::init(std::size_t d, std::size_t inner,
                                        std::size_t state, std::size_t cond,
                                        std::size_t conv_width,
                                        std::mt19937_64& rng) {
  MambaBlockParams p;
  p.core = SsmCoreParams::init(inner, state, cond, rng);
  p.norm_gain = Tensor::ones({d});
  p.w_x = linear_init(d, inner, rng);
  const double kc = 1.0 / std::sqrt(static_cast<double>(conv_width));
  p.conv_k = rand_uniform<double>({inner, conv_width}, rng, -kc, kc);
  p.w_z = linear_init(d, inner, rng);
  p.w_out = linear_init(inner, d, rng);
  return p;
}

void MambaBlockParams::collect(std::vector<Tensor>& out) const {
  core.collect(out);
  out.push_back(norm_gain);
  out.push_back(w_x);
  out.push_back(conv_k);
  out.push_back(w_z);
  out.push_back(w_out);
}

void MambaBlockParams::to_weights(const std::string& prefix, WeightMap& w) const {
  core.to_weights(prefix, w);
  w.put(prefix + ".norm_gain", norm_gain);
  w.put(prefix + ".w_x", w_x);
  w.put(prefix + ".conv_k", conv_k);
  w.put(prefix + ".w_z", w_z);
  w.put(prefix + ".w_out", w_out);
}

MambaBlockParams MambaBlockParams::from_weights(const std::string& prefix,
                                                const WeightMap& w) {
  MambaBlockParams p;
  p.core = SsmCoreParams::from_weights(prefix, w);
  p.norm_gain = w.at(prefix + ".norm_gain").clone();
  p.w_x = w.at(prefix + ".w_x").clone();
  p.conv_k = w.at(prefix + ".conv_k").clone();
  p.w_z = w.at(prefix + ".w_z").clone();
  p.w_out = w.at(prefix + ".w_out").clone();
  return p;
}

namespace {

// Shared tail of both block flavours once B, C, delta are known.
Tensor block_body(const Tensor& seq, const Tensor& x, const Tensor& z,
                  const Tensor& Bmat, const Tensor& Cmat, const Tensor& dt,
                  const MambaBlockParams& p, Discretization mode) {
  auto [Abar, Bbar] = discretize(p.core.A(), Bmat, dt, mode);
  Tensor y = selective_scan(Abar, Bbar, Cmat, x);
  y = mul(y, silu(z));
  return add(matmul(y, p.w_out), seq);
}

}  // namespace

Tensor mamba_block_self(const Tensor& seq, const MambaBlockParams& p,
                        Discretization mode) {
  if (seq.rank() != 3 || seq.dim(2) != p.model_dim())
    throw ShapeMismatch("mamba_block_self: seq must be [B,L,d]");
  const std::size_t B = seq.dim(0), L = seq.dim(1);
  const std::size_t D = p.inner_dim();

  const Tensor h = rmsnorm(seq, p.norm_gain);
  const Tensor x = silu(conv1d_depthwise(matmul(h, p.w_x), p.conv_k));
  const Tensor z = matmul(h, p.w_z);
  const Tensor Bmat = matmul(x, p.core.w_b);
  const Tensor Cmat = matmul(x, p.core.w_c);
  const Tensor dt = softplus(add(broadcast_to(matmul(x, p.core.w_dt), {B, L, D}),
                                 broadcast_to(p.core.b_dt, {B, L, D})));
  return block_body(seq, x, z, Bmat, Cmat, dt, p, mode);
}

Tensor mamba_block_cross(const Tensor& seq, const Tensor& cond,
                         const MambaBlockParams& p, Discretization mode) {
  if (seq.rank() != 3 || seq.dim(1) != 1 || seq.dim(2) != p.model_dim())
    throw ShapeMismatch("mamba_block_cross: seq must be [B,1,d]");
  if (cond.rank() != 2 || cond.dim(0) != seq.dim(0))
    throw ShapeMismatch("mamba_block_cross: cond must be [B,cond_dim]");
  const std::size_t B = seq.dim(0);
  const std::size_t D = p.inner_dim();

  const Tensor h = rmsnorm(seq, p.norm_gain);
  const Tensor x = silu(conv1d_depthwise(matmul(h, p.w_x), p.conv_k));
  const Tensor z = matmul(h, p.w_z);
  const Tensor Bmat = unsqueeze(matmul(cond, p.core.w_b), 1);  // [B,1,N]
  const Tensor Cmat = unsqueeze(matmul(cond, p.core.w_c), 1);
  const Tensor dt =
      softplus(add(broadcast_to(unsqueeze(matmul(cond, p.core.w_dt), 1), {B, 1, D}),
                   broadcast_to(p.core.b_dt, {B, 1, D})));
  return block_body(seq, x, z, Bmat, Cmat, dt, p, mode);
}

}  // namespace s3mot
