#pragma once

#include <random>
#include <string>
#include <utility>

#include "s3mot/ops.hpp"
#include "s3mot/tensor.hpp"
#include "s3mot/weights.hpp"

namespace s3mot {

enum class Discretization { Euler, Zoh };

// Discretizes a diagonal-per-channel continuous system. A: [D,N] (strictly
// negative), B: prefix+[N], delta: prefix+[D], all prefix dims shared.
// Euler keeps Bbar = delta (x) B as written in the scan pseudocode; Zoh uses
// the exact zero-order-hold expm1(delta A)/A * B. Abar = exp(delta A) either
// way. Throws NonPositiveStep unless delta > 0 elementwise.
template <class S>
std::pair<TensorT<S>, TensorT<S>> discretize(const TensorT<S>& A,
                                             const TensorT<S>& B,
                                             const TensorT<S>& delta,
                                             Discretization mode) {
  if (A.rank() != 2) throw ShapeMismatch("discretize: A must be [D,N]");
  const std::size_t D = A.dim(0), N = A.dim(1);
  if (delta.rank() < 1 || delta.dim(delta.rank() - 1) != D)
    throw ShapeMismatch("discretize: delta trailing dim must be D");
  if (B.rank() != delta.rank() || B.dim(B.rank() - 1) != N)
    throw ShapeMismatch("discretize: B trailing dim must be N");
  for (std::size_t i = 0; i + 1 < delta.rank(); ++i)
    if (B.dim(i) != delta.dim(i))
      throw ShapeMismatch("discretize: B/delta prefix dims differ");
  for (std::size_t i = 0; i < delta.size(); ++i)
    if (!(delta.at(i) > S(0)))
      throw NonPositiveStep("discretize: delta must be strictly positive");

  Shape full = delta.shape();  // prefix + [D]
  full.push_back(N);           // prefix + [D,N]

  const auto delta_e = broadcast_to(unsqueeze(delta, delta.rank()), full);
  const auto A_e = broadcast_to(A, full);
  const auto prod = mul(delta_e, A_e);
  const auto Abar = exp(prod);

  const std::size_t axis_d = B.rank() - 1;  // insert D before trailing N
  const auto B_e = broadcast_to(unsqueeze(B, axis_d), full);
  TensorT<S> Bbar = mode == Discretization::Euler
                        ? mul(delta_e, B_e)
                        : mul(div(expm1(prod), A_e), B_e);
  return {Abar, Bbar};
}

// Sequential state-space recurrence with a fused backward rule:
//   X_t = Abar_t (.) X_{t-1} + Bbar_t (.) u_t,   X_0 = 0
//   y_t[b,d] = sum_n C_t[b,n] * X_t[b,d,n]
// Abar, Bbar: [B,L,D,N]; C: [B,L,N]; u: [B,L,D]; y: [B,L,D]. Runtime is
// linear in L; the full state history is kept only while a tape is active.
template <class S>
TensorT<S> selective_scan(const TensorT<S>& Abar, const TensorT<S>& Bbar,
                          const TensorT<S>& C, const TensorT<S>& u) {
  if (Abar.rank() != 4) throw ShapeMismatch("selective_scan: Abar must be [B,L,D,N]");
  const std::size_t B = Abar.dim(0), L = Abar.dim(1), D = Abar.dim(2),
                    N = Abar.dim(3);
  if (Bbar.shape() != Abar.shape())
    throw ShapeMismatch("selective_scan: Bbar shape mismatch");
  if (C.rank() != 3 || C.dim(0) != B || C.dim(1) != L || C.dim(2) != N)
    throw ShapeMismatch("selective_scan: C must be [B,L,N]");
  if (u.rank() != 3 || u.dim(0) != B || u.dim(1) != L || u.dim(2) != D)
    throw ShapeMismatch("selective_scan: u must be [B,L,D]");

  const bool taping = TapeT<S>::active() != nullptr;
  TensorT<S> y(Shape{B, L, D});
  std::vector<S> states;  // [B,L,D,N] when taping
  if (taping) states.assign(B * L * D * N, S(0));
  std::vector<S> x(B * D * N, S(0));

  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t sbase = ((b * L + t) * D + d) * N;
        const std::size_t xbase = (b * D + d) * N;
        const S uv = u.at((b * L + t) * D + d);
        S acc = S(0);
        for (std::size_t n = 0; n < N; ++n) {
          const S xv = Abar.at(sbase + n) * x[xbase + n] + Bbar.at(sbase + n) * uv;
          x[xbase + n] = xv;
          acc += C.at((b * L + t) * N + n) * xv;
        }
        y.at((b * L + t) * D + d) = acc;
        if (taping)
          for (std::size_t n = 0; n < N; ++n) states[sbase + n] = x[xbase + n];
      }
  }

  if (taping) {
    detail::record<S>(
        y, {Abar, Bbar, C, u},
        [Abar, Bbar, C, u, y, states = std::move(states), B, L, D,
         N](GradTableT<S>& g) mutable {
          auto gy = g.slot(y);
          auto gA = g.slot(Abar);
          auto gB = g.slot(Bbar);
          auto gC = g.slot(C);
          auto gu = g.slot(u);
          // Running dL/dX_t, swept from the last step backwards.
          std::vector<S> gx(B * D * N, S(0));
          for (std::size_t t = L; t-- > 0;) {
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t d = 0; d < D; ++d) {
                const std::size_t sbase = ((b * L + t) * D + d) * N;
                const std::size_t xbase = (b * D + d) * N;
                const S gyv = gy[(b * L + t) * D + d];
                const S uv = u.at((b * L + t) * D + d);
                S guv = S(0);
                for (std::size_t n = 0; n < N; ++n) {
                  const S gxv = gx[xbase + n] + gyv * C.at((b * L + t) * N + n);
                  gC[(b * L + t) * N + n] += gyv * states[sbase + n];
                  const S xprev =
                      t == 0 ? S(0) : states[((b * L + t - 1) * D + d) * N + n];
                  gA[sbase + n] += gxv * xprev;
                  gB[sbase + n] += gxv * uv;
                  guv += gxv * Bbar.at(sbase + n);
                  gx[xbase + n] = gxv * Abar.at(sbase + n);
                }
                gu[(b * L + t) * D + d] += guv;
              }
          }
        });
  }
  return y;
}

// Input-conditioned scan parameters shared by the self and cross blocks.
// A is stored as log-magnitudes so it stays strictly negative.
struct SsmCoreParams {
  Tensor a_log;  // [D,N]; A = -exp(a_log)
  Tensor w_b;    // [cond,N]
  Tensor w_c;    // [cond,N]
  Tensor w_dt;   // [cond,1]; broadcast over D
  Tensor b_dt;   // [D]

  Tensor A() const { return neg(exp(a_log)); }

  static SsmCoreParams init(std::size_t inner, std::size_t state,
                            std::size_t cond, std::mt19937_64& rng);
  void collect(std::vector<Tensor>& out) const;
  void to_weights(const std::string& prefix, WeightMap& w) const;
  static SsmCoreParams from_weights(const std::string& prefix, const WeightMap& w);
};

// One Mamba-style layer: RMSNorm, gated SSM branch, output projection and
// residual.
struct MambaBlockParams {
  SsmCoreParams core;
  Tensor norm_gain;  // [d]
  Tensor w_x;        // [d,D]
  Tensor conv_k;     // [D,kw]
  Tensor w_z;        // [d,D]
  Tensor w_out;      // [D,d]

  std::size_t model_dim() const { return norm_gain.dim(0); }
  std::size_t inner_dim() const { return w_x.dim(1); }
  std::size_t state_dim() const { return core.a_log.dim(1); }

  static MambaBlockParams init(std::size_t d, std::size_t inner,
                               std::size_t state, std::size_t cond,
                               std::size_t conv_width, std::mt19937_64& rng);
  void collect(std::vector<Tensor>& out) const;
  void to_weights(const std::string& prefix, WeightMap& w) const;
  static MambaBlockParams from_weights(const std::string& prefix,
                                       const WeightMap& w);
};

// One self-conditioned layer over seq [B,L,d]: B, C and delta are projected
// from the layer's own input stream.
Tensor mamba_block_self(const Tensor& seq, const MambaBlockParams& p,
                        Discretization mode = Discretization::Euler);

// Cross-conditioned variant for single-step sequences [B,1,d]: B, C and
// delta come from `cond` [B,cond_dim] instead of the input stream.
Tensor mamba_block_cross(const Tensor& seq, const Tensor& cond,
                         const MambaBlockParams& p,
                         Discretization mode = Discretization::Euler);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) linear init.
Tensor linear_init(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

// Bias such that softplus(bias) lands log-uniformly in [0.001, 0.1].
Tensor dt_bias_init(std::size_t dim, std::mt19937_64& rng);

}  // namespace s3mot
